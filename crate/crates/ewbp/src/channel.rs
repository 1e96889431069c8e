//! BPSK over AWGN and the LLR front end.
//!
//! Bits map to symbols as `x = 1 - 2c` (0 to +1, 1 to -1). For a code rate R
//! and an information-bit SNR of `ebn0_db`, the per-dimension noise deviation
//! is `sigma = sqrt(1 / (2 R 10^(ebn0_db/10)))`, and the channel LLR of an
//! observation y is `2y / sigma^2` (positive favours bit 0).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bp::LLR_MAX;
use crate::rng::frame_rng;
use crate::{Error, Result};

/// Noise deviation for an Eb/N0 in dB at code rate `rate`.
pub fn sigma_from_ebn0(ebn0_db: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "code rate must lie in (0, 1], got {rate}"
        )));
    }
    if !ebn0_db.is_finite() {
        return Err(Error::InvalidArgument(format!("Eb/N0 must be finite, got {ebn0_db}")));
    }
    let snr_linear = 10f64.powf(ebn0_db / 10.0);
    Ok((1.0 / (2.0 * rate * snr_linear)).sqrt())
}

/// BPSK symbols of a bit vector.
pub fn modulate(bits: &[u8]) -> Vec<f64> {
    debug_assert!(bits.iter().all(|&b| b <= 1));
    bits.iter().map(|&b| 1.0 - 2.0 * b as f64).collect()
}

/// Adds white Gaussian noise of deviation `sigma` to each symbol.
pub fn awgn(symbols: &[f64], sigma: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise deviation must be positive, got {sigma}; use noiseless_llr for the clean channel"
        )));
    }
    Ok(symbols
        .iter()
        .map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Channel LLRs of raw observations: `2y / sigma^2`.
pub fn llr_from_observations(observations: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise deviation must be positive, got {sigma}; use noiseless_llr for the clean channel"
        )));
    }
    let scale = 2.0 / (sigma * sigma);
    Ok(observations.iter().map(|&y| scale * y).collect())
}

/// Modulates, adds noise, and computes LLRs in one step.
pub fn transmit_llr(bits: &[u8], sigma: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let y = awgn(&modulate(bits), sigma, rng)?;
    llr_from_observations(&y, sigma)
}

/// LLRs of a clean codeword: full-confidence values at the decoder's clip
/// bound. Stands in for the sigma = 0 limit, which `awgn` rejects.
pub fn noiseless_llr(bits: &[u8]) -> Vec<f64> {
    modulate(bits).iter().map(|&x| LLR_MAX * x).collect()
}

/// Noise addressing for Monte Carlo runs: the LLRs of frame `frame` within
/// stream `context` depend only on (seed, context, frame).
pub fn transmit_llr_indexed(
    bits: &[u8],
    sigma: f64,
    seed: u64,
    context: u32,
    frame: u64,
) -> Result<Vec<f64>> {
    let mut rng = frame_rng(seed, context, frame);
    transmit_llr(bits, sigma, &mut rng)
}
