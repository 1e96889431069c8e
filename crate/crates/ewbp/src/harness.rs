//! Monte Carlo evaluation: FER/BER sweeps, paired gate-vs-ensemble runs,
//! remainder histograms, member-diversity reports, and latency curves.
//!
//! Every run is reproducible from its seed alone. Frame `f` of SNR point
//! `i` draws its message bits and channel noise from the dedicated stream
//! `(seed, i, f)`, so results do not depend on thread count or scheduling.
//! Frames are processed in fixed batches of 1024; counters are integers,
//! accumulated in frame order, and stopping decisions happen only at batch
//! boundaries. Two runs with the same seed produce byte-identical CSV files
//! whatever the worker count.
//!
//! Frame errors compare recovered message bits against transmitted message
//! bits; CRC parity bits are excluded, as is everything frozen.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{bp_decode, wbp_decode, Kernel};
use crate::channel::{sigma_from_ebn0, transmit_llr};
use crate::crc::{region_index, CrcSpec, PartitionStrategy};
use crate::ensemble::EnsembleModel;
use crate::polar::PolarCode;
use crate::rng::frame_rng;
use crate::{Error, Result};

/// Fixed batch granularity; stopping is evaluated only between batches so
/// that results are independent of the worker count.
const BATCH: u64 = 1024;

/// Exact column set of every results CSV.
pub const CSV_HEADER: &str =
    "snr_db,frames,frame_errors,bit_errors,fer,ber,gate_fail_prob,avg_flops,censored";

const WILSON_Z95: f64 = 1.959963984540054;

// ------------------------------------------------------------ configuration --

/// When to stop simulating one SNR point: after `min_frame_errors` errors,
/// or unconditionally at `max_frames`. Both bounds must be positive; set
/// `min_frame_errors` to `u64::MAX` for fixed-frame runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub min_frame_errors: u64,
    pub max_frames: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { min_frame_errors: 500, max_frames: 10_000_000 }
    }
}

impl StopRule {
    fn validate(&self) -> Result<()> {
        if self.min_frame_errors == 0 || self.max_frames == 0 {
            return Err(Error::InvalidArgument(
                "stop rule bounds must both be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which decoder the sweep exercises. `GateOnly` runs plain BP and never
/// invokes members; `Ensemble` runs the full gated pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    GateOnly,
    Ensemble,
}

/// One sweep's settings. The code, CRC, partition, and iteration count all
/// come from the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub snrs_db: Vec<f64>,
    pub mode: EvalMode,
    pub stop: StopRule,
    pub seed: u64,
    /// Channel rate override for sigma; `None` uses N_u / N_c.
    pub rate: Option<f64>,
}

// ----------------------------------------------------------------- results --

/// One SNR point of a sweep. The derived fields satisfy
/// `fer = frame_errors / frames`, `ber = bit_errors / (frames * N_m)`, and
/// `avg_flops = (1 + gate_fail_prob) * 4 * T * log2(N)` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub frame_errors: u64,
    pub bit_errors: u64,
    pub fer: f64,
    pub ber: f64,
    pub gate_fail_prob: f64,
    pub avg_flops: f64,
    /// True when the frame cap ended the point before the error target.
    pub censored: bool,
    pub elapsed_seconds: f64,
}

/// A finished sweep: every point plus everything needed to rerun it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub config: EvalConfig,
    /// Hash of the model parameters and the config, for quick provenance
    /// checks across files.
    pub fingerprint: String,
    pub points: Vec<SimPoint>,
}

/// One SNR point of a paired run: both decoders see identical frames, and
/// the off-diagonal discordant counts feed significance tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub gate_frame_errors: u64,
    pub ensemble_frame_errors: u64,
    /// Frames the gate got wrong and the ensemble got right.
    pub gate_only_errors: u64,
    /// Frames the ensemble got wrong and the gate got right.
    pub ensemble_only_errors: u64,
}

/// One SNR point of a latency curve. `tau` is the expected number of
/// message updates per frame, bounded by one decode (`tau_lower`, gate
/// always validates) and two (`tau_upper`, gate always fails).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub gate_failures: u64,
    pub gate_fail_prob: f64,
    pub tau: f64,
    pub tau_lower: f64,
    pub tau_upper: f64,
}

/// Per-member rescue statistics over the gate-failed frames of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub snr_db: f64,
    pub frames: u64,
    /// Gate-failed frames whose remainder fell in each region.
    pub region_frames: Vec<u64>,
    /// `counts[r][m]`: frames of region r+1 that member m+1 decoded to the
    /// correct message.
    pub counts: Vec<Vec<u64>>,
    /// `designated_fail[r][m]`: frames of region r+1 that the designated
    /// member r+1 got wrong while member m+1 got right. The diagonal is
    /// zero by construction.
    pub designated_fail: Vec<Vec<u64>>,
}

// ------------------------------------------------------------------ sweeps --

struct FrameStats {
    frame_error: bool,
    bit_errors: u32,
    gate_fail: bool,
}

fn count_bit_diff(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// Draws message and noise for frame `(seed, context, frame)`, runs the
/// requested decoder, and scores the recovered message bits.
fn eval_frame(
    model: &EnsembleModel,
    mode: EvalMode,
    sigma: f64,
    seed: u64,
    context: u32,
    frame: u64,
) -> Result<FrameStats> {
    let code = model.code();
    let crc = model.crc();
    let n_m = crc.message_len();
    let mut rng = frame_rng(seed, context, frame);
    let msg: Vec<u8> = (0..n_m).map(|_| rng.gen_range(0..2u8)).collect();
    let info = crc.encode(&msg)?;
    let padded = code.expand(&info)?;
    let cw = code.encode(&padded)?;
    let llr = transmit_llr(&cw, sigma, &mut rng)?;

    let gate = bp_decode(&llr, code, model.iterations(), Kernel::Exact)?;
    let (decoded_msg, gate_fail) = match mode {
        EvalMode::GateOnly => {
            let got = code.extract(gate.hard())?;
            let gate_fail = !crc.remainder(&got)?.is_zero();
            (got, gate_fail)
        }
        EvalMode::Ensemble => {
            let out = model.decode_given_gate(&llr, &gate)?;
            let gate_fail = out.members_invoked > 0;
            (out.info, gate_fail)
        }
    };
    let bit_errors = count_bit_diff(&decoded_msg[..n_m], &msg);
    Ok(FrameStats { frame_error: bit_errors > 0, bit_errors, gate_fail })
}

/// Sweeps FER/BER over `config.snrs_db`. Each point runs until its stop
/// rule fires; all accounting identities on `SimPoint` hold exactly.
pub fn run_fer(model: &EnsembleModel, config: &EvalConfig) -> Result<SimResult> {
    config.stop.validate()?;
    if config.snrs_db.is_empty() {
        return Err(Error::InvalidArgument("the sweep needs at least one SNR".into()));
    }
    let rate = effective_rate(model, config.rate);
    let n_m = model.crc().message_len();
    let per_decode = (4 * model.iterations() * model.code().stages()) as f64;

    let mut points = Vec::with_capacity(config.snrs_db.len());
    for (i, &snr) in config.snrs_db.iter().enumerate() {
        let sigma = sigma_from_ebn0(snr, rate)?;
        let started = Instant::now();
        let mut frames = 0u64;
        let mut frame_errors = 0u64;
        let mut bit_errors = 0u64;
        let mut gate_fails = 0u64;
        loop {
            let len = BATCH.min(config.stop.max_frames - frames);
            let batch: Vec<FrameStats> = (frames..frames + len)
                .into_par_iter()
                .map(|f| eval_frame(model, config.mode, sigma, config.seed, i as u32, f))
                .collect::<Result<_>>()?;
            for s in &batch {
                frame_errors += s.frame_error as u64;
                bit_errors += s.bit_errors as u64;
                gate_fails += s.gate_fail as u64;
            }
            frames += len;
            if frames >= config.stop.max_frames || frame_errors >= config.stop.min_frame_errors {
                break;
            }
        }
        let gate_fail_prob = gate_fails as f64 / frames as f64;
        points.push(SimPoint {
            snr_db: snr,
            frames,
            frame_errors,
            bit_errors,
            fer: frame_errors as f64 / frames as f64,
            ber: bit_errors as f64 / (frames * n_m as u64) as f64,
            gate_fail_prob,
            avg_flops: (1.0 + gate_fail_prob) * per_decode,
            censored: frame_errors < config.stop.min_frame_errors,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(SimResult {
        fingerprint: fingerprint(model, config),
        config: config.clone(),
        points,
    })
}

/// Runs the gate and the full ensemble on identical frames (common random
/// numbers), a fixed number per SNR, and tallies the discordant outcomes.
pub fn run_fer_paired(
    model: &EnsembleModel,
    snrs_db: &[f64],
    frames_per_point: u64,
    seed: u64,
    rate: Option<f64>,
) -> Result<Vec<PairedPoint>> {
    if snrs_db.is_empty() || frames_per_point == 0 {
        return Err(Error::InvalidArgument(
            "a paired run needs at least one SNR and one frame".into(),
        ));
    }
    let rate = effective_rate(model, rate);
    let n_m = model.crc().message_len();

    let mut points = Vec::with_capacity(snrs_db.len());
    for (i, &snr) in snrs_db.iter().enumerate() {
        let sigma = sigma_from_ebn0(snr, rate)?;
        let mut frames = 0u64;
        let mut gate_err = 0u64;
        let mut ens_err = 0u64;
        let mut gate_only = 0u64;
        let mut ens_only = 0u64;
        while frames < frames_per_point {
            let len = BATCH.min(frames_per_point - frames);
            let batch: Vec<(bool, bool)> = (frames..frames + len)
                .into_par_iter()
                .map(|f| -> Result<(bool, bool)> {
                    let code = model.code();
                    let crc = model.crc();
                    let mut rng = frame_rng(seed, i as u32, f);
                    let msg: Vec<u8> = (0..n_m).map(|_| rng.gen_range(0..2u8)).collect();
                    let info = crc.encode(&msg)?;
                    let cw = code.encode(&code.expand(&info)?)?;
                    let llr = transmit_llr(&cw, sigma, &mut rng)?;
                    let gate = bp_decode(&llr, code, model.iterations(), Kernel::Exact)?;
                    let gate_word = code.extract(gate.hard())?;
                    let out = model.decode_given_gate(&llr, &gate)?;
                    let g = gate_word[..n_m] != msg[..];
                    let e = out.info[..n_m] != msg[..];
                    Ok((g, e))
                })
                .collect::<Result<_>>()?;
            for &(g, e) in &batch {
                gate_err += g as u64;
                ens_err += e as u64;
                gate_only += (g && !e) as u64;
                ens_only += (e && !g) as u64;
            }
            frames += len;
        }
        points.push(PairedPoint {
            snr_db: snr,
            frames,
            gate_frame_errors: gate_err,
            ensemble_frame_errors: ens_err,
            gate_only_errors: gate_only,
            ensemble_only_errors: ens_only,
        });
    }
    Ok(points)
}

/// Measures the gate failure probability per SNR and prices the ensemble's
/// expected latency, with its one-decode and two-decode bounds. Gate
/// failures are the stop rule's error events.
pub fn flops_curve(
    model: &EnsembleModel,
    snrs_db: &[f64],
    stop: StopRule,
    seed: u64,
    rate: Option<f64>,
) -> Result<Vec<FlopsPoint>> {
    stop.validate()?;
    if snrs_db.is_empty() {
        return Err(Error::InvalidArgument("the curve needs at least one SNR".into()));
    }
    let rate = effective_rate(model, rate);
    let per_decode = (4 * model.iterations() * model.code().stages()) as f64;

    let mut points = Vec::with_capacity(snrs_db.len());
    for (i, &snr) in snrs_db.iter().enumerate() {
        let sigma = sigma_from_ebn0(snr, rate)?;
        let mut frames = 0u64;
        let mut gate_fails = 0u64;
        loop {
            let len = BATCH.min(stop.max_frames - frames);
            let batch: Vec<bool> = (frames..frames + len)
                .into_par_iter()
                .map(|f| {
                    let s = eval_frame(model, EvalMode::GateOnly, sigma, seed, i as u32, f)?;
                    Ok(s.gate_fail)
                })
                .collect::<Result<_>>()?;
            gate_fails += batch.iter().filter(|&&b| b).count() as u64;
            frames += len;
            if frames >= stop.max_frames || gate_fails >= stop.min_frame_errors {
                break;
            }
        }
        let p = gate_fails as f64 / frames as f64;
        points.push(FlopsPoint {
            snr_db: snr,
            frames,
            gate_failures: gate_fails,
            gate_fail_prob: p,
            tau: (1.0 + p) * per_decode,
            tau_lower: per_decode,
            tau_upper: 2.0 * per_decode,
        });
    }
    Ok(points)
}

/// Counts gate-failed frames per partition region at one SNR.
pub fn crc_histogram(
    code: &PolarCode,
    crc: &CrcSpec,
    strategy: PartitionStrategy,
    iterations: usize,
    snr_db: f64,
    frames: u64,
    seed: u64,
    rate: Option<f64>,
) -> Result<Vec<u64>> {
    if crc.codeword_len() != code.info_len() {
        return Err(Error::LengthMismatch {
            what: "CRC codeword vs code info length",
            expected: code.info_len(),
            got: crc.codeword_len(),
        });
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("the histogram needs at least one frame".into()));
    }
    let rate = rate.unwrap_or(code.info_len() as f64 / code.block_len() as f64);
    let sigma = sigma_from_ebn0(snr_db, rate)?;
    let n_m = crc.message_len();

    let mut hist = vec![0u64; strategy.alpha];
    let mut done = 0u64;
    while done < frames {
        let len = BATCH.min(frames - done);
        let batch: Vec<Option<usize>> = (done..done + len)
            .into_par_iter()
            .map(|f| -> Result<Option<usize>> {
                let mut rng = frame_rng(seed, 0, f);
                let msg: Vec<u8> = (0..n_m).map(|_| rng.gen_range(0..2u8)).collect();
                let cw = code.encode(&code.expand(&crc.encode(&msg)?)?)?;
                let llr = transmit_llr(&cw, sigma, &mut rng)?;
                let gate = bp_decode(&llr, code, iterations, Kernel::Exact)?;
                let r = crc.remainder(&code.extract(gate.hard())?)?;
                if r.is_zero() {
                    Ok(None)
                } else {
                    Ok(Some(region_index(&r, strategy)?))
                }
            })
            .collect::<Result<_>>()?;
        for region in batch.into_iter().flatten() {
            hist[region - 1] += 1;
        }
        done += len;
    }
    Ok(hist)
}

/// Runs every member on every gate-failed frame at one SNR and reports who
/// rescues what, overall and relative to each region's designated member.
pub fn diversity_report(
    model: &EnsembleModel,
    snr_db: f64,
    frames: u64,
    seed: u64,
    rate: Option<f64>,
) -> Result<DiversityReport> {
    if frames == 0 {
        return Err(Error::InvalidArgument("the report needs at least one frame".into()));
    }
    let rate = effective_rate(model, rate);
    let sigma = sigma_from_ebn0(snr_db, rate)?;
    let code = model.code();
    let crc = model.crc();
    let n_m = crc.message_len();
    let alpha = model.alpha();

    let mut region_frames = vec![0u64; alpha];
    let mut counts = vec![vec![0u64; alpha]; alpha];
    let mut designated_fail = vec![vec![0u64; alpha]; alpha];

    let mut done = 0u64;
    while done < frames {
        let len = BATCH.min(frames - done);
        let batch: Vec<Option<(usize, Vec<bool>)>> = (done..done + len)
            .into_par_iter()
            .map(|f| -> Result<Option<(usize, Vec<bool>)>> {
                let mut rng = frame_rng(seed, 0, f);
                let msg: Vec<u8> = (0..n_m).map(|_| rng.gen_range(0..2u8)).collect();
                let cw = code.encode(&code.expand(&crc.encode(&msg)?)?)?;
                let llr = transmit_llr(&cw, sigma, &mut rng)?;
                let gate = bp_decode(&llr, code, model.iterations(), Kernel::Exact)?;
                let r = crc.remainder(&code.extract(gate.hard())?)?;
                if r.is_zero() {
                    return Ok(None);
                }
                let region = region_index(&r, model.strategy())?;
                let mut correct = Vec::with_capacity(alpha);
                for weights in model.members() {
                    let out = wbp_decode(&llr, code, model.iterations(), weights, false)?;
                    let got = code.extract(out.hard())?;
                    correct.push(got[..n_m] == msg[..]);
                }
                Ok(Some((region, correct)))
            })
            .collect::<Result<_>>()?;
        for (region, correct) in batch.into_iter().flatten() {
            let r = region - 1;
            region_frames[r] += 1;
            for (m, &ok) in correct.iter().enumerate() {
                counts[r][m] += ok as u64;
            }
            if !correct[r] {
                for (m, &ok) in correct.iter().enumerate() {
                    if m != r {
                        designated_fail[r][m] += ok as u64;
                    }
                }
            }
        }
        done += len;
    }
    Ok(DiversityReport { snr_db, frames, region_frames, counts, designated_fail })
}

// ------------------------------------------------------------------ output --

/// Writes one CSV row per point under `CSV_HEADER`, plus a `.json` sidecar
/// with the config, the fingerprint, and Wilson 95% FER intervals. Floats
/// print in Rust's shortest round-trip form, so equal results give equal
/// bytes.
pub fn write_results(result: &SimResult, csv_path: &Path) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for p in &result.points {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.snr_db,
            p.frames,
            p.frame_errors,
            p.bit_errors,
            p.fer,
            p.ber,
            p.gate_fail_prob,
            p.avg_flops,
            p.censored
        ));
    }
    fs::write(csv_path, text)
        .map_err(|e| Error::Io { path: csv_path.display().to_string(), source: e })?;

    #[derive(Serialize)]
    struct SidecarPoint<'a> {
        #[serde(flatten)]
        point: &'a SimPoint,
        fer_wilson_lower: f64,
        fer_wilson_upper: f64,
    }
    #[derive(Serialize)]
    struct Sidecar<'a> {
        config: &'a EvalConfig,
        fingerprint: &'a str,
        points: Vec<SidecarPoint<'a>>,
    }
    let sidecar = Sidecar {
        config: &result.config,
        fingerprint: &result.fingerprint,
        points: result
            .points
            .iter()
            .map(|p| {
                let (lo, hi) = wilson_interval(p.frame_errors, p.frames);
                SidecarPoint { point: p, fer_wilson_lower: lo, fer_wilson_upper: hi }
            })
            .collect(),
    };
    let json_path = csv_path.with_extension("json");
    let mut json =
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Model(e.to_string()))?;
    json.push('\n');
    fs::write(&json_path, json)
        .map_err(|e| Error::Io { path: json_path.display().to_string(), source: e })
}

/// Wilson 95% score interval for a binomial proportion. `n = 0` returns the
/// vacuous interval [0, 1].
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z95 * WILSON_Z95;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let spread = WILSON_Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (((center - spread) / denom).max(0.0), ((center + spread) / denom).min(1.0))
}

fn effective_rate(model: &EnsembleModel, rate: Option<f64>) -> f64 {
    rate.unwrap_or(model.code().info_len() as f64 / model.code().block_len() as f64)
}

/// FNV-1a hash of the model parameters and eval config in canonical JSON.
fn fingerprint(model: &EnsembleModel, config: &EvalConfig) -> String {
    #[derive(Serialize)]
    struct View<'a> {
        block_len: usize,
        info_len: usize,
        design_param: f64,
        generator: Vec<u8>,
        message_len: usize,
        iterations: usize,
        strategy: PartitionStrategy,
        config: &'a EvalConfig,
    }
    let view = View {
        block_len: model.code().block_len(),
        info_len: model.code().info_len(),
        design_param: model.code().design_param(),
        generator: model.crc().poly_msb_first(),
        message_len: model.crc().message_len(),
        iterations: model.iterations(),
        strategy: model.strategy(),
        config,
    };
    let bytes = serde_json::to_vec(&view).expect("plain structs serialize");
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
