//! Weight training: loss, gradients, the optimizer, and the data pipeline.
//!
//! Decoders train on the all-zero codeword only; by channel and code symmetry
//! the learned weights apply to every codeword, and evaluation on random
//! messages confirms it. Each ensemble member sees a dataset of its own:
//! zero-codeword frames are pushed through the gating decoder, frames the
//! gate already validates are discarded, and the rest are bucketed by the
//! partition region of the gate's CRC remainder. Member `i` trains on bucket
//! `i` alone.
//!
//! Gradients flow through the unfolded decoder by replaying its recorded
//! message history backwards. Saturated messages (clip active) and saturated
//! output probabilities (loss clamp active) pass no gradient, matching the
//! forward computation exactly; central finite differences on the loss agree
//! to a relative error below 1e-4.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{
    box_plus, box_plus_partials, sigmoid, wbp_decode, DecodeTrace, Kernel, WbpWeights,
    WeightClass, LLR_MAX,
};
use crate::channel::{sigma_from_ebn0, transmit_llr_indexed};
use crate::crc::{region_index, CrcSpec, PartitionStrategy};
use crate::ensemble::{EnsembleModel, TrainingMetadata};
use crate::polar::PolarCode;
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Output probabilities are clamped to `[FLOOR, 1 - FLOOR]` inside the loss.
pub const BCE_PROB_FLOOR: f64 = 1e-12;

/// Seed-derivation tags keeping dataset noise and per-member shuffles on
/// disjoint streams.
const TAG_DATASET: u64 = 0x6461_7461;
const TAG_MEMBER: u64 = 0x6d65_6d00;

// ------------------------------------------------------------------- loss --

/// Bit-wise binary cross entropy between soft decoder outputs and a target
/// word, averaged over all positions. The probability of bit 1 at output
/// LLR `L` is `sigmoid(-L)`.
pub fn bce_loss(soft: &[f64], target: &[u8]) -> Result<f64> {
    if soft.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "loss target",
            expected: soft.len(),
            got: target.len(),
        });
    }
    debug_assert!(target.iter().all(|&b| b <= 1));
    let mut sum = 0.0;
    for (&l, &u) in soft.iter().zip(target) {
        let p_one = sigmoid(-l).clamp(BCE_PROB_FLOOR, 1.0 - BCE_PROB_FLOOR);
        sum -= if u == 1 { p_one.ln() } else { (1.0 - p_one).ln() };
    }
    Ok(sum / soft.len() as f64)
}

// --------------------------------------------------------------- gradient --

/// One training frame: channel LLRs plus the transmitted padded word.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub llr: Vec<f64>,
    pub target: Vec<u8>,
}

/// Loss and weight gradient for one frame: runs a recorded decode and
/// replays it backwards. The gradient tensor has the shape of `weights`.
pub fn wbp_gradient(
    frame: &LabeledFrame,
    code: &PolarCode,
    iterations: usize,
    weights: &WbpWeights,
) -> Result<(f64, WbpWeights)> {
    let trace = wbp_decode(&frame.llr, code, iterations, weights, true)?;
    gradient_from_trace(&trace, &frame.target, code, weights)
}

/// Backward pass over a recorded trace. `weights` must be the tensor the
/// trace was recorded with; a trace without snapshots is a contract
/// violation.
pub fn gradient_from_trace(
    trace: &DecodeTrace,
    target: &[u8],
    code: &PolarCode,
    weights: &WbpWeights,
) -> Result<(f64, WbpWeights)> {
    let snaps = trace.snapshots.as_ref().ok_or_else(|| {
        Error::ContractViolation(
            "gradient requested from a trace recorded without snapshots".into(),
        )
    })?;
    let n = code.block_len();
    let stages = code.stages();
    let half = n / 2;
    let iterations = trace.iterations();
    if weights.iterations() != iterations || weights.stages() != stages {
        return Err(Error::LengthMismatch {
            what: "weight tensor",
            expected: iterations * stages * 4,
            got: weights.len(),
        });
    }
    if target.len() != n {
        return Err(Error::LengthMismatch { what: "target word", expected: n, got: target.len() });
    }

    let loss = bce_loss(&trace.soft, target)?;

    // Adjoint seeds: d loss / d L at column 0. The clamp gates saturated
    // probabilities to zero gradient.
    let tensor = (stages + 1) * n;
    let mut dl = vec![0.0f64; tensor];
    let mut dr = vec![0.0f64; tensor];
    for j in 0..n {
        let p_one = sigmoid(-trace.soft[j]);
        if (BCE_PROB_FLOOR..=1.0 - BCE_PROB_FLOOR).contains(&p_one) {
            dl[j] = (target[j] as f64 - p_one) / n as f64;
        }
    }

    let mut grad = WbpWeights::zeros(iterations, stages);

    // Replay iterations backwards; within each, the left pass backwards
    // (ascending boundaries), then the right pass backwards (descending).
    // `dl` holds adjoints of the most recent left tensor still unconsumed,
    // `dr` of this iteration's right tensor. Adjoints into the constant
    // rows (column-0 priors, channel column) accumulate but are never read.
    for t in (0..iterations).rev() {
        let l_out = &snaps.l[t + 1];
        let l_prev = &snaps.l[t];
        let r_cur = &snaps.r[t];

        for b in 0..stages {
            let w_upper = weights.get(t, b, WeightClass::LeftUpper);
            let w_lower = weights.get(t, b, WeightClass::LeftLower);
            let row = b * n;
            let next_row = (b + 1) * n;
            for j in 0..half {
                let g_up = dl[row + j];
                let g_lo = dl[row + j + half];
                dl[row + j] = 0.0;
                dl[row + j + half] = 0.0;
                if g_up == 0.0 && g_lo == 0.0 {
                    continue;
                }
                let x_even = l_out[next_row + 2 * j];
                let x_odd = l_out[next_row + 2 * j + 1];
                let a = r_cur[row + j];
                let c = r_cur[row + j + half];
                if g_up != 0.0 {
                    let f_val = box_plus(x_even, x_odd + c);
                    if (w_upper * f_val).abs() <= LLR_MAX {
                        *grad.at_mut(t, b, WeightClass::LeftUpper) += g_up * f_val;
                        let (da, db) = box_plus_partials(x_even, x_odd + c);
                        let g = g_up * w_upper;
                        dl[next_row + 2 * j] += g * da;
                        dl[next_row + 2 * j + 1] += g * db;
                        dr[row + j + half] += g * db;
                    }
                }
                if g_lo != 0.0 {
                    let f_val = box_plus(a, x_even);
                    if (w_lower * f_val + x_odd).abs() <= LLR_MAX {
                        *grad.at_mut(t, b, WeightClass::LeftLower) += g_lo * f_val;
                        let (da, db) = box_plus_partials(a, x_even);
                        let g = g_lo * w_lower;
                        dr[row + j] += g * da;
                        dl[next_row + 2 * j] += g * db;
                        dl[next_row + 2 * j + 1] += g_lo;
                    }
                }
            }
        }

        for b in (0..stages).rev() {
            let w_even = weights.get(t, b, WeightClass::RightEven);
            let w_odd = weights.get(t, b, WeightClass::RightOdd);
            let row = b * n;
            let next_row = (b + 1) * n;
            for j in 0..half {
                let g_e = dr[next_row + 2 * j];
                let g_o = dr[next_row + 2 * j + 1];
                dr[next_row + 2 * j] = 0.0;
                dr[next_row + 2 * j + 1] = 0.0;
                if g_e == 0.0 && g_o == 0.0 {
                    continue;
                }
                let a = r_cur[row + j];
                let c = r_cur[row + j + half];
                let lp_even = l_prev[next_row + 2 * j];
                let lp_odd = l_prev[next_row + 2 * j + 1];
                if g_e != 0.0 {
                    let f_val = box_plus(a, lp_odd + c);
                    if (w_even * f_val).abs() <= LLR_MAX {
                        *grad.at_mut(t, b, WeightClass::RightEven) += g_e * f_val;
                        let (da, db) = box_plus_partials(a, lp_odd + c);
                        let g = g_e * w_even;
                        dr[row + j] += g * da;
                        dl[next_row + 2 * j + 1] += g * db;
                        dr[row + j + half] += g * db;
                    }
                }
                if g_o != 0.0 {
                    let f_val = box_plus(a, lp_even);
                    if (w_odd * f_val + c).abs() <= LLR_MAX {
                        *grad.at_mut(t, b, WeightClass::RightOdd) += g_o * f_val;
                        let (da, db) = box_plus_partials(a, lp_even);
                        let g = g_o * w_odd;
                        dr[row + j] += g * da;
                        dl[next_row + 2 * j] += g * db;
                        dr[row + j + half] += g_o;
                    }
                }
            }
        }
    }

    Ok((loss, grad))
}

// ------------------------------------------------------------------- adam --

/// Adam optimizer state: first and second moment estimates plus the step
/// counter driving bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `weights` against `grad`.
pub fn adam_step(
    weights: &mut WbpWeights,
    grad: &WbpWeights,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grad.len() != weights.len() || state.m.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "optimizer tensors",
            expected: weights.len(),
            got: grad.len().min(state.m.len()),
        });
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let w = weights.as_mut_slice();
    for i in 0..w.len() {
        let g = grad.as_slice()[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        w[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

// ------------------------------------------------------------------- data --

/// Training-run configuration shared by dataset induction and the loops.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub snrs_db: Vec<f64>,
    pub frames_per_snr: u64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub lr: f64,
    /// Validation-checkpoint cadence in epochs.
    pub checkpoint_every: usize,
    /// BP/WBP iteration count T.
    pub iterations: usize,
    pub strategy: PartitionStrategy,
    pub seed: u64,
    /// Channel rate override for sigma; `None` uses N_u / N_c.
    pub rate: Option<f64>,
}

impl TrainConfig {
    /// The full-scale recipe: 1e5 frames per SNR and member, 100 epochs of
    /// 200 batches at lr 1e-2, T = 5, with per-block-length SNR sets.
    pub fn recommended(code: &PolarCode, strategy: PartitionStrategy, seed: u64) -> Self {
        let snrs_db = match code.block_len() {
            64 => vec![1.25, 2.25, 3.25, 4.25],
            128 => vec![2.0, 3.0, 4.0, 5.0],
            _ => vec![1.0, 2.0, 3.0, 4.0],
        };
        Self {
            snrs_db,
            frames_per_snr: 100_000 * strategy.alpha as u64,
            epochs: 100,
            batches_per_epoch: 200,
            lr: 1e-2,
            checkpoint_every: 5,
            iterations: 5,
            strategy,
            seed,
            rate: None,
        }
    }

    pub fn effective_rate(&self, code: &PolarCode) -> f64 {
        self.rate
            .unwrap_or(code.info_len() as f64 / code.block_len() as f64)
    }

    fn validate(&self, code: &PolarCode, crc: &CrcSpec) -> Result<()> {
        if crc.codeword_len() != code.info_len() {
            return Err(Error::LengthMismatch {
                what: "CRC codeword vs code info length",
                expected: code.info_len(),
                got: crc.codeword_len(),
            });
        }
        if self.snrs_db.is_empty() {
            return Err(Error::InvalidArgument("training needs at least one SNR".into()));
        }
        if self.frames_per_snr == 0 {
            return Err(Error::InvalidArgument("frames_per_snr must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iteration count must be positive".into()));
        }
        if self.batches_per_epoch == 0 {
            return Err(Error::InvalidArgument("batches_per_epoch must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidArgument("checkpoint_every must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        PartitionStrategy::new(self.strategy.kind, self.strategy.alpha)?;
        Ok(())
    }
}

/// Simulates zero-codeword frames at every training SNR, keeps the ones the
/// gating decoder fails to validate, and buckets them by the partition
/// region of the gate remainder. Bucket `i` (0-based `i-1`) is the dataset
/// of member `i`; buckets are disjoint by construction.
pub fn build_partitioned_datasets(
    code: &PolarCode,
    crc: &CrcSpec,
    config: &TrainConfig,
) -> Result<Vec<Vec<LabeledFrame>>> {
    config.validate(code, crc)?;
    let n = code.block_len();
    let zeros = vec![0u8; n];
    let rate = config.effective_rate(code);
    let dataset_seed = derive_seed(config.seed, TAG_DATASET);

    let mut buckets: Vec<Vec<LabeledFrame>> = vec![Vec::new(); config.strategy.alpha];
    for (si, &snr) in config.snrs_db.iter().enumerate() {
        let sigma = sigma_from_ebn0(snr, rate)?;
        let kept: Vec<Option<(usize, Vec<f64>)>> = (0..config.frames_per_snr)
            .into_par_iter()
            .map(|frame| -> Result<Option<(usize, Vec<f64>)>> {
                let llr = transmit_llr_indexed(&zeros, sigma, dataset_seed, si as u32, frame)?;
                let gate = crate::bp::bp_decode(&llr, code, config.iterations, Kernel::Exact)?;
                let word = code.extract(gate.hard())?;
                let r = crc.remainder(&word)?;
                if r.is_zero() {
                    return Ok(None);
                }
                let region = region_index(&r, config.strategy)?;
                Ok(Some((region, llr)))
            })
            .collect::<Result<_>>()?;
        for item in kept.into_iter().flatten() {
            let (region, llr) = item;
            buckets[region - 1].push(LabeledFrame { llr, target: zeros.clone() });
        }
    }
    Ok(buckets)
}

// ---------------------------------------------------------------- members --

/// A trained member plus its provenance.
#[derive(Debug, Clone)]
pub struct TrainedMember {
    pub region: usize,
    pub weights: WbpWeights,
    /// BCE of the selected checkpoint on the held-out slice.
    pub validation_bce: f64,
    pub bucket_size: usize,
}

/// Trains the member of one region on its bucket.
///
/// Every 10th frame is held out for validation. Starting from unit weights,
/// the member takes one Adam step per batch; checkpoints are evaluated at
/// epoch 0, every `checkpoint_every` epochs, and at the last epoch, and the
/// weights with the lowest validation BCE are returned. Zero epochs thus
/// return unit weights.
pub fn train_member(
    bucket: &[LabeledFrame],
    region: usize,
    code: &PolarCode,
    config: &TrainConfig,
) -> Result<TrainedMember> {
    if bucket.is_empty() {
        return Err(Error::EmptyBucket { region });
    }
    let n = code.block_len();
    for f in bucket {
        if f.llr.len() != n || f.target.len() != n {
            return Err(Error::LengthMismatch {
                what: "training frame",
                expected: n,
                got: f.llr.len().min(f.target.len()),
            });
        }
    }
    let stages = code.stages();
    let iterations = config.iterations;

    let val: Vec<&LabeledFrame> = bucket.iter().step_by(10).collect();
    let mut train: Vec<&LabeledFrame> =
        bucket.iter().enumerate().filter(|(i, _)| i % 10 != 0).map(|(_, f)| f).collect();
    if train.is_empty() {
        // A bucket too small to split still trains, reusing the held-out frames.
        train = val.clone();
    }

    let validation_bce = |weights: &WbpWeights| -> Result<f64> {
        let losses: Vec<f64> = val
            .par_iter()
            .map(|f| {
                let out = wbp_decode(&f.llr, code, iterations, weights, false)?;
                bce_loss(out.soft(), &f.target)
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    };

    let mut weights = WbpWeights::unit(iterations, stages);
    let mut best_bce = validation_bce(&weights)?;
    let mut best_weights = weights.clone();

    let mut adam = AdamState::new(weights.len());
    let batch_size = (train.len() / config.batches_per_epoch).max(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_MEMBER ^ region as u64));

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch_size) {
            let grads: Vec<(f64, WbpWeights)> = chunk
                .par_iter()
                .map(|&idx| wbp_gradient(train[idx], code, iterations, &weights))
                .collect::<Result<_>>()?;
            let mut mean = WbpWeights::zeros(iterations, stages);
            let scale = 1.0 / grads.len() as f64;
            for (_, g) in &grads {
                for (acc, &v) in mean.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *acc += scale * v;
                }
            }
            adam_step(&mut weights, &mean, &mut adam, config.lr)?;
        }
        if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
            let bce = validation_bce(&weights)?;
            if bce < best_bce {
                best_bce = bce;
                best_weights = weights.clone();
            }
        }
    }

    Ok(TrainedMember {
        region,
        weights: best_weights,
        validation_bce: best_bce,
        bucket_size: bucket.len(),
    })
}

/// Builds the datasets and trains all members independently, returning the
/// assembled model. Any empty bucket is a hard error: the partition has a
/// region this operating point never populates.
pub fn train_ensemble(
    code: &PolarCode,
    crc: &CrcSpec,
    config: &TrainConfig,
) -> Result<EnsembleModel> {
    let buckets = build_partitioned_datasets(code, crc, config)?;
    let members: Vec<TrainedMember> = buckets
        .iter()
        .enumerate()
        .map(|(i, bucket)| train_member(bucket, i + 1, code, config))
        .collect::<Result<_>>()?;

    let metadata = TrainingMetadata {
        seed: config.seed,
        snrs_db: config.snrs_db.clone(),
        frames_per_snr: config.frames_per_snr,
        epochs: config.epochs,
        batches_per_epoch: config.batches_per_epoch,
        lr: config.lr,
        checkpoint_every: config.checkpoint_every,
        rate: config.rate,
        bucket_sizes: members.iter().map(|m| m.bucket_size).collect(),
        validation_bce: members.iter().map(|m| m.validation_bce).collect(),
    };
    EnsembleModel::new(
        code.clone(),
        crc.clone(),
        config.iterations,
        config.strategy,
        members.into_iter().map(|m| m.weights).collect(),
        Some(metadata),
    )
}

/// Information-bit error rate of every member over a frame batch.
pub fn per_member_ber(model: &EnsembleModel, frames: &[LabeledFrame]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("BER needs at least one frame".into()));
    }
    let code = model.code();
    let mut bers = Vec::with_capacity(model.alpha());
    for weights in model.members() {
        let errors: Vec<u64> = frames
            .par_iter()
            .map(|f| -> Result<u64> {
                let out = wbp_decode(&f.llr, code, model.iterations(), weights, false)?;
                let decoded = code.extract(out.hard())?;
                let truth = code.extract(&f.target)?;
                Ok(decoded.iter().zip(&truth).filter(|(a, b)| a != b).count() as u64)
            })
            .collect::<Result<_>>()?;
        let total_bits = (frames.len() * code.info_len()) as f64;
        bers.push(errors.iter().sum::<u64>() as f64 / total_bits);
    }
    Ok(bers)
}
