//! Weighted belief propagation on the polar factor graph.
//!
//! # Graph and message layout
//!
//! The graph has `stages + 1` columns of `N` nodes each (`stages =
//! log2(N)`). Column 0 holds the padded word side, column `stages` the
//! channel side. Left-going messages `L` and right-going messages `R` are
//! stored as flat `(stages + 1) x N` tensors. Stage boundary `b` connects
//! columns `b` and `b+1` through `N/2` butterflies; butterfly `j` ties the
//! column-`b` nodes `j` and `j + N/2` to the column-`b+1` nodes `2j` and
//! `2j + 1` via the constraints
//!
//! ```text
//! right(b+1, 2j)   = left(b, j) ^ left(b, j + N/2)
//! right(b+1, 2j+1) = left(b, j + N/2)
//! ```
//!
//! # Schedule
//!
//! Column 0 right messages are fixed priors: the clip bound on frozen
//! positions, zero elsewhere. Column `stages` left messages are the clipped
//! channel LLRs. Each iteration sweeps a right pass over ascending stage
//! boundaries (reading the previous iteration's left messages) and then a
//! left pass over descending boundaries (reading this iteration's right
//! messages). After the final iteration, the hard decision at position `j`
//! is 1 exactly when the column-0 left message is <= 0.
//!
//! # Weights
//!
//! Every message is scaled by a learned weight before clipping. Weights are
//! shared across butterflies of one stage boundary but distinct per
//! iteration, boundary, and update class; the four classes per boundary are
//! the two left-update lines and the two right-update lines. The scale
//! applies to the box-plus term only: the additive pass-through term of the
//! lower-left and odd-right updates enters unweighted. Unit weights
//! reproduce plain belief propagation exactly.

use serde::{Deserialize, Serialize};

use crate::polar::PolarCode;
use crate::{Error, Result};

/// Message clip bound: every stored message, the channel LLRs, and the
/// frozen-position priors are confined to `[-LLR_MAX, LLR_MAX]`.
pub const LLR_MAX: f64 = 30.0;

// ---------------------------------------------------------------- kernels --

/// Check-node combination rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// The exact LLR rule `ln((1 + e^{a+b}) / (e^a + e^b))`.
    Exact,
    /// The min-sum approximation `sign(a) sign(b) min(|a|, |b|)`.
    MinSum,
}

/// Exact box-plus in overflow-safe form: the min-sum term plus two
/// `ln(1 + e^-|.|)` corrections.
#[inline]
pub fn box_plus(a: f64, b: f64) -> f64 {
    box_plus_min_sum(a, b) + (-(a + b).abs()).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p()
}

/// Min-sum box-plus.
#[inline]
pub fn box_plus_min_sum(a: f64, b: f64) -> f64 {
    let m = a.abs().min(b.abs());
    if (a >= 0.0) == (b >= 0.0) {
        m
    } else {
        -m
    }
}

#[inline]
fn kernel_eval(kernel: Kernel, a: f64, b: f64) -> f64 {
    match kernel {
        Kernel::Exact => box_plus(a, b),
        Kernel::MinSum => box_plus_min_sum(a, b),
    }
}

/// Numerically stable logistic function.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Partial derivatives of the exact box-plus with respect to each input:
/// `df/da = sigmoid(a+b) - sigmoid(a-b)` and symmetrically for b.
#[inline]
pub(crate) fn box_plus_partials(a: f64, b: f64) -> (f64, f64) {
    let s = sigmoid(a + b);
    (s - sigmoid(a - b), s - sigmoid(b - a))
}

#[inline]
fn clip(x: f64) -> f64 {
    x.clamp(-LLR_MAX, LLR_MAX)
}

/// Hard decision on a soft output: 1 exactly when the LLR is <= 0.
#[inline]
pub fn hard_decision(llr: f64) -> u8 {
    (llr <= 0.0) as u8
}

// ---------------------------------------------------------------- weights --

/// Update classes within one stage boundary, in weight-tensor order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum WeightClass {
    /// Left message into column-b node `j`.
    LeftUpper = 0,
    /// Left message into column-b node `j + N/2`.
    LeftLower = 1,
    /// Right message into column-(b+1) node `2j`.
    RightEven = 2,
    /// Right message into column-(b+1) node `2j + 1`.
    RightOdd = 3,
}

pub const WEIGHT_CLASSES: usize = 4;

/// The learnable weight tensor of one decoder: `iterations x stages x 4`
/// multiplicative message scales, initialized to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct WbpWeights {
    iterations: usize,
    stages: usize,
    data: Vec<f64>,
}

impl WbpWeights {
    /// All-ones weights: plain belief propagation.
    pub fn unit(iterations: usize, stages: usize) -> Self {
        Self {
            iterations,
            stages,
            data: vec![1.0; iterations * stages * WEIGHT_CLASSES],
        }
    }

    /// Zero tensor of the same shape, for gradient accumulation.
    pub fn zeros(iterations: usize, stages: usize) -> Self {
        Self {
            iterations,
            stages,
            data: vec![0.0; iterations * stages * WEIGHT_CLASSES],
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Total number of scalar weights, `4 * iterations * stages`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn idx(&self, iteration: usize, stage: usize, class: usize) -> usize {
        debug_assert!(iteration < self.iterations && stage < self.stages && class < WEIGHT_CLASSES);
        (iteration * self.stages + stage) * WEIGHT_CLASSES + class
    }

    #[inline]
    pub fn get(&self, iteration: usize, stage: usize, class: WeightClass) -> f64 {
        self.data[self.idx(iteration, stage, class as usize)]
    }

    #[inline]
    pub fn set(&mut self, iteration: usize, stage: usize, class: WeightClass, value: f64) {
        let i = self.idx(iteration, stage, class as usize);
        self.data[i] = value;
    }

    #[inline]
    pub fn at_mut(&mut self, iteration: usize, stage: usize, class: WeightClass) -> &mut f64 {
        let i = self.idx(iteration, stage, class as usize);
        &mut self.data[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_unit(&self) -> bool {
        self.data.iter().all(|&w| w == 1.0)
    }

    fn matches(&self, iterations: usize, stages: usize) -> bool {
        self.iterations == iterations && self.stages == stages
    }
}

impl From<WbpWeights> for Vec<Vec<Vec<f64>>> {
    fn from(w: WbpWeights) -> Self {
        (0..w.iterations)
            .map(|t| {
                (0..w.stages)
                    .map(|s| {
                        (0..WEIGHT_CLASSES)
                            .map(|c| w.data[(t * w.stages + s) * WEIGHT_CLASSES + c])
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for WbpWeights {
    type Error = String;

    fn try_from(nested: Vec<Vec<Vec<f64>>>) -> std::result::Result<Self, String> {
        let iterations = nested.len();
        if iterations == 0 {
            return Err("weight tensor has no iterations".into());
        }
        let stages = nested[0].len();
        let mut data = Vec::with_capacity(iterations * stages * WEIGHT_CLASSES);
        for per_iter in &nested {
            if per_iter.len() != stages {
                return Err("ragged weight tensor: stage counts differ across iterations".into());
            }
            for per_stage in per_iter {
                if per_stage.len() != WEIGHT_CLASSES {
                    return Err(format!(
                        "each stage needs {WEIGHT_CLASSES} weight classes, got {}",
                        per_stage.len()
                    ));
                }
                data.extend_from_slice(per_stage);
            }
        }
        Ok(Self { iterations, stages, data })
    }
}

// ------------------------------------------------------------------ trace --

/// Full message tensors recorded during a decode, enough to replay every
/// update backwards: `l[t]` is the left tensor after iteration t's left pass
/// (`l[0]` is the initial state), `r[t-1]` the right tensor after iteration
/// t's right pass.
#[derive(Debug, Clone)]
pub(crate) struct Snapshots {
    pub l: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

/// Result of one decode: soft outputs, hard decisions, and optionally the
/// recorded message history for gradient computation.
#[derive(Debug, Clone)]
pub struct DecodeTrace {
    pub(crate) iterations: usize,
    pub(crate) soft: Vec<f64>,
    pub(crate) hard: Vec<u8>,
    pub(crate) snapshots: Option<Snapshots>,
}

impl DecodeTrace {
    /// Column-0 left messages after the final iteration, one per position.
    pub fn soft(&self) -> &[f64] {
        &self.soft
    }

    /// Hard decisions over the full padded word.
    pub fn hard(&self) -> &[u8] {
        &self.hard
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Whether the message history was recorded.
    pub fn has_snapshots(&self) -> bool {
        self.snapshots.is_some()
    }
}

// ----------------------------------------------------------------- decode --

/// Plain belief propagation: unit weights, selectable kernel.
pub fn bp_decode(
    llr: &[f64],
    code: &PolarCode,
    iterations: usize,
    kernel: Kernel,
) -> Result<DecodeTrace> {
    decode_inner(llr, code, iterations, None, kernel, false)
}

/// Weighted belief propagation with the exact kernel. With `record_trace`
/// the full message history is kept for a later gradient pass.
pub fn wbp_decode(
    llr: &[f64],
    code: &PolarCode,
    iterations: usize,
    weights: &WbpWeights,
    record_trace: bool,
) -> Result<DecodeTrace> {
    decode_inner(llr, code, iterations, Some(weights), Kernel::Exact, record_trace)
}

fn decode_inner(
    llr: &[f64],
    code: &PolarCode,
    iterations: usize,
    weights: Option<&WbpWeights>,
    kernel: Kernel,
    record_trace: bool,
) -> Result<DecodeTrace> {
    let n = code.block_len();
    let stages = code.stages();
    let half = n / 2;

    if llr.len() != n {
        return Err(Error::LengthMismatch { what: "channel LLRs", expected: n, got: llr.len() });
    }
    if llr.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("channel LLRs contain NaN".into()));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("iteration count must be positive".into()));
    }
    if let Some(w) = weights {
        if !w.matches(iterations, stages) {
            return Err(Error::LengthMismatch {
                what: "weight tensor",
                expected: iterations * stages * WEIGHT_CLASSES,
                got: w.len(),
            });
        }
    }

    let tensor = (stages + 1) * n;
    let mut l = vec![0.0f64; tensor];
    let mut r = vec![0.0f64; tensor];
    for j in 0..n {
        r[j] = if code.is_frozen(j) { LLR_MAX } else { 0.0 };
        l[stages * n + j] = clip(llr[j]);
    }

    let mut snapshots = record_trace.then(|| Snapshots {
        l: Vec::with_capacity(iterations + 1),
        r: Vec::with_capacity(iterations),
    });
    if let Some(s) = snapshots.as_mut() {
        s.l.push(l.clone());
    }

    for t in 0..iterations {
        // Right pass, ascending boundaries. Reads the previous iteration's
        // left messages; within the pass, column b is final before column
        // b+1 is written.
        for b in 0..stages {
            let (w_even, w_odd) = match weights {
                Some(w) => (
                    w.get(t, b, WeightClass::RightEven),
                    w.get(t, b, WeightClass::RightOdd),
                ),
                None => (1.0, 1.0),
            };
            let (cur, next) = r.split_at_mut((b + 1) * n);
            let cur = &cur[b * n..];
            let next = &mut next[..n];
            let l_next = &l[(b + 1) * n..(b + 2) * n];
            for j in 0..half {
                let a = cur[j];
                let c = cur[j + half];
                next[2 * j] = clip(w_even * kernel_eval(kernel, a, l_next[2 * j + 1] + c));
                next[2 * j + 1] = clip(w_odd * kernel_eval(kernel, a, l_next[2 * j]) + c);
            }
        }
        if let Some(s) = snapshots.as_mut() {
            s.r.push(r.clone());
        }

        // Left pass, descending boundaries. Reads this iteration's right
        // messages; column b+1 is final before column b is written.
        for b in (0..stages).rev() {
            let (w_upper, w_lower) = match weights {
                Some(w) => (
                    w.get(t, b, WeightClass::LeftUpper),
                    w.get(t, b, WeightClass::LeftLower),
                ),
                None => (1.0, 1.0),
            };
            let r_cur = &r[b * n..(b + 1) * n];
            let (cur, next) = l.split_at_mut((b + 1) * n);
            let cur = &mut cur[b * n..];
            let next = &next[..n];
            for j in 0..half {
                let a = r_cur[j];
                let c = r_cur[j + half];
                cur[j] = clip(w_upper * kernel_eval(kernel, next[2 * j], next[2 * j + 1] + c));
                cur[j + half] = clip(w_lower * kernel_eval(kernel, a, next[2 * j]) + next[2 * j + 1]);
            }
        }
        if let Some(s) = snapshots.as_mut() {
            s.l.push(l.clone());
        }
    }

    let soft: Vec<f64> = l[..n].to_vec();
    let hard: Vec<u8> = soft.iter().map(|&v| hard_decision(v)).collect();
    Ok(DecodeTrace { iterations, soft, hard, snapshots })
}
