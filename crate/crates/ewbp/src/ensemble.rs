//! The CRC-gated decoder ensemble and its serialized model format.
//!
//! A model bundles the code, the CRC, the iteration count, the partition
//! strategy, and one weight tensor per region. Decoding runs the plain BP
//! gate first and stops on a zero CRC remainder. Otherwise every member
//! decodes the frame; the lowest-indexed member whose word validates wins,
//! and if none validates the output falls back to the member designated by
//! the region of the gate's remainder.
//!
//! All members run the same graph for the same iteration count, so the
//! latency of the ensemble path is exactly twice the gate's: members are
//! independent and run concurrently in hardware terms. `estimate_latency`
//! prices a frame at `(1 + p) * 4 * T * log2(N)` message updates, `p` being
//! the probability the gate fails.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bp::{bp_decode, wbp_decode, DecodeTrace, Kernel, WbpWeights};
use crate::crc::{parse_generator_msb_first, region_index, CrcSpec, PartitionStrategy};
use crate::polar::PolarCode;
use crate::{Error, Result};

/// Serialized model layout version.
const FORMAT_VERSION: u32 = 1;

/// How a frame's final word was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPath {
    /// The gate's word already had a zero remainder; no member ran.
    GateSuccess,
    /// Lowest-indexed member (1-based) whose word validated.
    MemberValidated(usize),
    /// No word validated; the member designated by the gate remainder's
    /// region (1-based) supplied the output.
    Fallback(usize),
}

impl fmt::Display for DecisionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionPath::GateSuccess => write!(f, "gate"),
            DecisionPath::MemberValidated(i) => write!(f, "member {i}"),
            DecisionPath::Fallback(j) => write!(f, "fallback {j}"),
        }
    }
}

/// One decoded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    /// Hard decisions over the padded word (frozen positions included).
    pub padded: Vec<u8>,
    /// The information part: CRC message plus parity bits.
    pub info: Vec<u8>,
    pub path: DecisionPath,
    /// 0 when the gate validates, alpha otherwise.
    pub members_invoked: usize,
}

/// Training provenance stored alongside the weights. Everything here is
/// derived from the run configuration and the data, never from the clock,
/// so retraining with one seed reproduces the model file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub snrs_db: Vec<f64>,
    pub frames_per_snr: u64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub lr: f64,
    pub checkpoint_every: usize,
    pub rate: Option<f64>,
    pub bucket_sizes: Vec<usize>,
    pub validation_bce: Vec<f64>,
}

/// A gated ensemble: code, CRC, iteration count, partition, and one weight
/// tensor per region.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct EnsembleModel {
    code: PolarCode,
    crc: CrcSpec,
    iterations: usize,
    strategy: PartitionStrategy,
    members: Vec<WbpWeights>,
    metadata: Option<TrainingMetadata>,
}

impl EnsembleModel {
    pub fn new(
        code: PolarCode,
        crc: CrcSpec,
        iterations: usize,
        strategy: PartitionStrategy,
        members: Vec<WbpWeights>,
        metadata: Option<TrainingMetadata>,
    ) -> Result<Self> {
        if crc.codeword_len() != code.info_len() {
            return Err(Error::LengthMismatch {
                what: "CRC codeword vs code info length",
                expected: code.info_len(),
                got: crc.codeword_len(),
            });
        }
        if iterations == 0 {
            return Err(Error::InvalidArgument("iteration count must be positive".into()));
        }
        if members.len() != strategy.alpha {
            return Err(Error::LengthMismatch {
                what: "ensemble members vs regions",
                expected: strategy.alpha,
                got: members.len(),
            });
        }
        for w in &members {
            if w.iterations() != iterations || w.stages() != code.stages() {
                return Err(Error::LengthMismatch {
                    what: "member weight tensor",
                    expected: iterations * code.stages() * 4,
                    got: w.len(),
                });
            }
        }
        Ok(Self { code, crc, iterations, strategy, members, metadata })
    }

    /// An ensemble whose members all carry unit weights, so every member
    /// reproduces the gate exactly. Useful as a baseline and as the training
    /// starting point.
    pub fn untrained(
        code: PolarCode,
        crc: CrcSpec,
        iterations: usize,
        strategy: PartitionStrategy,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidArgument("iteration count must be positive".into()));
        }
        let members = vec![WbpWeights::unit(iterations, code.stages()); strategy.alpha];
        Self::new(code, crc, iterations, strategy, members, None)
    }

    pub fn code(&self) -> &PolarCode {
        &self.code
    }

    pub fn crc(&self) -> &CrcSpec {
        &self.crc
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn alpha(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[WbpWeights] {
        &self.members
    }

    pub fn metadata(&self) -> Option<&TrainingMetadata> {
        self.metadata.as_ref()
    }

    /// Decodes one frame of channel LLRs.
    pub fn decode(&self, llr: &[f64]) -> Result<DecodeOutcome> {
        let gate = bp_decode(llr, &self.code, self.iterations, Kernel::Exact)?;
        self.decode_given_gate(llr, &gate)
    }

    /// Finishes a decode whose gate pass already ran, reusing its output.
    /// The trace must come from plain BP on this model's code with this
    /// model's iteration count.
    pub fn decode_given_gate(&self, llr: &[f64], gate: &DecodeTrace) -> Result<DecodeOutcome> {
        let n = self.code.block_len();
        if gate.hard().len() != n {
            return Err(Error::LengthMismatch {
                what: "gate trace",
                expected: n,
                got: gate.hard().len(),
            });
        }
        let gate_info = self.code.extract(gate.hard())?;
        let gate_remainder = self.crc.remainder(&gate_info)?;
        if gate_remainder.is_zero() {
            return Ok(DecodeOutcome {
                padded: gate.hard().to_vec(),
                info: gate_info,
                path: DecisionPath::GateSuccess,
                members_invoked: 0,
            });
        }

        let mut words = Vec::with_capacity(self.members.len());
        let mut validated = None;
        for (i, weights) in self.members.iter().enumerate() {
            let out = wbp_decode(llr, &self.code, self.iterations, weights, false)?;
            let info = self.code.extract(out.hard())?;
            let valid = self.crc.remainder(&info)?.is_zero();
            words.push((out.hard().to_vec(), info));
            if valid && validated.is_none() {
                validated = Some(i);
            }
        }

        let alpha = self.members.len();
        let (choice, path) = match validated {
            Some(i) => (i, DecisionPath::MemberValidated(i + 1)),
            None => {
                let region = region_index(&gate_remainder, self.strategy)?;
                (region - 1, DecisionPath::Fallback(region))
            }
        };
        let (padded, info) = words.swap_remove(choice);
        Ok(DecodeOutcome { padded, info, path, members_invoked: alpha })
    }

    /// Total trainable parameters across the gate and all members: the gate
    /// counts as a unit-weight member, giving `(alpha + 1) * 4 * T * log2(N)`.
    pub fn count_weights(&self) -> usize {
        (self.members.len() + 1) * 4 * self.iterations * self.code.stages()
    }

    /// Expected message updates per frame when the gate fails with
    /// probability `p`: members run concurrently, so a failed gate costs one
    /// extra full decode, `(1 + p) * 4 * T * log2(N)`.
    pub fn estimate_latency(&self, gate_fail_prob: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&gate_fail_prob) {
            return Err(Error::InvalidArgument(format!(
                "gate failure probability must lie in [0, 1], got {gate_fail_prob}"
            )));
        }
        let per_decode = (4 * self.iterations * self.code.stages()) as f64;
        Ok((1.0 + gate_fail_prob) * per_decode)
    }

    /// Deterministic pretty JSON for the whole model.
    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json_string()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        serde_json::from_str(&text).map_err(|e| Error::Model(e.to_string()))
    }
}

// ------------------------------------------------------------- model file --

#[derive(Serialize, Deserialize)]
struct CodeParams {
    block_len: usize,
    info_len: usize,
    design_param: f64,
}

#[derive(Serialize, Deserialize)]
struct CrcParams {
    /// Generator polynomial as a most-significant-first bit string.
    generator: String,
    message_len: usize,
}

/// On-disk layout. Weight tensors nest as members[i][t][stage][class].
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    code: CodeParams,
    crc: CrcParams,
    iterations: usize,
    alpha: usize,
    strategy: PartitionStrategy,
    members: Vec<Vec<Vec<Vec<f64>>>>,
    metadata: Option<TrainingMetadata>,
}

impl From<EnsembleModel> for ModelFile {
    fn from(model: EnsembleModel) -> Self {
        let generator: String = model
            .crc
            .poly_msb_first()
            .iter()
            .map(|&b| if b == 1 { '1' } else { '0' })
            .collect();
        ModelFile {
            format_version: FORMAT_VERSION,
            code: CodeParams {
                block_len: model.code.block_len(),
                info_len: model.code.info_len(),
                design_param: model.code.design_param(),
            },
            crc: CrcParams { generator, message_len: model.crc.message_len() },
            iterations: model.iterations,
            alpha: model.members.len(),
            strategy: model.strategy,
            members: model.members.into_iter().map(Into::into).collect(),
            metadata: model.metadata,
        }
    }
}

impl TryFrom<ModelFile> for EnsembleModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.alpha != file.strategy.alpha {
            return Err(Error::Model(format!(
                "alpha field ({}) disagrees with the strategy's region count ({})",
                file.alpha, file.strategy.alpha
            )));
        }
        let code =
            PolarCode::construct(file.code.block_len, file.code.info_len, file.code.design_param)?;
        let poly = parse_generator_msb_first(&file.crc.generator)?;
        let crc = CrcSpec::new(&poly, file.crc.message_len)?;
        let members: Vec<WbpWeights> = file
            .members
            .into_iter()
            .map(|nested| WbpWeights::try_from(nested).map_err(Error::Model))
            .collect::<Result<_>>()?;
        EnsembleModel::new(code, crc, file.iterations, file.strategy, members, file.metadata)
    }
}
