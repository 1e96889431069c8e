//! CRC-gated ensembles of weighted belief-propagation decoders for polar codes.
//!
//! The pipeline: a message is CRC-encoded, padded onto the reliable positions of
//! a polar code, transmitted over BPSK/AWGN, and decoded by iterative belief
//! propagation on the code's factor graph. A single *gating* decoder (plain BP)
//! runs first; its CRC remainder either validates the frame or selects, through
//! a fixed partition of the nonzero remainder space, which specialist decoder of
//! an ensemble is most likely to fix it. Each specialist is the same BP decoder
//! with learned multiplicative message weights, trained only on frames whose
//! gate remainder fell in its region.
//!
//! Module map:
//! - [`crc`]: systematic CRC codec and remainder-space partitions
//! - [`polar`]: code construction, factor-graph encoder, padding/extraction
//! - [`channel`]: BPSK mapping, AWGN, LLR computation, counter-based noise
//! - [`bp`]: weighted/plain BP decoding on the unfolded factor graph
//! - [`training`]: BCE loss, reverse-mode gradients, Adam, dataset induction,
//!   member/ensemble training loops
//! - [`ensemble`]: the gated inference rule and model (de)serialization
//! - [`harness`]: Monte Carlo FER/BER/latency evaluation and reports

pub mod bp;
pub mod channel;
pub mod crc;
pub mod ensemble;
pub mod harness;
pub mod polar;
pub mod rng;
pub mod training;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A caller broke an API contract (e.g. asked for the region of a zero
    /// remainder, or a gradient from a trace that was not recorded).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A partition region received no training frames, so no member can be
    /// trained for it at this operating point.
    #[error("training bucket for region {region} is empty")]
    EmptyBucket { region: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("model file error: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, Error>;
