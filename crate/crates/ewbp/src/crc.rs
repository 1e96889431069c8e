//! Systematic CRC codec and partitions of the nonzero remainder space.
//!
//! # Conventions
//!
//! A message `m` of length `N_m` is the polynomial `m(x) = m_0 + m_1 x + ... +
//! m_{N_m-1} x^{N_m-1}`. Systematic encoding appends `P` parity bits equal to
//! the remainder of `x^P * m(x)` divided by the generator `g(x)`, stored most
//! significant coefficient first. Inside a codeword, message bit `j` therefore
//! carries coefficient `x^{P+j}` and parity bit `k` carries `x^{P-1-k}`, so a
//! valid codeword is divisible by `g(x)` and [`CrcSpec::remainder`] returns
//! zero exactly on valid words.
//!
//! [`Remainder`] bits are also stored most significant coefficient first:
//! index 0 is the MSB. Partition strategies read the remainder in that order.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

// ---------------------------------------------------------------- CrcSpec --

/// A CRC code: generator polynomial plus message length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrcSpec {
    /// Generator coefficients, index = degree (`poly[0]` is x^0, `poly[P]` is
    /// x^P). Both end coefficients are 1.
    poly: Vec<u8>,
    /// Message length N_m; codewords have length N_m + P.
    message_len: usize,
}

impl CrcSpec {
    /// Builds a CRC spec from generator coefficients in degree order
    /// (`poly[d]` is the coefficient of `x^d`).
    pub fn new(poly: &[u8], message_len: usize) -> Result<Self> {
        if poly.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "generator polynomial needs degree >= 1, got {} coefficients",
                poly.len()
            )));
        }
        if poly.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument(
                "generator polynomial coefficients must be bits".into(),
            ));
        }
        if poly[0] != 1 || poly[poly.len() - 1] != 1 {
            return Err(Error::InvalidArgument(
                "generator polynomial must have both the x^0 and the leading coefficient set"
                    .into(),
            ));
        }
        if message_len == 0 {
            return Err(Error::InvalidArgument("message length must be positive".into()));
        }
        Ok(Self { poly: poly.to_vec(), message_len })
    }

    /// The 11-bit CRC `g(x) = x^11 + x^10 + x^9 + x^5 + 1` used by default.
    pub fn crc11(message_len: usize) -> Self {
        let mut poly = vec![0u8; 12];
        for d in [0, 5, 9, 10, 11] {
            poly[d] = 1;
        }
        Self::new(&poly, message_len).expect("fixed polynomial is valid")
    }

    /// Parity length P (the generator degree).
    pub fn parity_len(&self) -> usize {
        self.poly.len() - 1
    }

    pub fn message_len(&self) -> usize {
        self.message_len
    }

    /// Codeword length N_u = N_m + P.
    pub fn codeword_len(&self) -> usize {
        self.message_len + self.parity_len()
    }

    /// Generator coefficients in degree order.
    pub fn poly(&self) -> &[u8] {
        &self.poly
    }

    /// Generator coefficients most significant first, as accepted on the
    /// command line.
    pub fn poly_msb_first(&self) -> Vec<u8> {
        self.poly.iter().rev().copied().collect()
    }

    /// Systematically encodes `message`, returning `message ‖ parity`.
    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.message_len {
            return Err(Error::LengthMismatch {
                what: "CRC message",
                expected: self.message_len,
                got: message.len(),
            });
        }
        debug_assert!(message.iter().all(|&b| b <= 1));
        let p = self.parity_len();

        // Remainder of x^P * m(x): coefficient array with m_j at degree P+j.
        let mut coeffs = vec![0u8; p + self.message_len];
        coeffs[p..].copy_from_slice(message);
        self.divide_in_place(&mut coeffs);

        let mut word = Vec::with_capacity(self.codeword_len());
        word.extend_from_slice(message);
        // Parity appended MSB first: coefficient x^{P-1} right after the message.
        word.extend(coeffs[..p].iter().rev());
        Ok(word)
    }

    /// Remainder of a length-`N_u` word under the codeword degree map.
    /// Zero exactly on valid codewords.
    pub fn remainder(&self, word: &[u8]) -> Result<Remainder> {
        if word.len() != self.codeword_len() {
            return Err(Error::LengthMismatch {
                what: "CRC codeword",
                expected: self.codeword_len(),
                got: word.len(),
            });
        }
        debug_assert!(word.iter().all(|&b| b <= 1));
        let p = self.parity_len();

        let mut coeffs = vec![0u8; p + self.message_len];
        for (j, &b) in word[..self.message_len].iter().enumerate() {
            coeffs[p + j] = b;
        }
        for (k, &b) in word[self.message_len..].iter().enumerate() {
            coeffs[p - 1 - k] ^= b;
        }
        self.divide_in_place(&mut coeffs);

        // Remainder coefficients live at degrees 0..P; store MSB first.
        let bits = coeffs[..p].iter().rev().copied().collect();
        Ok(Remainder { bits })
    }

    /// Long division in place: clears all coefficients of degree >= P,
    /// leaving the remainder in `coeffs[..P]`.
    fn divide_in_place(&self, coeffs: &mut [u8]) {
        let p = self.parity_len();
        for d in (p..coeffs.len()).rev() {
            if coeffs[d] == 1 {
                let base = d - p;
                for (t, &g) in self.poly.iter().enumerate() {
                    coeffs[base + t] ^= g;
                }
            }
        }
    }
}

/// Parses a generator polynomial given most significant coefficient first,
/// either as a bit string ("111000100001") or as hex with a 0x prefix
/// ("0xE21"). Hex strings denote exactly the written nibbles, so the leading
/// coefficient is the highest set bit.
pub fn parse_generator_msb_first(s: &str) -> Result<Vec<u8>> {
    let s = s.trim();
    let msb_bits: Vec<u8> = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"))
    {
        if hex.is_empty() {
            return Err(Error::InvalidArgument("empty generator polynomial".into()));
        }
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for c in hex.chars() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::InvalidArgument(format!("bad hex digit '{c}'")))?;
            for shift in (0..4).rev() {
                bits.push(((v >> shift) & 1) as u8);
            }
        }
        // Drop leading zero bits of the top nibble.
        let first_one = bits.iter().position(|&b| b == 1).ok_or_else(|| {
            Error::InvalidArgument("generator polynomial must be nonzero".into())
        })?;
        bits.split_off(first_one)
    } else {
        if s.is_empty() || !s.chars().all(|c| c == '0' || c == '1') {
            return Err(Error::InvalidArgument(format!(
                "generator polynomial must be hex (0x...) or a binary string, got '{s}'"
            )));
        }
        s.chars().map(|c| (c as u8) - b'0').collect()
    };
    // Degree order for CrcSpec::new.
    Ok(msb_bits.into_iter().rev().collect())
}

// -------------------------------------------------------------- Remainder --

/// A CRC remainder of length P, stored most significant coefficient first
/// (index 0 is the MSB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Remainder {
    bits: Vec<u8>,
}

impl Remainder {
    /// Builds a remainder from MSB-first bits.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("remainder bits must be a nonempty bit vector".into()));
        }
        Ok(Self { bits })
    }

    /// MSB-first bits.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Unsigned integer value, reading the bits MSB first. Requires P <= 63.
    pub fn value(&self) -> u64 {
        assert!(self.bits.len() <= 63, "remainder too wide for a u64 value");
        self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    /// Number of set bits.
    pub fn weight(&self) -> u32 {
        self.bits.iter().map(|&b| b as u32).sum()
    }
}

// ------------------------------------------------------------- Partitions --

/// How the nonzero remainder space is split into `alpha` regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Region from the top `log2(alpha)` remainder bits; `alpha` must be a
    /// power of two. The MSB carries weight 1, the next bit weight 2, and so
    /// on, so the all-zero prefix lands in region 1.
    Msb,
    /// Equal-width bins of the remainder's integer value over [1, 2^P - 1].
    Uniform,
    /// Equal-width bins of the remainder's Hamming weight over [1, P].
    BitsSum,
    /// Hamming weight modulo `alpha`.
    BitsSumMod,
}

impl PartitionKind {
    pub fn name(&self) -> &'static str {
        match self {
            PartitionKind::Msb => "msb",
            PartitionKind::Uniform => "uniform",
            PartitionKind::BitsSum => "bits_sum",
            PartitionKind::BitsSumMod => "bits_sum_mod",
        }
    }
}

/// A partition strategy together with its region count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionStrategy {
    pub kind: PartitionKind,
    pub alpha: usize,
}

impl PartitionStrategy {
    pub fn new(kind: PartitionKind, alpha: usize) -> Result<Self> {
        if alpha == 0 {
            return Err(Error::InvalidArgument("region count must be positive".into()));
        }
        if kind == PartitionKind::Msb && !alpha.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "the MSB partition needs a power-of-two region count, got {alpha}"
            )));
        }
        Ok(Self { kind, alpha })
    }
}

/// Maps a nonzero remainder to its region index in `1..=alpha`.
///
/// The all-zero remainder belongs to no region (it means the word validated);
/// asking for its region is a contract violation.
pub fn region_index(r: &Remainder, strategy: PartitionStrategy) -> Result<usize> {
    if r.is_zero() {
        return Err(Error::ContractViolation(
            "the zero remainder has no partition region".into(),
        ));
    }
    let p = r.len();
    let alpha = strategy.alpha;
    match strategy.kind {
        PartitionKind::Msb => {
            if !alpha.is_power_of_two() {
                return Err(Error::InvalidArgument(format!(
                    "the MSB partition needs a power-of-two region count, got {alpha}"
                )));
            }
            let bits = alpha.trailing_zeros() as usize;
            if bits > p {
                return Err(Error::InvalidArgument(format!(
                    "MSB partition with {alpha} regions needs at least {bits} remainder bits, have {p}"
                )));
            }
            let mut idx = 0usize;
            for j in 0..bits {
                idx += (r.bits()[j] as usize) << j;
            }
            Ok(1 + idx)
        }
        PartitionKind::Uniform => {
            let v = r.value() as u128;
            let span = (1u128 << p) - 1;
            Ok(1 + ((v - 1) * alpha as u128 / span) as usize)
        }
        PartitionKind::BitsSum => {
            let s = r.weight() as usize;
            Ok(1 + (s - 1) * alpha / p)
        }
        PartitionKind::BitsSumMod => {
            let s = r.weight() as usize;
            Ok(1 + s % alpha)
        }
    }
}
