//! Polar code construction, the factor-graph encoder, and position bookkeeping.
//!
//! # Construction
//!
//! Channel reliabilities come from the Bhattacharyya recursion: starting from
//! a single design parameter `z0`, every level maps each value `z` to the pair
//! `{2z - z^2, z^2}` (degraded branch first). After `log2(N_c)` levels the
//! `N_u` positions with the smallest parameters carry information bits; the
//! rest are frozen to zero.
//!
//! # Encoding
//!
//! The encoder applies the decoder's butterfly wiring stage by stage: with
//! `h = N_c/2`, stage output `next[2j] = cur[j] ^ cur[j+h]` and `next[2j+1] =
//! cur[j+h]` for `j in 0..h`. Applied `log2(N_c)` times this equals
//! multiplication by the transposed Kronecker power of `[[1,0],[1,1]]`, and it
//! is an involution, so the same routine inverts itself. Keeping encoder and
//! decoder on one wiring is what makes frozen positions line up between them.

use crate::{Error, Result};

/// A constructed polar code: dimensions plus the frozen/reliable position split.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarCode {
    block_len: usize,
    info_len: usize,
    stages: usize,
    design_param: f64,
    frozen: Vec<bool>,
    reliable: Vec<usize>,
    bhattacharyya: Vec<f64>,
}

impl PolarCode {
    /// Constructs an `(block_len, info_len)` code for the given design
    /// parameter (a Bhattacharyya starting value in (0, 1)).
    pub fn construct(block_len: usize, info_len: usize, design_param: f64) -> Result<Self> {
        if !block_len.is_power_of_two() || block_len < 2 {
            return Err(Error::InvalidArgument(format!(
                "block length must be a power of two >= 2, got {block_len}"
            )));
        }
        if info_len == 0 || info_len > block_len {
            return Err(Error::InvalidArgument(format!(
                "info length must be in 1..={block_len}, got {info_len}"
            )));
        }
        if !(design_param > 0.0 && design_param < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "design parameter must lie strictly inside (0, 1), got {design_param}"
            )));
        }

        let stages = block_len.trailing_zeros() as usize;
        let mut z = vec![design_param];
        for _ in 0..stages {
            let mut next = Vec::with_capacity(z.len() * 2);
            for &v in &z {
                next.push(2.0 * v - v * v);
                next.push(v * v);
            }
            z = next;
        }

        // N_u smallest parameters are reliable; ties go to the lower index.
        let mut order: Vec<usize> = (0..block_len).collect();
        order.sort_by(|&a, &b| z[a].partial_cmp(&z[b]).unwrap().then(a.cmp(&b)));
        let mut reliable: Vec<usize> = order[..info_len].to_vec();
        reliable.sort_unstable();

        let mut frozen = vec![true; block_len];
        for &i in &reliable {
            frozen[i] = false;
        }

        Ok(Self {
            block_len,
            info_len,
            stages,
            design_param,
            frozen,
            reliable,
            bhattacharyya: z,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn info_len(&self) -> usize {
        self.info_len
    }

    /// Number of butterfly stages, `log2(block_len)`.
    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn design_param(&self) -> f64 {
        self.design_param
    }

    pub fn is_frozen(&self, position: usize) -> bool {
        self.frozen[position]
    }

    /// Information positions in increasing order.
    pub fn reliable_positions(&self) -> &[usize] {
        &self.reliable
    }

    /// Frozen positions in increasing order.
    pub fn frozen_positions(&self) -> Vec<usize> {
        (0..self.block_len).filter(|&i| self.frozen[i]).collect()
    }

    /// Final Bhattacharyya parameters, one per position.
    pub fn bhattacharyya(&self) -> &[f64] {
        &self.bhattacharyya
    }

    /// Scatters `info` onto the reliable positions, zeros elsewhere.
    pub fn expand(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.info_len {
            return Err(Error::LengthMismatch {
                what: "info word",
                expected: self.info_len,
                got: info.len(),
            });
        }
        let mut padded = vec![0u8; self.block_len];
        for (&pos, &bit) in self.reliable.iter().zip(info) {
            padded[pos] = bit;
        }
        Ok(padded)
    }

    /// Gathers the reliable positions of a padded word, inverting [`expand`].
    ///
    /// [`expand`]: PolarCode::expand
    pub fn extract(&self, padded: &[u8]) -> Result<Vec<u8>> {
        if padded.len() != self.block_len {
            return Err(Error::LengthMismatch {
                what: "padded word",
                expected: self.block_len,
                got: padded.len(),
            });
        }
        Ok(self.reliable.iter().map(|&pos| padded[pos]).collect())
    }

    /// Runs the butterfly stages on a length-`block_len` word. Involutive:
    /// applying it twice returns the input, so it both encodes padded words
    /// into codewords and recovers padded words from codewords.
    pub fn encode(&self, word: &[u8]) -> Result<Vec<u8>> {
        if word.len() != self.block_len {
            return Err(Error::LengthMismatch {
                what: "encoder input",
                expected: self.block_len,
                got: word.len(),
            });
        }
        debug_assert!(word.iter().all(|&b| b <= 1));
        let h = self.block_len / 2;
        let mut cur = word.to_vec();
        let mut next = vec![0u8; self.block_len];
        for _ in 0..self.stages {
            for j in 0..h {
                next[2 * j] = cur[j] ^ cur[j + h];
                next[2 * j + 1] = cur[j + h];
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Kronecker power of [[1,0],[1,1]], built independently of the encoder.
    fn kernel_power(n: usize) -> Vec<Vec<u8>> {
        let mut m = vec![vec![1u8]];
        for _ in 0..n {
            let size = m.len();
            let mut next = vec![vec![0u8; 2 * size]; 2 * size];
            for (i, row) in m.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    next[2 * i][2 * j] = v;
                    next[2 * i + 1][2 * j] = v;
                    next[2 * i + 1][2 * j + 1] = v;
                }
            }
            m = next;
        }
        m
    }

    fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
        a.iter().zip(b).map(|(x, y)| x ^ y).collect()
    }

    #[test]
    fn small_code_bhattacharyya_values() {
        // Two levels from 0.5: all values are exact dyadic rationals.
        let code = PolarCode::construct(4, 2, 0.5).unwrap();
        assert_eq!(code.bhattacharyya(), &[0.9375, 0.5625, 0.4375, 0.0625]);
        assert_eq!(code.frozen_positions(), vec![0, 1]);
        assert_eq!(code.reliable_positions(), &[2, 3]);
    }

    #[test]
    fn eight_four_frozen_set() {
        let code = PolarCode::construct(8, 4, 0.5).unwrap();
        assert_eq!(code.frozen_positions(), vec![0, 1, 2, 4]);
        assert_eq!(code.reliable_positions(), &[3, 5, 6, 7]);
    }

    #[test]
    fn construction_rejects_bad_arguments() {
        assert!(PolarCode::construct(12, 4, 0.5).is_err());
        assert!(PolarCode::construct(8, 0, 0.5).is_err());
        assert!(PolarCode::construct(8, 9, 0.5).is_err());
        assert!(PolarCode::construct(8, 4, 0.0).is_err());
        assert!(PolarCode::construct(8, 4, 1.0).is_err());
    }

    #[test]
    fn expand_scatters_onto_reliable_positions() {
        let code = PolarCode::construct(4, 2, 0.5).unwrap();
        assert_eq!(code.expand(&[1, 0]).unwrap(), vec![0, 0, 1, 0]);
        assert_eq!(code.expand(&[0, 1]).unwrap(), vec![0, 0, 0, 1]);
    }

    #[test]
    fn encoder_matrix_is_the_transposed_kernel_power() {
        // Row k of the Kronecker power is the codeword of the k-th unit
        // vector; the stage wiring must reproduce it exactly.
        for stages in [2usize, 3, 4] {
            let n = 1 << stages;
            let code = PolarCode::construct(n, n / 2, 0.5).unwrap();
            let m = kernel_power(stages);
            for k in 0..n {
                let mut e = vec![0u8; n];
                e[k] = 1;
                assert_eq!(
                    code.encode(&e).unwrap(),
                    m[k],
                    "unit vector {k} of N={n} disagrees with the matrix oracle"
                );
            }
        }
    }

    #[test]
    fn encoding_is_an_involution_exhaustively_for_n8() {
        let code = PolarCode::construct(8, 4, 0.5).unwrap();
        for v in 0u32..256 {
            let word: Vec<u8> = (0..8).map(|j| ((v >> j) & 1) as u8).collect();
            let twice = code.encode(&code.encode(&word).unwrap()).unwrap();
            assert_eq!(twice, word);
        }
    }

    #[test]
    fn all_zero_word_encodes_to_itself() {
        let code = PolarCode::construct(64, 32, 0.5).unwrap();
        let z = vec![0u8; 64];
        assert_eq!(code.encode(&z).unwrap(), z);
    }

    proptest! {
        #[test]
        fn involution_holds_for_n64(word in proptest::collection::vec(0u8..2, 64)) {
            let code = PolarCode::construct(64, 32, 0.5).unwrap();
            prop_assert_eq!(code.encode(&code.encode(&word).unwrap()).unwrap(), word);
        }

        #[test]
        fn encoding_is_linear(
            a in proptest::collection::vec(0u8..2, 32),
            b in proptest::collection::vec(0u8..2, 32),
        ) {
            let code = PolarCode::construct(32, 16, 0.5).unwrap();
            let ea = code.encode(&a).unwrap();
            let eb = code.encode(&b).unwrap();
            prop_assert_eq!(code.encode(&xor(&a, &b)).unwrap(), xor(&ea, &eb));
        }

        #[test]
        fn extract_inverts_expand(info in proptest::collection::vec(0u8..2, 32)) {
            let code = PolarCode::construct(64, 32, 0.5).unwrap();
            let padded = code.expand(&info).unwrap();
            for (pos, &bit) in padded.iter().enumerate() {
                if code.is_frozen(pos) {
                    prop_assert_eq!(bit, 0);
                }
            }
            prop_assert_eq!(code.extract(&padded).unwrap(), info);
        }
    }
}
