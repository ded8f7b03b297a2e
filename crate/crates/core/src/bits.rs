//! Fixed-length binary messages and the Hamming metric over them.
//!
//! Messages are the payload space of the watermark: a length-`d` bit
//! string embedded at embed time and recovered (possibly corrupted) at
//! decode time. Bits are packed LSB-first into `u64` words so that
//! Hamming distances reduce to XOR plus popcount, which is what keeps
//! million-user identification scans cheap.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use rand::RngCore;

/// Default message length in bits.
pub const DEFAULT_MESSAGE_BITS: usize = 48;

/// Fixed-length bit string.
///
/// Invariant: `words.len() == ceil(len/64)` and all bits at positions
/// `>= len` in the last word are zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMessage {
    len: usize,
    words: Vec<u64>,
}

impl BitMessage {
    /// All-zero message of `len` bits. Panics if `len == 0`.
    pub fn zero(len: usize) -> Self {
        assert!(len > 0, "message length must be positive");
        BitMessage {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut m = BitMessage::zero(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            m.set(i, b);
        }
        m
    }

    /// Uniformly random message drawn from `rng`.
    pub fn random(len: usize, rng: &mut StreamRng) -> Self {
        let mut m = BitMessage::zero(len);
        for w in &mut m.words {
            *w = rng.next_u64();
        }
        m.mask_tail();
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // len > 0 by construction
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// Copy with bit `i` inverted.
    pub fn flipped(&self, i: usize) -> Self {
        let mut m = self.clone();
        m.set(i, !m.get(i));
        m
    }

    /// Bitwise complement.
    pub fn complement(&self) -> Self {
        let mut m = self.clone();
        for w in &mut m.words {
            *w = !*w;
        }
        m.mask_tail();
        m
    }

    /// Packed words, LSB-first; tail bits beyond `len` are zero.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Lowercase hex of the packed little-endian bytes (`ceil(len/8)` of
    /// them), LSB-first within each byte.
    pub fn to_hex(&self) -> String {
        let nbytes = self.len.div_ceil(8);
        let mut s = String::with_capacity(nbytes * 2);
        for i in 0..nbytes {
            let byte = (self.words[i / 8] >> ((i % 8) * 8)) as u8;
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }

    /// Inverse of [`to_hex`](Self::to_hex) for a known bit length.
    pub fn from_hex(len: usize, hex: &str) -> Result<Self> {
        assert!(len > 0, "message length must be positive");
        let nbytes = len.div_ceil(8);
        if hex.len() != nbytes * 2 {
            return Err(Error::invalid(format!(
                "hex message has {} digits, expected {} for {len} bits",
                hex.len(),
                nbytes * 2
            )));
        }
        let mut m = BitMessage::zero(len);
        for i in 0..nbytes {
            let byte = u8::from_str_radix(&hex[i * 2..i * 2 + 2], 16)
                .map_err(|e| Error::invalid(format!("bad hex byte at {}: {e}", i * 2)))?;
            m.words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        let mut masked = m.clone();
        masked.mask_tail();
        if masked.words != m.words {
            return Err(Error::invalid(format!(
                "hex message has bits set beyond length {len}"
            )));
        }
        Ok(masked)
    }

    fn mask_tail(&mut self) {
        let tail = self.len % 64;
        if tail != 0 {
            *self.words.last_mut().unwrap() &= (1u64 << tail) - 1;
        }
    }
}

impl std::fmt::Debug for BitMessage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitMessage({} bits, {})", self.len, self.to_hex())
    }
}

/// Hamming distance between equal-length messages.
///
/// Panics if the lengths differ.
pub fn hamming(a: &BitMessage, b: &BitMessage) -> u32 {
    assert_eq!(a.len, b.len, "hamming distance needs equal lengths");
    a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Uniformly random message; thin alias over [`BitMessage::random`].
pub fn random_message(len: usize, rng: &mut StreamRng) -> BitMessage {
    BitMessage::random(len, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(bits: &str) -> BitMessage {
        BitMessage::from_bits(&bits.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn hamming_of_identical_messages_is_zero() {
        let m = msg("10110000");
        assert_eq!(hamming(&m, &m), 0);
    }

    #[test]
    fn hamming_of_complement_is_length() {
        let m = msg("1011000011");
        assert_eq!(hamming(&m, &m.complement()), 10);
    }

    #[test]
    fn hamming_counts_differing_positions() {
        // Positions 2 and 4 differ.
        assert_eq!(hamming(&msg("10110000"), &msg("10011000")), 2);
    }

    #[test]
    #[should_panic(expected = "equal lengths")]
    fn hamming_rejects_length_mismatch() {
        let _ = hamming(&BitMessage::zero(8), &BitMessage::zero(9));
    }

    #[test]
    fn hex_round_trip_preserves_message() {
        let mut rng = StreamRng::new(5, "hex");
        for len in [1, 7, 8, 9, 48, 63, 64, 65, 130] {
            let m = BitMessage::random(len, &mut rng);
            let back = BitMessage::from_hex(len, &m.to_hex()).unwrap();
            assert_eq!(m, back, "round trip failed at len {len}");
        }
    }

    #[test]
    fn from_hex_rejects_padding_bits_beyond_length() {
        // 0xff has bits above position 5 set.
        assert!(BitMessage::from_hex(5, "ff").is_err());
        assert!(BitMessage::from_hex(5, "1f").is_ok());
    }

    #[test]
    fn random_draws_are_reproducible_per_stream() {
        let mut a = StreamRng::new(9, "msg");
        let mut b = StreamRng::new(9, "msg");
        assert_eq!(BitMessage::random(48, &mut a), BitMessage::random(48, &mut b));
        // Consumed streams move on.
        assert_ne!(BitMessage::random(48, &mut a), BitMessage::random(48, &mut b.child("x")));
    }

    #[test]
    fn random_bits_are_balanced_at_scale() {
        // 10^5 draws of d = 64; per-bit empirical mean must sit in [0.49, 0.51].
        let mut rng = StreamRng::new(1234, "balance");
        let mut ones = [0u32; 64];
        let draws = 100_000;
        for _ in 0..draws {
            let m = BitMessage::random(64, &mut rng);
            let w = m.words()[0];
            for (i, slot) in ones.iter_mut().enumerate() {
                *slot += ((w >> i) & 1) as u32;
            }
        }
        for (i, &count) in ones.iter().enumerate() {
            let mean = count as f64 / draws as f64;
            assert!(
                (0.49..=0.51).contains(&mean),
                "bit {i} mean {mean} outside [0.49, 0.51]"
            );
        }
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(
            a in proptest::collection::vec(any::<bool>(), 48),
            b in proptest::collection::vec(any::<bool>(), 48),
            c in proptest::collection::vec(any::<bool>(), 48),
        ) {
            let (a, b, c) = (
                BitMessage::from_bits(&a),
                BitMessage::from_bits(&b),
                BitMessage::from_bits(&c),
            );
            // Symmetry, identity, triangle inequality.
            prop_assert_eq!(hamming(&a, &b), hamming(&b, &a));
            prop_assert_eq!(hamming(&a, &a), 0);
            prop_assert!(hamming(&a, &c) <= hamming(&a, &b) + hamming(&b, &c));
        }

        #[test]
        fn set_get_round_trip(i in 0usize..48, v: bool) {
            let mut m = BitMessage::zero(48);
            m.set(i, v);
            prop_assert_eq!(m.get(i), v);
        }
    }
}
