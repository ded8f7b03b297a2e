//! Blind spread-spectrum watermark in the block-DCT domain.
//!
//! EMBED hides a length-`d` bit message in an image; DECODE recovers a
//! message from a (possibly attacked) image without access to the
//! original; VERIFY turns the distance between an expected and a decoded
//! message into an exact binomial p-value and thresholds it.
//!
//! Scheme: the luma plane is tiled into 8x8 blocks, each message bit is
//! redundantly assigned to `floor(B/d)` blocks by a key-seeded shuffle,
//! and in every assigned block the pair of mid-band DCT coefficients
//! named by the key is nudged so that `sign(c1 - c2)` encodes the bit
//! with a margin of at least `delta`. Blocks that already satisfy the
//! margin are left untouched; `delta = 0` therefore degrades to a no-op
//! embedding whose decodes are content noise. Decoding takes a majority
//! vote of the coefficient-difference signs per bit. The luma adjustment
//! is added to every channel equally, which changes luma by exactly the
//! adjustment since the weights sum to 1.

mod dct;

pub use dct::{Dct8, BLOCK};

use std::path::Path;

use crate::bits::{hamming, BitMessage};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::StreamRng;
use crate::scalar::Real;

/// Redundancy floor: every bit must land on at least this many blocks.
pub const MIN_BLOCKS_PER_BIT: usize = 3;

/// Default significance level for VERIFY.
pub const DEFAULT_ALPHA: f64 = 0.001;

/// Default modulation margin.
///
/// Picked by a calibration sweep as the smallest ladder value that kept
/// clean round-trip accuracy at 1.0 through 8-bit persistence while
/// staying comfortably above 40 dB embedding PSNR on the synthetic
/// corpus (see `delta_calibration` in the tests).
pub const DEFAULT_DELTA: f64 = 0.02;

/// Everything needed to embed or decode: secret seed, payload length,
/// modulation margin and the coefficient pair carrying the signal.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkKey {
    pub seed: u64,
    pub message_bits: usize,
    pub delta: f64,
    pub block_size: usize,
    /// Row/column of the first carrier coefficient in the 8x8 grid.
    pub coeff_a: (usize, usize),
    /// Row/column of the second carrier coefficient.
    pub coeff_b: (usize, usize),
}

impl WatermarkKey {
    /// Key with default geometry: 48 bits, default margin, the
    /// symmetric mid-band pair (2,1)/(1,2).
    pub fn new(seed: u64) -> Self {
        WatermarkKey {
            seed,
            message_bits: crate::bits::DEFAULT_MESSAGE_BITS,
            delta: DEFAULT_DELTA,
            block_size: BLOCK,
            coeff_a: (2, 1),
            coeff_b: (1, 2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size != BLOCK {
            return Err(Error::invalid(format!(
                "block size {} unsupported; the transform is fixed at {BLOCK}",
                self.block_size
            )));
        }
        if self.message_bits == 0 {
            return Err(Error::invalid("message length must be positive"));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::invalid(format!(
                "delta must be finite and non-negative, got {}",
                self.delta
            )));
        }
        for (name, (u, v)) in [("coeff_a", self.coeff_a), ("coeff_b", self.coeff_b)] {
            if u >= BLOCK || v >= BLOCK {
                return Err(Error::invalid(format!(
                    "{name} = ({u},{v}) outside the {BLOCK}x{BLOCK} grid"
                )));
            }
            if (u, v) == (0, 0) {
                return Err(Error::invalid(format!(
                    "{name} must not be the DC term"
                )));
            }
        }
        if self.coeff_a == self.coeff_b {
            return Err(Error::invalid("carrier coefficients must differ"));
        }
        Ok(())
    }

    /// Writes the key as `name = value` lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = format!(
            "seed = {}\nmessage_bits = {}\ndelta = {}\nblock_size = {}\n\
             coeff_a = {},{}\ncoeff_b = {},{}\n",
            self.seed,
            self.message_bits,
            self.delta,
            self.block_size,
            self.coeff_a.0,
            self.coeff_a.1,
            self.coeff_b.0,
            self.coeff_b.1,
        );
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
            }
        }
        std::fs::write(path, text).map_err(Error::io(path))
    }

    /// Parses the `name = value` form written by [`save`](Self::save).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut seed = None;
        let mut message_bits = None;
        let mut delta = None;
        let mut block_size = None;
        let mut coeff_a = None;
        let mut coeff_b = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail,
            };
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `name = value`".into()))?;
            let (name, value) = (name.trim(), value.trim());
            match name {
                "seed" => seed = Some(value.parse().map_err(|e| err(format!("seed: {e}")))?),
                "message_bits" => {
                    message_bits =
                        Some(value.parse().map_err(|e| err(format!("message_bits: {e}")))?)
                }
                "delta" => delta = Some(value.parse().map_err(|e| err(format!("delta: {e}")))?),
                "block_size" => {
                    block_size = Some(value.parse().map_err(|e| err(format!("block_size: {e}")))?)
                }
                "coeff_a" | "coeff_b" => {
                    let (u, v) = value
                        .split_once(',')
                        .ok_or_else(|| err(format!("{name}: expected `row,col`")))?;
                    let pair = (
                        u.trim().parse().map_err(|e| err(format!("{name}: {e}")))?,
                        v.trim().parse().map_err(|e| err(format!("{name}: {e}")))?,
                    );
                    if name == "coeff_a" {
                        coeff_a = Some(pair);
                    } else {
                        coeff_b = Some(pair);
                    }
                }
                other => return Err(err(format!("unknown field `{other}`"))),
            }
        }
        let missing = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: format!("missing field `{what}`"),
        };
        let key = WatermarkKey {
            seed: seed.ok_or_else(|| missing("seed"))?,
            message_bits: message_bits.ok_or_else(|| missing("message_bits"))?,
            delta: delta.ok_or_else(|| missing("delta"))?,
            block_size: block_size.ok_or_else(|| missing("block_size"))?,
            coeff_a: coeff_a.ok_or_else(|| missing("coeff_a"))?,
            coeff_b: coeff_b.ok_or_else(|| missing("coeff_b"))?,
        };
        key.validate()?;
        Ok(key)
    }
}

/// Bit-to-block assignment for one image geometry.
struct BlockPlan {
    blocks_x: usize,
    per_bit: usize,
    order: Vec<usize>,
}

impl BlockPlan {
    fn new(key: &WatermarkKey, width: usize, height: usize) -> Result<Self> {
        let blocks_x = width / BLOCK;
        let blocks_y = height / BLOCK;
        let total = blocks_x * blocks_y;
        let per_bit = total / key.message_bits;
        if per_bit < MIN_BLOCKS_PER_BIT {
            return Err(Error::Capacity {
                blocks: total,
                bits: key.message_bits,
                needed: MIN_BLOCKS_PER_BIT,
            });
        }
        // The shuffle is keyed by geometry too: the same key reuses the
        // same plan for the same image size, independent of content.
        let mut rng = StreamRng::new(
            key.seed,
            format!("watermark/assign/{width}x{height}/d{}", key.message_bits),
        );
        let order = rng.permutation(total);
        Ok(BlockPlan {
            blocks_x,
            per_bit,
            order,
        })
    }

    /// Block indices carrying `bit`.
    fn blocks_for(&self, bit: usize) -> &[usize] {
        &self.order[bit * self.per_bit..(bit + 1) * self.per_bit]
    }

    fn block_origin(&self, block: usize) -> (usize, usize) {
        ((block % self.blocks_x) * BLOCK, (block / self.blocks_x) * BLOCK)
    }
}

fn read_block<T: Real>(luma: &ImageBuffer<T>, x0: usize, y0: usize) -> [[T; BLOCK]; BLOCK] {
    let mut b = [[T::zero(); BLOCK]; BLOCK];
    for (dy, row) in b.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            *v = luma.get(x0 + dx, y0 + dy, 0);
        }
    }
    b
}

/// Embeds `message` into `image` under `key`.
///
/// The image must host at least [`MIN_BLOCKS_PER_BIT`] full 8x8 blocks
/// per bit. Output samples are clamped to `[0, 1]`. Panics if the
/// message length disagrees with the key.
pub fn embed<T: Real>(
    key: &WatermarkKey,
    image: &ImageBuffer<T>,
    message: &BitMessage,
) -> Result<ImageBuffer<T>> {
    key.validate()?;
    assert_eq!(
        message.len(),
        key.message_bits,
        "message length must match the key"
    );
    let plan = BlockPlan::new(key, image.width(), image.height())?;
    if key.delta == 0.0 {
        // Zero margin disables modulation entirely.
        return Ok(image.clone());
    }
    let dct = Dct8::<T>::new();
    let luma = image.luma();
    let basis_a = dct.basis(key.coeff_a.0, key.coeff_a.1);
    let basis_b = dct.basis(key.coeff_b.0, key.coeff_b.1);
    let delta = T::of(key.delta);
    let half = T::of(key.delta / 2.0);
    let two = T::of(2.0);
    let mut out = image.clone();
    let channels = out.channels();
    for bit in 0..key.message_bits {
        let positive = message.get(bit);
        for &b in plan.blocks_for(bit) {
            let (x0, y0) = plan.block_origin(b);
            let block = read_block(&luma, x0, y0);
            let c1 = dct.coefficient(&block, key.coeff_a.0, key.coeff_a.1);
            let c2 = dct.coefficient(&block, key.coeff_b.0, key.coeff_b.1);
            let diff = c1 - c2;
            let satisfied = if positive { diff >= delta } else { diff <= -delta };
            if satisfied {
                continue;
            }
            let mean = (c1 + c2) / two;
            let (n1, n2) = if positive {
                (mean + half, mean - half)
            } else {
                (mean - half, mean + half)
            };
            // Editing two coefficients is a rank-two pixel update; no
            // full inverse transform needed.
            let (da, db) = (n1 - c1, n2 - c2);
            for dy in 0..BLOCK {
                for dx in 0..BLOCK {
                    let adjust = da * basis_a[dy][dx] + db * basis_b[dy][dx];
                    if adjust != T::zero() {
                        for c in 0..channels {
                            let i = out.index(x0 + dx, y0 + dy, c);
                            out.data_mut()[i] += adjust;
                        }
                    }
                }
            }
        }
    }
    out.clamp_unit();
    Ok(out)
}

/// Recovers a message from `image` by per-bit majority vote over the
/// key's block assignment. Needs no original image.
pub fn decode<T: Real>(key: &WatermarkKey, image: &ImageBuffer<T>) -> Result<BitMessage> {
    key.validate()?;
    let plan = BlockPlan::new(key, image.width(), image.height())?;
    let dct = Dct8::<T>::new();
    let luma = image.luma();
    let mut message = BitMessage::zero(key.message_bits);
    for bit in 0..key.message_bits {
        let mut positive = 0u32;
        let mut negative = 0u32;
        for &b in plan.blocks_for(bit) {
            let (x0, y0) = plan.block_origin(b);
            let block = read_block(&luma, x0, y0);
            let c1 = dct.coefficient(&block, key.coeff_a.0, key.coeff_a.1);
            let c2 = dct.coefficient(&block, key.coeff_b.0, key.coeff_b.1);
            let diff = c1 - c2;
            if diff > T::zero() {
                positive += 1;
            } else if diff < T::zero() {
                negative += 1;
            }
            // Exact zeros abstain.
        }
        message.set(bit, positive > negative);
    }
    Ok(message)
}

/// `P(X < k)` for `X ~ Binomial(d, 1/2)` by exact term summation.
///
/// Strict inequality: `k = 0` gives exactly 0. Terms are exact integers
/// for `d <= 120`; beyond that each term is formed by one multiply and
/// one divide in `f64`, still summed term by term.
pub fn binomial_strict_lower_tail(d: u32, k: u32) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k > d {
        return 1.0;
    }
    if d <= 120 {
        let mut sum: u128 = 0;
        let mut coef: u128 = 1; // C(d, 0)
        for j in 0..k {
            if j > 0 {
                coef = coef * (d - j + 1) as u128 / j as u128;
            }
            sum += coef;
        }
        sum as f64 * (-(d as i32) as f64).exp2()
    } else {
        let mut term = (-(d as i32) as f64).exp2(); // C(d,0) / 2^d
        let mut sum = term;
        for j in 1..k {
            term = term * (d - j + 1) as f64 / j as f64;
            sum += term;
        }
        sum
    }
}

/// Probability that a uniformly random message lands strictly closer to
/// `decoded` than `expected` does: `P(X < hamming(expected, decoded))`
/// with `X ~ Binomial(d, 1/2)`.
///
/// Panics if the message lengths differ.
pub fn p_value(expected: &BitMessage, decoded: &BitMessage) -> f64 {
    let k = hamming(expected, decoded);
    binomial_strict_lower_tail(expected.len() as u32, k)
}

/// Detection decision at significance `alpha`: true iff the p-value is
/// strictly below it.
pub fn verify(expected: &BitMessage, decoded: &BitMessage, alpha: f64) -> bool {
    p_value(expected, decoded) < alpha
}

/// Outcome of decoding an image and testing it against an expected
/// message.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub decoded: BitMessage,
    /// `d - hamming(expected, decoded)`; higher means more watermark-like.
    pub score: u32,
    pub p_value: f64,
    pub verified: bool,
}

/// Decode-and-test convenience wrapper.
pub fn detect<T: Real>(
    key: &WatermarkKey,
    image: &ImageBuffer<T>,
    expected: &BitMessage,
    alpha: f64,
) -> Result<DetectionResult> {
    assert_eq!(
        expected.len(),
        key.message_bits,
        "expected message length must match the key"
    );
    let decoded = decode(key, image)?;
    let dist = hamming(expected, &decoded);
    let p = binomial_strict_lower_tail(expected.len() as u32, dist);
    Ok(DetectionResult {
        decoded,
        score: expected.len() as u32 - dist,
        p_value: p,
        verified: p < alpha,
    })
}

/// One row of a decode dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRecord {
    pub image_id: String,
    pub decoded: BitMessage,
    pub score: u32,
    pub p_value: f64,
    pub verified: bool,
}

/// Writes `image_id,decoded_hex,score,p_value,verified` rows.
pub fn write_decode_dump(path: impl AsRef<Path>, records: &[DecodeRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("image_id,decoded_hex,score,p_value,verified\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.image_id,
            r.decoded.to_hex(),
            r.score,
            r.p_value,
            r.verified
        ));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
    }
    std::fs::write(path, out).map_err(Error::io(path))
}

/// Reads a dump written by [`write_decode_dump`].
pub fn read_decode_dump(path: impl AsRef<Path>, message_bits: usize) -> Result<Vec<DecodeRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut lines = text.lines().enumerate();
    let err = |lineno: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno + 1,
        detail,
    };
    match lines.next() {
        Some((_, "image_id,decoded_hex,score,p_value,verified")) => {}
        _ => return Err(err(0, "bad or missing header".into())),
    }
    let mut records = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(lineno, format!("expected 5 fields, got {}", fields.len())));
        }
        records.push(DecodeRecord {
            image_id: fields[0].to_string(),
            decoded: BitMessage::from_hex(message_bits, fields[1])?,
            score: fields[2]
                .parse()
                .map_err(|e| err(lineno, format!("score: {e}")))?,
            p_value: fields[3]
                .parse()
                .map_err(|e| err(lineno, format!("p_value: {e}")))?,
            verified: fields[4]
                .parse()
                .map_err(|e| err(lineno, format!("verified: {e}")))?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::random_message;
    use crate::fixtures::synth_image;

    fn key() -> WatermarkKey {
        WatermarkKey::new(1701)
    }

    fn fixture(i: u64) -> ImageBuffer<f64> {
        let mut rng = StreamRng::new(900 + i, "wm/fixture");
        synth_image(128, 128, 3, &mut rng)
    }

    #[test]
    fn clean_round_trip_recovers_every_bit() {
        let key = key();
        let mut rng = StreamRng::new(7, "wm/msg");
        for i in 0..8 {
            let img = fixture(i);
            let msg = random_message(key.message_bits, &mut rng);
            let marked = embed(&key, &img, &msg).unwrap();
            assert_eq!(decode(&key, &marked).unwrap(), msg);
        }
    }

    #[test]
    fn round_trip_survives_8bit_quantization() {
        let key = key();
        let mut rng = StreamRng::new(8, "wm/msg8");
        for i in 0..8 {
            let img = fixture(100 + i);
            let msg = random_message(key.message_bits, &mut rng);
            let marked = embed(&key, &img, &msg).unwrap().quantize_u8();
            assert_eq!(decode(&key, &marked).unwrap(), msg);
        }
    }

    #[test]
    fn embedding_is_deterministic() {
        let key = key();
        let img = fixture(3);
        let mut rng = StreamRng::new(9, "wm/det");
        let msg = random_message(key.message_bits, &mut rng);
        let a = embed(&key, &img, &msg).unwrap();
        let b = embed(&key, &img, &msg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedding_keeps_psnr_above_35db() {
        let key = key();
        let mut rng = StreamRng::new(10, "wm/psnr");
        for i in 0..6 {
            let img = fixture(200 + i);
            let msg = random_message(key.message_bits, &mut rng);
            let marked = embed(&key, &img, &msg).unwrap();
            let mse: f64 = img
                .data()
                .iter()
                .zip(marked.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / img.data().len() as f64;
            let psnr = -10.0 * mse.log10();
            assert!(psnr >= 35.0, "embedding PSNR {psnr:.1} below 35 dB");
        }
    }

    #[test]
    fn distinct_messages_produce_distinct_decodes() {
        let key = key();
        let img = fixture(4);
        let zeros = BitMessage::zero(key.message_bits);
        let ones = zeros.complement();
        let from_zeros = decode(&key, &embed(&key, &img, &zeros).unwrap()).unwrap();
        let from_ones = decode(&key, &embed(&key, &img, &ones).unwrap()).unwrap();
        assert_eq!(from_zeros, zeros);
        assert_eq!(from_ones, ones);
    }

    #[test]
    fn zero_delta_is_identity_and_decodes_at_chance() {
        // With no modulation the decoder reads content noise, so accuracy
        // over many fixtures sits at one half.
        let mut key = key();
        key.delta = 0.0;
        let mut rng = StreamRng::new(11, "wm/zerodelta");
        let mut correct = 0u32;
        let mut total = 0u32;
        for i in 0..120 {
            let img = fixture(300 + i);
            let msg = random_message(key.message_bits, &mut rng);
            let marked = embed(&key, &img, &msg).unwrap();
            assert_eq!(marked, img, "delta = 0 must not modify the image");
            let decoded = decode(&key, &marked).unwrap();
            correct += key.message_bits as u32 - hamming(&msg, &decoded);
            total += key.message_bits as u32;
        }
        let accuracy = correct as f64 / total as f64;
        assert!(
            (0.45..=0.55).contains(&accuracy),
            "chance-level accuracy expected, got {accuracy}"
        );
    }

    #[test]
    fn capacity_floor_is_enforced() {
        // 64x64 hosts 64 blocks; 48 bits would get one block each.
        let key = key();
        let mut rng = StreamRng::new(12, "wm/cap");
        let img: ImageBuffer<f64> = synth_image(64, 64, 3, &mut rng);
        let msg = BitMessage::zero(key.message_bits);
        match embed(&key, &img, &msg) {
            Err(Error::Capacity { blocks, bits, needed }) => {
                assert_eq!((blocks, bits, needed), (64, 48, MIN_BLOCKS_PER_BIT));
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_key_decodes_to_noise() {
        let key = key();
        let other = WatermarkKey::new(999);
        let img = fixture(5);
        let mut rng = StreamRng::new(13, "wm/wrongkey");
        let msg = random_message(key.message_bits, &mut rng);
        let marked = embed(&key, &img, &msg).unwrap();
        let decoded = decode(&other, &marked).unwrap();
        let dist = hamming(&msg, &decoded);
        assert!(
            (10..=38).contains(&dist),
            "foreign key should read noise, distance was {dist}"
        );
    }

    #[test]
    fn grayscale_images_carry_the_mark_too() {
        let key = key();
        let mut rng = StreamRng::new(14, "wm/gray");
        let img: ImageBuffer<f64> = synth_image(128, 128, 1, &mut rng);
        let msg = random_message(key.message_bits, &mut rng);
        let marked = embed(&key, &img, &msg).unwrap();
        assert_eq!(decode(&key, &marked).unwrap(), msg);
    }

    #[test]
    fn f32_storage_round_trips_as_well() {
        let key = key();
        let mut rng = StreamRng::new(15, "wm/f32");
        let img: ImageBuffer<f32> = synth_image(128, 128, 3, &mut rng);
        let msg = random_message(key.message_bits, &mut rng);
        let marked = embed(&key, &img, &msg).unwrap();
        assert_eq!(decode(&key, &marked).unwrap(), msg);
    }

    #[test]
    fn p_value_matches_hand_computed_fractions() {
        // d = 8: P(X < 1) = 1/256, P(X < 4) = (1+8+28+56)/256 = 93/256.
        let zero = BitMessage::zero(8);
        assert_eq!(p_value(&zero, &zero), 0.0);
        let mut one_off = zero.clone();
        one_off.set(3, true);
        assert_eq!(p_value(&zero, &one_off), 1.0 / 256.0);
        let mut four_off = zero.clone();
        for i in 0..4 {
            four_off.set(i, true);
        }
        assert_eq!(p_value(&zero, &four_off), 93.0 / 256.0);
    }

    #[test]
    fn tail_matches_exhaustive_enumeration_for_small_d() {
        for d in 1..=10u32 {
            for k in 0..=d {
                let count = (0u32..1 << d)
                    .filter(|m| m.count_ones() < k)
                    .count() as f64;
                let expected = count / (1u64 << d) as f64;
                let got = binomial_strict_lower_tail(d, k);
                assert!(
                    (got - expected).abs() < 1e-15,
                    "d={d} k={k}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn tail_is_monotone_in_k_and_bounded() {
        let mut prev = -1.0;
        for k in 0..=64 {
            let p = binomial_strict_lower_tail(64, k);
            assert!((0.0..=1.0).contains(&p));
            assert!(p >= prev, "tail must be non-decreasing in k");
            prev = p;
        }
        assert_eq!(binomial_strict_lower_tail(64, 0), 0.0);
        // P(X < 65) over 64 trials covers everything.
        assert_eq!(binomial_strict_lower_tail(64, 65), 1.0);
    }

    #[test]
    fn wide_and_narrow_tail_paths_agree() {
        // d = 121 takes the floating path; compare against d = 120's
        // exact path through the recurrence ratio check instead: both
        // paths must agree where they overlap in reduced form.
        for k in [0u32, 1, 5, 30, 60, 90, 120] {
            let exact = binomial_strict_lower_tail(120, k);
            // Recompute 120 through the floating path by faking d > 120.
            let mut term = (-120f64).exp2();
            let mut sum = 0.0;
            for j in 0..k {
                if j > 0 {
                    term = term * (120 - j + 1) as f64 / j as f64;
                }
                sum += term;
            }
            assert!((exact - sum).abs() <= 1e-12 * exact.max(1e-300));
        }
    }

    #[test]
    fn verify_thresholds_strictly() {
        let zero = BitMessage::zero(48);
        // Half the bits wrong: p around 0.44, clearly not verified.
        let mut half = zero.clone();
        for i in 0..24 {
            half.set(i, true);
        }
        assert!(!verify(&zero, &half, DEFAULT_ALPHA));
        // Exact match: p = 0 < alpha for any positive alpha.
        assert!(verify(&zero, &zero, DEFAULT_ALPHA));
        // d = 8, k = 1: p = 1/256 ~ 0.0039, not below 0.001.
        let zero8 = BitMessage::zero(8);
        let mut one8 = zero8.clone();
        one8.set(0, true);
        assert!(!verify(&zero8, &one8, DEFAULT_ALPHA));
        // Boundary is strict: alpha exactly at the p-value rejects.
        assert!(!verify(&zero8, &one8, 1.0 / 256.0));
        assert!(verify(&zero8, &one8, 1.0 / 256.0 + 1e-12));
    }

    #[test]
    fn detect_reports_score_p_and_flag_consistently() {
        let key = key();
        let img = fixture(6);
        let mut rng = StreamRng::new(16, "wm/detect");
        let msg = random_message(key.message_bits, &mut rng);
        let marked = embed(&key, &img, &msg).unwrap();
        let hit = detect(&key, &marked, &msg, DEFAULT_ALPHA).unwrap();
        assert_eq!(hit.score, 48);
        assert_eq!(hit.p_value, 0.0);
        assert!(hit.verified);
        let miss = detect(&key, &img, &msg, DEFAULT_ALPHA).unwrap();
        assert!(!miss.verified, "unmarked content should not verify");
    }

    #[test]
    fn key_file_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wm.key");
        let key = key();
        key.save(&path).unwrap();
        assert_eq!(WatermarkKey::load(&path).unwrap(), key);

        std::fs::write(&path, "seed = 1\n").unwrap();
        assert!(WatermarkKey::load(&path).is_err(), "missing fields");

        let mut bad = key.clone();
        bad.coeff_a = bad.coeff_b;
        assert!(bad.validate().is_err(), "duplicate carriers");
        bad = key.clone();
        bad.coeff_a = (0, 0);
        assert!(bad.validate().is_err(), "DC carrier");
        bad = key;
        bad.block_size = 16;
        assert!(bad.validate().is_err(), "unsupported block size");
    }

    #[test]
    fn decode_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let mut rng = StreamRng::new(17, "wm/dump");
        let records: Vec<DecodeRecord> = (0..5)
            .map(|i| {
                let decoded = random_message(48, &mut rng);
                DecodeRecord {
                    image_id: format!("img_{i:05}"),
                    score: 48 - i,
                    p_value: binomial_strict_lower_tail(48, i),
                    verified: i < 2,
                    decoded,
                }
            })
            .collect();
        write_decode_dump(&path, &records).unwrap();
        let back = read_decode_dump(&path, 48).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    #[ignore = "calibration sweep for DEFAULT_DELTA; run on demand"]
    fn delta_calibration() {
        // Smallest ladder value with perfect 8-bit round trips and the
        // best margin; prints the sweep so the pinned default can be
        // audited.
        let ladder = [0.005, 0.01, 0.02, 0.04, 0.08];
        let mut rng = StreamRng::new(77, "wm/calib");
        for &delta in &ladder {
            let mut key = key();
            key.delta = delta;
            let mut exact = 0usize;
            let mut psnr_sum = 0.0;
            let n = 40;
            for i in 0..n {
                let img = fixture(700 + i);
                let msg = random_message(key.message_bits, &mut rng);
                let marked = embed(&key, &img, &msg).unwrap();
                let mse: f64 = img
                    .data()
                    .iter()
                    .zip(marked.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / img.data().len() as f64;
                psnr_sum += if mse == 0.0 { 100.0 } else { -10.0 * mse.log10() };
                if decode(&key, &marked.quantize_u8()).unwrap() == msg {
                    exact += 1;
                }
            }
            println!(
                "delta {delta}: exact {exact}/{n}, mean psnr {:.1}",
                psnr_sum / n as f64
            );
        }
    }
}
