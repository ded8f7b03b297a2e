//! Baseline JPEG round-trip simulation (ITU-T T.81, 4:2:0).
//!
//! Entropy coding is lossless, so skipping it leaves the reconstruction
//! bit-identical to a real encode/decode at the same settings. What is
//! simulated is exactly the lossy chain: full-range BT.601 color transform,
//! 2x2 box chroma subsampling, 8x8 orthonormal DCT (the orthonormal scaling
//! coincides with T.81's FDCT normalization), Annex K quantization tables
//! scaled by the conventional quality mapping, dequantize, inverse DCT, box
//! chroma upsampling, color transform back.
//!
//! All pins (edge-replicate padding to multiples of 16, round-half-away-from-
//! zero quantization, per-plane clamping after reconstruction) are fixed so
//! outputs are reproducible across platforms.

use crate::watermark::{Dct8, BLOCK};

/// Annex K luminance quantization table, raster order (row = vertical frequency).
#[rustfmt::skip]
const LUMA_TABLE: [u32; 64] = [
    16,  11,  10,  16,  24,  40,  51,  61,
    12,  12,  14,  19,  26,  58,  60,  55,
    14,  13,  16,  24,  40,  57,  69,  56,
    14,  17,  22,  29,  51,  87,  80,  62,
    18,  22,  37,  56,  68, 109, 103,  77,
    24,  35,  55,  64,  81, 104, 113,  92,
    49,  64,  78,  87, 103, 121, 120, 101,
    72,  92,  95,  98, 112, 100, 103,  99,
];

/// Annex K chrominance quantization table, raster order.
#[rustfmt::skip]
const CHROMA_TABLE: [u32; 64] = [
    17,  18,  24,  47,  99,  99,  99,  99,
    18,  21,  26,  66,  99,  99,  99,  99,
    24,  26,  56,  99,  99,  99,  99,  99,
    47,  66,  99,  99,  99,  99,  99,  99,
    99,  99,  99,  99,  99,  99,  99,  99,
    99,  99,  99,  99,  99,  99,  99,  99,
    99,  99,  99,  99,  99,  99,  99,  99,
    99,  99,  99,  99,  99,  99,  99,  99,
];

/// Conventional quality mapping: q<50 scales up as 5000/q, q>=50 as 200-2q,
/// each entry clamped to [1, 255].
fn scaled_table(base: &[u32; 64], quality: u8) -> [f64; 64] {
    assert!((1..=100).contains(&quality), "JPEG quality must be 1..=100");
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base.iter()) {
        *o = ((b * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// A full-range image plane with explicit dimensions.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn new(w: usize, h: usize) -> Self {
        Plane { w, h, data: vec![0.0; w * h] }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    fn put(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    /// Edge-replicate pad to the given (larger or equal) dimensions.
    fn padded(&self, w: usize, h: usize) -> Plane {
        let mut out = Plane::new(w, h);
        for y in 0..h {
            let sy = y.min(self.h - 1);
            for x in 0..w {
                out.put(x, y, self.at(x.min(self.w - 1), sy));
            }
        }
        out
    }

    /// 2x2 box average; dimensions must be even.
    fn halved(&self) -> Plane {
        debug_assert!(self.w % 2 == 0 && self.h % 2 == 0);
        let mut out = Plane::new(self.w / 2, self.h / 2);
        for y in 0..out.h {
            for x in 0..out.w {
                let s = self.at(2 * x, 2 * y)
                    + self.at(2 * x + 1, 2 * y)
                    + self.at(2 * x, 2 * y + 1)
                    + self.at(2 * x + 1, 2 * y + 1);
                out.put(x, y, s * 0.25);
            }
        }
        out
    }

    /// 2x replication upsample (box kernel).
    fn doubled(&self) -> Plane {
        let mut out = Plane::new(self.w * 2, self.h * 2);
        for y in 0..out.h {
            for x in 0..out.w {
                out.put(x, y, self.at(x / 2, y / 2));
            }
        }
        out
    }
}

/// Level shift, block DCT, quantize/dequantize, inverse DCT, clamp.
/// Plane dimensions must be multiples of 8.
fn code_plane(plane: &mut Plane, table: &[f64; 64], dct: &Dct8<f64>) {
    debug_assert!(plane.w % BLOCK == 0 && plane.h % BLOCK == 0);
    let mut block = [[0.0f64; BLOCK]; BLOCK];
    for by in (0..plane.h).step_by(BLOCK) {
        for bx in (0..plane.w).step_by(BLOCK) {
            for (v, row) in block.iter_mut().enumerate() {
                for (u, cell) in row.iter_mut().enumerate() {
                    *cell = plane.at(bx + u, by + v) - 128.0;
                }
            }
            let mut coefs = dct.forward(&block);
            for (v, row) in coefs.iter_mut().enumerate() {
                for (u, c) in row.iter_mut().enumerate() {
                    let t = table[v * BLOCK + u];
                    // f64::round rounds half away from zero, the pinned mode.
                    *c = (*c / t).round() * t;
                }
            }
            let rec = dct.inverse(&coefs);
            for (v, row) in rec.iter().enumerate() {
                for (u, &r) in row.iter().enumerate() {
                    plane.put(bx + u, by + v, (r + 128.0).clamp(0.0, 255.0));
                }
            }
        }
    }
}

const PAD: usize = 16; // luma blocks stay 8-aligned after 2x chroma subsampling

/// Runs interleaved 8-bit samples through the lossy JPEG chain at the given
/// quality and returns the reconstruction, same layout and dimensions.
/// `channels` must be 1 (luma only) or 3 (RGB).
pub(super) fn simulate(
    samples: &[u8],
    width: usize,
    height: usize,
    channels: usize,
    quality: u8,
) -> Vec<u8> {
    assert!(channels == 1 || channels == 3, "JPEG simulation expects 1 or 3 channels");
    assert_eq!(samples.len(), width * height * channels);
    assert!(width > 0 && height > 0);

    let dct = Dct8::<f64>::new();
    let luma_q = scaled_table(&LUMA_TABLE, quality);
    let pw = width.div_ceil(PAD) * PAD;
    let ph = height.div_ceil(PAD) * PAD;

    let mut y = Plane::new(width, height);
    if channels == 1 {
        for (dst, &s) in y.data.iter_mut().zip(samples.iter()) {
            *dst = s as f64;
        }
        let mut yp = y.padded(pw, ph);
        code_plane(&mut yp, &luma_q, &dct);
        let mut out = vec![0u8; width * height];
        for py in 0..height {
            for px in 0..width {
                out[py * width + px] = yp.at(px, py).round() as u8;
            }
        }
        return out;
    }

    let mut cb = Plane::new(width, height);
    let mut cr = Plane::new(width, height);
    for i in 0..width * height {
        let r = samples[3 * i] as f64;
        let g = samples[3 * i + 1] as f64;
        let b = samples[3 * i + 2] as f64;
        y.data[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb.data[i] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
        cr.data[i] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    }

    let chroma_q = scaled_table(&CHROMA_TABLE, quality);
    let mut yp = y.padded(pw, ph);
    code_plane(&mut yp, &luma_q, &dct);
    let mut cbp = cb.padded(pw, ph).halved();
    let mut crp = cr.padded(pw, ph).halved();
    code_plane(&mut cbp, &chroma_q, &dct);
    code_plane(&mut crp, &chroma_q, &dct);
    let cbu = cbp.doubled();
    let cru = crp.doubled();

    let mut out = vec![0u8; width * height * 3];
    for py in 0..height {
        for px in 0..width {
            let yy = yp.at(px, py);
            let pb = cbu.at(px, py) - 128.0;
            let pr = cru.at(px, py) - 128.0;
            let r = yy + 1.402 * pr;
            let g = yy - 0.344136 * pb - 0.714136 * pr;
            let b = yy + 1.772 * pb;
            let o = (py * width + px) * 3;
            out[o] = r.clamp(0.0, 255.0).round() as u8;
            out[o + 1] = g.clamp(0.0, 255.0).round() as u8;
            out[o + 2] = b.clamp(0.0, 255.0).round() as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    fn noisy_gray(w: usize, h: usize, c: usize, seed: u64) -> Vec<u8> {
        let mut rng = StreamRng::new(seed, "jpeg-test");
        (0..w * h * c)
            .map(|_| (128.0 + 40.0 * rng.standard_normal()).clamp(0.0, 255.0) as u8)
            .collect()
    }

    #[test]
    fn table_scaling_matches_convention() {
        // q=50 leaves tables unscaled.
        let t50 = scaled_table(&LUMA_TABLE, 50);
        assert_eq!(t50[0], 16.0);
        assert_eq!(t50[63], 99.0);
        // q=100 collapses everything to 1 (scale = 0, clamp low).
        let t100 = scaled_table(&LUMA_TABLE, 100);
        assert!(t100.iter().all(|&t| t == 1.0));
        // q=10 → scale 500: (16·500 + 50) / 100 = 80 in integer arithmetic.
        let t10 = scaled_table(&LUMA_TABLE, 10);
        assert_eq!(t10[0], 80.0);
        // Large entries clamp to 255.
        assert_eq!(t10[63], 255.0);
    }

    #[test]
    fn flat_image_survives_any_quality() {
        // A constant plane has zero AC energy and its DC quantizes exactly at
        // q=50 (128-128=0), so reconstruction is exact.
        let data = vec![128u8; 24 * 24 * 3];
        for q in [10u8, 50, 90] {
            let out = simulate(&data, 24, 24, 3, q);
            assert_eq!(out, data, "quality {q}");
        }
    }

    #[test]
    fn higher_quality_is_closer() {
        let data = noisy_gray(48, 32, 3, 7);
        let err = |q: u8| -> f64 {
            simulate(&data, 48, 32, 3, q)
                .iter()
                .zip(data.iter())
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
        };
        let e90 = err(90);
        let e50 = err(50);
        let e10 = err(10);
        assert!(e90 < e50 && e50 < e10, "MSE must grow as quality drops: {e90} {e50} {e10}");
        assert!(e90 > 0.0, "q=90 on noise must still be lossy");
    }

    #[test]
    fn grayscale_path_matches_luma_of_gray_rgb() {
        // A gray RGB image has constant chroma (128), which codes exactly to
        // itself, so the RGB path must agree with the single-plane path.
        let gray = noisy_gray(40, 24, 1, 11);
        let rgb: Vec<u8> = gray.iter().flat_map(|&v| [v, v, v]).collect();
        let out_gray = simulate(&gray, 40, 24, 1, 50);
        let out_rgb = simulate(&rgb, 40, 24, 3, 50);
        for (i, &g) in out_gray.iter().enumerate() {
            let (r, gg, b) = (out_rgb[3 * i], out_rgb[3 * i + 1], out_rgb[3 * i + 2]);
            // Color round-trip reintroduces ±1 rounding differences.
            assert!((r as i32 - g as i32).abs() <= 1, "pixel {i}: {r} vs {g}");
            assert!((gg as i32 - g as i32).abs() <= 1);
            assert!((b as i32 - g as i32).abs() <= 1);
        }
    }

    #[test]
    fn odd_dimensions_round_trip() {
        // Neither dimension a multiple of 16: padding must crop back exactly
        // and must not degrade quality relative to an aligned image of the
        // same noise process.
        let mse = |w: usize, h: usize| -> f64 {
            let data = noisy_gray(w, h, 3, 3);
            let out = simulate(&data, w, h, 3, 75);
            assert_eq!(out.len(), data.len());
            out.iter()
                .zip(data.iter())
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                / data.len() as f64
        };
        let odd = mse(37, 21);
        let aligned = mse(48, 32);
        assert!(
            odd < 1.2 * aligned,
            "padding inflated the error: odd {odd} vs aligned {aligned}"
        );
    }

    #[test]
    fn deterministic() {
        let data = noisy_gray(32, 32, 3, 5);
        assert_eq!(simulate(&data, 32, 32, 3, 40), simulate(&data, 32, 32, 3, 40));
    }
}
