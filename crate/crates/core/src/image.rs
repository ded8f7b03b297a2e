//! In-memory image representation.
//!
//! Pixels are stored row-major, channel-interleaved, as unit-interval
//! scalars. One or three channels are supported (grayscale, RGB). The
//! 8-bit bridge is pinned in both directions: import divides by 255,
//! export rounds `v * 255` half-away-from-zero after clamping, so an
//! import/export pair over 8-bit data is the identity.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Luma weights (BT.601), summing to exactly 1.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major, channel-interleaved image with unit-interval samples.
#[derive(Clone, PartialEq)]
pub struct ImageBuffer<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> ImageBuffer<T> {
    /// Zero-filled image. Panics on empty dimensions or a channel count
    /// other than 1 or 3.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!(
            channels == 1 || channels == 3,
            "supported channel counts are 1 and 3, got {channels}"
        );
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
        }
    }

    /// Wraps an existing sample vector; `data.len()` must equal
    /// `width * height * channels`.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            width * height * channels,
            "sample vector length does not match dimensions"
        );
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!(
            channels == 1 || channels == 3,
            "supported channel counts are 1 and 3, got {channels}"
        );
        ImageBuffer {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    /// Applies `f` to every sample in place.
    pub fn map_inplace(&mut self, mut f: impl FnMut(T) -> T) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Clamps every sample to `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        self.map_inplace(|v| v.unit());
    }

    /// Single-channel luma plane: BT.601 weights for RGB, a copy for
    /// grayscale input.
    pub fn luma(&self) -> ImageBuffer<T> {
        if self.channels == 1 {
            return self.clone();
        }
        let (wr, wg, wb) = (
            T::of(LUMA_WEIGHTS[0]),
            T::of(LUMA_WEIGHTS[1]),
            T::of(LUMA_WEIGHTS[2]),
        );
        let mut out = ImageBuffer::new(self.width, self.height, 1);
        for i in 0..self.width * self.height {
            let base = i * 3;
            out.data[i] =
                wr * self.data[base] + wg * self.data[base + 1] + wb * self.data[base + 2];
        }
        out
    }

    /// 8-bit export: clamp, scale by 255, round half away from zero.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.unit().widen() * 255.0).round() as u8)
            .collect()
    }

    /// 8-bit import: divide by 255.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Self {
        assert_eq!(
            bytes.len(),
            width * height * channels,
            "byte length does not match dimensions"
        );
        let data = bytes.iter().map(|&b| T::of(b as f64 / 255.0)).collect();
        ImageBuffer::from_vec(width, height, channels, data)
    }

    /// Round trip through the pinned 8-bit quantization.
    pub fn quantize_u8(&self) -> Self {
        ImageBuffer::from_u8(self.width, self.height, self.channels, &self.to_u8())
    }

    /// Writes an 8-bit PNG (grayscale or RGB to match `channels`).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
            }
        }
        let bytes = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let encode = match self.channels {
            1 => ::image::GrayImage::from_raw(w, h, bytes)
                .expect("sized buffer")
                .save_with_format(path, ::image::ImageFormat::Png),
            _ => ::image::RgbImage::from_raw(w, h, bytes)
                .expect("sized buffer")
                .save_with_format(path, ::image::ImageFormat::Png),
        };
        encode.map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Reads a PNG (or any format the codec recognizes). Grayscale stays
    /// single-channel; everything else converts to RGB with alpha
    /// dropped; high bit depths narrow to 8 bits.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dynamic = ::image::open(path).map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let out = match dynamic {
            ::image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                ImageBuffer::from_u8(w, h, 1, g.as_raw())
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                ImageBuffer::from_u8(w, h, 3, rgb.as_raw())
            }
        };
        Ok(out)
    }
}

impl<T: Real> std::fmt::Debug for ImageBuffer<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ImageBuffer({}x{}x{}, {})",
            self.width,
            self.height,
            self.channels,
            std::any::type_name::<T>()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use proptest::prelude::*;
    use rand::RngCore;

    #[test]
    fn luma_weights_sum_to_one() {
        assert!((LUMA_WEIGHTS.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn luma_of_gray_is_identity_and_of_rgb_is_weighted() {
        let mut rgb = ImageBuffer::<f64>::new(2, 1, 3);
        rgb.set(0, 0, 0, 1.0); // pure red
        rgb.set(1, 0, 1, 1.0); // pure green
        let l = rgb.luma();
        assert!((l.get(0, 0, 0) - 0.299).abs() < 1e-12);
        assert!((l.get(1, 0, 0) - 0.587).abs() < 1e-12);

        let mut gray = ImageBuffer::<f64>::new(2, 2, 1);
        gray.set(1, 1, 0, 0.25);
        assert_eq!(gray.luma().get(1, 1, 0), 0.25);
    }

    #[test]
    fn eight_bit_round_trip_is_identity_on_quantized_data() {
        let mut rng = StreamRng::new(2, "imgbytes");
        let bytes: Vec<u8> = (0..4 * 3 * 3).map(|_| rng.next_u64() as u8).collect();
        let img = ImageBuffer::<f64>::from_u8(4, 3, 3, &bytes);
        assert_eq!(img.to_u8(), bytes);
        // And a second trip changes nothing.
        assert_eq!(img.quantize_u8(), img);
    }

    #[test]
    fn export_rounds_half_away_from_zero_after_clamp() {
        let img = ImageBuffer::<f64>::from_vec(4, 1, 1, vec![1.5, -0.25, 0.5 / 255.0, 1.0]);
        assert_eq!(img.to_u8(), vec![255, 0, 1, 255]);
    }

    #[test]
    fn png_round_trip_gray_and_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = StreamRng::new(4, "png");
        for channels in [1usize, 3] {
            let bytes: Vec<u8> = (0..8 * 5 * channels).map(|_| rng.next_u64() as u8).collect();
            let img = ImageBuffer::<f64>::from_u8(8, 5, channels, &bytes);
            let path = dir.path().join(format!("c{channels}.png"));
            img.save_png(&path).unwrap();
            let back = ImageBuffer::<f64>::load_png(&path).unwrap();
            assert_eq!(back.dims(), (8, 5, channels));
            assert_eq!(back, img);
        }
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent_and_bounded(
            vals in proptest::collection::vec(-2.0f64..3.0, 12)
        ) {
            let mut img = ImageBuffer::from_vec(4, 3, 1, vals);
            img.clamp_unit();
            let once = img.clone();
            img.clamp_unit();
            prop_assert_eq!(&img, &once);
            prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
