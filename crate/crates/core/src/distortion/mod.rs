//! Image-space attacks: geometric and photometric distortions, additive
//! noise, and lossy compression, each evaluated on a fixed five-point
//! strength ladder, plus composite attacks that chain several distortions at
//! a shared relative strength.
//!
//! Every operation returns a new image with the input's dimensions, clamped
//! to [0,1]. Randomized placements (crop window, erase rectangle, noise
//! draws) consume the passed stream in a pinned order, so a given
//! `(seed, stream)` pair always yields the same output.

mod jpeg;

use crate::image::ImageBuffer;
use crate::rng::StreamRng;
use crate::scalar::Real;

/// One attack family. Singles take an absolute strength in their own units;
/// the `Combo*` kinds take a relative strength `r ∈ (0,1)` mapped onto each
/// constituent's full range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistortionKind {
    /// Clockwise rotation by `strength` degrees, bilinear, black fill.
    Rotation,
    /// Remove `strength` of the area: keep a random window of area
    /// `1 − strength` (aspect preserved) and resize it back.
    RandomCrop,
    /// Fill a random rectangle covering `strength` of the area with 0.5.
    Erase,
    /// Scale every sample by `1 + strength`.
    Brightness,
    /// Stretch every channel about its mean by `1 + strength`.
    Contrast,
    /// Gaussian blur; `strength` is a kernel extent in pixels.
    Blur,
    /// Add i.i.d. Gaussian noise with standard deviation `strength`.
    Noise,
    /// Baseline JPEG round trip at integer quality `strength`.
    Jpeg,
    /// Rotation, then crop, then erase.
    ComboGeometric,
    /// Brightness, then contrast.
    ComboPhotometric,
    /// Blur, then noise, then JPEG.
    ComboDegradation,
    /// All eight singles in the order listed above.
    ComboAll,
}

use DistortionKind::*;

impl DistortionKind {
    pub const SINGLES: [DistortionKind; 8] =
        [Rotation, RandomCrop, Erase, Brightness, Contrast, Blur, Noise, Jpeg];

    pub const COMBOS: [DistortionKind; 4] =
        [ComboGeometric, ComboPhotometric, ComboDegradation, ComboAll];

    pub const ALL: [DistortionKind; 12] = [
        Rotation,
        RandomCrop,
        Erase,
        Brightness,
        Contrast,
        Blur,
        Noise,
        Jpeg,
        ComboGeometric,
        ComboPhotometric,
        ComboDegradation,
        ComboAll,
    ];

    /// Stable identifier used in configs, directory layouts, and reports.
    pub fn id(self) -> &'static str {
        match self {
            Rotation => "rotation",
            RandomCrop => "random-crop",
            Erase => "erase",
            Brightness => "brightness",
            Contrast => "contrast",
            Blur => "blur",
            Noise => "noise",
            Jpeg => "jpeg",
            ComboGeometric => "combo-geometric",
            ComboPhotometric => "combo-photometric",
            ComboDegradation => "combo-degradation",
            ComboAll => "combo-all",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn is_combo(self) -> bool {
        matches!(self, ComboGeometric | ComboPhotometric | ComboDegradation | ComboAll)
    }

    /// The five benchmark strengths for this kind, ordered weakest to
    /// strongest attack. JPEG qualities therefore run high to low.
    pub fn strength_grid(self) -> [f64; 5] {
        match self {
            Rotation => [9.0, 18.0, 27.0, 36.0, 45.0],
            RandomCrop => [0.10, 0.20, 0.30, 0.40, 0.50],
            Erase => [0.05, 0.10, 0.15, 0.20, 0.25],
            Brightness => [0.20, 0.40, 0.60, 0.80, 1.00],
            Contrast => [0.20, 0.40, 0.60, 0.80, 1.00],
            Blur => [4.0, 8.0, 12.0, 16.0, 20.0],
            Noise => [0.02, 0.04, 0.06, 0.08, 0.10],
            Jpeg => [90.0, 70.0, 50.0, 30.0, 10.0],
            ComboGeometric | ComboPhotometric | ComboDegradation => {
                [0.05, 0.15, 0.25, 0.35, 0.45]
            }
            ComboAll => [0.05, 0.0875, 0.125, 0.1625, 0.20],
        }
    }

    /// Strengths this kind accepts, beyond the benchmark grid. Calling an
    /// apply function outside this range is a contract violation.
    pub fn admissible_range(self) -> (f64, f64) {
        match self {
            Rotation => (0.0, 360.0),
            RandomCrop | Erase => (0.0, 0.9),
            Brightness | Contrast => (0.0, 3.0),
            Blur => (1.0, 101.0),
            Noise => (0.0, 0.5),
            Jpeg => (1.0, 100.0),
            _ => (0.0, 1.0), // relative strength r, exclusive on both ends
        }
    }

    fn assert_admissible(self, strength: f64) {
        let (lo, hi) = self.admissible_range();
        let ok = match self {
            Rotation => strength > lo && strength < hi,
            RandomCrop | Erase => strength > lo && strength <= hi,
            Jpeg => {
                strength >= lo && strength <= hi && strength.fract() == 0.0
            }
            k if k.is_combo() => strength > lo && strength < hi,
            _ => strength >= lo && strength <= hi,
        };
        assert!(ok, "strength {strength} out of range for {}", self.id());
    }
}

/// Applies one single-kind distortion. Panics on combo kinds (those take a
/// relative strength; see [`apply_combo`]) and on out-of-range strengths.
pub fn apply_distortion<T: Real>(
    image: &ImageBuffer<T>,
    kind: DistortionKind,
    strength: f64,
    rng: &mut StreamRng,
) -> ImageBuffer<T> {
    assert!(!kind.is_combo(), "{} takes a relative strength; use apply_combo", kind.id());
    kind.assert_admissible(strength);
    let mut out = match kind {
        Rotation => rotate(image, strength),
        RandomCrop => random_crop_resize(image, strength, rng),
        Erase => erase_rect(image, strength, rng),
        Brightness => scale_samples(image, 1.0 + strength),
        Contrast => stretch_contrast(image, 1.0 + strength),
        Blur => gaussian_blur(image, strength),
        Noise => add_noise(image, strength, rng),
        Jpeg => jpeg_roundtrip(image, strength as u8),
        _ => unreachable!(),
    };
    out.clamp_unit();
    out
}

/// Constituents of a combo at relative strength `r`, in application order.
/// Each single's strength is `min + r·(max − min)` over its benchmark grid;
/// JPEG quality moves from 90 down to 10 and rounds to an integer.
pub fn combo_constituents(kind: DistortionKind, r: f64) -> Vec<(DistortionKind, f64)> {
    assert!(kind.is_combo(), "{} is not a combo", kind.id());
    kind.assert_admissible(r);
    let members: &[DistortionKind] = match kind {
        ComboGeometric => &[Rotation, RandomCrop, Erase],
        ComboPhotometric => &[Brightness, Contrast],
        ComboDegradation => &[Blur, Noise, Jpeg],
        ComboAll => &DistortionKind::SINGLES,
        _ => unreachable!(),
    };
    members
        .iter()
        .map(|&m| {
            let grid = m.strength_grid();
            let (lo, hi) = (grid[0], grid[4]);
            let s = lo + r * (hi - lo);
            let s = if m == Jpeg { s.round() } else { s };
            (m, s)
        })
        .collect()
}

/// Applies a combo attack: each constituent in order, at the strength given
/// by [`combo_constituents`], each drawing randomness from its own child
/// stream of `rng` (labelled by constituent id), so constituents stay
/// decorrelated and the whole combo is reproducible.
pub fn apply_combo<T: Real>(
    image: &ImageBuffer<T>,
    kind: DistortionKind,
    r: f64,
    rng: &mut StreamRng,
) -> ImageBuffer<T> {
    let mut current = image.clone();
    for (member, strength) in combo_constituents(kind, r) {
        let mut child = rng.child(member.id());
        current = apply_distortion(&current, member, strength, &mut child);
    }
    current
}

// --- kernels -----------------------------------------------------------

/// Bilinear tap with black (zero) outside the frame.
fn sample_black<T: Real>(img: &ImageBuffer<T>, fx: f64, fy: f64, c: usize) -> f64 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let dx = fx - x0;
    let dy = fy - y0;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut acc = 0.0;
    for (ox, oy, wt) in [
        (0, 0, (1.0 - dx) * (1.0 - dy)),
        (1, 0, dx * (1.0 - dy)),
        (0, 1, (1.0 - dx) * dy),
        (1, 1, dx * dy),
    ] {
        let x = x0 as isize + ox;
        let y = y0 as isize + oy;
        if x >= 0 && x < w && y >= 0 && y < h {
            acc += wt * img.get(x as usize, y as usize, c).widen();
        }
    }
    acc
}

/// Bilinear tap with edge clamping (used by resize, where the sample grid
/// stays inside the source up to rounding).
fn sample_clamped<T: Real>(img: &ImageBuffer<T>, fx: f64, fy: f64, c: usize) -> f64 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let dx = fx - x0;
    let dy = fy - y0;
    let xi = |o: isize| ((x0 as isize + o).clamp(0, img.width() as isize - 1)) as usize;
    let yi = |o: isize| ((y0 as isize + o).clamp(0, img.height() as isize - 1)) as usize;
    (1.0 - dx) * (1.0 - dy) * img.get(xi(0), yi(0), c).widen()
        + dx * (1.0 - dy) * img.get(xi(1), yi(0), c).widen()
        + (1.0 - dx) * dy * img.get(xi(0), yi(1), c).widen()
        + dx * dy * img.get(xi(1), yi(1), c).widen()
}

/// Clockwise rotation about the pixel-grid center, bilinear, black fill.
fn rotate<T: Real>(img: &ImageBuffer<T>, degrees: f64) -> ImageBuffer<T> {
    let (w, h, ch) = img.dims();
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            // Inverse map: dest offset rotated by the transpose.
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            for c in 0..ch {
                out.set(x, y, c, T::of(sample_black(img, sx, sy, c)));
            }
        }
    }
    out
}

/// Bilinear resize with the half-pixel (align_corners = false) convention.
fn resize_bilinear<T: Real>(src: &ImageBuffer<T>, dw: usize, dh: usize) -> ImageBuffer<T> {
    let (sw, sh, ch) = src.dims();
    let mut out = ImageBuffer::new(dw, dh, ch);
    let rx = sw as f64 / dw as f64;
    let ry = sh as f64 / dh as f64;
    for y in 0..dh {
        let sy = (y as f64 + 0.5) * ry - 0.5;
        for x in 0..dw {
            let sx = (x as f64 + 0.5) * rx - 0.5;
            for c in 0..ch {
                out.set(x, y, c, T::of(sample_clamped(src, sx, sy, c)));
            }
        }
    }
    out
}

/// Keeps a uniformly placed window of area `1 − removed` (aspect preserved,
/// dims scaled by sqrt) and resizes it back to the full frame.
/// Stream draws: window x, then window y.
fn random_crop_resize<T: Real>(
    img: &ImageBuffer<T>,
    removed: f64,
    rng: &mut StreamRng,
) -> ImageBuffer<T> {
    let (w, h, ch) = img.dims();
    let scale = (1.0 - removed).sqrt();
    let kw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let kh = ((h as f64 * scale).round() as usize).clamp(1, h);
    let x0 = rng.below(w - kw + 1);
    let y0 = rng.below(h - kh + 1);
    let mut window = ImageBuffer::new(kw, kh, ch);
    for y in 0..kh {
        for x in 0..kw {
            for c in 0..ch {
                window.set(x, y, c, img.get(x0 + x, y0 + y, c));
            }
        }
    }
    resize_bilinear(&window, w, h)
}

/// Fills a uniformly placed rectangle of the given area fraction with 0.5.
/// The aspect ratio (width/height) is drawn uniformly from [0.5, 2].
/// Stream draws: aspect, then rectangle x, then rectangle y.
fn erase_rect<T: Real>(img: &ImageBuffer<T>, fraction: f64, rng: &mut StreamRng) -> ImageBuffer<T> {
    let (w, h, ch) = img.dims();
    let area = fraction * (w as f64) * (h as f64);
    let aspect = rng.range_f64(0.5, 2.0);
    let rh = ((area / aspect).sqrt().round() as usize).clamp(1, h);
    let rw = (((area / rh as f64).round()) as usize).clamp(1, w);
    let x0 = rng.below(w - rw + 1);
    let y0 = rng.below(h - rh + 1);
    let mut out = img.clone();
    let half = T::of(0.5);
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            for c in 0..ch {
                out.set(x, y, c, half);
            }
        }
    }
    out
}

fn scale_samples<T: Real>(img: &ImageBuffer<T>, factor: f64) -> ImageBuffer<T> {
    let mut out = img.clone();
    let f = T::of(factor);
    out.map_inplace(|v| v * f);
    out
}

/// `v ← (v − mean)·factor + mean`, mean taken per channel over all pixels.
fn stretch_contrast<T: Real>(img: &ImageBuffer<T>, factor: f64) -> ImageBuffer<T> {
    let (w, h, ch) = img.dims();
    let mut means = vec![0.0f64; ch];
    for y in 0..h {
        for x in 0..w {
            for (c, m) in means.iter_mut().enumerate() {
                *m += img.get(x, y, c).widen();
            }
        }
    }
    let n = (w * h) as f64;
    for m in &mut means {
        *m /= n;
    }
    let mut out = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v = (img.get(x, y, c).widen() - means[c]) * factor + means[c];
                out.set(x, y, c, T::of(v));
            }
        }
    }
    out
}

/// Index reflection without edge duplication (…, 2, 1, 0, 1, 2, …).
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur. The kernel size is the nearest odd integer not
/// below `extent`; sigma follows the conventional size→sigma mapping
/// `0.3·((k−1)/2 − 1) + 0.8`. Borders reflect without duplicating the edge.
fn gaussian_blur<T: Real>(img: &ImageBuffer<T>, extent: f64) -> ImageBuffer<T> {
    let k = {
        let up = extent.ceil() as usize;
        if up % 2 == 1 {
            up
        } else {
            up + 1
        }
    };
    let sigma = 0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let mid = (k / 2) as isize;
    let mut kernel = vec![0.0f64; k];
    for (i, g) in kernel.iter_mut().enumerate() {
        let d = i as isize - mid;
        *g = (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = kernel.iter().sum();
    for g in &mut kernel {
        *g /= sum;
    }

    let (w, h, ch) = img.dims();
    // Horizontal pass into f64 scratch, then vertical pass back to T.
    let mut scratch = vec![0.0f64; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, &g) in kernel.iter().enumerate() {
                    let sx = reflect101(x as isize + i as isize - mid, w);
                    acc += g * img.get(sx, y, c).widen();
                }
                scratch[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, &g) in kernel.iter().enumerate() {
                    let sy = reflect101(y as isize + i as isize - mid, h);
                    acc += g * scratch[(sy * w + x) * ch + c];
                }
                out.set(x, y, c, T::of(acc));
            }
        }
    }
    out
}

/// Adds i.i.d. N(0, sigma²) to every sample in data order.
fn add_noise<T: Real>(img: &ImageBuffer<T>, sigma: f64, rng: &mut StreamRng) -> ImageBuffer<T> {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v += T::of(sigma * rng.standard_normal());
    }
    out
}

/// Quantizes to 8-bit (the pipeline's storage depth), runs the lossy JPEG
/// chain, and lifts back to the working scalar type.
fn jpeg_roundtrip<T: Real>(img: &ImageBuffer<T>, quality: u8) -> ImageBuffer<T> {
    let (w, h, ch) = img.dims();
    let bytes = img.to_u8();
    let coded = jpeg::simulate(&bytes, w, h, ch, quality);
    ImageBuffer::from_u8(w, h, ch, &coded)
}
