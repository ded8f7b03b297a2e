//! Deterministic synthetic test imagery.
//!
//! The benchmark needs corpora that behave like photographs under
//! attacks (smooth regions, oriented structure, mild texture) while
//! remaining fully reproducible. Each image is a seeded mixture of
//! low-frequency cosine fields and an oriented gradient, plus gentle
//! per-channel tinting and pixel noise. Values stay inside
//! `[0.06, 0.94]` so watermark modulation and mild attacks never clip.

use std::f64::consts::TAU;
use std::path::Path;

use crate::error::Result;
use crate::image::ImageBuffer;
use crate::manifest::DatasetManifest;
use crate::rng::StreamRng;
use crate::scalar::Real;

/// One synthetic image drawn entirely from `rng`.
pub fn synth_image<T: Real>(
    width: usize,
    height: usize,
    channels: usize,
    rng: &mut StreamRng,
) -> ImageBuffer<T> {
    assert!(width > 0 && height > 0);
    assert!(channels == 1 || channels == 3);

    let waves = 2 + rng.below(3);
    let mut params = Vec::with_capacity(waves);
    for _ in 0..waves {
        params.push((
            rng.range_f64(0.10, 0.30),  // amplitude
            rng.range_f64(-3.5, 3.5),   // cycles across width
            rng.range_f64(-3.5, 3.5),   // cycles across height
            rng.range_f64(0.0, TAU),    // phase
        ));
    }
    let grad_x = rng.range_f64(-0.25, 0.25);
    let grad_y = rng.range_f64(-0.25, 0.25);

    let mut base = vec![0.0f64; width * height];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 / width as f64, y as f64 / height as f64);
            let mut v = grad_x * fx + grad_y * fy;
            for &(a, cx, cy, phase) in &params {
                v += a * (TAU * (cx * fx + cy * fy) + phase).cos();
            }
            base[y * width + x] = v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    // Map the structural field into [0.15, 0.85]; tint and noise below
    // stay within +-0.09 so samples cannot reach the clip points.
    let span = if hi > lo { hi - lo } else { 1.0 };
    let tints: Vec<f64> = (0..channels)
        .map(|_| if channels == 1 { 0.0 } else { rng.range_f64(-0.06, 0.06) })
        .collect();
    let noise_sigma = 0.01;

    let mut out = ImageBuffer::<T>::new(width, height, channels);
    for y in 0..height {
        for x in 0..width {
            let field = 0.15 + 0.70 * (base[y * width + x] - lo) / span;
            for (c, tint) in tints.iter().enumerate() {
                let noise = noise_sigma * rng.standard_normal();
                let v = (field + tint + noise).clamp(0.06, 0.94);
                out.set(x, y, c, T::of(v));
            }
        }
    }
    out
}

/// Standard per-image stream for corpus element `index` under `label`.
pub fn corpus_rng(seed: u64, label: &str, index: usize) -> StreamRng {
    StreamRng::new(seed, format!("fixtures/{label}/{index:05}"))
}

/// Writes `count` PNGs plus a `manifest.tsv` into `dir` and returns the
/// loaded manifest. Image ids are `img_00000`, `img_00001`, ...
pub fn synth_corpus_dir(
    dir: impl AsRef<Path>,
    count: usize,
    width: usize,
    height: usize,
    channels: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(crate::error::Error::io(dir))?;
    let mut lines = String::new();
    for i in 0..count {
        let mut rng = corpus_rng(seed, "corpus", i);
        let img: ImageBuffer<f64> = synth_image(width, height, channels, &mut rng);
        let name = format!("img_{i:05}.png");
        img.save_png(dir.join(&name))?;
        lines.push_str(&name);
        lines.push('\n');
    }
    let manifest_path = dir.join("manifest.tsv");
    std::fs::write(&manifest_path, lines).map_err(crate::error::Error::io(&manifest_path))?;
    DatasetManifest::load(&manifest_path)
}
