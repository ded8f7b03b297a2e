//! Image quality metrics and degradation normalization.
//!
//! In-repo metrics are PSNR, SSIM, and NMI, computed on [0,1] images.
//! Metrics that need pretrained networks (perceptual similarity,
//! distributional distances, no-reference quality) are ingested from CSV
//! and flow through the same normalization: every metric is oriented so
//! that larger means more degraded, mapped affinely so the corpus' 10%
//! quantile lands at 0.1 and its 90% quantile at 0.9 (values outside the
//! band are deliberately not clamped), averaged within each metric
//! category, and finally averaged across the categories present.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scalar::Real;

/// The four metric families that are aggregated separately before the final
/// cross-category mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricCategory {
    ImageSimilarity,
    DistributionDistance,
    Perception,
    QualityAssessment,
}

impl MetricCategory {
    pub const ALL: [MetricCategory; 4] = [
        MetricCategory::ImageSimilarity,
        MetricCategory::DistributionDistance,
        MetricCategory::Perception,
        MetricCategory::QualityAssessment,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MetricCategory::ImageSimilarity => "image-similarity",
            MetricCategory::DistributionDistance => "distribution-distance",
            MetricCategory::Perception => "perception",
            MetricCategory::QualityAssessment => "quality-assessment",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.id() == id)
    }
}

/// Whether a larger raw value means a better (less degraded) image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

impl Orientation {
    pub fn id(self) -> &'static str {
        match self {
            Orientation::HigherIsBetter => "higher-is-better",
            Orientation::LowerIsBetter => "lower-is-better",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        [Orientation::HigherIsBetter, Orientation::LowerIsBetter]
            .into_iter()
            .find(|o| o.id() == id)
    }

    /// Maps a raw value onto the "larger = more degraded" axis.
    #[inline]
    pub fn degradation(self, raw: f64) -> f64 {
        match self {
            Orientation::HigherIsBetter => -raw,
            Orientation::LowerIsBetter => raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricSource {
    Builtin,
    External,
}

impl MetricSource {
    pub fn id(self) -> &'static str {
        match self {
            MetricSource::Builtin => "builtin",
            MetricSource::External => "external",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        [MetricSource::Builtin, MetricSource::External]
            .into_iter()
            .find(|s| s.id() == id)
    }
}

/// Identity and normalization metadata of one quality metric.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MetricId {
    pub name: String,
    pub category: MetricCategory,
    pub orientation: Orientation,
    pub source: MetricSource,
}

impl MetricId {
    fn builtin(name: &str) -> Self {
        MetricId {
            name: name.to_string(),
            category: MetricCategory::ImageSimilarity,
            orientation: Orientation::HigherIsBetter,
            source: MetricSource::Builtin,
        }
    }

    pub fn psnr() -> Self {
        Self::builtin("psnr")
    }

    pub fn ssim() -> Self {
        Self::builtin("ssim")
    }

    pub fn nmi() -> Self {
        Self::builtin("nmi")
    }

    /// The three metrics computed in-repo, all pixel-similarity scores where
    /// higher means closer.
    pub fn builtins() -> [MetricId; 3] {
        [Self::psnr(), Self::ssim(), Self::nmi()]
    }
}

// --- metric computations -------------------------------------------------

/// Caps PSNR for (near-)identical images; 10·log10(1/eps) with eps = 1e-10.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB against peak 1.0, over all samples.
/// Identical images return the 100 dB cap. Panics on dimension mismatch.
pub fn psnr<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> f64 {
    assert_eq!(a.dims(), b.dims(), "psnr needs equal dimensions");
    let mse = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| {
            let d = x.widen() - y.widen();
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse <= 1e-10 {
        return PSNR_CAP_DB;
    }
    10.0 * (1.0 / mse).log10()
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4; // (0.01 · dynamic range)²
const SSIM_C2: f64 = 9e-4; // (0.03 · dynamic range)²

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, g) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *g = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    for g in &mut k {
        *g /= sum;
    }
    k
}

/// Valid-mode separable filtering: horizontal then vertical pass, output
/// (w−10)×(h−10).
fn valid_filter(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &g) in k.iter().enumerate() {
                acc += g * src[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &g) in k.iter().enumerate() {
                acc += g * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn luma_f64<T: Real>(img: &ImageBuffer<T>) -> Vec<f64> {
    img.luma().data().iter().map(|v| v.widen()).collect()
}

/// Mean structural similarity over luma, 11×11 Gaussian windows (σ = 1.5)
/// fully inside the frame. Panics on dimension mismatch or images smaller
/// than the window.
pub fn ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> f64 {
    assert_eq!(a.dims(), b.dims(), "ssim needs equal dimensions");
    let (w, h) = (a.width(), a.height());
    assert!(
        w >= SSIM_WINDOW && h >= SSIM_WINDOW,
        "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images"
    );
    let k = ssim_kernel();
    let la = luma_f64(a);
    let lb = luma_f64(b);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = la.iter().zip(lb.iter()).map(|(&x, &y)| x * y).collect();

    let mu_a = valid_filter(&la, w, h, &k);
    let mu_b = valid_filter(&lb, w, h, &k);
    let m_aa = valid_filter(&sq(&la), w, h, &k);
    let m_bb = valid_filter(&sq(&lb), w, h, &k);
    let m_ab = valid_filter(&prod, w, h, &k);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / mu_a.len() as f64
}

fn entropy_from_counts(counts: &[u32], n: f64) -> f64 {
    // H = ln n − (1/n)·Σ c·ln c, skipping empty bins.
    let s: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64).ln())
        .sum();
    n.ln() - s / n
}

fn luma_bins<T: Real>(img: &ImageBuffer<T>) -> Vec<usize> {
    img.luma()
        .data()
        .iter()
        .map(|v| (v.unit().widen() * 255.0).round() as usize)
        .collect()
}

/// Normalized mutual information (symmetric form (H(A)+H(B))/H(A,B)) over
/// 256-bin luma histograms with natural logarithms. Equal images with any
/// non-degenerate histogram give 2.0; independent content tends to 1.0.
/// A single-cell joint histogram (two constant images) is defined as 2.0.
/// Panics on dimension mismatch.
pub fn nmi<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> f64 {
    assert_eq!(a.dims(), b.dims(), "nmi needs equal dimensions");
    let ia = luma_bins(a);
    let ib = luma_bins(b);
    let mut hist_a = vec![0u32; 256];
    let mut hist_b = vec![0u32; 256];
    let mut joint = vec![0u32; 256 * 256];
    for (&x, &y) in ia.iter().zip(ib.iter()) {
        hist_a[x] += 1;
        hist_b[y] += 1;
        joint[x * 256 + y] += 1;
    }
    let n = ia.len() as f64;
    let h_ab = entropy_from_counts(&joint, n);
    if h_ab <= 0.0 {
        return 2.0;
    }
    (entropy_from_counts(&hist_a, n) + entropy_from_counts(&hist_b, n)) / h_ab
}

// --- normalization -------------------------------------------------------

/// Linear-interpolation quantile of sorted values (h = (n−1)·p).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizerEntry {
    pub metric: MetricId,
    /// 10% quantile of the degradation-oriented values.
    pub q10: f64,
    /// 90% quantile of the degradation-oriented values.
    pub q90: f64,
}

/// Per-metric affine maps fitted on an attacked corpus. `normalize` sends
/// the corpus' 10% quantile to 0.1 and the 90% to 0.9 and extrapolates
/// linearly beyond them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityNormalizer {
    entries: BTreeMap<String, NormalizerEntry>,
}

/// Fits the normalizer. Every metric needs at least 10 values; a metric
/// whose 10% and 90% quantiles coincide cannot be normalized and fails
/// with a degenerate-corpus error.
pub fn fit_normalizer(samples: &[(MetricId, Vec<f64>)]) -> Result<QualityNormalizer> {
    let mut entries = BTreeMap::new();
    for (metric, values) in samples {
        if values.len() < 10 {
            return Err(Error::Invalid(format!(
                "metric {} has {} values; normalization needs at least 10",
                metric.name,
                values.len()
            )));
        }
        let mut oriented: Vec<f64> =
            values.iter().map(|&v| metric.orientation.degradation(v)).collect();
        oriented.sort_by(|a, b| a.partial_cmp(b).expect("metric values must not be NaN"));
        let q10 = quantile_sorted(&oriented, 0.1);
        let q90 = quantile_sorted(&oriented, 0.9);
        if q10 >= q90 {
            return Err(Error::DegenerateCorpus { metric: metric.name.clone(), value: q10 });
        }
        let prev = entries.insert(
            metric.name.clone(),
            NormalizerEntry { metric: metric.clone(), q10, q90 },
        );
        if prev.is_some() {
            return Err(Error::Invalid(format!("duplicate metric name {}", metric.name)));
        }
    }
    Ok(QualityNormalizer { entries })
}

impl QualityNormalizer {
    /// Normalized degradation of one raw metric value.
    pub fn normalize(&self, name: &str, raw: f64) -> Result<f64> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("metric {name} not in normalizer")))?;
        let v = e.metric.orientation.degradation(raw);
        Ok(0.1 + 0.8 * (v - e.q10) / (e.q90 - e.q10))
    }

    pub fn entries(&self) -> impl Iterator<Item = &NormalizerEntry> {
        self.entries.values()
    }

    pub fn get(&self, name: &str) -> Option<&NormalizerEntry> {
        self.entries.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Plain-text persistence: one block of `key = value` lines per metric,
    /// blocks separated by blank lines. Floats round-trip exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("# fitted quality normalizer: oriented 10%/90% quantiles\n");
        for e in self.entries.values() {
            let _ = write!(
                out,
                "\nmetric = {}\ncategory = {}\norientation = {}\nsource = {}\nq10 = {:?}\nq90 = {:?}\n",
                e.metric.name,
                e.metric.category.id(),
                e.metric.orientation.id(),
                e.metric.source.id(),
                e.q10,
                e.q90,
            );
        }
        fs::write(path.as_ref(), out).map_err(Error::io(path.as_ref()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let parse_err = |line: usize, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut entries = BTreeMap::new();
        let mut block: Vec<(usize, String, String)> = Vec::new();
        let flush = |block: &mut Vec<(usize, String, String)>,
                         entries: &mut BTreeMap<String, NormalizerEntry>|
         -> Result<()> {
            if block.is_empty() {
                return Ok(());
            }
            let first_line = block[0].0;
            let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
            for (line, k, v) in block.iter() {
                fields.insert(k.as_str(), (*line, v.as_str()));
            }
            let take = |name: &str| {
                fields
                    .get(name)
                    .copied()
                    .ok_or_else(|| parse_err(first_line, format!("missing field {name}")))
            };
            let (_, name) = take("metric")?;
            let (cl, cat) = take("category")?;
            let (ol, ori) = take("orientation")?;
            let (sl, src) = take("source")?;
            let (ql, q10) = take("q10")?;
            let (rl, q90) = take("q90")?;
            let metric = MetricId {
                name: name.to_string(),
                category: MetricCategory::from_id(cat)
                    .ok_or_else(|| parse_err(cl, format!("unknown category {cat}")))?,
                orientation: Orientation::from_id(ori)
                    .ok_or_else(|| parse_err(ol, format!("unknown orientation {ori}")))?,
                source: MetricSource::from_id(src)
                    .ok_or_else(|| parse_err(sl, format!("unknown source {src}")))?,
            };
            let q10: f64 =
                q10.parse().map_err(|_| parse_err(ql, format!("bad float {q10}")))?;
            let q90: f64 =
                q90.parse().map_err(|_| parse_err(rl, format!("bad float {q90}")))?;
            if entries.insert(name.to_string(), NormalizerEntry { metric, q10, q90 }).is_some() {
                return Err(parse_err(first_line, format!("duplicate metric {name}")));
            }
            block.clear();
            Ok(())
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                flush(&mut block, &mut entries)?;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(i + 1, format!("expected key = value, got {line}")))?;
            block.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        flush(&mut block, &mut entries)?;
        Ok(QualityNormalizer { entries })
    }
}

/// Two-level mean: within each category present, then across categories.
/// This is the benchmark's consolidated quality degradation Q.
pub fn aggregate_quality(values: &[(MetricId, f64)]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Invalid("aggregate_quality needs at least one value".into()));
    }
    let mut sums: BTreeMap<MetricCategory, (f64, usize)> = BTreeMap::new();
    for (metric, v) in values {
        let slot = sums.entry(metric.category).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    let total: f64 = sums.values().map(|(s, n)| s / *n as f64).sum();
    Ok(total / sums.len() as f64)
}

// --- external metric ingestion -------------------------------------------

/// Granularity of an ingested metric value: one attacked image, or one
/// whole (attack, strength) cell (the natural unit for distributional
/// metrics computed over image sets).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricScope {
    /// Key format `attack/strength/image_id`.
    Image,
    /// Key format `attack/strength`.
    Cell,
}

impl MetricScope {
    pub fn id(self) -> &'static str {
        match self {
            MetricScope::Image => "image",
            MetricScope::Cell => "cell",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        [MetricScope::Image, MetricScope::Cell].into_iter().find(|s| s.id() == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalMetricRow {
    pub metric: MetricId,
    pub scope: MetricScope,
    pub key: String,
    pub value: f64,
}

pub const EXTERNAL_METRIC_HEADER: &str = "metric_name,category,orientation,scope,key,value";

/// Reads externally computed metric values. The file is comma-separated
/// with the exact header `metric_name,category,orientation,scope,key,value`;
/// metric names and keys therefore must not contain commas.
pub fn read_external_metrics(path: impl AsRef<Path>) -> Result<Vec<ExternalMetricRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EXTERNAL_METRIC_HEADER => {}
        other => {
            return Err(parse_err(
                1,
                format!(
                    "expected header {EXTERNAL_METRIC_HEADER:?}, got {:?}",
                    other.map(|(_, h)| h).unwrap_or("")
                ),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(i + 1, format!("expected 6 fields, got {}", fields.len())));
        }
        let metric = MetricId {
            name: fields[0].trim().to_string(),
            category: MetricCategory::from_id(fields[1].trim())
                .ok_or_else(|| parse_err(i + 1, format!("unknown category {}", fields[1])))?,
            orientation: Orientation::from_id(fields[2].trim())
                .ok_or_else(|| parse_err(i + 1, format!("unknown orientation {}", fields[2])))?,
            source: MetricSource::External,
        };
        let scope = MetricScope::from_id(fields[3].trim())
            .ok_or_else(|| parse_err(i + 1, format!("unknown scope {}", fields[3])))?;
        let value: f64 = fields[5]
            .trim()
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad float {}", fields[5])))?;
        rows.push(ExternalMetricRow {
            metric,
            scope,
            key: fields[4].trim().to_string(),
            value,
        });
    }
    Ok(rows)
}
