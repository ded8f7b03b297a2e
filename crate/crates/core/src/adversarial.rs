//! Adversarial attacks: a projected-gradient-descent engine over pluggable
//! differentiable models, plus two desk-scale linear models — a seeded
//! random feature encoder (for the embedding-divergence attack) and a
//! trainable logistic-regression detector (for transferred classifier
//! attacks).
//!
//! Both models operate on 64×64 adaptively pooled luma, so any input size
//! maps to a 4096-dimensional feature vector with an exact adjoint for
//! gradients. The engine computes in f64 regardless of the image scalar
//! type and enforces its projection guarantee with hard assertions.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, LUMA_WEIGHTS};
use crate::rng::StreamRng;
use crate::scalar::Real;

/// Side length of the pooled luma grid every model consumes.
pub const POOL_SIDE: usize = 64;
/// Input dimensionality after pooling.
pub const FEATURE_DIM: usize = POOL_SIDE * POOL_SIDE;

/// The benchmark's L∞ budgets, in [0,1] pixel units.
pub const EPSILON_GRID: [f64; 4] = [2.0 / 255.0, 4.0 / 255.0, 6.0 / 255.0, 8.0 / 255.0];

/// A model the PGD engine can attack: a forward map to a feature/logit
/// vector and a vector-Jacobian product back to image space.
///
/// Implementations must satisfy the finite-difference contract checked by
/// [`max_gradient_error`]: analytic gradients within relative error 1e-4 of
/// central differences.
pub trait DifferentiableModel<T: Real>: Send + Sync {
    fn output_len(&self) -> usize;

    fn forward(&self, image: &ImageBuffer<T>) -> Vec<f64>;

    /// Gradient of `upstream · forward(image)` with respect to every sample
    /// of `image`, in image layout.
    fn gradient_wrt_input(&self, image: &ImageBuffer<T>, upstream: &[f64]) -> ImageBuffer<f64>;
}

// --- pooled-luma featurization --------------------------------------------

/// Adaptive average pooling bounds: bin i of `out` covers
/// [floor(i·n/out), ceil((i+1)·n/out)), which is never empty and never
/// exceeds n.
#[inline]
fn bin_bounds(i: usize, n: usize, out: usize) -> (usize, usize) {
    (i * n / out, ((i + 1) * n).div_ceil(out))
}

fn pooled_luma<T: Real>(image: &ImageBuffer<T>) -> Vec<f64> {
    let (w, h, ch) = image.dims();
    let lw: &[f64] = if ch == 1 { &[1.0] } else { &LUMA_WEIGHTS };
    let mut features = vec![0.0f64; FEATURE_DIM];
    for by in 0..POOL_SIDE {
        let (ys, ye) = bin_bounds(by, h, POOL_SIDE);
        for bx in 0..POOL_SIDE {
            let (xs, xe) = bin_bounds(bx, w, POOL_SIDE);
            let mut acc = 0.0;
            for y in ys..ye {
                for x in xs..xe {
                    for (c, &wc) in lw.iter().enumerate() {
                        acc += wc * image.get(x, y, c).widen();
                    }
                }
            }
            features[by * POOL_SIDE + bx] = acc / ((ye - ys) * (xe - xs)) as f64;
        }
    }
    features
}

/// Exact adjoint of [`pooled_luma`]: scatters a feature-space gradient back
/// onto image samples.
fn pooled_luma_adjoint<T: Real>(
    image: &ImageBuffer<T>,
    feature_grad: &[f64],
) -> ImageBuffer<f64> {
    let (w, h, ch) = image.dims();
    let lw: &[f64] = if ch == 1 { &[1.0] } else { &LUMA_WEIGHTS };
    let mut grad = ImageBuffer::<f64>::new(w, h, ch);
    for by in 0..POOL_SIDE {
        let (ys, ye) = bin_bounds(by, h, POOL_SIDE);
        for bx in 0..POOL_SIDE {
            let (xs, xe) = bin_bounds(bx, w, POOL_SIDE);
            let g = feature_grad[by * POOL_SIDE + bx] / ((ye - ys) * (xe - xs)) as f64;
            for y in ys..ye {
                for x in xs..xe {
                    for (c, &wc) in lw.iter().enumerate() {
                        let i = grad.index(x, y, c);
                        grad.data_mut()[i] += g * wc;
                    }
                }
            }
        }
    }
    grad
}

// --- bundled models --------------------------------------------------------

/// Linear random-feature encoder: `f(x) = W · pooled_luma(x)` with a fixed
/// seeded Gaussian `W` (entries scaled by 1/√FEATURE_DIM so features are
/// O(1)). Stands in for off-the-shelf embedding networks at desk scale.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    seed: u64,
    output_dim: usize,
    /// Row-major output_dim × FEATURE_DIM.
    weights: Vec<f64>,
}

pub fn toy_encoder(seed: u64, output_dim: usize) -> ToyEncoder {
    assert!(output_dim >= 1, "encoder needs at least one output");
    let mut rng = StreamRng::new(seed, "toy-encoder/weights");
    let scale = 1.0 / (FEATURE_DIM as f64).sqrt();
    let weights = (0..output_dim * FEATURE_DIM)
        .map(|_| scale * rng.standard_normal())
        .collect();
    ToyEncoder { seed, output_dim, weights }
}

impl ToyEncoder {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_linear_checkpoint(
            path,
            CheckpointKind::Encoder,
            None,
            self.seed,
            self.output_dim,
            &self.weights,
            &vec![0.0; self.output_dim],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = load_linear_checkpoint(path)?;
        if ckpt.kind != CheckpointKind::Encoder {
            return Err(Error::Invalid("checkpoint does not hold an encoder".into()));
        }
        Ok(ToyEncoder { seed: ckpt.seed, output_dim: ckpt.output_dim, weights: ckpt.weights })
    }
}

impl<T: Real> DifferentiableModel<T> for ToyEncoder {
    fn output_len(&self) -> usize {
        self.output_dim
    }

    fn forward(&self, image: &ImageBuffer<T>) -> Vec<f64> {
        let phi = pooled_luma(image);
        self.weights
            .chunks_exact(FEATURE_DIM)
            .map(|row| row.iter().zip(phi.iter()).map(|(&w, &p)| w * p).sum())
            .collect()
    }

    fn gradient_wrt_input(&self, image: &ImageBuffer<T>, upstream: &[f64]) -> ImageBuffer<f64> {
        assert_eq!(upstream.len(), self.output_dim);
        let mut feature_grad = vec![0.0f64; FEATURE_DIM];
        for (row, &u) in self.weights.chunks_exact(FEATURE_DIM).zip(upstream.iter()) {
            for (g, &w) in feature_grad.iter_mut().zip(row.iter()) {
                *g += u * w;
            }
        }
        pooled_luma_adjoint(image, &feature_grad)
    }
}

/// Which pair of image classes a surrogate detector was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateTrainingSetting {
    /// Class 0: the originals; class 1: the same images watermarked.
    UnWMvsWM,
    /// Class 0: unrelated real images; class 1: watermarked images.
    RealVsWM,
    /// Both classes watermarked, with two different messages; class 1
    /// carries the message under attack.
    WM1vsWM2,
}

impl SurrogateTrainingSetting {
    pub const ALL: [SurrogateTrainingSetting; 3] = [
        SurrogateTrainingSetting::UnWMvsWM,
        SurrogateTrainingSetting::RealVsWM,
        SurrogateTrainingSetting::WM1vsWM2,
    ];

    pub fn id(self) -> &'static str {
        match self {
            SurrogateTrainingSetting::UnWMvsWM => "unwm-vs-wm",
            SurrogateTrainingSetting::RealVsWM => "real-vs-wm",
            SurrogateTrainingSetting::WM1vsWM2 => "wm1-vs-wm2",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }
}

/// Binary logistic-regression detector on pooled luma. Forward returns the
/// two class logits `[0, s(x)]` with `s(x) = w·φ(x) + b`, so label 1 means
/// "watermarked" (or "message under attack" for WM1vsWM2).
#[derive(Debug, Clone)]
pub struct SurrogateDetector {
    seed: u64,
    setting: SurrogateTrainingSetting,
    weights: Vec<f64>,
    bias: f64,
}

impl SurrogateDetector {
    pub fn setting(&self) -> SurrogateTrainingSetting {
        self.setting
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw decision score s(x); positive predicts class 1.
    pub fn score<T: Real>(&self, image: &ImageBuffer<T>) -> f64 {
        let phi = pooled_luma(image);
        self.weights.iter().zip(phi.iter()).map(|(&w, &p)| w * p).sum::<f64>() + self.bias
    }

    pub fn predict<T: Real>(&self, image: &ImageBuffer<T>) -> usize {
        usize::from(self.score(image) > 0.0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_linear_checkpoint(
            path,
            CheckpointKind::Surrogate,
            Some(self.setting),
            self.seed,
            1,
            &self.weights,
            &[self.bias],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = load_linear_checkpoint(path)?;
        if ckpt.kind != CheckpointKind::Surrogate {
            return Err(Error::Invalid("checkpoint does not hold a surrogate detector".into()));
        }
        let setting = ckpt
            .setting
            .ok_or_else(|| Error::Invalid("surrogate checkpoint lacks a training setting".into()))?;
        Ok(SurrogateDetector {
            seed: ckpt.seed,
            setting,
            bias: ckpt.bias[0],
            weights: ckpt.weights,
        })
    }
}

impl<T: Real> DifferentiableModel<T> for SurrogateDetector {
    fn output_len(&self) -> usize {
        2
    }

    fn forward(&self, image: &ImageBuffer<T>) -> Vec<f64> {
        vec![0.0, self.score(image)]
    }

    fn gradient_wrt_input(&self, image: &ImageBuffer<T>, upstream: &[f64]) -> ImageBuffer<f64> {
        assert_eq!(upstream.len(), 2);
        // Logit 0 is constant; only the score channel reaches the input.
        let feature_grad: Vec<f64> = self.weights.iter().map(|&w| upstream[1] * w).collect();
        pooled_luma_adjoint(image, &feature_grad)
    }
}

/// Accuracy floor below which training counts as failed.
const TRAIN_ACCURACY_FLOOR: f64 = 0.60;
/// Early-stop target.
const TRAIN_ACCURACY_TARGET: f64 = 0.99;
const TRAIN_EPOCH_CAP: usize = 2000;
const TRAIN_L2: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub accuracy: f64,
    pub epochs: usize,
}

/// Trains the logistic-regression surrogate by full-batch gradient descent
/// on centered pooled-luma features (the centering is folded into the bias
/// afterwards, so the returned model consumes raw images). Stops early at
/// ≥ 99% training accuracy, caps at a fixed epoch budget, and fails with a
/// degenerate-training error when the final accuracy does not exceed 60%.
pub fn train_surrogate<T: Real>(
    class0: &[ImageBuffer<T>],
    class1: &[ImageBuffer<T>],
    setting: SurrogateTrainingSetting,
    rng: &mut StreamRng,
) -> Result<(SurrogateDetector, TrainStats)> {
    if class0.is_empty() || class1.is_empty() {
        return Err(Error::Invalid("surrogate training needs both classes nonempty".into()));
    }
    let n = class0.len() + class1.len();
    let mut features: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut labels: Vec<f64> = Vec::with_capacity(n); // ±1
    for img in class0 {
        features.push(pooled_luma(img));
        labels.push(-1.0);
    }
    for img in class1 {
        features.push(pooled_luma(img));
        labels.push(1.0);
    }

    let mut mean = vec![0.0f64; FEATURE_DIM];
    for phi in &features {
        for (m, &p) in mean.iter_mut().zip(phi.iter()) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for phi in &mut features {
        for (p, &m) in phi.iter_mut().zip(mean.iter()) {
            *p -= m;
        }
    }

    // Step size from the logistic-loss smoothness bound L = mean‖φ‖²/4 + λ.
    let mean_sq_norm =
        features.iter().map(|phi| phi.iter().map(|p| p * p).sum::<f64>()).sum::<f64>() / n as f64;
    let lr = 1.0 / (0.25 * mean_sq_norm + TRAIN_L2).max(1e-12);

    let mut w: Vec<f64> = (0..FEATURE_DIM).map(|_| 1e-3 * rng.standard_normal()).collect();
    let mut b = 0.0f64;
    let mut accuracy = 0.0;
    let mut epochs = 0;
    for epoch in 1..=TRAIN_EPOCH_CAP {
        epochs = epoch;
        let mut grad_w = vec![0.0f64; FEATURE_DIM];
        let mut grad_b = 0.0f64;
        let mut correct = 0usize;
        for (phi, &y) in features.iter().zip(labels.iter()) {
            let s = w.iter().zip(phi.iter()).map(|(&wi, &p)| wi * p).sum::<f64>() + b;
            if s * y > 0.0 {
                correct += 1;
            }
            // d/ds ln(1 + e^{-ys}) = -y·σ(-ys)
            let coeff = -y / (1.0 + (y * s).exp());
            for (g, &p) in grad_w.iter_mut().zip(phi.iter()) {
                *g += coeff * p;
            }
            grad_b += coeff;
        }
        accuracy = correct as f64 / n as f64;
        if accuracy >= TRAIN_ACCURACY_TARGET {
            break;
        }
        let inv_n = 1.0 / n as f64;
        for (wi, g) in w.iter_mut().zip(grad_w.iter()) {
            *wi -= lr * (g * inv_n + TRAIN_L2 * *wi);
        }
        b -= lr * grad_b * inv_n;
    }

    if accuracy <= TRAIN_ACCURACY_FLOOR {
        return Err(Error::DegenerateTraining { accuracy, floor: TRAIN_ACCURACY_FLOOR });
    }

    // Fold the feature centering into the bias: s = w·(φ−μ) + b = w·φ + (b − w·μ).
    let folded_bias = b - w.iter().zip(mean.iter()).map(|(&wi, &m)| wi * m).sum::<f64>();
    Ok((
        SurrogateDetector { seed: rng.seed(), setting, weights: w, bias: folded_bias },
        TrainStats { accuracy, epochs },
    ))
}

// --- PGD engine ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgdObjective {
    /// Maximize ‖f(x) − f(x₀)‖₂.
    MaximizeEmbeddingDistance,
    /// Minimize cross-entropy toward a target label.
    TargetedClassification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    /// L∞ budget in [0,1] pixel units.
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub objective: PgdObjective,
    pub target_label: Option<usize>,
}

impl PgdConfig {
    /// Embedding-divergence defaults: α = 0.05·ε, 200 iterations.
    pub fn embedding(epsilon: f64) -> Self {
        PgdConfig {
            epsilon,
            alpha: 0.05 * epsilon,
            iterations: 200,
            objective: PgdObjective::MaximizeEmbeddingDistance,
            target_label: None,
        }
    }

    /// Targeted-classification defaults: α = 0.01·ε, 50 iterations.
    pub fn targeted(epsilon: f64, target_label: usize) -> Self {
        PgdConfig {
            epsilon,
            alpha: 0.01 * epsilon,
            iterations: 50,
            objective: PgdObjective::TargetedClassification,
            target_label: Some(target_label),
        }
    }

    fn validate(&self) {
        assert!(
            (0.0..=1.0).contains(&self.epsilon) && self.epsilon.is_finite(),
            "epsilon must lie in [0,1]"
        );
        assert!(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha must be nonnegative");
    }
}

/// Final attacked image plus the objective value at every iterate
/// (`objective[0]` is the starting point, so the trace has
/// `iterations + 1` entries).
#[derive(Debug, Clone)]
pub struct PgdResult<T: Real> {
    pub image: ImageBuffer<T>,
    pub objective: Vec<f64>,
}

#[inline]
fn step_sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softmax_ce_and_upstream(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = m + z.ln() - logits[target];
    let mut upstream: Vec<f64> = exps.iter().map(|&e| e / z).collect();
    upstream[target] -= 1.0;
    (loss, upstream)
}

fn run_pgd<T: Real>(
    x0img: &ImageBuffer<T>,
    model: &dyn DifferentiableModel<T>,
    cfg: &PgdConfig,
    init_rng: Option<&mut StreamRng>,
) -> PgdResult<T> {
    cfg.validate();
    let (w, h, ch) = x0img.dims();
    let x0: Vec<f64> = x0img.data().iter().map(|v| v.widen()).collect();
    let eps = cfg.epsilon;
    let lo: Vec<f64> = x0.iter().map(|&v| (v - eps).max(0.0)).collect();
    let hi: Vec<f64> = x0.iter().map(|&v| (v + eps).min(1.0)).collect();

    let mut x = x0.clone();
    if let Some(rng) = init_rng {
        for (xi, (&l, &u)) in x.iter_mut().zip(lo.iter().zip(hi.iter())) {
            *xi = (*xi + rng.range_f64(-eps / 2.0, eps / 2.0)).clamp(l, u);
        }
    }

    let as_image = |data: &[f64]| {
        ImageBuffer::<T>::from_vec(w, h, ch, data.iter().map(|&v| T::of(v)).collect())
    };

    let maximize = cfg.objective == PgdObjective::MaximizeEmbeddingDistance;
    let f0 = if maximize { model.forward(x0img) } else { Vec::new() };
    let target = cfg.target_label;

    let evaluate = |ximg: &ImageBuffer<T>| -> (f64, Vec<f64>) {
        match cfg.objective {
            PgdObjective::MaximizeEmbeddingDistance => {
                let z = model.forward(ximg);
                let diff: Vec<f64> = z.iter().zip(f0.iter()).map(|(&a, &b)| a - b).collect();
                let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
                let upstream = if norm > 0.0 {
                    diff.iter().map(|&d| d / norm).collect()
                } else {
                    vec![0.0; diff.len()]
                };
                (norm, upstream)
            }
            PgdObjective::TargetedClassification => {
                let logits = model.forward(ximg);
                let t = target.expect("targeted attack needs a target label");
                assert!(t < logits.len(), "target label out of range");
                softmax_ce_and_upstream(&logits, t)
            }
        }
    };

    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let direction = if maximize { 1.0 } else { -1.0 };
    for _ in 0..cfg.iterations {
        let ximg = as_image(&x);
        let (obj, upstream) = evaluate(&ximg);
        trace.push(obj);
        let grad = model.gradient_wrt_input(&ximg, &upstream);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = (*xi + direction * cfg.alpha * step_sign(grad.data()[i])).clamp(lo[i], hi[i]);
        }
    }
    let ximg = as_image(&x);
    trace.push(evaluate(&ximg).0);

    // Projection guarantee, in the engine's own precision and after the
    // cast back to the image scalar type (2⁻²³ covers f32 rounding).
    for (i, &xi) in x.iter().enumerate() {
        debug_assert!((xi - x0[i]).abs() <= eps + 4.0 * f64::EPSILON && (0.0..=1.0).contains(&xi));
        let cast = ximg.data()[i].widen();
        assert!(
            (cast - x0[i]).abs() <= eps + 2f64.powi(-23) && (0.0..=1.0).contains(&cast),
            "projection violated at sample {i}"
        );
    }
    PgdResult { image: ximg, objective: trace }
}

/// Maximizes the embedding distance to the starting image under an L∞
/// budget. Starts from a uniform random perturbation in [−ε/2, ε/2] (the
/// objective's gradient vanishes exactly at the start), drawn from `rng`.
pub fn pgd_embedding_attack<T: Real>(
    x: &ImageBuffer<T>,
    model: &dyn DifferentiableModel<T>,
    cfg: &PgdConfig,
    rng: &mut StreamRng,
) -> PgdResult<T> {
    assert_eq!(cfg.objective, PgdObjective::MaximizeEmbeddingDistance);
    run_pgd(x, model, cfg, Some(rng))
}

/// Drives the model's prediction toward `cfg.target_label` by projected
/// descent on softmax cross-entropy. Deterministic: no random start.
pub fn pgd_targeted_attack<T: Real>(
    x: &ImageBuffer<T>,
    model: &dyn DifferentiableModel<T>,
    cfg: &PgdConfig,
) -> PgdResult<T> {
    assert_eq!(cfg.objective, PgdObjective::TargetedClassification);
    run_pgd(x, model, cfg, None)
}

/// Worst relative error between analytic and central-difference gradients
/// over `probes` random (coordinate, upstream) pairs. The bundled-model
/// contract is a result ≤ 1e-4.
pub fn max_gradient_error<T: Real>(
    model: &dyn DifferentiableModel<T>,
    image: &ImageBuffer<T>,
    probes: usize,
    rng: &mut StreamRng,
) -> f64 {
    let step = 1e-4;
    let upstream: Vec<f64> = (0..model.output_len()).map(|_| rng.standard_normal()).collect();
    let analytic = model.gradient_wrt_input(image, &upstream);
    let n = image.data().len();
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let i = rng.below(n);
        let base = image.data()[i].widen();
        let mut probe = image.clone();
        // The probe values round to T; divide by the step actually realized
        // or the f32 quantization shows up as finite-difference error.
        probe.data_mut()[i] = T::of(base + step);
        let x_plus = probe.data()[i].widen();
        let plus: f64 =
            model.forward(&probe).iter().zip(upstream.iter()).map(|(&z, &u)| z * u).sum();
        probe.data_mut()[i] = T::of(base - step);
        let x_minus = probe.data()[i].widen();
        let minus: f64 =
            model.forward(&probe).iter().zip(upstream.iter()).map(|(&z, &u)| z * u).sum();
        let numeric = (plus - minus) / (x_plus - x_minus);
        let exact = analytic.data()[i];
        let denom = exact.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((exact - numeric).abs() / denom);
    }
    worst
}

// --- persistence -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CheckpointKind {
    Encoder,
    Surrogate,
}

struct LinearCheckpoint {
    kind: CheckpointKind,
    setting: Option<SurrogateTrainingSetting>,
    seed: u64,
    output_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"WMLINMDL";
const CHECKPOINT_VERSION: u16 = 1;

fn save_linear_checkpoint(
    path: impl AsRef<Path>,
    kind: CheckpointKind,
    setting: Option<SurrogateTrainingSetting>,
    seed: u64,
    output_dim: usize,
    weights: &[f64],
    bias: &[f64],
) -> Result<()> {
    assert_eq!(weights.len(), output_dim * FEATURE_DIM);
    assert_eq!(bias.len(), output_dim);
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
    }
    let mut buf = Vec::with_capacity(32 + 8 * (weights.len() + bias.len()));
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(match kind {
        CheckpointKind::Encoder => 0,
        CheckpointKind::Surrogate => 1,
    });
    buf.push(match setting {
        None => u8::MAX,
        Some(s) => SurrogateTrainingSetting::ALL.iter().position(|&x| x == s).unwrap() as u8,
    });
    buf.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
    buf.extend_from_slice(&(output_dim as u32).to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    for &w in weights.iter().chain(bias.iter()) {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(Error::io(path))?;
    file.write_all(&buf).map_err(Error::io(path))
}

fn load_linear_checkpoint(path: impl AsRef<Path>) -> Result<LinearCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let fail = |detail: &str| Error::Codec { path: path.to_path_buf(), detail: detail.into() };
    if bytes.len() < 28 || &bytes[0..8] != CHECKPOINT_MAGIC {
        return Err(fail("not a linear-model checkpoint"));
    }
    let version = u16::from_le_bytes(bytes[8..10].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!("unsupported checkpoint version {version}")));
    }
    let kind = match bytes[10] {
        0 => CheckpointKind::Encoder,
        1 => CheckpointKind::Surrogate,
        k => return Err(fail(&format!("unknown model kind {k}"))),
    };
    let setting = match bytes[11] {
        u8::MAX => None,
        i if (i as usize) < SurrogateTrainingSetting::ALL.len() => {
            Some(SurrogateTrainingSetting::ALL[i as usize])
        }
        i => return Err(fail(&format!("unknown training setting {i}"))),
    };
    let input_dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let output_dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if input_dim != FEATURE_DIM {
        return Err(fail(&format!("unsupported input dim {input_dim}")));
    }
    let seed = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let expected = 28 + 8 * (output_dim * FEATURE_DIM + output_dim);
    if bytes.len() != expected {
        return Err(fail(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut values = bytes[28..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let weights: Vec<f64> = values.by_ref().take(output_dim * FEATURE_DIM).collect();
    let bias: Vec<f64> = values.collect();
    Ok(LinearCheckpoint { kind, setting, seed, output_dim, weights, bias })
}

/// Writes per-iteration objective traces as CSV rows
/// `image_id,iteration,objective_value`.
pub fn write_pgd_log(
    path: impl AsRef<Path>,
    entries: &[(String, Vec<f64>)],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("image_id,iteration,objective_value\n");
    for (id, trace) in entries {
        for (i, obj) in trace.iter().enumerate() {
            out.push_str(&format!("{id},{i},{obj}\n"));
        }
    }
    fs::write(path, out).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitMessage;
    use crate::fixtures::synth_image;
    use crate::quality::psnr;
    use crate::watermark::{embed, WatermarkKey};

    fn rng(label: &str) -> StreamRng {
        StreamRng::new(2024, label)
    }

    fn fixture(w: usize, h: usize, c: usize, label: &str) -> ImageBuffer<f64> {
        synth_image(w, h, c, &mut rng(label))
    }

    #[test]
    fn encoder_is_deterministic_and_linear() {
        let m1 = toy_encoder(5, 6);
        let m2 = toy_encoder(5, 6);
        let m3 = toy_encoder(6, 6);
        let img = fixture(48, 40, 3, "enc-lin");
        let f1 = m1.forward(&img);
        assert_eq!(f1, m2.forward(&img));
        assert_ne!(f1, m3.forward(&img));

        let mut doubled = img.clone();
        doubled.map_inplace(|v| v * 2.0);
        let f2 = m1.forward(&doubled);
        for (a, b) in f1.iter().zip(f2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-9, "linearity: {a} vs {b}");
        }
    }

    #[test]
    fn bundled_models_pass_gradient_contract() {
        let img = fixture(50, 38, 3, "fd-probe");
        let encoder = toy_encoder(3, 8);
        let err = max_gradient_error(&encoder, &img, 100, &mut rng("fd-enc"));
        assert!(err <= 1e-4, "encoder gradient error {err}");

        let class0: Vec<_> = (0..12).map(|i| fixture(64, 64, 3, &format!("fd-c0-{i}"))).collect();
        let class1: Vec<_> = class0
            .iter()
            .map(|im| {
                let mut out = im.clone();
                out.map_inplace(|v| (v + 0.05).min(1.0));
                out
            })
            .collect();
        let (surrogate, _) = train_surrogate(
            &class0,
            &class1,
            SurrogateTrainingSetting::UnWMvsWM,
            &mut rng("fd-train"),
        )
        .unwrap();
        let err = max_gradient_error(&surrogate, &img, 100, &mut rng("fd-sur"));
        assert!(err <= 1e-4, "surrogate gradient error {err}");
    }

    #[test]
    fn gradient_contract_holds_for_f32_images() {
        let img32: ImageBuffer<f32> = synth_image(40, 40, 3, &mut rng("fd-f32"));
        let encoder = toy_encoder(9, 4);
        let err = max_gradient_error(&encoder, &img32, 50, &mut rng("fd-f32-probe"));
        assert!(err <= 1e-4, "f32 gradient error {err}");
    }

    #[test]
    fn zero_epsilon_returns_input() {
        let img = fixture(32, 32, 3, "eps0");
        let model = toy_encoder(1, 4);
        let cfg = PgdConfig::embedding(0.0);
        let out = pgd_embedding_attack(&img, &model, &cfg, &mut rng("eps0-rng"));
        assert_eq!(out.image.data(), img.data());
    }

    #[test]
    fn embedding_objective_monotone_for_linear_model() {
        let img = fixture(40, 40, 3, "mono");
        let model = toy_encoder(11, 6);
        let mut cfg = PgdConfig::embedding(8.0 / 255.0);
        cfg.iterations = 40;
        let out = pgd_embedding_attack(&img, &model, &cfg, &mut rng("mono-rng"));
        assert_eq!(out.objective.len(), 41);
        for pair in out.objective.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12, "objective regressed: {pair:?}");
        }
        assert!(
            out.objective.last().unwrap() > &out.objective[0],
            "attack made no progress: {:?}",
            out.objective
        );
    }

    #[test]
    fn projection_holds_under_fuzz() {
        let fuzz = rng("fuzz");
        for trial in 0..500 {
            let mut r = fuzz.child(format!("t{trial}"));
            let w = 12 + r.below(10);
            let h = 12 + r.below(10);
            let img: ImageBuffer<f64> = synth_image(w, h, 3, &mut r.child("img"));
            let eps = r.range_f64(1e-4, 0.05);
            let model = toy_encoder(trial as u64, 1 + r.below(5));
            let mut cfg = PgdConfig::embedding(eps);
            cfg.iterations = 5;
            let out = pgd_embedding_attack(&img, &model, &cfg, &mut r.child("init"));
            let linf = out
                .image
                .data()
                .iter()
                .zip(img.data().iter())
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(linf <= eps + 2f64.powi(-23), "trial {trial}: L∞ {linf} > ε {eps}");
            assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pgd_output_meets_psnr_floor() {
        let img = fixture(48, 48, 3, "psnr-floor");
        for eps in EPSILON_GRID {
            let model = toy_encoder(1, 8);
            let mut cfg = PgdConfig::embedding(eps);
            cfg.iterations = 20;
            let out = pgd_embedding_attack(&img, &model, &cfg, &mut rng("psnr-rng"));
            let floor = 20.0 * (1.0 / eps).log10();
            let got = psnr(&img, &out.image);
            assert!(got >= floor, "PSNR {got} below floor {floor} at eps {eps}");
        }
    }

    #[test]
    fn targeted_single_step_moves_by_alpha_sign_w() {
        // 64×64 single-channel mid-gray: pooling is the identity, so the
        // input gradient at pixel i is upstream[1]·w[i] and one step moves
        // every pixel by exactly ∓α·sign(w[i]) (sign flips with the target).
        let mut r = rng("analytic-w");
        let weights: Vec<f64> = (0..FEATURE_DIM).map(|_| r.standard_normal()).collect();
        let model = SurrogateDetector {
            seed: 0,
            setting: SurrogateTrainingSetting::UnWMvsWM,
            weights: weights.clone(),
            bias: 0.0,
        };
        let mut img = ImageBuffer::<f64>::new(64, 64, 1);
        img.map_inplace(|_| 0.5);

        for (target, toward) in [(1usize, 1.0f64), (0usize, -1.0f64)] {
            let mut cfg = PgdConfig::targeted(8.0 / 255.0, target);
            cfg.iterations = 1;
            let out = pgd_targeted_attack(&img, &model, &cfg);
            for (i, (&got, &orig)) in out.image.data().iter().zip(img.data().iter()).enumerate() {
                let expect = orig + toward * cfg.alpha * weights[i].signum();
                assert!(
                    (got - expect).abs() < 1e-12,
                    "pixel {i}: got {got}, expected {expect} (target {target})"
                );
            }
        }
    }

    #[test]
    fn targeted_loss_nonincreasing_toward_current_prediction() {
        let class0: Vec<_> = (0..10).map(|i| fixture(72, 72, 3, &format!("tl-c0-{i}"))).collect();
        let class1: Vec<_> = class0
            .iter()
            .map(|im| {
                let mut out = im.clone();
                out.map_inplace(|v| (v * 1.08).min(1.0));
                out
            })
            .collect();
        let (model, _) = train_surrogate(
            &class0,
            &class1,
            SurrogateTrainingSetting::UnWMvsWM,
            &mut rng("tl-train"),
        )
        .unwrap();
        let probe = &class1[0];
        let current = model.predict(probe);
        let cfg = PgdConfig::targeted(4.0 / 255.0, current);
        let out = pgd_targeted_attack(probe, &model, &cfg);
        for pair in out.objective.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-7, "loss increased: {pair:?}");
        }
    }

    #[test]
    fn surrogate_learns_watermark_and_attack_flips_it() {
        // Class 1 = class 0 embedded with a strong watermark.
        let key = WatermarkKey { delta: 0.10, message_bits: 16, ..WatermarkKey::new(77) };
        let message = BitMessage::random(16, &mut rng("sf-msg"));
        let class0: Vec<_> = (0..32).map(|i| fixture(96, 96, 3, &format!("sf-{i}"))).collect();
        let class1: Vec<_> =
            class0.iter().map(|im| embed(&key, im, &message).unwrap()).collect();
        let (model, stats) = train_surrogate(
            &class0,
            &class1,
            SurrogateTrainingSetting::UnWMvsWM,
            &mut rng("sf-train"),
        )
        .unwrap();
        assert!(stats.accuracy >= 0.99, "training accuracy {}", stats.accuracy);

        let cfg = PgdConfig::targeted(8.0 / 255.0, 0);
        let mut flipped = 0;
        let mut attacked_total = 0;
        for img in &class1 {
            if model.predict(img) != 1 {
                continue; // only count images the surrogate actually detects
            }
            attacked_total += 1;
            let out = pgd_targeted_attack(img, &model, &cfg);
            if model.predict(&out.image) == 0 {
                flipped += 1;
            }
        }
        assert!(attacked_total >= 30, "surrogate should detect nearly all: {attacked_total}");
        let rate = flipped as f64 / attacked_total as f64;
        assert!(rate >= 0.9, "self-flip rate {rate}");
    }

    #[test]
    fn degenerate_training_data_is_rejected() {
        let imgs: Vec<_> = (0..12).map(|i| fixture(64, 64, 3, &format!("dg-{i}"))).collect();
        match train_surrogate(
            &imgs,
            &imgs.clone(),
            SurrogateTrainingSetting::RealVsWM,
            &mut rng("dg-train"),
        ) {
            Err(Error::DegenerateTraining { accuracy, floor }) => {
                assert!(accuracy <= floor, "{accuracy} vs {floor}");
            }
            other => panic!("expected degenerate training, got {other:?}"),
        }
    }

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = fixture(40, 40, 3, "ckpt-img");

        let enc = toy_encoder(42, 5);
        let enc_path = dir.path().join("encoder.bin");
        enc.save(&enc_path).unwrap();
        let loaded = ToyEncoder::load(&enc_path).unwrap();
        assert_eq!(loaded.seed(), 42);
        assert_eq!(loaded.output_dim(), 5);
        assert_eq!(
            DifferentiableModel::<f64>::forward(&enc, &img),
            DifferentiableModel::<f64>::forward(&loaded, &img)
        );

        let class0: Vec<_> = (0..10).map(|i| fixture(64, 64, 3, &format!("ck-{i}"))).collect();
        let class1: Vec<_> = class0
            .iter()
            .map(|im| {
                let mut out = im.clone();
                out.map_inplace(|v| (v + 0.06).min(1.0));
                out
            })
            .collect();
        let (sur, _) = train_surrogate(
            &class0,
            &class1,
            SurrogateTrainingSetting::WM1vsWM2,
            &mut rng("ck-train"),
        )
        .unwrap();
        let sur_path = dir.path().join("surrogate.bin");
        sur.save(&sur_path).unwrap();
        let loaded = SurrogateDetector::load(&sur_path).unwrap();
        assert_eq!(loaded.setting(), SurrogateTrainingSetting::WM1vsWM2);
        assert_eq!(sur.score(&img), loaded.score(&img));

        // Wrong kind and corrupt magic are rejected.
        assert!(SurrogateDetector::load(&enc_path).is_err());
        std::fs::write(dir.path().join("junk.bin"), b"JUNKJUNK rest").unwrap();
        assert!(ToyEncoder::load(dir.path().join("junk.bin")).is_err());
    }

    #[test]
    fn pgd_log_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pgd.csv");
        write_pgd_log(
            &path,
            &[
                ("img_a".to_string(), vec![0.0, 0.5, 0.75]),
                ("img_b".to_string(), vec![1.25]),
            ],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "image_id,iteration,objective_value");
        assert_eq!(lines[1], "img_a,0,0");
        assert_eq!(lines[3], "img_a,2,0.75");
        assert_eq!(lines[4], "img_b,0,1.25");
        assert_eq!(lines.len(), 5);
    }
}
