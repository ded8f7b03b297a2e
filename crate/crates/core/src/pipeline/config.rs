//! Run configuration: a TOML file with nested sections whose fields fully
//! determine a run. Re-running an unchanged config with the same seed
//! reproduces every report byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::SurrogateTrainingSetting;
use crate::distortion::DistortionKind;
use crate::error::{Error, Result};
use crate::eval::{AttackCategory, DEFAULT_FPR_TARGET, DEFAULT_IDENTIFICATION_REPEATS, DEFAULT_QUALITY_CUTOFF};
use crate::watermark::{DEFAULT_ALPHA, DEFAULT_DELTA};

/// Attack id reserved for the unattacked baseline cell.
pub const CLEAN_ATTACK_ID: &str = "none";
/// Watermark id reserved for the non-watermarked negative arm.
pub const NEGATIVE_ARM_ID: &str = "none";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    pub watermark: WatermarkSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub identification: IdentificationSection,
    #[serde(default)]
    pub attacks: AttacksSection,
    #[serde(default)]
    pub quality: QualitySection,
    #[serde(default)]
    pub ingest: Vec<IngestSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Directory name of this run under `output_dir`.
    pub id: String,
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// One TSV manifest per dataset. More than one manifest triggers
    /// per-dataset evaluation plus a pointwise-averaged aggregate.
    pub manifests: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSection {
    /// Label used in reports.
    #[serde(default = "default_watermark_id")]
    pub id: String,
    /// Load a persisted key instead of building one from the fields below.
    #[serde(default)]
    pub key_file: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_message_bits")]
    pub message_bits: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_watermark_id() -> String {
    "dct".into()
}
fn default_message_bits() -> usize {
    crate::bits::DEFAULT_MESSAGE_BITS
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    /// VERIFY significance level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Operating point for TPR reporting.
    #[serde(default = "default_fpr_target")]
    pub fpr_target: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_fpr_target() -> f64 {
    DEFAULT_FPR_TARGET
}

impl Default for DetectionSection {
    fn default() -> Self {
        DetectionSection { alpha: DEFAULT_ALPHA, fpr_target: DEFAULT_FPR_TARGET }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationSection {
    /// User-pool sizes K; empty disables the identification leaderboard.
    #[serde(default)]
    pub user_counts: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    DEFAULT_IDENTIFICATION_REPEATS
}

impl Default for IdentificationSection {
    fn default() -> Self {
        IdentificationSection { user_counts: Vec::new(), repeats: DEFAULT_IDENTIFICATION_REPEATS }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttacksSection {
    /// Distortion ids (`rotation`, `jpeg`, `combo-geometric`, ...).
    #[serde(default)]
    pub distortions: Vec<String>,
    /// Gradient attack on the bundled encoder's embedding.
    #[serde(default)]
    pub embedding: bool,
    /// Surrogate-detector attack (train on this run's clean/watermarked
    /// images, then walk each image toward the "clean" prediction).
    #[serde(default)]
    pub surrogate: bool,
    /// Per-attack strength overrides keyed by attack id; anything not
    /// listed uses the built-in grid.
    #[serde(default)]
    pub strengths: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualitySection {
    /// Degradation cutoff for radar averages.
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    /// Externally computed metric CSVs to merge into the quality tables.
    #[serde(default)]
    pub external_metrics: Vec<PathBuf>,
}

fn default_cutoff() -> f64 {
    DEFAULT_QUALITY_CUTOFF
}

impl Default for QualitySection {
    fn default() -> Self {
        QualitySection { cutoff: DEFAULT_QUALITY_CUTOFF, external_metrics: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    /// Root holding `<attack>/<strength>/<image_id>.png`.
    pub dir: PathBuf,
    /// Attack id used in reports.
    pub attack: String,
    /// Radar category id for this attack.
    #[serde(default = "default_ingest_category")]
    pub category: String,
    /// Strengths to register; empty discovers all strength directories.
    /// Ascending order must mean a stronger attack.
    #[serde(default)]
    pub strengths: Vec<f64>,
}

fn default_ingest_category() -> String {
    AttackCategory::RegenerationSingle.id().into()
}

impl RunConfig {
    /// Parses a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing config: {e}")))?;
        std::fs::write(path, text).map_err(Error::io(path))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        join(&mut self.run.output_dir);
        for m in &mut self.dataset.manifests {
            join(m);
        }
        if let Some(k) = &mut self.watermark.key_file {
            join(k);
        }
        for p in &mut self.quality.external_metrics {
            join(p);
        }
        for i in &mut self.ingest {
            join(&mut i.dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.run.id.is_empty()
            || self.run.id.contains(['/', '\\'])
            || self.run.id.starts_with('.')
        {
            return fail(format!("run id {:?} is not directory-safe", self.run.id));
        }
        if self.dataset.manifests.is_empty() {
            return fail("at least one dataset manifest is required".into());
        }
        if self.watermark.id == NEGATIVE_ARM_ID || self.watermark.id.contains('/') {
            return fail(format!("watermark id {:?} is reserved or unsafe", self.watermark.id));
        }
        if !(self.detection.alpha > 0.0 && self.detection.alpha < 1.0) {
            return fail(format!("alpha {} must lie in (0,1)", self.detection.alpha));
        }
        if !(self.detection.fpr_target > 0.0 && self.detection.fpr_target < 1.0) {
            return fail(format!("fpr target {} must lie in (0,1)", self.detection.fpr_target));
        }
        if self.identification.repeats == 0 {
            return fail("identification repeats must be at least 1".into());
        }
        for k in &self.identification.user_counts {
            if *k < 2 {
                return fail(format!("identification user count {k} must be at least 2"));
            }
        }
        if !(self.quality.cutoff > 0.0) {
            return fail(format!("quality cutoff {} must be positive", self.quality.cutoff));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.attacks.distortions {
            if DistortionKind::from_id(d).is_none() {
                return fail(format!("unknown distortion id {d:?}"));
            }
            if !seen.insert(d.clone()) {
                return fail(format!("duplicate distortion id {d:?}"));
            }
        }
        for id in self.attacks.strengths.keys() {
            if DistortionKind::from_id(id).is_none() {
                return fail(format!("strength override for unknown distortion {id:?}"));
            }
        }
        for i in &self.ingest {
            if i.attack == CLEAN_ATTACK_ID || i.attack.contains('/') || i.attack.is_empty() {
                return fail(format!("ingested attack id {:?} is reserved or unsafe", i.attack));
            }
            if AttackCategory::from_id(&i.category).is_none() {
                return fail(format!("unknown attack category {:?}", i.category));
            }
            if !seen.insert(i.attack.clone()) {
                return fail(format!("attack id {:?} used twice", i.attack));
            }
        }
        Ok(())
    }

    /// Directory of this run's artifacts.
    pub fn run_dir(&self) -> PathBuf {
        self.run.output_dir.join(&self.run.id)
    }

    /// Human name of a dataset: the manifest's file stem (index-prefixed
    /// copies disambiguate stem collisions).
    pub fn dataset_names(&self) -> Vec<String> {
        // A manifest simply called `manifest` says nothing about its
        // dataset; the directory holding it does.
        let stems: Vec<String> = self
            .dataset
            .manifests
            .iter()
            .map(|m| {
                m.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .filter(|s| s != "manifest")
                    .or_else(|| {
                        m.parent()
                            .and_then(|p| p.file_name())
                            .map(|s| s.to_string_lossy().into_owned())
                    })
                    .unwrap_or_else(|| "dataset".into())
            })
            .collect();
        let mut names = Vec::with_capacity(stems.len());
        for (i, stem) in stems.iter().enumerate() {
            if stems.iter().filter(|s| *s == stem).count() > 1 {
                names.push(format!("{i}-{stem}"));
            } else {
                names.push(stem.clone());
            }
        }
        names
    }
}

/// One attack in the run matrix with its strength axis (ascending =
/// stronger; JPEG's axis is quality, which descends).
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub id: String,
    pub category: AttackCategory,
    pub flavor: AttackFlavor,
    pub strengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackFlavor {
    Distortion(DistortionKind),
    /// PGD maximizing the bundled encoder's embedding displacement;
    /// strengths are the ε numerators over 255.
    Embedding,
    /// PGD on a surrogate detector toward its "clean" class; strengths are
    /// the ε numerators over 255.
    Surrogate(SurrogateTrainingSetting),
    /// Externally attacked images copied in from `dir`.
    Ingested { dir: PathBuf },
}

/// Expands the config into the ordered attack matrix. Ingested plans carry
/// the configured strengths; empty means discover at ingest time.
pub fn attack_plans(config: &RunConfig) -> Vec<AttackPlan> {
    let mut plans = Vec::new();
    for id in &config.attacks.distortions {
        let kind = DistortionKind::from_id(id).expect("validated distortion id");
        let strengths = config
            .attacks
            .strengths
            .get(id)
            .cloned()
            .unwrap_or_else(|| kind.strength_grid().to_vec());
        let category = if kind.is_combo() {
            AttackCategory::DistortionCombo
        } else {
            AttackCategory::DistortionSingle
        };
        plans.push(AttackPlan {
            id: id.clone(),
            category,
            flavor: AttackFlavor::Distortion(kind),
            strengths,
        });
    }
    if config.attacks.embedding {
        plans.push(AttackPlan {
            id: "adv-embedding".into(),
            category: AttackCategory::AdvEmbeddingGray,
            flavor: AttackFlavor::Embedding,
            strengths: crate::adversarial::EPSILON_GRID.iter().map(|e| e * 255.0).collect(),
        });
    }
    if config.attacks.surrogate {
        plans.push(AttackPlan {
            id: "adv-surrogate".into(),
            category: AttackCategory::AdvSurrogate,
            flavor: AttackFlavor::Surrogate(SurrogateTrainingSetting::UnWMvsWM),
            strengths: crate::adversarial::EPSILON_GRID.iter().map(|e| e * 255.0).collect(),
        });
    }
    for ing in &config.ingest {
        plans.push(AttackPlan {
            id: ing.attack.clone(),
            category: AttackCategory::from_id(&ing.category).expect("validated category"),
            flavor: AttackFlavor::Ingested { dir: ing.dir.clone() },
            strengths: ing.strengths.clone(),
        });
    }
    plans
}
