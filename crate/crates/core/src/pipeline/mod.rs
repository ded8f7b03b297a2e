//! Run orchestration: expands a config into the watermark × attack ×
//! strength × dataset matrix, persists every intermediate image and
//! record, and emits the report bundle. Stages are content-addressed
//! through [`RunLedger`]; re-running an unchanged config executes nothing
//! and leaves every artifact byte-identical.
//!
//! Run directory layout:
//!
//! ```text
//! <output_dir>/<run_id>/
//!   config.toml  key.txt  message.txt  ledger.json  normalizer.txt
//!   images/<dataset>/<watermark|none>/<attack>/<strength>/<image_id>.png
//!   scores/<dataset>/<watermark|none>/<attack>/<strength>/decodes.csv
//!   metrics/<dataset>/<attack>/<strength>/metrics.csv
//!   state/embedded-<dataset>.txt   models/*.bin   eval/*.csv
//!   reports/{curves,leaderboard_detection,leaderboard_identification,radar}.csv
//!   reports/summary.json           reports/per-dataset/<dataset>/curves.csv
//! ```
//!
//! The unattacked baseline occupies attack id `none` at strength 0; the
//! non-watermarked negative arm lives under watermark id `none`. Negative
//! images pass through every built-in attack with rng streams independent
//! of the positive arm's. Ingested attacks arrive without negatives, so
//! their cells are scored against the clean negatives.

mod config;
mod ledger;
mod report;

pub use config::{
    attack_plans, AttackFlavor, AttackPlan, AttacksSection, DatasetSection, DetectionSection,
    IdentificationSection, IngestSection, QualitySection, RunConfig, RunSection,
    WatermarkSection, CLEAN_ATTACK_ID, NEGATIVE_ARM_ID,
};
pub use ledger::{hash_files, DigestBuilder, RunLedger, StageRecord, LEDGER_FILE, LEDGER_VERSION};
pub use report::{
    render_curves, render_detection_leaderboard, render_identification_leaderboard, render_radar,
    render_summary, write_text, AttackMeta, CurveRow, DatasetSummary, RunSummary, StageDigests,
    CURVES_FILE, CURVES_HEADER, DETECTION_LEADERBOARD_FILE, DETECTION_LEADERBOARD_HEADER,
    IDENTIFICATION_LEADERBOARD_FILE, IDENTIFICATION_LEADERBOARD_HEADER, RADAR_FILE, RADAR_HEADER,
    SUMMARY_FILE,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::adversarial::{
    pgd_embedding_attack, pgd_targeted_attack, toy_encoder, train_surrogate, PgdConfig,
};
use crate::bits::BitMessage;
use crate::distortion::{apply_combo, apply_distortion};
use crate::error::{Error, Result};
use crate::eval::{
    avg_pq, identification_accuracy, q_at_p, radar_summary, rank_attacks, tpr_at_fpr,
    AttackCategory, AttackSummary, CurvePoint, DetectionScoreSet, EvalCurve, LeaderboardRow,
    HIGH_P_THRESHOLD, LOW_P_THRESHOLD,
};
use crate::image::ImageBuffer;
use crate::manifest::DatasetManifest;
use crate::quality::{
    aggregate_quality, fit_normalizer, nmi, psnr, read_external_metrics, ssim, ExternalMetricRow,
    MetricId, MetricScope, QualityNormalizer,
};
use crate::rng::StreamRng;
use crate::watermark::{detect, embed, read_decode_dump, write_decode_dump, DecodeRecord, WatermarkKey};

/// Pipeline stages in execution order. `run_pipeline` executes from the
/// beginning up to and including the requested stage; the ledger skips
/// whatever is already current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// Watermark every dataset image; persist key, message, and clean copies.
    Embed,
    /// Apply built-in attacks and ingest external ones, both arms.
    Attack,
    /// Decode/score, measure quality, fit the normalizer, build curves.
    Evaluate,
    /// Rank attacks into the leaderboards.
    Rank,
    /// Radar summary plus machine-readable run summary.
    Report,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    /// Stage names executed this invocation.
    pub executed: Vec<String>,
    /// Stage names skipped because the ledger proved them current.
    pub skipped: Vec<String>,
    /// Non-fatal observations from the executed stages.
    pub warnings: Vec<String>,
}

pub const KEY_FILE: &str = "key.txt";
pub const MESSAGE_FILE: &str = "message.txt";
pub const NORMALIZER_FILE: &str = "normalizer.txt";
pub const CONFIG_COPY_FILE: &str = "config.toml";
const IMAGES_DIR: &str = "images";
const SCORES_DIR: &str = "scores";
const METRICS_DIR: &str = "metrics";
const STATE_DIR: &str = "state";
const MODELS_DIR: &str = "models";
const EVAL_DIR: &str = "eval";
const REPORTS_DIR: &str = "reports";
const DETECTION_CURVES_FILE: &str = "detection_curves.csv";
const IDENTIFICATION_CURVES_FILE: &str = "identification_curves.csv";
const METRICS_HEADER: &str = "image_id,psnr,ssim,nmi";
/// Output width of the bundled encoder attacked by `adv-embedding`.
const ENCODER_OUTPUT_DIM: usize = 16;
/// Dataset label for aggregate rows in the internal curve table.
const AGGREGATE_DATASET: &str = "*";

/// Canonical directory/report token for a strength value.
pub fn fmt_strength(s: f64) -> String {
    format!("{s}")
}

/// Runs the pipeline through `through` and reports what happened.
pub fn run_pipeline(config: &RunConfig, through: Stage) -> Result<RunOutcome> {
    config.validate()?;
    let mut runner = Runner::new(config.clone())?;
    runner.stage_embed()?;
    if through >= Stage::Attack {
        for i in 0..runner.plans.len() {
            runner.stage_attack(i)?;
        }
    }
    if through >= Stage::Evaluate {
        runner.stage_score()?;
        runner.stage_quality()?;
        runner.stage_evaluate()?;
    }
    if through >= Stage::Rank {
        runner.stage_rank()?;
    }
    if through >= Stage::Report {
        runner.stage_report()?;
    }
    Ok(runner.finish())
}

/// One strength directory of an external attack: its parsed strength,
/// location, and the image ids it provides (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCell {
    pub strength: f64,
    pub dir: PathBuf,
    pub ids: Vec<String>,
}

/// Scans `<root>/<strength>/<image_id>.png`. With an empty `strengths`
/// list every parseable strength directory is taken, ascending; otherwise
/// only directories matching the requested values are returned (missing
/// ones are simply absent — the caller decides whether to warn).
pub fn scan_external_attack(root: &Path, strengths: &[f64]) -> Result<Vec<ExternalCell>> {
    if !root.is_dir() {
        return Err(Error::Ingest(format!("{} is not a directory", root.display())));
    }
    let mut found: Vec<(f64, PathBuf)> = Vec::new();
    for name in sorted_dir_names(root)? {
        let path = root.join(&name);
        if !path.is_dir() {
            continue;
        }
        if let Ok(value) = name.parse::<f64>() {
            if value.is_finite() {
                found.push((value, path));
            }
        }
    }
    found.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite strengths"));
    let selected: Vec<(f64, PathBuf)> = if strengths.is_empty() {
        found
    } else {
        strengths
            .iter()
            .filter_map(|s| found.iter().find(|(v, _)| v == s).cloned())
            .collect()
    };
    let mut cells = Vec::with_capacity(selected.len());
    for (strength, dir) in selected {
        cells.push(ExternalCell { strength, ids: png_ids(&dir)?, dir });
    }
    Ok(cells)
}

fn sorted_dir_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(Error::io(dir))? {
        let entry = entry.map_err(Error::io(dir))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    Ok(names)
}

/// Sorted stems of the `.png` files in `dir`; empty if the dir is absent.
fn png_ids(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids: Vec<String> = sorted_dir_names(dir)?
        .into_iter()
        .filter_map(|n| n.strip_suffix(".png").map(str::to_owned))
        .collect();
    ids.sort();
    Ok(ids)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

struct Dataset {
    name: String,
    manifest: DatasetManifest,
}

/// A scoring/quality cell: one attack at one strength.
#[derive(Debug, Clone)]
struct Cell {
    attack: String,
    strength: f64,
    sdir: String,
}

struct Runner {
    cfg: RunConfig,
    plans: Vec<AttackPlan>,
    datasets: Vec<Dataset>,
    run_dir: PathBuf,
    ledger: RunLedger,
    key: Option<WatermarkKey>,
    message: Option<BitMessage>,
    executed: Vec<String>,
    skipped: Vec<String>,
    warnings: Vec<String>,
}

impl Runner {
    fn new(cfg: RunConfig) -> Result<Self> {
        let run_dir = cfg.run_dir();
        std::fs::create_dir_all(&run_dir).map_err(Error::io(&run_dir))?;
        let names = cfg.dataset_names();
        let mut datasets = Vec::with_capacity(names.len());
        for (path, name) in cfg.dataset.manifests.iter().zip(names) {
            let manifest = DatasetManifest::load(path)?;
            if manifest.is_empty() {
                return Err(Error::Config(format!("dataset {name} has no images")));
            }
            datasets.push(Dataset { name, manifest });
        }
        let ledger = RunLedger::load_or_default(&run_dir)?;
        cfg.save(run_dir.join(CONFIG_COPY_FILE))?;
        let plans = attack_plans(&cfg);
        Ok(Runner {
            plans,
            datasets,
            run_dir,
            ledger,
            cfg,
            key: None,
            message: None,
            executed: Vec::new(),
            skipped: Vec::new(),
            warnings: Vec::new(),
        })
    }

    fn finish(self) -> RunOutcome {
        RunOutcome {
            run_dir: self.run_dir,
            executed: self.executed,
            skipped: self.skipped,
            warnings: self.warnings,
        }
    }

    // -- stage plumbing ---------------------------------------------------

    fn check_skip(&mut self, stage: &str, input: &str) -> bool {
        if self.ledger.is_current(&self.run_dir, stage, input) {
            self.skipped.push(stage.to_string());
            true
        } else {
            false
        }
    }

    fn finish_stage(
        &mut self,
        stage: &str,
        input: String,
        mut files: Vec<String>,
        notes: Vec<String>,
    ) -> Result<()> {
        files.sort();
        files.dedup();
        let output = hash_files(&self.run_dir, &files)?;
        self.ledger.record(stage, input, output, files, notes.clone());
        self.ledger.save(&self.run_dir)?;
        self.executed.push(stage.to_string());
        self.warnings.extend(notes);
        Ok(())
    }

    fn upstream(&self, stage: &str) -> String {
        self.ledger
            .stages
            .get(stage)
            .unwrap_or_else(|| panic!("stage {stage} must have run"))
            .output
            .clone()
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.run_dir)
            .expect("artifact inside the run directory")
            .to_string_lossy()
            .into_owned()
    }

    // -- layout helpers ----------------------------------------------------

    fn image_dir(&self, ds: &str, arm: &str, attack: &str, sdir: &str) -> PathBuf {
        self.run_dir.join(IMAGES_DIR).join(ds).join(arm).join(attack).join(sdir)
    }

    fn score_file(&self, ds: &str, arm: &str, attack: &str, sdir: &str) -> PathBuf {
        self.run_dir
            .join(SCORES_DIR)
            .join(ds)
            .join(arm)
            .join(attack)
            .join(sdir)
            .join("decodes.csv")
    }

    fn metrics_file(&self, ds: &str, attack: &str, sdir: &str) -> PathBuf {
        self.run_dir.join(METRICS_DIR).join(ds).join(attack).join(sdir).join("metrics.csv")
    }

    fn state_file(&self, ds: &str) -> PathBuf {
        self.run_dir.join(STATE_DIR).join(format!("embedded-{ds}.txt"))
    }

    fn wm_id(&self) -> &str {
        &self.cfg.watermark.id
    }

    fn embedded_ids(&self, ds: &str) -> Result<Vec<String>> {
        let path = self.state_file(ds);
        let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
        Ok(text.lines().map(str::to_owned).collect())
    }

    /// Strength axis of one attack for one dataset, in curve order
    /// (weakest attack first), restricted to cells that exist on disk.
    fn kept_strengths(&self, ds: &str, plan: &AttackPlan) -> Result<Vec<f64>> {
        match &plan.flavor {
            AttackFlavor::Ingested { .. } => {
                let root =
                    self.run_dir.join(IMAGES_DIR).join(ds).join(self.wm_id()).join(&plan.id);
                if !root.is_dir() {
                    return Ok(Vec::new());
                }
                let mut out: Vec<f64> = sorted_dir_names(&root)?
                    .into_iter()
                    .filter_map(|n| n.parse::<f64>().ok())
                    .collect();
                out.sort_by(|a, b| a.partial_cmp(b).expect("finite strengths"));
                Ok(out)
            }
            _ => Ok(plan
                .strengths
                .iter()
                .copied()
                .filter(|s| self.image_dir(ds, self.wm_id(), &plan.id, &fmt_strength(*s)).is_dir())
                .collect()),
        }
    }

    /// Clean cell followed by every kept attack cell in plan order.
    fn cells(&self, ds: &str) -> Result<Vec<Cell>> {
        let mut cells =
            vec![Cell { attack: CLEAN_ATTACK_ID.into(), strength: 0.0, sdir: "0".into() }];
        for plan in &self.plans {
            for s in self.kept_strengths(ds, plan)? {
                cells.push(Cell { attack: plan.id.clone(), strength: s, sdir: fmt_strength(s) });
            }
        }
        Ok(cells)
    }

    fn load_key_message(&mut self) -> Result<()> {
        if self.key.is_none() {
            self.key = Some(WatermarkKey::load(self.run_dir.join(KEY_FILE))?);
        }
        if self.message.is_none() {
            let path = self.run_dir.join(MESSAGE_FILE);
            let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
            let bits = self.key.as_ref().expect("key loaded").message_bits;
            self.message = Some(BitMessage::from_hex(bits, text.trim())?);
        }
        Ok(())
    }

    // -- embed --------------------------------------------------------------

    fn build_key(&self) -> Result<WatermarkKey> {
        if let Some(path) = &self.cfg.watermark.key_file {
            return WatermarkKey::load(path);
        }
        let mut key = WatermarkKey::new(self.cfg.watermark.seed);
        key.message_bits = self.cfg.watermark.message_bits;
        key.delta = self.cfg.watermark.delta;
        key.validate()?;
        Ok(key)
    }

    fn stage_embed(&mut self) -> Result<()> {
        let mut input = DigestBuilder::new()
            .text("seed", self.cfg.run.seed.to_string())
            .text("watermark", self.wm_id())
            .text("bits", self.cfg.watermark.message_bits.to_string())
            .text("delta", fmt_strength(self.cfg.watermark.delta))
            .text("key-seed", self.cfg.watermark.seed.to_string());
        if let Some(kf) = &self.cfg.watermark.key_file {
            input = input.text("key-file", "yes").file(kf)?;
        }
        for (ds, path) in self.datasets.iter().zip(&self.cfg.dataset.manifests) {
            input = input.text("dataset", &ds.name).file(path)?;
            for entry in ds.manifest.entries() {
                input = input.text("image", &entry.id).file(&ds.manifest.resolve(entry))?;
            }
        }
        let input = input.finish();
        if self.check_skip("embed", &input) {
            return self.load_key_message();
        }

        let key = self.build_key()?;
        let message =
            BitMessage::random(key.message_bits, &mut StreamRng::new(self.cfg.run.seed, "message"));
        key.save(self.run_dir.join(KEY_FILE))?;
        let message_path = self.run_dir.join(MESSAGE_FILE);
        std::fs::write(&message_path, format!("{}\n", message.to_hex()))
            .map_err(Error::io(&message_path))?;
        let mut files = vec![KEY_FILE.to_string(), MESSAGE_FILE.to_string()];
        let mut notes = Vec::new();

        for ds in &self.datasets {
            let wm_dir = self.image_dir(&ds.name, self.wm_id(), CLEAN_ATTACK_ID, "0");
            let clean_dir = self.image_dir(&ds.name, NEGATIVE_ARM_ID, CLEAN_ATTACK_ID, "0");
            std::fs::create_dir_all(&wm_dir).map_err(Error::io(&wm_dir))?;
            std::fs::create_dir_all(&clean_dir).map_err(Error::io(&clean_dir))?;

            let results: Vec<Result<(String, Vec<String>)>> = ds
                .manifest
                .entries()
                .par_iter()
                .map(|entry| {
                    let source: ImageBuffer<f64> =
                        ImageBuffer::load_png(ds.manifest.resolve(entry))?;
                    if source.width() < 11 || source.height() < 11 {
                        return Ok((
                            String::new(),
                            vec![format!(
                                "embed skipped {}/{}: below the 11px metric minimum",
                                ds.name, entry.id
                            )],
                        ));
                    }
                    let marked = match embed(&key, &source, &message) {
                        Ok(m) => m,
                        Err(Error::Capacity { blocks, bits, needed }) => {
                            return Ok((
                                String::new(),
                                vec![format!(
                                    "embed skipped {}/{}: {blocks} blocks cannot host \
                                     {bits} bits (needs {needed})",
                                    ds.name, entry.id
                                )],
                            ));
                        }
                        Err(e) => return Err(e),
                    };
                    let name = format!("{}.png", entry.id);
                    marked.save_png(wm_dir.join(&name))?;
                    source.save_png(clean_dir.join(&name))?;
                    Ok((entry.id.clone(), vec![]))
                })
                .collect();

            let mut embedded = Vec::new();
            for r in results {
                let (id, mut ns) = r?;
                if !id.is_empty() {
                    embedded.push(id);
                }
                notes.append(&mut ns);
            }
            embedded.sort();
            if embedded.is_empty() {
                return Err(Error::Invalid(format!(
                    "dataset {} has no embeddable images",
                    ds.name
                )));
            }
            for id in &embedded {
                files.push(self.rel(&wm_dir.join(format!("{id}.png"))));
                files.push(self.rel(&clean_dir.join(format!("{id}.png"))));
            }
            let state = self.state_file(&ds.name);
            std::fs::create_dir_all(state.parent().unwrap()).map_err(Error::io(&state))?;
            let mut text = embedded.join("\n");
            text.push('\n');
            std::fs::write(&state, text).map_err(Error::io(&state))?;
            files.push(self.rel(&state));
        }

        self.key = Some(key);
        self.message = Some(message);
        self.finish_stage("embed", input, files, notes)
    }

    // -- attacks ------------------------------------------------------------

    fn stage_attack(&mut self, plan_index: usize) -> Result<()> {
        let plan = self.plans[plan_index].clone();
        let stage = match plan.flavor {
            AttackFlavor::Ingested { .. } => format!("ingest:{}", plan.id),
            _ => format!("attack:{}", plan.id),
        };
        let mut input = DigestBuilder::new()
            .digest(&self.upstream("embed"))
            .text("attack", &plan.id)
            .text("seed", self.cfg.run.seed.to_string())
            .text("category", plan.category.id())
            .text(
                "strengths",
                plan.strengths.iter().map(|s| fmt_strength(*s)).collect::<Vec<_>>().join(","),
            );
        if let AttackFlavor::Ingested { dir } = &plan.flavor {
            input = input.text("external", external_listing_digest(&dir.join(&plan.id))?);
        }
        let input = input.finish();
        if self.check_skip(&stage, &input) {
            return Ok(());
        }

        let (files, notes) = match &plan.flavor {
            AttackFlavor::Distortion(kind) => self.run_distortion_attack(&plan, *kind)?,
            AttackFlavor::Embedding => self.run_embedding_attack(&plan)?,
            AttackFlavor::Surrogate(setting) => self.run_surrogate_attack(&plan, *setting)?,
            AttackFlavor::Ingested { dir } => self.run_ingest(&plan, dir)?,
        };
        self.finish_stage(&stage, input, files, notes)
    }

    /// Tasks covering both arms of one attack; returns written files.
    fn attack_tasks(&self, plan: &AttackPlan) -> Result<Vec<AttackTask>> {
        let mut tasks = Vec::new();
        for ds in &self.datasets {
            let ids = self.embedded_ids(&ds.name)?;
            for arm in [self.wm_id(), NEGATIVE_ARM_ID] {
                for &s in &plan.strengths {
                    let sdir = fmt_strength(s);
                    let out_dir = self.image_dir(&ds.name, arm, &plan.id, &sdir);
                    std::fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
                    let in_dir = self.image_dir(&ds.name, arm, CLEAN_ATTACK_ID, "0");
                    for id in &ids {
                        tasks.push(AttackTask {
                            input: in_dir.join(format!("{id}.png")),
                            output: out_dir.join(format!("{id}.png")),
                            stream: format!(
                                "attack/{}/{}/{}/{}/{}",
                                ds.name, arm, plan.id, sdir, id
                            ),
                            strength: s,
                        });
                    }
                }
            }
        }
        Ok(tasks)
    }

    fn run_distortion_attack(
        &self,
        plan: &AttackPlan,
        kind: crate::distortion::DistortionKind,
    ) -> Result<(Vec<String>, Vec<String>)> {
        let tasks = self.attack_tasks(plan)?;
        let seed = self.cfg.run.seed;
        let files: Vec<Result<String>> = tasks
            .par_iter()
            .map(|t| {
                let img: ImageBuffer<f64> = ImageBuffer::load_png(&t.input)?;
                let mut rng = StreamRng::new(seed, &t.stream);
                let out = if kind.is_combo() {
                    apply_combo(&img, kind, t.strength, &mut rng)
                } else {
                    apply_distortion(&img, kind, t.strength, &mut rng)
                };
                out.save_png(&t.output)?;
                Ok(self.rel(&t.output))
            })
            .collect();
        Ok((files.into_iter().collect::<Result<Vec<_>>>()?, vec![]))
    }

    fn run_embedding_attack(&self, plan: &AttackPlan) -> Result<(Vec<String>, Vec<String>)> {
        let encoder = toy_encoder(self.cfg.run.seed, ENCODER_OUTPUT_DIM);
        let model_path = self.run_dir.join(MODELS_DIR).join("encoder.bin");
        std::fs::create_dir_all(model_path.parent().unwrap()).map_err(Error::io(&model_path))?;
        encoder.save(&model_path)?;
        let tasks = self.attack_tasks(plan)?;
        let seed = self.cfg.run.seed;
        let mut files: Vec<String> = tasks
            .par_iter()
            .map(|t| {
                let img: ImageBuffer<f64> = ImageBuffer::load_png(&t.input)?;
                let cfg = PgdConfig::embedding(t.strength / 255.0);
                let mut rng = StreamRng::new(seed, &t.stream);
                let result = pgd_embedding_attack(&img, &encoder, &cfg, &mut rng);
                result.image.save_png(&t.output)?;
                Ok(self.rel(&t.output))
            })
            .collect::<Vec<Result<String>>>()
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        files.push(self.rel(&model_path));
        Ok((files, vec![]))
    }

    fn run_surrogate_attack(
        &self,
        plan: &AttackPlan,
        setting: crate::adversarial::SurrogateTrainingSetting,
    ) -> Result<(Vec<String>, Vec<String>)> {
        let mut files = Vec::new();
        for ds in &self.datasets {
            let ids = self.embedded_ids(&ds.name)?;
            let load_arm = |arm: &str| -> Result<Vec<ImageBuffer<f64>>> {
                let dir = self.image_dir(&ds.name, arm, CLEAN_ATTACK_ID, "0");
                ids.iter().map(|id| ImageBuffer::load_png(dir.join(format!("{id}.png")))).collect()
            };
            let clean = load_arm(NEGATIVE_ARM_ID)?;
            let marked = load_arm(self.wm_id())?;
            let mut rng = StreamRng::new(self.cfg.run.seed, format!("surrogate/{}", ds.name));
            let (detector, _stats) = train_surrogate(&clean, &marked, setting, &mut rng)?;
            let model_path =
                self.run_dir.join(MODELS_DIR).join(format!("surrogate-{}.bin", ds.name));
            std::fs::create_dir_all(model_path.parent().unwrap())
                .map_err(Error::io(&model_path))?;
            detector.save(&model_path)?;
            files.push(self.rel(&model_path));

            for arm in [self.wm_id(), NEGATIVE_ARM_ID] {
                for &s in &plan.strengths {
                    let sdir = fmt_strength(s);
                    let out_dir = self.image_dir(&ds.name, arm, &plan.id, &sdir);
                    std::fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
                    let in_dir = self.image_dir(&ds.name, arm, CLEAN_ATTACK_ID, "0");
                    let written: Vec<Result<String>> = ids
                        .par_iter()
                        .map(|id| {
                            let img: ImageBuffer<f64> =
                                ImageBuffer::load_png(in_dir.join(format!("{id}.png")))?;
                            // Walk toward the "clean" class to strip the mark.
                            let cfg = PgdConfig::targeted(s / 255.0, 0);
                            let result = pgd_targeted_attack(&img, &detector, &cfg);
                            let out = out_dir.join(format!("{id}.png"));
                            result.image.save_png(&out)?;
                            Ok(self.rel(&out))
                        })
                        .collect();
                    files.extend(written.into_iter().collect::<Result<Vec<_>>>()?);
                }
            }
        }
        Ok((files, vec![]))
    }

    fn run_ingest(&self, plan: &AttackPlan, dir: &Path) -> Result<(Vec<String>, Vec<String>)> {
        let root = dir.join(&plan.id);
        if !root.is_dir() {
            return Ok((
                vec![],
                vec![format!(
                    "ingest {}: directory {} missing, attack skipped",
                    plan.id,
                    root.display()
                )],
            ));
        }
        let cells = scan_external_attack(&root, &plan.strengths)?;
        let mut notes = Vec::new();
        for requested in &plan.strengths {
            if !cells.iter().any(|c| c.strength == *requested) {
                notes.push(format!(
                    "ingest {}: requested strength {} has no directory",
                    plan.id,
                    fmt_strength(*requested)
                ));
            }
        }

        let per_ds_ids: Vec<BTreeSet<String>> = self
            .datasets
            .iter()
            .map(|ds| Ok(self.embedded_ids(&ds.name)?.into_iter().collect()))
            .collect::<Result<_>>()?;
        let total_matches: usize = cells
            .iter()
            .map(|c| {
                c.ids
                    .iter()
                    .filter(|id| per_ds_ids.iter().any(|ids| ids.contains(*id)))
                    .count()
            })
            .sum();
        if total_matches == 0 {
            return Err(Error::Ingest(format!(
                "ingest {}: no image ids match the run at any strength",
                plan.id
            )));
        }

        let mut files = Vec::new();
        for cell in &cells {
            // Keep a strength only when every dataset reaches 50% coverage,
            // so the per-dataset curves stay pointwise comparable.
            let mut kept = true;
            for (ds, ids) in self.datasets.iter().zip(&per_ds_ids) {
                let matched = cell.ids.iter().filter(|id| ids.contains(*id)).count();
                let coverage = matched as f64 / ids.len() as f64;
                if coverage < 0.5 {
                    notes.push(format!(
                        "ingest {}/{}: coverage {matched}/{} in dataset {} below 50%, \
                         strength excluded",
                        plan.id,
                        fmt_strength(cell.strength),
                        ids.len(),
                        ds.name
                    ));
                    kept = false;
                }
            }
            if !kept {
                continue;
            }
            for (ds, ids) in self.datasets.iter().zip(&per_ds_ids) {
                let out_dir =
                    self.image_dir(&ds.name, self.wm_id(), &plan.id, &fmt_strength(cell.strength));
                std::fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
                let mut missing = 0usize;
                for id in ids {
                    if cell.ids.binary_search(id).is_ok() {
                        let src = cell.dir.join(format!("{id}.png"));
                        let dst = out_dir.join(format!("{id}.png"));
                        std::fs::copy(&src, &dst).map_err(Error::io(&src))?;
                        files.push(self.rel(&dst));
                    } else {
                        missing += 1;
                    }
                }
                if missing > 0 {
                    notes.push(format!(
                        "ingest {}/{}: {missing} ids missing in dataset {}",
                        plan.id,
                        fmt_strength(cell.strength),
                        ds.name
                    ));
                }
            }
        }
        Ok((files, notes))
    }

    // -- scoring -------------------------------------------------------------

    fn attack_stage_names(&self) -> Vec<String> {
        self.plans
            .iter()
            .map(|p| match p.flavor {
                AttackFlavor::Ingested { .. } => format!("ingest:{}", p.id),
                _ => format!("attack:{}", p.id),
            })
            .collect()
    }

    fn stage_score(&mut self) -> Result<()> {
        self.load_key_message()?;
        let mut input = DigestBuilder::new()
            .digest(&self.upstream("embed"))
            .text("alpha", fmt_strength(self.cfg.detection.alpha))
            .file(&self.run_dir.join(KEY_FILE))?
            .file(&self.run_dir.join(MESSAGE_FILE))?;
        for stage in self.attack_stage_names() {
            input = input.digest(&self.upstream(&stage));
        }
        let input = input.finish();
        if self.check_skip("score", &input) {
            return Ok(());
        }

        let key = self.key.clone().expect("key loaded");
        let message = self.message.clone().expect("message loaded");
        let alpha = self.cfg.detection.alpha;
        let mut files = Vec::new();
        for ds in &self.datasets {
            for arm in [self.wm_id(), NEGATIVE_ARM_ID] {
                for cell in self.cells(&ds.name)? {
                    let dir = self.image_dir(&ds.name, arm, &cell.attack, &cell.sdir);
                    if !dir.is_dir() {
                        continue; // e.g. no negative arm for ingested attacks
                    }
                    let ids = png_ids(&dir)?;
                    let records: Vec<Result<DecodeRecord>> = ids
                        .par_iter()
                        .map(|id| {
                            let img: ImageBuffer<f64> =
                                ImageBuffer::load_png(dir.join(format!("{id}.png")))?;
                            let r = detect(&key, &img, &message, alpha)?;
                            Ok(DecodeRecord {
                                image_id: id.clone(),
                                decoded: r.decoded,
                                score: r.score,
                                p_value: r.p_value,
                                verified: r.verified,
                            })
                        })
                        .collect();
                    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
                    let path = self.score_file(&ds.name, arm, &cell.attack, &cell.sdir);
                    std::fs::create_dir_all(path.parent().unwrap()).map_err(Error::io(&path))?;
                    write_decode_dump(&path, &records)?;
                    files.push(self.rel(&path));
                }
            }
        }
        self.finish_stage("score", input, files, vec![])
    }

    // -- quality ---------------------------------------------------------------

    fn stage_quality(&mut self) -> Result<()> {
        let mut input = DigestBuilder::new().digest(&self.upstream("embed"));
        for stage in self.attack_stage_names() {
            input = input.digest(&self.upstream(&stage));
        }
        let input = input.finish();
        if self.check_skip("quality", &input) {
            return Ok(());
        }

        let mut files = Vec::new();
        for ds in &self.datasets {
            let ref_dir = self.image_dir(&ds.name, self.wm_id(), CLEAN_ATTACK_ID, "0");
            for cell in self.cells(&ds.name)? {
                if cell.attack == CLEAN_ATTACK_ID {
                    continue; // its own reference; zero degradation by definition
                }
                let dir = self.image_dir(&ds.name, self.wm_id(), &cell.attack, &cell.sdir);
                if !dir.is_dir() {
                    continue;
                }
                let ids = png_ids(&dir)?;
                let rows: Vec<Result<String>> = ids
                    .par_iter()
                    .map(|id| {
                        let name = format!("{id}.png");
                        let reference: ImageBuffer<f64> =
                            ImageBuffer::load_png(ref_dir.join(&name))?;
                        let attacked: ImageBuffer<f64> = ImageBuffer::load_png(dir.join(&name))?;
                        Ok(format!(
                            "{id},{},{},{}",
                            psnr(&attacked, &reference),
                            ssim(&attacked, &reference),
                            nmi(&attacked, &reference)
                        ))
                    })
                    .collect();
                let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
                let mut text = String::from(METRICS_HEADER);
                text.push('\n');
                for r in rows {
                    text.push_str(&r);
                    text.push('\n');
                }
                let path = self.metrics_file(&ds.name, &cell.attack, &cell.sdir);
                write_text(&path, &text)?;
                files.push(self.rel(&path));
            }
        }
        self.finish_stage("quality", input, files, vec![])
    }

    // -- evaluation --------------------------------------------------------------

    fn stage_evaluate(&mut self) -> Result<()> {
        self.load_key_message()?;
        let mut user_counts = self.cfg.identification.user_counts.clone();
        user_counts.sort_unstable();
        user_counts.dedup();

        let mut input = DigestBuilder::new()
            .digest(&self.upstream("score"))
            .digest(&self.upstream("quality"))
            .text("watermark", self.wm_id())
            .text("fpr", fmt_strength(self.cfg.detection.fpr_target))
            .text("seed", self.cfg.run.seed.to_string())
            .text(
                "users",
                user_counts.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            )
            .text("repeats", self.cfg.identification.repeats.to_string())
            .file(&self.run_dir.join(MESSAGE_FILE))?;
        for path in &self.cfg.quality.external_metrics {
            input = input.file(path)?;
        }
        let input = input.finish();
        if self.check_skip("evaluate", &input) {
            return Ok(());
        }

        let message = self.message.clone().expect("message loaded");
        let bits = message.len();

        // ---- load decode dumps
        type CellKey = (usize, String, String); // dataset index, attack, sdir
        let mut pos_scores: BTreeMap<CellKey, Vec<DecodeRecord>> = BTreeMap::new();
        let mut neg_scores: BTreeMap<CellKey, Vec<DecodeRecord>> = BTreeMap::new();
        let mut ds_cells: Vec<Vec<Cell>> = Vec::new();
        for (di, ds) in self.datasets.iter().enumerate() {
            let cells = self.cells(&ds.name)?;
            for cell in &cells {
                let key: CellKey = (di, cell.attack.clone(), cell.sdir.clone());
                let pos = self.score_file(&ds.name, self.wm_id(), &cell.attack, &cell.sdir);
                pos_scores.insert(key.clone(), read_decode_dump(&pos, bits)?);
                let neg = self.score_file(&ds.name, NEGATIVE_ARM_ID, &cell.attack, &cell.sdir);
                if neg.exists() {
                    neg_scores.insert(key, read_decode_dump(&neg, bits)?);
                }
            }
            ds_cells.push(cells);
        }

        // ---- load builtin per-image metrics
        // cell -> metric name -> (identity, per-image values)
        let mut cell_values: BTreeMap<CellKey, BTreeMap<String, (MetricId, Vec<f64>)>> =
            BTreeMap::new();
        for (di, ds) in self.datasets.iter().enumerate() {
            for cell in &ds_cells[di] {
                if cell.attack == CLEAN_ATTACK_ID {
                    continue;
                }
                let path = self.metrics_file(&ds.name, &cell.attack, &cell.sdir);
                let table = read_builtin_metrics(&path)?;
                let entry = cell_values
                    .entry((di, cell.attack.clone(), cell.sdir.clone()))
                    .or_default();
                for (metric, values) in table {
                    entry.insert(metric.name.clone(), (metric, values));
                }
            }
        }

        // ---- merge external metrics
        let mut external: Vec<ExternalMetricRow> = Vec::new();
        for path in &self.cfg.quality.external_metrics {
            external.extend(read_external_metrics(path)?);
        }
        let mut identities: BTreeMap<String, MetricId> = BTreeMap::new();
        for m in MetricId::builtins() {
            identities.insert(m.name.clone(), m);
        }
        for row in &external {
            if MetricId::builtins().iter().any(|b| b.name == row.metric.name) {
                return Err(Error::Ingest(format!(
                    "external metric {} collides with a built-in metric",
                    row.metric.name
                )));
            }
            match identities.get(&row.metric.name) {
                None => {
                    identities.insert(row.metric.name.clone(), row.metric.clone());
                }
                Some(prev) if *prev != row.metric => {
                    return Err(Error::Ingest(format!(
                        "external metric {} declared with conflicting identities",
                        row.metric.name
                    )));
                }
                Some(_) => {}
            }
        }
        // Direct per-cell values (cell scope) sit beside per-image pools.
        let mut cell_direct: BTreeMap<CellKey, BTreeMap<String, (MetricId, f64)>> = BTreeMap::new();
        for row in &external {
            let parts: Vec<&str> = row.key.split('/').collect();
            let (attack, stoken, image_id) = match (row.scope, parts.as_slice()) {
                (MetricScope::Image, [a, s, id]) => (*a, *s, Some(*id)),
                (MetricScope::Cell, [a, s]) => (*a, *s, None),
                _ => {
                    return Err(Error::Ingest(format!(
                        "external metric key {:?} does not match its {} scope",
                        row.key,
                        row.scope.id()
                    )));
                }
            };
            let strength: f64 = stoken.parse().map_err(|_| {
                Error::Ingest(format!("external metric key {:?}: bad strength", row.key))
            })?;
            for (di, cells) in ds_cells.iter().enumerate() {
                for cell in cells {
                    if cell.attack != attack || cell.strength != strength {
                        continue;
                    }
                    let key: CellKey = (di, cell.attack.clone(), cell.sdir.clone());
                    match image_id {
                        Some(id) => {
                            let in_cell = pos_scores
                                .get(&key)
                                .is_some_and(|rs| rs.iter().any(|r| r.image_id == id));
                            if in_cell {
                                cell_values
                                    .entry(key)
                                    .or_default()
                                    .entry(row.metric.name.clone())
                                    .or_insert_with(|| (row.metric.clone(), Vec::new()))
                                    .1
                                    .push(row.value);
                            }
                        }
                        None => {
                            cell_direct
                                .entry(key)
                                .or_default()
                                .insert(row.metric.name.clone(), (row.metric.clone(), row.value));
                        }
                    }
                }
            }
        }

        // ---- normalizer over every attacked image in the run
        let mut corpus: BTreeMap<String, (MetricId, Vec<f64>)> = BTreeMap::new();
        for (key, metrics) in &cell_values {
            if key.1 == CLEAN_ATTACK_ID {
                continue;
            }
            for (name, (metric, values)) in metrics {
                let slot = corpus
                    .entry(name.clone())
                    .or_insert_with(|| (metric.clone(), Vec::new()));
                slot.1.extend_from_slice(values);
            }
        }
        for (key, metrics) in &cell_direct {
            if key.1 == CLEAN_ATTACK_ID {
                continue;
            }
            for (name, (metric, value)) in metrics {
                corpus
                    .entry(name.clone())
                    .or_insert_with(|| (metric.clone(), Vec::new()))
                    .1
                    .push(*value);
            }
        }
        let normalizer = if corpus.is_empty() {
            QualityNormalizer::default()
        } else {
            let samples: Vec<(MetricId, Vec<f64>)> = corpus.into_values().collect();
            fit_normalizer(&samples)?
        };
        normalizer.save(self.run_dir.join(NORMALIZER_FILE))?;
        let mut files = vec![NORMALIZER_FILE.to_string()];

        // ---- per-cell P and Q
        let fpr = self.cfg.detection.fpr_target;
        let mut cell_pq: BTreeMap<CellKey, (f64, f64)> = BTreeMap::new();
        for (di, cells) in ds_cells.iter().enumerate() {
            let clean_key: CellKey = (di, CLEAN_ATTACK_ID.into(), "0".into());
            for cell in cells {
                let key: CellKey = (di, cell.attack.clone(), cell.sdir.clone());
                let pos = &pos_scores[&key];
                let neg = neg_scores.get(&key).unwrap_or_else(|| &neg_scores[&clean_key]);
                let set = DetectionScoreSet {
                    watermarked: pos.iter().map(|r| r.score as f64).collect(),
                    non_watermarked: neg.iter().map(|r| r.score as f64).collect(),
                };
                let p = tpr_at_fpr(&set, fpr)?;

                // The clean baseline is degradation-free by definition, and
                // without attacked cells there is nothing to normalize
                // against either way.
                let q = if cell.attack == CLEAN_ATTACK_ID || normalizer.is_empty() {
                    0.0
                } else {
                    let mut values: Vec<(MetricId, f64)> = Vec::new();
                    if let Some(metrics) = cell_values.get(&key) {
                        for (name, (metric, vs)) in metrics {
                            let mean = vs.iter().sum::<f64>() / vs.len() as f64;
                            values.push((metric.clone(), normalizer.normalize(name, mean)?));
                        }
                    }
                    if let Some(direct) = cell_direct.get(&key) {
                        for (name, (metric, v)) in direct {
                            values.push((metric.clone(), normalizer.normalize(name, *v)?));
                        }
                    }
                    aggregate_quality(&values)?
                };
                cell_pq.insert(key, (p, q));
            }
        }

        // ---- aggregate across datasets (cells agree by construction)
        let agg_cells = &ds_cells[0];
        for (di, cells) in ds_cells.iter().enumerate() {
            if cells.len() != agg_cells.len() {
                return Err(Error::Invalid(format!(
                    "dataset {} has {} cells but {} has {}; attack matrices diverged",
                    self.datasets[di].name,
                    cells.len(),
                    self.datasets[0].name,
                    agg_cells.len()
                )));
            }
        }
        let n_ds = self.datasets.len() as f64;
        let mut agg_pq: Vec<(f64, f64)> = Vec::with_capacity(agg_cells.len());
        for (ci, cell) in agg_cells.iter().enumerate() {
            let mut p = 0.0;
            let mut q = 0.0;
            for di in 0..self.datasets.len() {
                let c = &ds_cells[di][ci];
                let (cp, cq) = cell_pq[&(di, c.attack.clone(), c.sdir.clone())];
                p += cp;
                q += cq;
            }
            agg_pq.push((p / n_ds, q / n_ds));
            let _ = cell;
        }

        // ---- internal curve table: aggregate rows first, then per-dataset
        let mut table = String::from("dataset,attack,strength,P,Q");
        table.push('\n');
        for (cell, (p, q)) in agg_cells.iter().zip(&agg_pq) {
            table.push_str(&format!(
                "{AGGREGATE_DATASET},{},{},{p},{q}\n",
                cell.attack, cell.sdir
            ));
        }
        for (di, ds) in self.datasets.iter().enumerate() {
            for cell in &ds_cells[di] {
                let (p, q) = cell_pq[&(di, cell.attack.clone(), cell.sdir.clone())];
                table.push_str(&format!("{},{},{},{p},{q}\n", ds.name, cell.attack, cell.sdir));
            }
        }
        let table_path = self.run_dir.join(EVAL_DIR).join(DETECTION_CURVES_FILE);
        write_text(&table_path, &table)?;
        files.push(self.rel(&table_path));

        // ---- identification curves (aggregate only)
        let mut ident = String::from("users,attack,strength,P,Q");
        ident.push('\n');
        for &k in &user_counts {
            for (ci, cell) in agg_cells.iter().enumerate() {
                let mut acc = 0.0;
                for (di, ds) in self.datasets.iter().enumerate() {
                    let c = &ds_cells[di][ci];
                    let key: CellKey = (di, c.attack.clone(), c.sdir.clone());
                    let decoded: Vec<BitMessage> =
                        pos_scores[&key].iter().map(|r| r.decoded.clone()).collect();
                    let rng = StreamRng::new(
                        self.cfg.run.seed,
                        format!("identify/{}/{}/{}/{k}", ds.name, c.attack, c.sdir),
                    );
                    acc += identification_accuracy(
                        &decoded,
                        0,
                        &message,
                        k,
                        self.cfg.identification.repeats,
                        &rng,
                    );
                }
                let q = agg_pq[ci].1;
                ident.push_str(&format!("{k},{},{},{},{q}\n", cell.attack, cell.sdir, acc / n_ds));
            }
        }
        let ident_path = self.run_dir.join(EVAL_DIR).join(IDENTIFICATION_CURVES_FILE);
        write_text(&ident_path, &ident)?;
        files.push(self.rel(&ident_path));

        // ---- public curves
        let rows: Vec<CurveRow> = agg_cells
            .iter()
            .zip(&agg_pq)
            .map(|(cell, &(p, q))| CurveRow {
                watermark: self.wm_id().to_string(),
                attack: cell.attack.clone(),
                strength: cell.strength,
                p,
                q,
            })
            .collect();
        let curves_path = self.run_dir.join(REPORTS_DIR).join(CURVES_FILE);
        write_text(&curves_path, &render_curves(&rows))?;
        files.push(self.rel(&curves_path));

        if self.datasets.len() > 1 {
            for (di, ds) in self.datasets.iter().enumerate() {
                let rows: Vec<CurveRow> = ds_cells[di]
                    .iter()
                    .map(|cell| {
                        let (p, q) = cell_pq[&(di, cell.attack.clone(), cell.sdir.clone())];
                        CurveRow {
                            watermark: self.wm_id().to_string(),
                            attack: cell.attack.clone(),
                            strength: cell.strength,
                            p,
                            q,
                        }
                    })
                    .collect();
                let path = self
                    .run_dir
                    .join(REPORTS_DIR)
                    .join("per-dataset")
                    .join(&ds.name)
                    .join(CURVES_FILE);
                write_text(&path, &render_curves(&rows))?;
                files.push(self.rel(&path));
            }
        }

        self.finish_stage("evaluate", input, files, vec![])
    }

    // -- ranking ----------------------------------------------------------------

    fn stage_rank(&mut self) -> Result<()> {
        let input = DigestBuilder::new()
            .digest(&self.upstream("evaluate"))
            .text("watermark", self.wm_id())
            .finish();
        if self.check_skip("rank", &input) {
            return Ok(());
        }

        let table_path = self.run_dir.join(EVAL_DIR).join(DETECTION_CURVES_FILE);
        let curves = read_internal_curves(&table_path, AGGREGATE_DATASET)?;
        let ranked = rank_curve_set(&curves);
        let det_path = self.run_dir.join(REPORTS_DIR).join(DETECTION_LEADERBOARD_FILE);
        write_text(&det_path, &render_detection_leaderboard(self.wm_id(), &ranked))?;
        let mut files = vec![self.rel(&det_path)];

        let ident_path = self.run_dir.join(EVAL_DIR).join(IDENTIFICATION_CURVES_FILE);
        let groups = read_identification_curves(&ident_path)?;
        let ranked_groups: Vec<(usize, Vec<LeaderboardRow>)> = groups
            .into_iter()
            .map(|(users, curves)| (users, rank_curve_set(&curves)))
            .collect();
        let ident_report = self.run_dir.join(REPORTS_DIR).join(IDENTIFICATION_LEADERBOARD_FILE);
        write_text(
            &ident_report,
            &render_identification_leaderboard(self.wm_id(), &ranked_groups),
        )?;
        files.push(self.rel(&ident_report));

        self.finish_stage("rank", input, files, vec![])
    }

    // -- reporting -----------------------------------------------------------------

    fn stage_report(&mut self) -> Result<()> {
        let input = DigestBuilder::new()
            .digest(&self.upstream("evaluate"))
            .digest(&self.upstream("rank"))
            .text("run", &self.cfg.run.id)
            .text("cutoff", fmt_strength(self.cfg.quality.cutoff))
            .finish();
        if self.check_skip("report", &input) {
            return Ok(());
        }

        let table_path = self.run_dir.join(EVAL_DIR).join(DETECTION_CURVES_FILE);
        let curves = read_internal_curves(&table_path, AGGREGATE_DATASET)?;
        let categories: BTreeMap<&str, AttackCategory> =
            self.plans.iter().map(|p| (p.id.as_str(), p.category)).collect();
        let mut points = Vec::new();
        for (attack, pts) in &curves {
            let cat = categories[attack.as_str()];
            for p in pts {
                points.push((cat, p.p, p.q));
            }
        }
        let radar = radar_summary(&points, self.cfg.quality.cutoff);
        let radar_path = self.run_dir.join(REPORTS_DIR).join(RADAR_FILE);
        write_text(&radar_path, &render_radar(self.wm_id(), &radar))?;

        let mut datasets = Vec::new();
        for ds in &self.datasets {
            let embedded: BTreeSet<String> = self.embedded_ids(&ds.name)?.into_iter().collect();
            let skipped: Vec<String> = ds
                .manifest
                .entries()
                .iter()
                .filter(|e| !embedded.contains(&e.id))
                .map(|e| e.id.clone())
                .collect();
            datasets.push(DatasetSummary {
                name: ds.name.clone(),
                images: ds.manifest.len(),
                skipped,
            });
        }
        let mut attacks = Vec::new();
        for plan in &self.plans {
            let strengths = self.kept_strengths(&self.datasets[0].name, plan)?;
            if !strengths.is_empty() {
                attacks.push(AttackMeta {
                    id: plan.id.clone(),
                    category: plan.category.id().to_string(),
                    strengths,
                });
            }
        }
        let mut warnings = Vec::new();
        let mut stages = BTreeMap::new();
        for (name, rec) in &self.ledger.stages {
            if name == "report" {
                continue; // this stage's own record is written after us
            }
            for note in &rec.notes {
                warnings.push(format!("{name}: {note}"));
            }
            stages.insert(
                name.clone(),
                StageDigests { input: rec.input.clone(), output: rec.output.clone() },
            );
        }
        let mut report_hashes = BTreeMap::new();
        for name in [
            CURVES_FILE,
            DETECTION_LEADERBOARD_FILE,
            IDENTIFICATION_LEADERBOARD_FILE,
            RADAR_FILE,
        ] {
            let path = self.run_dir.join(REPORTS_DIR).join(name);
            let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
            report_hashes.insert(name.to_string(), sha256_hex(&bytes));
        }
        let mut user_counts = self.cfg.identification.user_counts.clone();
        user_counts.sort_unstable();
        user_counts.dedup();
        let summary = RunSummary {
            run_id: self.cfg.run.id.clone(),
            seed: self.cfg.run.seed,
            watermark: self.wm_id().to_string(),
            message_bits: self.cfg.watermark.message_bits,
            alpha: self.cfg.detection.alpha,
            fpr_target: self.cfg.detection.fpr_target,
            quality_cutoff: self.cfg.quality.cutoff,
            identification_user_counts: user_counts,
            identification_repeats: self.cfg.identification.repeats,
            datasets,
            attacks,
            warnings,
            stages,
            reports: report_hashes,
        };
        let summary_path = self.run_dir.join(REPORTS_DIR).join(SUMMARY_FILE);
        write_text(&summary_path, &render_summary(&summary))?;

        let files = vec![self.rel(&radar_path), self.rel(&summary_path)];
        self.finish_stage("report", input, files, vec![])
    }
}

struct AttackTask {
    input: PathBuf,
    output: PathBuf,
    stream: String,
    strength: f64,
}

/// Digest of an external attack tree (strength dirs, file names, bytes);
/// `missing` when the root does not exist, so its later appearance
/// invalidates the skip.
fn external_listing_digest(root: &Path) -> Result<String> {
    if !root.is_dir() {
        return Ok("missing".into());
    }
    let mut d = DigestBuilder::new();
    for sdir in sorted_dir_names(root)? {
        let dir = root.join(&sdir);
        if !dir.is_dir() {
            continue;
        }
        d = d.text("strength", &sdir);
        for name in sorted_dir_names(&dir)? {
            let path = dir.join(&name);
            if path.is_file() {
                d = d.text("file", &name).file(&path)?;
            }
        }
    }
    Ok(d.finish())
}

/// Parses `metrics.csv` into per-metric value vectors (file row order).
fn read_builtin_metrics(path: &Path) -> Result<Vec<(MetricId, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut lines = text.lines().enumerate();
    let err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        detail,
    };
    match lines.next() {
        Some((_, METRICS_HEADER)) => {}
        _ => return Err(err(0, format!("expected header {METRICS_HEADER:?}"))),
    }
    let mut columns = vec![Vec::new(), Vec::new(), Vec::new()];
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(err(lineno, format!("expected 4 fields, got {}", fields.len())));
        }
        for (ci, f) in fields[1..].iter().enumerate() {
            columns[ci].push(
                f.parse::<f64>().map_err(|e| err(lineno, format!("field {}: {e}", ci + 2)))?,
            );
        }
    }
    let [psnr_col, ssim_col, nmi_col] = columns.try_into().expect("three metric columns");
    Ok(vec![
        (MetricId::psnr(), psnr_col),
        (MetricId::ssim(), ssim_col),
        (MetricId::nmi(), nmi_col),
    ])
}

/// Reads the internal curve table back, keeping only `dataset` rows and
/// excluding the clean baseline; attacks keep their first-seen order and
/// their points keep file order (weakest first).
fn read_internal_curves(path: &Path, dataset: &str) -> Result<Vec<(String, Vec<CurvePoint>)>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out: Vec<(String, Vec<CurvePoint>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail: format!("expected 5 fields, got {}", f.len()),
            });
        }
        if f[0] != dataset || f[1] == CLEAN_ATTACK_ID {
            continue;
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail: format!("{e}"),
            })
        };
        let point =
            CurvePoint { strength: parse(f[2])?, p: parse(f[3])?, q: parse(f[4])? };
        match out.iter_mut().find(|(a, _)| a == f[1]) {
            Some((_, pts)) => pts.push(point),
            None => out.push((f[1].to_string(), vec![point])),
        }
    }
    Ok(out)
}

/// Identification curve table → per-user-count curve sets, users ascending.
fn read_identification_curves(
    path: &Path,
) -> Result<Vec<(usize, Vec<(String, Vec<CurvePoint>)>)>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut groups: BTreeMap<usize, Vec<(String, Vec<CurvePoint>)>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail: format!("expected 5 fields, got {}", f.len()),
            });
        }
        if f[1] == CLEAN_ATTACK_ID {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            detail,
        };
        let users: usize = f[0].parse().map_err(|e| parse_err(format!("users: {e}")))?;
        let point = CurvePoint {
            strength: f[2].parse().map_err(|e| parse_err(format!("strength: {e}")))?,
            p: f[3].parse().map_err(|e| parse_err(format!("P: {e}")))?,
            q: f[4].parse().map_err(|e| parse_err(format!("Q: {e}")))?,
        };
        let set = groups.entry(users).or_default();
        match set.iter_mut().find(|(a, _)| a == f[1]) {
            Some((_, pts)) => pts.push(point),
            None => set.push((f[1].to_string(), vec![point])),
        }
    }
    Ok(groups.into_iter().collect())
}

/// Builds summaries from per-attack curve points and ranks them; an empty
/// input yields an empty leaderboard.
fn rank_curve_set(curves: &[(String, Vec<CurvePoint>)]) -> Vec<LeaderboardRow> {
    if curves.is_empty() {
        return Vec::new();
    }
    let summaries: Vec<AttackSummary> = curves
        .iter()
        .map(|(attack, points)| {
            let curve = EvalCurve::new(attack.clone(), points.clone());
            let (avg_p, avg_q) = avg_pq(&curve);
            AttackSummary {
                attack: attack.clone(),
                q_at_p95: q_at_p(&curve, HIGH_P_THRESHOLD),
                q_at_p70: q_at_p(&curve, LOW_P_THRESHOLD),
                avg_p,
                avg_q,
            }
        })
        .collect();
    rank_attacks(&summaries)
}
