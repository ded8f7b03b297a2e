//! Deterministic report rendering. All writers emit plain CSV/JSON with
//! shortest-round-trip float formatting, no timestamps, and no absolute
//! paths, so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{AttackCategory, LeaderboardRow};

pub const CURVES_FILE: &str = "curves.csv";
pub const DETECTION_LEADERBOARD_FILE: &str = "leaderboard_detection.csv";
pub const IDENTIFICATION_LEADERBOARD_FILE: &str = "leaderboard_identification.csv";
pub const RADAR_FILE: &str = "radar.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub const CURVES_HEADER: &str = "watermark,attack,strength,P,Q";
pub const DETECTION_LEADERBOARD_HEADER: &str =
    "watermark,rank,attack,q_at_p95,q_at_p70,avg_p,avg_q";
pub const IDENTIFICATION_LEADERBOARD_HEADER: &str =
    "watermark,users,rank,attack,q_at_p95,q_at_p70,avg_p,avg_q";
pub const RADAR_HEADER: &str = "watermark,category,avg_tpr";

/// Shortest-round-trip float; infinities render as `inf` / `-inf`.
fn fmt(v: f64) -> String {
    debug_assert!(!v.is_nan(), "reports must not contain NaN");
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub watermark: String,
    pub attack: String,
    pub strength: f64,
    pub p: f64,
    pub q: f64,
}

pub fn render_curves(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.watermark,
            r.attack,
            fmt(r.strength),
            fmt(r.p),
            fmt(r.q)
        ));
    }
    out
}

pub fn render_detection_leaderboard(watermark: &str, rows: &[LeaderboardRow]) -> String {
    let mut out = String::from(DETECTION_LEADERBOARD_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            watermark,
            r.rank,
            r.attack,
            fmt(r.q_at_p95),
            fmt(r.q_at_p70),
            fmt(r.avg_p),
            fmt(r.avg_q)
        ));
    }
    out
}

/// One block of rows per user-pool size, ascending.
pub fn render_identification_leaderboard(
    watermark: &str,
    groups: &[(usize, Vec<LeaderboardRow>)],
) -> String {
    debug_assert!(groups.windows(2).all(|w| w[0].0 < w[1].0), "user counts must ascend");
    let mut out = String::from(IDENTIFICATION_LEADERBOARD_HEADER);
    out.push('\n');
    for (users, rows) in groups {
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                watermark,
                users,
                r.rank,
                r.attack,
                fmt(r.q_at_p95),
                fmt(r.q_at_p70),
                fmt(r.avg_p),
                fmt(r.avg_q)
            ));
        }
    }
    out
}

pub fn render_radar(watermark: &str, radar: &BTreeMap<AttackCategory, f64>) -> String {
    let mut out = String::from(RADAR_HEADER);
    out.push('\n');
    for (category, avg_tpr) in radar {
        out.push_str(&format!("{},{},{}\n", watermark, category.id(), fmt(*avg_tpr)));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub images: usize,
    /// Ids dropped at embed time (capacity), sorted.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackMeta {
    pub id: String,
    pub category: String,
    pub strengths: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageDigests {
    pub input: String,
    pub output: String,
}

/// Machine-readable run metadata. Contains content digests only — never
/// paths or times — so two identical runs summarize identically.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub watermark: String,
    pub message_bits: usize,
    pub alpha: f64,
    pub fpr_target: f64,
    pub quality_cutoff: f64,
    pub identification_user_counts: Vec<usize>,
    pub identification_repeats: usize,
    pub datasets: Vec<DatasetSummary>,
    pub attacks: Vec<AttackMeta>,
    pub warnings: Vec<String>,
    pub stages: BTreeMap<String, StageDigests>,
    /// Report file name → SHA-256 of its bytes.
    pub reports: BTreeMap<String, String>,
}

pub fn render_summary(summary: &RunSummary) -> String {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    text
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
    }
    std::fs::write(path, text).map_err(Error::io(path))
}
