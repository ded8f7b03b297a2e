//! Detection and identification scoring, performance-vs-quality curves,
//! attack ranking, and radar category summaries.
//!
//! Performance P is TPR at a fixed low false-positive rate; Q is the
//! normalized quality degradation from the quality module. Attacks are
//! ranked lexicographically by (Q@0.95P, Q@0.7P, Avg P, Avg Q) ascending —
//! a lower Q at the performance threshold means the attack breaks the
//! watermark at lower visual cost — with values closer than a 0.01 buffer
//! treated as tied.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::bits::{hamming, BitMessage};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Default false-positive-rate operating point for detection TPR.
pub const DEFAULT_FPR_TARGET: f64 = 0.001;
/// Performance thresholds defining the leaderboard's two Q@P columns.
pub const HIGH_P_THRESHOLD: f64 = 0.95;
pub const LOW_P_THRESHOLD: f64 = 0.7;
/// Tolerance under which two ranking key values count as tied.
pub const RANK_TIE_BUFFER: f64 = 0.01;
/// Quality-degradation cutoff for radar averages.
pub const DEFAULT_QUALITY_CUTOFF: f64 = 0.8;
/// Default number of ground-truth message redraws in identification runs.
pub const DEFAULT_IDENTIFICATION_REPEATS: usize = 10;

// --- detection -------------------------------------------------------------

/// Detection scores for one evaluation cell; higher = more watermark-like.
#[derive(Debug, Clone, Default)]
pub struct DetectionScoreSet {
    pub watermarked: Vec<f64>,
    pub non_watermarked: Vec<f64>,
}

/// True-positive rate at the most permissive threshold whose empirical
/// false-positive rate does not exceed `fpr_target`: with N negatives,
/// ⌊fpr_target·N⌋ false positives are allowed. The threshold is the
/// smallest observed score clearing that bar; if no observed score does
/// (the top score is swamped by negatives), TPR is 0.
pub fn tpr_at_fpr(scores: &DetectionScoreSet, fpr_target: f64) -> Result<f64> {
    assert!(
        fpr_target > 0.0 && fpr_target < 1.0,
        "fpr target must lie strictly inside (0,1)"
    );
    if scores.watermarked.is_empty() || scores.non_watermarked.is_empty() {
        return Err(Error::Invalid("tpr_at_fpr needs both score lists nonempty".into()));
    }
    let allowed = (fpr_target * scores.non_watermarked.len() as f64).floor() as usize;
    let tpr_from = |threshold: f64| {
        scores.watermarked.iter().filter(|&&s| s >= threshold).count() as f64
            / scores.watermarked.len() as f64
    };
    if allowed >= scores.non_watermarked.len() {
        return Ok(1.0); // every negative may pass; any threshold works
    }
    let mut negatives = scores.non_watermarked.clone();
    negatives.sort_by(|a, b| b.partial_cmp(a).expect("scores must not be NaN"));
    // count(non-wm ≥ τ) ≤ allowed ⟺ τ strictly above the (allowed+1)-th
    // largest negative.
    let cut = negatives[allowed];
    let threshold = scores
        .watermarked
        .iter()
        .chain(scores.non_watermarked.iter())
        .copied()
        .filter(|&s| s > cut)
        .fold(f64::INFINITY, f64::min);
    Ok(tpr_from(threshold))
}

/// Area under the ROC curve (Mann–Whitney form, ties counted half).
/// Exported as an auxiliary column only.
pub fn auroc(scores: &DetectionScoreSet) -> Result<f64> {
    if scores.watermarked.is_empty() || scores.non_watermarked.is_empty() {
        return Err(Error::Invalid("auroc needs both score lists nonempty".into()));
    }
    let mut pooled: Vec<(f64, bool)> = scores
        .watermarked
        .iter()
        .map(|&s| (s, true))
        .chain(scores.non_watermarked.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));
    // Average ranks over tie runs, accumulate positive ranks.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
        for p in &pooled[i..j] {
            if p.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos = scores.watermarked.len() as f64;
    let n_neg = scores.non_watermarked.len() as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Mean fraction of message bits recovered. Auxiliary metric.
pub fn mean_bit_accuracy(expected: &BitMessage, decoded: &[BitMessage]) -> f64 {
    assert!(!decoded.is_empty(), "bit accuracy needs at least one decode");
    let d = expected.len() as f64;
    decoded
        .iter()
        .map(|m| 1.0 - hamming(expected, m) as f64 / d)
        .sum::<f64>()
        / decoded.len() as f64
}

// --- identification ----------------------------------------------------------

/// Index of the user message closest to `decoded` in Hamming distance,
/// lowest index on ties. The binomial p-value is monotone in the distance,
/// so this equals the minimum-p-value rule. Panics on an empty list or
/// mismatched lengths.
pub fn identify(decoded: &BitMessage, users: &[BitMessage]) -> usize {
    assert!(!users.is_empty(), "identify needs at least one candidate");
    let mut best = (u32::MAX, 0usize);
    for (i, user) in users.iter().enumerate() {
        let d = hamming(user, decoded);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn tail_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Fraction of `decoded` messages a K-user identification scan assigns to
/// the true user, averaged over `repeats` independent draws of the other
/// users' messages. The true user sits at `true_index` holding
/// `true_message`; the other K−1 messages are drawn fresh per repeat from
/// child streams of `rng` (label `repeat/<r>`), never materializing more
/// than one scan position at a time, so memory stays O(decoded).
pub fn identification_accuracy(
    decoded: &[BitMessage],
    true_index: usize,
    true_message: &BitMessage,
    k: usize,
    repeats: usize,
    rng: &StreamRng,
) -> f64 {
    assert!(k >= 2, "identification needs at least two users");
    assert!(true_index < k, "true user index {true_index} out of range {k}");
    assert!(repeats >= 1, "identification needs at least one repeat");
    assert!(!decoded.is_empty(), "identification needs decoded messages");
    let bits = true_message.len();
    for m in decoded {
        assert_eq!(m.len(), bits, "decoded message length mismatch");
    }
    let words_per = true_message.words().len();
    let mask = tail_mask(bits);
    // Flat copy of decoded words for a cache-friendly inner loop.
    let flat: Vec<u64> = decoded.iter().flat_map(|m| m.words().iter().copied()).collect();

    // Collected per-repeat (index order) and summed sequentially so the
    // result does not depend on rayon's reduction tree.
    let per_repeat: Vec<f64> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut stream = rng.child(format!("repeat/{r}"));
            let mut best: Vec<(u32, usize)> = vec![(u32::MAX, 0); decoded.len()];
            let mut scratch = vec![0u64; words_per];
            for user in 0..k {
                let words: &[u64] = if user == true_index {
                    true_message.words()
                } else {
                    for w in scratch.iter_mut() {
                        *w = rand::RngCore::next_u64(&mut stream);
                    }
                    scratch[words_per - 1] &= mask;
                    &scratch
                };
                if words_per == 1 {
                    // Hot path: messages up to 64 bits fit one word.
                    let w = words[0];
                    for (b, &row) in best.iter_mut().zip(flat.iter()) {
                        let dist = (row ^ w).count_ones();
                        if dist < b.0 {
                            *b = (dist, user);
                        }
                    }
                } else {
                    for (b, row) in best.iter_mut().zip(flat.chunks_exact(words_per)) {
                        let mut dist = 0u32;
                        for (a, b) in row.iter().zip(words.iter()) {
                            dist += (a ^ b).count_ones();
                        }
                        if dist < b.0 {
                            *b = (dist, user);
                        }
                    }
                }
            }
            best.iter().filter(|(_, idx)| *idx == true_index).count() as f64
                / decoded.len() as f64
        })
        .collect();
    per_repeat.iter().sum::<f64>() / repeats as f64
}

// --- curves --------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub strength: f64,
    /// Performance (e.g. TPR at the FPR target, or identification accuracy).
    pub p: f64,
    /// Normalized quality degradation.
    pub q: f64,
}

/// Per-attack performance/quality curve. Points are ordered weakest attack
/// first; the strength axis must be strictly monotone (JPEG's natural unit
/// is quality, which falls as the attack strengthens, so decreasing
/// strengths are as valid as increasing ones). P and Q must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    pub attack: String,
    points: Vec<CurvePoint>,
}

impl EvalCurve {
    pub fn new(attack: impl Into<String>, points: Vec<CurvePoint>) -> Self {
        assert!(!points.is_empty(), "a curve needs at least one point");
        for p in &points {
            assert!(
                p.p.is_finite() && p.q.is_finite() && p.strength.is_finite(),
                "curve values must be finite"
            );
        }
        if points.len() > 1 {
            let increasing = points[1].strength > points[0].strength;
            for w in points.windows(2) {
                let ok = if increasing {
                    w[1].strength > w[0].strength
                } else {
                    w[1].strength < w[0].strength
                };
                assert!(ok, "curve strengths must be strictly monotone");
            }
        }
        EvalCurve { attack: attack.into(), points }
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }
}

/// Quality degradation at the attack strength where performance crosses
/// `p_threshold`, read off the curve walking from the weakest attack:
/// an exact hit returns that point's Q; a straddling adjacent pair is
/// linearly interpolated; +inf when performance never drops to the
/// threshold, −inf when it never reaches it.
pub fn q_at_p(curve: &EvalCurve, p_threshold: f64) -> f64 {
    let pts = curve.points();
    for (i, pt) in pts.iter().enumerate() {
        if pt.p == p_threshold {
            return pt.q;
        }
        if let Some(next) = pts.get(i + 1) {
            if (pt.p - p_threshold) * (next.p - p_threshold) < 0.0 {
                let t = (pt.p - p_threshold) / (pt.p - next.p);
                return pt.q + t * (next.q - pt.q);
            }
        }
    }
    if pts.iter().all(|pt| pt.p > p_threshold) {
        f64::INFINITY
    } else {
        debug_assert!(pts.iter().all(|pt| pt.p < p_threshold));
        f64::NEG_INFINITY
    }
}

/// Unweighted means of P and Q over the curve's points.
pub fn avg_pq(curve: &EvalCurve) -> (f64, f64) {
    let n = curve.points().len() as f64;
    let (sp, sq) = curve
        .points()
        .iter()
        .fold((0.0, 0.0), |(sp, sq), pt| (sp + pt.p, sq + pt.q));
    (sp / n, sq / n)
}

// --- ranking -------------------------------------------------------------------

/// Per-attack ranking keys in comparison order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSummary {
    pub attack: String,
    /// Q at the 0.95 performance threshold (±inf allowed).
    pub q_at_p95: f64,
    /// Q at the 0.7 performance threshold (±inf allowed).
    pub q_at_p70: f64,
    pub avg_p: f64,
    pub avg_q: f64,
}

impl AttackSummary {
    fn key(&self, level: usize) -> f64 {
        match level {
            0 => self.q_at_p95,
            1 => self.q_at_p70,
            2 => self.avg_p,
            _ => self.avg_q,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardRow {
    pub attack: String,
    pub q_at_p95: f64,
    pub q_at_p70: f64,
    pub avg_p: f64,
    pub avg_q: f64,
    /// 1-based; a tied block shares the block's smallest rank.
    pub rank: usize,
}

/// Two key values are tied when within the buffer; equal infinities of the
/// same sign tie, and −inf sorts below every finite value, +inf above.
///
/// The comparison guards against f64 representation error: keys are
/// typically values rounded to a few decimals, and a gap nominally equal
/// to the buffer (e.g. 0.243 − 0.233) can land a few ulps under it, which
/// must still count as "not tied".
fn keys_tied(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() < RANK_TIE_BUFFER - 1e-9
}

fn order_blocks(rows: &[AttackSummary], mut indices: Vec<usize>, level: usize) -> Vec<Vec<usize>> {
    if level == 4 {
        return vec![indices];
    }
    indices.sort_by(|&a, &b| {
        rows[a]
            .key(level)
            .partial_cmp(&rows[b].key(level))
            .expect("ranking keys must not be NaN")
    });
    let mut blocks = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    for &i in &indices {
        // Chained tying: each row is compared to the previous row in sorted
        // order, so runs of closely spaced values merge even when the ends
        // of the run differ by more than the buffer.
        let joins = group
            .last()
            .is_some_and(|&prev| keys_tied(rows[prev].key(level), rows[i].key(level)));
        if group.is_empty() || joins {
            group.push(i);
        } else {
            blocks.extend(order_blocks(rows, std::mem::take(&mut group), level + 1));
            group.push(i);
        }
    }
    if !group.is_empty() {
        blocks.extend(order_blocks(rows, group, level + 1));
    }
    blocks
}

/// Ranks attacks ascending by (Q@0.95P, Q@0.7P, Avg P, Avg Q) with buffered
/// ties: at each key level, rows are re-sorted and runs whose consecutive
/// values differ by less than the buffer stay tied, recursing into the next
/// key inside each run. Tied blocks share the smallest rank of the block.
/// Keys must not be NaN; ±inf are legal Q@P values.
pub fn rank_attacks(rows: &[AttackSummary]) -> Vec<LeaderboardRow> {
    assert!(!rows.is_empty(), "ranking needs at least one row");
    let blocks = order_blocks(rows, (0..rows.len()).collect(), 0);
    let mut out = Vec::with_capacity(rows.len());
    let mut next_rank = 1usize;
    for block in blocks {
        for &i in &block {
            let r = &rows[i];
            out.push(LeaderboardRow {
                attack: r.attack.clone(),
                q_at_p95: r.q_at_p95,
                q_at_p70: r.q_at_p70,
                avg_p: r.avg_p,
                avg_q: r.avg_q,
                rank: next_rank,
            });
        }
        next_rank += block.len();
    }
    out
}

// --- radar ---------------------------------------------------------------------

/// The seven attack families summarized on the radar plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackCategory {
    DistortionSingle,
    DistortionCombo,
    RegenerationSingle,
    RegenerationRinse,
    AdvEmbeddingGray,
    AdvEmbeddingBlack,
    AdvSurrogate,
}

impl AttackCategory {
    pub const ALL: [AttackCategory; 7] = [
        AttackCategory::DistortionSingle,
        AttackCategory::DistortionCombo,
        AttackCategory::RegenerationSingle,
        AttackCategory::RegenerationRinse,
        AttackCategory::AdvEmbeddingGray,
        AttackCategory::AdvEmbeddingBlack,
        AttackCategory::AdvSurrogate,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AttackCategory::DistortionSingle => "distortion-single",
            AttackCategory::DistortionCombo => "distortion-combo",
            AttackCategory::RegenerationSingle => "regeneration-single",
            AttackCategory::RegenerationRinse => "regeneration-rinse",
            AttackCategory::AdvEmbeddingGray => "adv-embedding-gray",
            AttackCategory::AdvEmbeddingBlack => "adv-embedding-black",
            AttackCategory::AdvSurrogate => "adv-surrogate",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.id() == id)
    }
}

/// Mean performance per category over all (attack, strength) points whose
/// quality degradation stays below the cutoff. Categories with no
/// qualifying point are absent from the result rather than zero.
pub fn radar_summary(
    points: &[(AttackCategory, f64, f64)], // (category, P, Q)
    quality_cutoff: f64,
) -> BTreeMap<AttackCategory, f64> {
    let mut sums: BTreeMap<AttackCategory, (f64, usize)> = BTreeMap::new();
    for &(cat, p, q) in points {
        if q < quality_cutoff {
            let slot = sums.entry(cat).or_insert((0.0, 0));
            slot.0 += p;
            slot.1 += 1;
        }
    }
    sums.into_iter().map(|(cat, (s, n))| (cat, s / n as f64)).collect()
}
