//! Release gate: twelve checks pinning the toolkit's numeric contracts.
//! Each test is one gate item and prints a `[gate NN] PASS` line with the
//! measured evidence; a failing assert is the corresponding FAIL.
//!
//! The published-leaderboard fixture in gate 01 is reference data for the
//! ranking arithmetic: the rank column of a benchmark leaderboard is a
//! pure function of its four summary columns, so our ranking must
//! reproduce every published integer from the other columns alone.

use std::time::Instant;

use markbench_core::adversarial::{
    max_gradient_error, pgd_embedding_attack, pgd_targeted_attack, toy_encoder, train_surrogate,
    PgdConfig, PgdObjective, SurrogateTrainingSetting, EPSILON_GRID,
};
use markbench_core::bits::BitMessage;
use markbench_core::distortion::{apply_distortion, DistortionKind};
use markbench_core::eval::{
    identification_accuracy, mean_bit_accuracy, rank_attacks, tpr_at_fpr, AttackSummary,
    DetectionScoreSet,
};
use markbench_core::fixtures::{synth_corpus_dir, synth_image};
use markbench_core::image::ImageBuffer;
use markbench_core::pipeline::{run_pipeline, RunConfig, Stage};
use markbench_core::quality::{fit_normalizer, psnr, MetricId, Orientation};
use markbench_core::rng::StreamRng;
use markbench_core::watermark::{binomial_strict_lower_tail, detect, embed, WatermarkKey};

const INF: f64 = f64::INFINITY;
const NEG: f64 = f64::NEG_INFINITY;

fn pass(n: u32, detail: &str) {
    println!("[gate {n:02}] PASS — {detail}");
}

// --- 01: published leaderboard rank reproduction ---------------------------

type PublishedRow = (&'static str, usize, f64, f64, f64, f64);

/// (attack, published rank, Q@0.95P, Q@0.7P, avg P, avg Q)
const BLOCK_A: [PublishedRow; 26] = [
    ("rotation", 11, 0.464, 0.521, 0.375, 0.648),
    ("random-crop", 18, 0.592, 0.592, 0.332, 0.463),
    ("erase", 26, INF, INF, 1.000, 0.490),
    ("brightness", 25, INF, INF, 0.997, 0.304),
    ("contrast", 22, INF, INF, 0.998, 0.243),
    ("blur", 20, 0.861, 1.112, 0.563, 1.221),
    ("noise", 16, 0.548, INF, 0.980, 0.395),
    ("jpeg", 12, 0.499, 0.499, 0.929, 0.284),
    ("combo-geometric", 13, 0.525, 0.593, 0.277, 0.768),
    ("combo-photometric", 22, INF, INF, 0.998, 0.242),
    ("combo-degradation", 19, 0.620, INF, 0.892, 0.694),
    ("combo-all", 14, 0.539, 0.751, 0.403, 0.908),
    ("regen-diffusion", 5, NEG, 0.307, 0.612, 0.323),
    ("regen-diffusion-prompted", 4, NEG, 0.307, 0.601, 0.327),
    ("regen-vae", 17, 0.578, 0.578, 0.832, 0.348),
    ("regen-klvae", 22, INF, INF, 0.990, 0.233),
    ("rinse-2x", 6, NEG, 0.333, 0.510, 0.357),
    ("rinse-4x", 7, NEG, 0.355, 0.443, 0.466),
    ("adv-emb-gray-klvae8", 3, NEG, 0.164, 0.448, 0.253),
    ("adv-emb-black-resnet18", 10, 0.241, INF, 0.953, 0.218),
    ("adv-emb-black-clip", 15, 0.541, INF, 0.932, 0.549),
    ("adv-emb-black-klvae16", 8, 0.195, INF, 0.888, 0.238),
    ("adv-emb-black-sdxlvae", 9, 0.222, INF, 0.934, 0.221),
    ("adv-cls-unwm-wm", 1, NEG, 0.102, 0.499, 0.145),
    ("adv-cls-real-wm", 21, INF, INF, 1.000, 0.047),
    ("adv-cls-wm1-wm2", 1, NEG, 0.101, 0.492, 0.139),
];

const BLOCK_B: [PublishedRow; 26] = [
    ("rotation", 12, 0.624, 0.702, 0.594, 0.650),
    ("random-crop", 24, INF, INF, 0.995, 0.461),
    ("erase", 25, INF, INF, 0.998, 0.489),
    ("brightness", 23, INF, INF, 0.998, 0.305),
    ("contrast", 20, INF, INF, 0.998, 0.243),
    ("blur", 5, NEG, NEG, 0.000, 1.204),
    ("noise", 8, 0.402, 0.520, 0.870, 0.390),
    ("jpeg", 9, 0.485, 0.485, 0.793, 0.284),
    ("combo-geometric", 13, 0.850, INF, 0.937, 0.767),
    ("combo-photometric", 20, INF, INF, 0.998, 0.243),
    ("combo-degradation", 7, 0.206, 0.369, 0.300, 0.679),
    ("combo-all", 11, 0.538, 0.691, 0.334, 0.900),
    ("regen-diffusion", 1, NEG, NEG, 0.001, 0.300),
    ("regen-diffusion-prompted", 1, NEG, NEG, 0.001, 0.303),
    ("regen-vae", 10, 0.545, 0.545, 0.516, 0.339),
    ("regen-klvae", 6, NEG, 0.176, 0.217, 0.206),
    ("rinse-2x", 3, NEG, NEG, 0.001, 0.332),
    ("rinse-4x", 4, NEG, NEG, 0.000, 0.438),
    ("adv-emb-gray-klvae8", 20, INF, INF, 0.998, 0.249),
    ("adv-emb-black-resnet18", 17, INF, INF, 0.999, 0.212),
    ("adv-emb-black-clip", 26, INF, INF, 0.999, 0.541),
    ("adv-emb-black-klvae16", 19, INF, INF, 0.997, 0.233),
    ("adv-emb-black-sdxlvae", 17, INF, INF, 0.998, 0.219),
    ("adv-cls-unwm-wm", 14, INF, INF, 0.999, 0.101),
    ("adv-cls-real-wm", 14, INF, INF, 0.998, 0.092),
    ("adv-cls-wm1-wm2", 14, INF, INF, 0.999, 0.084),
];

const BLOCK_C: [PublishedRow; 26] = [
    ("rotation", 5, 0.423, 0.498, 0.357, 0.616),
    ("random-crop", 6, 0.602, 0.602, 0.540, 0.451),
    ("erase", 25, INF, INF, 1.000, 0.483),
    ("brightness", 22, INF, INF, 0.998, 0.317),
    ("contrast", 17, INF, INF, 0.998, 0.231),
    ("blur", 9, 0.848, 0.962, 0.414, 1.198),
    ("noise", 24, INF, INF, 1.000, 0.360),
    ("jpeg", 21, INF, INF, 0.998, 0.263),
    ("combo-geometric", 7, 0.663, 0.693, 0.396, 0.733),
    ("combo-photometric", 17, INF, INF, 0.998, 0.239),
    ("combo-degradation", 8, 0.826, 0.975, 0.852, 0.664),
    ("combo-all", 10, 0.945, 1.101, 0.795, 0.870),
    ("regen-diffusion", 1, 0.331, INF, 0.943, 0.327),
    ("regen-diffusion-prompted", 1, 0.333, INF, 0.940, 0.329),
    ("regen-vae", 23, INF, INF, 1.000, 0.343),
    ("regen-klvae", 17, INF, INF, 1.000, 0.240),
    ("rinse-2x", 4, 0.391, INF, 0.941, 0.366),
    ("rinse-4x", 3, 0.388, INF, 0.909, 0.477),
    ("adv-emb-gray-klvae8", 17, INF, INF, 1.000, 0.232),
    ("adv-emb-black-resnet18", 14, INF, INF, 1.000, 0.196),
    ("adv-emb-black-clip", 25, INF, INF, 1.000, 0.488),
    ("adv-emb-black-klvae16", 14, INF, INF, 1.000, 0.206),
    ("adv-emb-black-sdxlvae", 14, INF, INF, 1.000, 0.204),
    ("adv-cls-unwm-wm", 11, INF, INF, 1.000, 0.101),
    ("adv-cls-real-wm", 11, INF, INF, 1.000, 0.106),
    ("adv-cls-wm1-wm2", 13, INF, INF, 1.000, 0.129),
];

fn check_block(label: &str, rows: &[PublishedRow]) {
    let summaries: Vec<AttackSummary> = rows
        .iter()
        .map(|&(attack, _, q95, q70, avg_p, avg_q)| AttackSummary {
            attack: attack.to_string(),
            q_at_p95: q95,
            q_at_p70: q70,
            avg_p,
            avg_q,
        })
        .collect();
    let ranked = rank_attacks(&summaries);
    assert_eq!(ranked.len(), rows.len());
    for &(attack, published, ..) in rows {
        let row = ranked.iter().find(|r| r.attack == attack).unwrap();
        assert_eq!(
            row.rank, published,
            "block {label}, attack {attack}: computed {} vs published {published}",
            row.rank
        );
    }
}

#[test]
fn gate_01_published_rank_columns_are_reproduced() {
    let start = Instant::now();
    check_block("A", &BLOCK_A);
    check_block("B", &BLOCK_B);
    check_block("C", &BLOCK_C);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 1.0, "ranking took {secs:.3}s");
    pass(1, &format!("78/78 published ranks reproduced in {secs:.3}s"));
}

// --- 02: strength grids -----------------------------------------------------

#[test]
fn gate_02_strength_grids_are_verbatim() {
    use DistortionKind::*;
    let expected: [(DistortionKind, [f64; 5]); 12] = [
        (Rotation, [9.0, 18.0, 27.0, 36.0, 45.0]),
        (RandomCrop, [0.10, 0.20, 0.30, 0.40, 0.50]),
        (Erase, [0.05, 0.10, 0.15, 0.20, 0.25]),
        (Brightness, [0.20, 0.40, 0.60, 0.80, 1.00]),
        (Contrast, [0.20, 0.40, 0.60, 0.80, 1.00]),
        (Blur, [4.0, 8.0, 12.0, 16.0, 20.0]),
        (Noise, [0.02, 0.04, 0.06, 0.08, 0.10]),
        (Jpeg, [90.0, 70.0, 50.0, 30.0, 10.0]),
        (ComboGeometric, [0.05, 0.15, 0.25, 0.35, 0.45]),
        (ComboPhotometric, [0.05, 0.15, 0.25, 0.35, 0.45]),
        (ComboDegradation, [0.05, 0.15, 0.25, 0.35, 0.45]),
        (ComboAll, [0.05, 0.0875, 0.125, 0.1625, 0.20]),
    ];
    assert_eq!(expected.len(), DistortionKind::ALL.len());
    for (kind, grid) in expected {
        assert_eq!(kind.strength_grid(), grid, "grid for {}", kind.id());
    }
    pass(2, "12/12 strength grids match, exact equality");
}

// --- 03: p-value against exhaustive enumeration -----------------------------

#[test]
fn gate_03_p_value_matches_exhaustive_enumeration() {
    let start = Instant::now();
    let mut checked = 0usize;
    for d in 1u32..=12 {
        // Count, for every k, the messages at Hamming distance < k from a
        // fixed reference — brute force over all 2^d bit patterns.
        let mut below = vec![0u64; (d + 2) as usize];
        for pattern in 0u32..(1 << d) {
            below[(pattern.count_ones() + 1) as usize] += 1;
        }
        for k in 1..below.len() {
            below[k] += below[k - 1];
        }
        for k in 0..=d {
            let oracle = below[k as usize] as f64 / (1u64 << d) as f64;
            let got = binomial_strict_lower_tail(d, k);
            assert!(
                (got - oracle).abs() <= 1e-12,
                "d={d} k={k}: {got} vs enumerated {oracle}"
            );
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "enumeration took {secs:.3}s");
    pass(3, &format!("{checked} (d,k) pairs vs 2^d enumeration, ≤1e-12, {secs:.2}s"));
}

// --- 04: TPR@FPR against a brute-force threshold sweep ----------------------

fn brute_force_tpr(set: &DetectionScoreSet, fpr: f64) -> f64 {
    let mut thresholds: Vec<f64> = set
        .watermarked
        .iter()
        .chain(set.non_watermarked.iter())
        .copied()
        .collect();
    thresholds.push(f64::INFINITY);
    let negatives = set.non_watermarked.len() as f64;
    let positives = set.watermarked.len() as f64;
    let mut best = 0.0f64;
    for &t in &thresholds {
        let fp = set.non_watermarked.iter().filter(|&&s| s >= t).count() as f64;
        if fp / negatives <= fpr {
            let tp = set.watermarked.iter().filter(|&&s| s >= t).count() as f64;
            best = best.max(tp / positives);
        }
    }
    best
}

#[test]
fn gate_04_tpr_at_fpr_matches_threshold_sweep() {
    let root = StreamRng::new(404, "gate/roc");
    for trial in 0..200 {
        let mut rng = root.child(format!("t{trial}"));
        let quantized = rng.below(2) == 0; // tie-heavy half of the trials
        let draw = |rng: &mut StreamRng, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if quantized {
                        rng.below(21) as f64
                    } else {
                        rng.standard_normal()
                    }
                })
                .collect()
        };
        let n_pos = 1 + rng.below(1000);
        let n_neg = 1 + rng.below(1000);
        let set = DetectionScoreSet {
            watermarked: draw(&mut rng, n_pos),
            non_watermarked: draw(&mut rng, n_neg),
        };
        let fpr = [0.0005, 0.001, 0.01, 0.05, 0.1, 0.25][rng.below(6)];
        let got = tpr_at_fpr(&set, fpr).unwrap();
        let oracle = brute_force_tpr(&set, fpr);
        assert_eq!(got, oracle, "trial {trial}: fpr {fpr}, {n_pos}/{n_neg} points");
    }
    pass(4, "200/200 score sets match the all-threshold sweep exactly");
}

// --- 05: PGD projection fuzz + gradient contract -----------------------------

#[test]
fn gate_05_pgd_projection_fuzz_and_gradient_checks() {
    let root = StreamRng::new(505, "gate/pgd");

    // One small surrogate for the targeted trials.
    let gen = root.child("surrogate-data");
    let clean: Vec<ImageBuffer<f64>> =
        (0..12).map(|i| synth_image(24, 24, 3, &mut gen.child(format!("c{i}")))).collect();
    let shifted: Vec<ImageBuffer<f64>> = clean
        .iter()
        .map(|img| {
            let mut out = img.clone();
            for v in out.data_mut() {
                *v = (*v + 0.05).min(1.0);
            }
            out
        })
        .collect();
    let (surrogate, _) = train_surrogate(
        &clean,
        &shifted,
        SurrogateTrainingSetting::UnWMvsWM,
        &mut root.child("surrogate-train"),
    )
    .unwrap();

    let slack = (2.0f64).powi(-23);
    let check = |image_data: &[f64], out_data: &[f64], eps: f64, trial: usize| {
        for (&a, &b) in image_data.iter().zip(out_data) {
            assert!((0.0..=1.0).contains(&b), "trial {trial}: pixel {b} outside [0,1]");
            assert!(
                (a - b).abs() <= eps + slack,
                "trial {trial}: |Δ|={} exceeds ε={eps}",
                (a - b).abs()
            );
        }
    };

    for trial in 0..500 {
        let mut rng = root.child(format!("t{trial}"));
        let w = 12 + rng.below(17);
        let h = 12 + rng.below(17);
        let ch = if rng.below(2) == 0 { 1 } else { 3 };
        let eps = if rng.below(2) == 0 {
            EPSILON_GRID[rng.below(4)]
        } else {
            (1.0 + rng.below(80) as f64) / 2550.0
        };
        if trial % 2 == 0 {
            let dim = [4, 8, 16][rng.below(3)];
            let encoder = toy_encoder(trial as u64, dim);
            let img: ImageBuffer<f64> = synth_image(w, h, ch, &mut rng.child("img"));
            let cfg = PgdConfig::embedding(eps);
            let out = pgd_embedding_attack(&img, &encoder, &cfg, &mut rng.child("pgd"));
            check(img.data(), out.image.data(), eps, trial);
        } else {
            let img: ImageBuffer<f64> = synth_image(w, h, ch, &mut rng.child("img"));
            let cfg = PgdConfig::targeted(eps, rng.below(2));
            let out = pgd_targeted_attack(&img, &surrogate, &cfg);
            check(img.data(), out.image.data(), eps, trial);
        }
    }

    // Finite-difference gradient contract for both bundled model kinds, at
    // both scalar widths.
    let encoder = toy_encoder(99, 16);
    let img64: ImageBuffer<f64> = synth_image(40, 40, 3, &mut root.child("fd64"));
    let img32: ImageBuffer<f32> = synth_image(40, 40, 3, &mut root.child("fd32"));
    let checks = [
        ("encoder/f64", max_gradient_error(&encoder, &img64, 200, &mut root.child("p1"))),
        ("encoder/f32", max_gradient_error(&encoder, &img32, 200, &mut root.child("p2"))),
        ("surrogate/f64", max_gradient_error(&surrogate, &img64, 200, &mut root.child("p3"))),
        ("surrogate/f32", max_gradient_error(&surrogate, &img32, 200, &mut root.child("p4"))),
    ];
    for (label, err) in checks {
        assert!(err <= 1e-4, "{label}: finite-difference error {err}");
    }
    pass(5, "500/500 projections inside ε+2⁻²³ and [0,1]; 4/4 gradient checks ≤1e-4");
}

// --- 06: PGD hyperparameter fidelity -----------------------------------------

#[test]
fn gate_06_pgd_defaults_are_exact() {
    let expected = [2.0 / 255.0, 4.0 / 255.0, 6.0 / 255.0, 8.0 / 255.0];
    assert_eq!(EPSILON_GRID, expected);
    for eps in EPSILON_GRID {
        let e = PgdConfig::embedding(eps);
        assert_eq!(e.epsilon, eps);
        assert_eq!(e.alpha, 0.05 * eps);
        assert_eq!(e.iterations, 200);
        assert_eq!(e.objective, PgdObjective::MaximizeEmbeddingDistance);

        let t = PgdConfig::targeted(eps, 0);
        assert_eq!(t.epsilon, eps);
        assert_eq!(t.alpha, 0.01 * eps);
        assert_eq!(t.iterations, 50);
        assert_eq!(t.objective, PgdObjective::TargetedClassification);
        assert_eq!(t.target_label, Some(0));
    }
    pass(6, "ε grid {2,4,6,8}/255; (α,iters) = (0.05ε,200) and (0.01ε,50)");
}

// --- 07: clean-watermark detection on a fixture corpus -----------------------

#[test]
fn gate_07_clean_detection_is_perfect_and_false_positives_are_rare() {
    let start = Instant::now();
    let key = WatermarkKey::new(707);
    let root = StreamRng::new(707, "gate/clean");
    let message = BitMessage::random(key.message_bits, &mut root.child("message"));

    let mut decoded = Vec::with_capacity(200);
    let mut positive_scores = Vec::with_capacity(200);
    for i in 0..200 {
        let img: ImageBuffer<f64> = synth_image(96, 128, 3, &mut root.child(format!("pos{i}")));
        let marked = embed(&key, &img, &message).unwrap();
        let r = detect(&key, &marked, &message, 0.001).unwrap();
        positive_scores.push(r.score as f64);
        decoded.push(r.decoded);
    }
    let bit_accuracy = mean_bit_accuracy(&message, &decoded);
    assert_eq!(bit_accuracy, 1.0, "clean decode must be exact");

    let negative_scores: Vec<f64> = (0..200)
        .map(|i| {
            let img: ImageBuffer<f64> =
                synth_image(96, 128, 3, &mut root.child(format!("neg{i}")));
            detect(&key, &img, &message, 0.001).unwrap().score as f64
        })
        .collect();
    let set = DetectionScoreSet {
        watermarked: positive_scores,
        non_watermarked: negative_scores,
    };
    let tpr = tpr_at_fpr(&set, 0.001).unwrap();
    assert_eq!(tpr, 1.0, "clean TPR@0.1%FPR");

    let false_positives = (0..10_000)
        .filter(|i| {
            let img: ImageBuffer<f64> =
                synth_image(96, 128, 1, &mut root.child(format!("fpr{i}")));
            detect(&key, &img, &message, 0.001).unwrap().verified
        })
        .count();
    let fpr = false_positives as f64 / 10_000.0;
    assert!(fpr <= 0.002, "empirical verify FPR {fpr}");

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "took {secs:.1}s");
    pass(
        7,
        &format!(
            "bit accuracy 1.0, TPR@0.1%FPR 1.0, verify FPR {fpr:.4} over 10⁴ negatives, {secs:.1}s"
        ),
    );
}

// --- 08: PSNR degrades monotonically along every single-attack grid ----------

#[test]
fn gate_08_psnr_never_recovers_along_a_grid() {
    let root = StreamRng::new(808, "gate/monotone");
    let images: Vec<ImageBuffer<f64>> =
        (0..50).map(|i| synth_image(64, 64, 3, &mut root.child(format!("img{i}")))).collect();

    for kind in DistortionKind::SINGLES {
        let means: Vec<f64> = kind
            .strength_grid()
            .iter()
            .map(|&s| {
                let total: f64 = images
                    .iter()
                    .enumerate()
                    .map(|(i, img)| {
                        let mut rng =
                            root.child(format!("apply/{}/{s}/{i}", kind.id()));
                        psnr(&apply_distortion(img, kind, s, &mut rng), img)
                    })
                    .sum();
                total / images.len() as f64
            })
            .collect();
        let mut inversions = 0;
        for pair in means.windows(2) {
            if pair[1] > pair[0] {
                inversions += 1;
                assert!(
                    pair[1] - pair[0] <= 0.1,
                    "{}: mean PSNR rose {} → {}",
                    kind.id(),
                    pair[0],
                    pair[1]
                );
            }
        }
        assert!(inversions <= 1, "{}: {inversions} inversions in {means:?}", kind.id());
    }
    pass(8, "8/8 single-attack grids weakly decreasing in mean PSNR (≤1 inversion ≤0.1dB)");
}

// --- 09: normalizer quantile contract ----------------------------------------

#[test]
fn gate_09_normalizer_pins_the_quantile_anchors() {
    let mut rng = StreamRng::new(909, "gate/normalizer");
    let corpora: Vec<(MetricId, Vec<f64>)> = vec![
        (MetricId::psnr(), (0..1000).map(|_| 35.0 + 5.0 * rng.standard_normal()).collect()),
        (MetricId::ssim(), (0..1000).map(|_| 0.3 + 0.7 * rng.unit_f64()).collect()),
        (MetricId::nmi(), (0..1000).map(|_| 1.2 + 0.2 * rng.standard_normal()).collect()),
    ];
    let normalizer = fit_normalizer(&corpora).unwrap();

    for (metric, values) in &corpora {
        let below = |cut: f64| -> f64 {
            values
                .iter()
                .filter(|&&v| normalizer.normalize(&metric.name, v).unwrap() < cut)
                .count() as f64
                / values.len() as f64
        };
        let frac10 = below(0.1);
        let frac90 = below(0.9);
        assert!((frac10 - 0.10).abs() <= 0.02, "{}: {frac10} below 0.1", metric.name);
        assert!((frac90 - 0.90).abs() <= 0.02, "{}: {frac90} below 0.9", metric.name);

        // The fitted quantiles map to the anchors without error.
        let entry = normalizer.get(&metric.name).unwrap();
        let invert = |q: f64| match metric.orientation {
            Orientation::HigherIsBetter => -q,
            Orientation::LowerIsBetter => q,
        };
        assert_eq!(normalizer.normalize(&metric.name, invert(entry.q10)).unwrap(), 0.1);
        assert_eq!(normalizer.normalize(&metric.name, invert(entry.q90)).unwrap(), 0.9);
    }
    pass(9, "3/3 metrics: 10%±2 below 0.1, 90%±2 below 0.9, anchors exact");
}

// --- 10: identification at a million users -----------------------------------

#[test]
fn gate_10_identification_is_reliable_and_fast_at_scale() {
    let rng = StreamRng::new(1010, "gate/identify");
    let message = BitMessage::random(48, &mut rng.child("message"));

    let clean = vec![message.clone(); 1000];
    let start = Instant::now();
    let accuracy = identification_accuracy(&clean, 0, &message, 1_000_000, 10, &rng.child("k1m"));
    let secs = start.elapsed().as_secs_f64();
    assert!(accuracy >= 0.999, "clean identification accuracy {accuracy}");
    assert!(secs < 60.0, "10³ decodes × 10⁶ users × 10 repeats took {secs:.1}s");

    let noise = rng.child("random-decodes");
    let random: Vec<BitMessage> =
        (0..1000).map(|i| BitMessage::random(48, &mut noise.child(format!("m{i}")))).collect();
    let chance = identification_accuracy(&random, 0, &message, 100, 10, &rng.child("k100"));
    assert!((0.0..=0.05).contains(&chance), "chance-level accuracy {chance}");

    pass(
        10,
        &format!("clean {accuracy:.4} at K=10⁶ in {secs:.1}s; random decodes {chance:.4} at K=100"),
    );
}

// --- 11: the bundled attacks actually hurt the bundled watermark --------------

/// Regression floors measured by the calibration run on the fixed seeds
/// below. The attacks must stay effective (TPR strictly under the clean
/// 1.0) and close to their calibrated strength.
const EMBEDDING_ATTACK_TPR: f64 = 40.0 / 120.0;
const SURROGATE_ATTACK_TPR: f64 = 0.0;
const ATTACK_TPR_WINDOW: f64 = 0.05;

#[test]
fn gate_11_bundled_attacks_degrade_detection() {
    let key = WatermarkKey::new(1111);
    let root = StreamRng::new(1111, "gate/attacks");
    let message = BitMessage::random(key.message_bits, &mut root.child("message"));

    let clean: Vec<ImageBuffer<f64>> = (0..200)
        .map(|i| synth_image(96, 128, 3, &mut root.child(format!("img{i}"))))
        .collect();
    let marked: Vec<ImageBuffer<f64>> =
        clean.iter().map(|img| embed(&key, img, &message).unwrap()).collect();

    let negative_scores: Vec<f64> = clean
        .iter()
        .map(|img| detect(&key, img, &message, 0.001).unwrap().score as f64)
        .collect();
    let tpr_of = |attacked: &[ImageBuffer<f64>]| -> f64 {
        let set = DetectionScoreSet {
            watermarked: attacked
                .iter()
                .map(|img| detect(&key, img, &message, 0.001).unwrap().score as f64)
                .collect(),
            non_watermarked: negative_scores.clone(),
        };
        tpr_at_fpr(&set, 0.001).unwrap()
    };

    // Unattacked baseline: perfect.
    assert_eq!(tpr_of(&marked[..120]), 1.0);

    let eps = 8.0 / 255.0;

    // Feature-divergence PGD against the bundled encoder.
    let encoder = toy_encoder(1111, 16);
    let cfg = PgdConfig::embedding(eps);
    let attacked: Vec<ImageBuffer<f64>> = marked[..120]
        .iter()
        .enumerate()
        .map(|(i, img)| {
            pgd_embedding_attack(img, &encoder, &cfg, &mut root.child(format!("pgd{i}")))
                .image
        })
        .collect();
    let tpr_embedding = tpr_of(&attacked);
    assert!(tpr_embedding < 1.0, "embedding attack left TPR at 1.0");
    assert!(
        (tpr_embedding - EMBEDDING_ATTACK_TPR).abs() <= ATTACK_TPR_WINDOW,
        "embedding attack TPR {tpr_embedding} drifted from calibrated {EMBEDDING_ATTACK_TPR}"
    );

    // Surrogate-classifier PGD, walking watermarked images to the clean side.
    let (surrogate, _) = train_surrogate(
        &clean,
        &marked,
        SurrogateTrainingSetting::UnWMvsWM,
        &mut root.child("train"),
    )
    .unwrap();
    let cfg = PgdConfig::targeted(eps, 0);
    let attacked: Vec<ImageBuffer<f64>> = marked[..120]
        .iter()
        .map(|img| pgd_targeted_attack(img, &surrogate, &cfg).image)
        .collect();
    let tpr_surrogate = tpr_of(&attacked);
    assert!(tpr_surrogate < 1.0, "surrogate attack left TPR at 1.0");
    assert!(
        (tpr_surrogate - SURROGATE_ATTACK_TPR).abs() <= ATTACK_TPR_WINDOW,
        "surrogate attack TPR {tpr_surrogate} drifted from calibrated {SURROGATE_ATTACK_TPR}"
    );

    pass(
        11,
        &format!(
            "TPR@0.1%FPR: clean 1.0 → embedding {tpr_embedding:.3}, surrogate {tpr_surrogate:.3}"
        ),
    );
}

// --- 12: byte-identical report bundles across working trees -------------------

fn collect_bytes(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gate_12_reruns_in_fresh_trees_are_byte_identical() {
    let config_body = r#"
[run]
id = "determinism"
seed = 1212
output_dir = "out"

[dataset]
manifests = ["corpus/manifest.tsv"]

[watermark]
id = "dct"
seed = 12

[identification]
user_counts = [100]
repeats = 2

[attacks]
distortions = ["blur", "jpeg"]
embedding = true
surrogate = true

[attacks.strengths]
blur = [2.0, 6.0]
jpeg = [70.0, 30.0]
"#;
    let build = |label: &str| -> Vec<(String, Vec<u8>)> {
        let tree = tempfile::tempdir().unwrap();
        synth_corpus_dir(tree.path().join("corpus"), 8, 96, 128, 3, 12).unwrap();
        let config_path = tree.path().join("run.toml");
        std::fs::write(&config_path, config_body).unwrap();
        let cfg = RunConfig::load(&config_path).unwrap();
        let outcome = run_pipeline(&cfg, Stage::Report).unwrap();
        assert!(
            outcome.executed.len() == 10 && outcome.skipped.is_empty(),
            "{label}: unexpected stage set {:?}",
            outcome.executed
        );
        let mut bundle = collect_bytes(&outcome.run_dir.join("reports"));
        bundle.push((
            "ledger.json".into(),
            std::fs::read(outcome.run_dir.join("ledger.json")).unwrap(),
        ));
        bundle
    };
    let first = build("first");
    let second = build("second");
    assert_eq!(first.len(), second.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between trees");
    }
    pass(12, &format!("{} report files byte-identical across fresh trees", first.len()));
}
