//! End-to-end acceptance gate. Each test checks one numbered claim at
//! its stated tolerance and runtime budget and prints one line with the
//! measured values (visible under --nocapture).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use confmat::experiments::{run_experiment1, run_experiment2, ExperimentConfig, ScoreMetric};
use confmat::geometry::{
    build_grid, build_scaled_histogram, count_confusion, fit_pca, histogram_volume, project,
    scott_bin_widths, ClusterSelector, GcmVariantKind, WeightVectors,
};
use confmat::matrix::{kl_divergence, l1_distance, overlap, ConfusionMatrix, NormalizationKind};
use confmat::scaling::{
    bistochastic_normalize, ipf, lemma1_oracle, ras, scaling_weights, IpfConfig,
};
use confmat::synthgen::{generate_embeddings, sample_centroids, EmbeddingSpec};

fn random_positive(c: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> ConfusionMatrix {
    let rows = (0..c)
        .map(|_| (0..c).map(|_| rng.gen_range(lo..hi)).collect())
        .collect();
    ConfusionMatrix::with_index_labels(rows).unwrap()
}

fn scenario(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
    cfg.validate().unwrap();
    cfg
}

/// Strict per-seed winners of each normalization kind; ties count for
/// no one.
fn strict_wins(scores: &BTreeMap<NormalizationKind, Vec<f64>>) -> BTreeMap<NormalizationKind, usize> {
    let n = scores.values().next().unwrap().len();
    let mut wins: BTreeMap<NormalizationKind, usize> =
        NormalizationKind::KINDS.iter().map(|&k| (k, 0)).collect();
    for s in 0..n {
        let mut best = f64::NEG_INFINITY;
        let mut winner = None;
        for kind in NormalizationKind::KINDS {
            let v = scores[&kind][s];
            if v > best {
                best = v;
                winner = Some(kind);
            } else if v == best {
                winner = None;
            }
        }
        if let Some(k) = winner {
            *wins.get_mut(&k).unwrap() += 1;
        }
    }
    wins
}

#[test]
fn criterion_01_closed_form_oracle() {
    let started = Instant::now();
    let target = 2f64.sqrt() / (2f64.sqrt() + 3f64.sqrt());

    let m = ConfusionMatrix::with_index_labels(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let bis = bistochastic_normalize(&m, 1e-12, IpfConfig::default()).unwrap();

    // Independent check: every 2x2 bistochastic matrix is
    // [[p, 1-p], [1-p, p]], so scan p on a one-dimensional grid and
    // minimize the generalized divergence to [[1,2],[3,4]] directly.
    let n = 1_000_000;
    let divergence = |p: f64| {
        let q = 1.0 - p;
        p * (p / 1.0).ln() + q * (q / 2.0).ln() + q * (q / 3.0).ln() + p * (p / 4.0).ln()
            - 2.0 * (p + q)
            + 10.0
    };
    let mut best_p = 0.0;
    let mut best_d = f64::INFINITY;
    for t in 1..=n {
        let p = t as f64 / (n + 1) as f64;
        let d = divergence(p);
        if d < best_d {
            best_d = d;
            best_p = p;
        }
    }

    let elapsed = started.elapsed();
    assert!((bis.get(0, 0) - target).abs() <= 1e-6);
    assert!((best_p - target).abs() <= 2e-6, "grid search found {best_p}");
    assert!((bis.get(0, 0) - best_p).abs() <= 2e-6);
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 01: PASS entry {:.8} vs closed form {:.8}, grid argmin {:.8}, {:?}",
        bis.get(0, 0),
        target,
        best_p,
        elapsed
    );
}

#[test]
fn criterion_02_ipf_marginal_accuracy() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let ones = vec![1.0; 10];
    let mut max_dev = 0.0f64;
    let mut max_sweeps = 0;
    for _ in 0..100 {
        let m = random_positive(10, 0.1, 10.0, &mut rng);
        let res = ipf(&m, &ones, &ones, IpfConfig::default()).unwrap();
        assert!(res.converged);
        let sweeps = res.steps / 2;
        assert!(sweeps < 5_000, "needed {sweeps} sweeps");
        max_sweeps = max_sweeps.max(sweeps);
        for s in res.matrix.row_sums().iter().chain(&res.matrix.col_sums()) {
            let dev = (s - 1.0).abs();
            assert!(dev <= 1e-8, "marginal off by {dev}");
            max_dev = max_dev.max(dev);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "criterion 02: PASS worst marginal deviation {max_dev:.2e}, worst sweeps {max_sweeps}, {elapsed:?}"
    );
}

#[test]
fn criterion_03_idempotence_and_invariance() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2003);
    let cfg = IpfConfig::default();
    let mut worst_idem = 0.0f64;
    let mut worst_inv = 0.0f64;
    for _ in 0..100 {
        let c = rng.gen_range(2..=10);
        let m = random_positive(c, 0.1, 2.0, &mut rng);
        let bis = bistochastic_normalize(&m, 1e-15, cfg).unwrap();
        let twice = bistochastic_normalize(&bis, 1e-15, cfg).unwrap();
        let idem: f64 = twice
            .data()
            .iter()
            .zip(bis.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(idem <= 1e-8, "idempotence gap {idem}");
        worst_idem = worst_idem.max(idem);

        let rows = (0..c)
            .map(|i| {
                let a: f64 = rng.gen_range(0.1..10.0);
                (0..c).map(|j| a * m.get(i, j)).collect::<Vec<_>>()
            })
            .collect::<Vec<_>>();
        let cols: Vec<f64> = (0..c).map(|_| rng.gen_range(0.1..10.0)).collect();
        let scaled = ConfusionMatrix::with_index_labels(
            rows.iter()
                .map(|r| r.iter().zip(&cols).map(|(x, b)| x * b).collect())
                .collect(),
        )
        .unwrap();
        let bis_scaled = bistochastic_normalize(&scaled, 1e-15, cfg).unwrap();
        let inv: f64 = bis_scaled
            .data()
            .iter()
            .zip(bis.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(inv <= 1e-8, "invariance gap {inv}");
        worst_inv = worst_inv.max(inv);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 03: PASS worst idempotence gap {worst_idem:.2e}, worst invariance gap {worst_inv:.2e}, {elapsed:?}"
    );
}

#[test]
fn criterion_04_kl_optimality() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2004);
    let ones = vec![1.0; 4];
    let mut violations = 0;
    let mut closest_margin = f64::INFINITY;
    for trial in 0..20u64 {
        let m = random_positive(4, 0.1, 5.0, &mut rng);
        let bis = bistochastic_normalize(&m, 1e-15, IpfConfig::default()).unwrap();
        let best = kl_divergence(&bis, &m).unwrap();
        let samples = lemma1_oracle(&m, &ones, &ones, 1000, 4000 + trial).unwrap();
        for s in &samples {
            let d = kl_divergence(s, &m).unwrap();
            if d < best {
                violations += 1;
            }
            closest_margin = closest_margin.min(d - best);
        }
    }
    let elapsed = started.elapsed();
    assert_eq!(violations, 0, "oracle samples beat the scaled solution");
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "criterion 04: PASS 0 violations in 20000 samples, smallest margin {closest_margin:.3e}, {elapsed:?}"
    );
}

#[test]
fn criterion_05_ras_ipf_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2005);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let c = rng.gen_range(2..=8);
        let m = random_positive(c, 0.1, 5.0, &mut rng);
        let r: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        let mut v: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        let scale = r.iter().sum::<f64>() / v.iter().sum::<f64>();
        for x in &mut v {
            *x *= scale;
        }
        let a = ipf(&m, &r, &v, IpfConfig::default()).unwrap();
        let b = ras(&m, &r, &v, IpfConfig::default()).unwrap();
        assert!(a.converged && b.converged);
        let diff = a
            .matrix
            .data()
            .iter()
            .zip(b.matrix.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-8, "routes disagree by {diff}");
        worst = worst.max(diff);
    }
    let elapsed = started.elapsed();
    println!("criterion 05: PASS worst entrywise disagreement {worst:.2e}, {elapsed:?}");
}

#[test]
fn criterion_06_overlap_l1_identity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2006);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = rng.gen_range(2..=8);
        let p = random_positive(c, 0.05, 5.0, &mut rng);
        let q = random_positive(c, 0.05, 5.0, &mut rng);
        let ov = overlap(&p, &q).unwrap();
        let l1 = l1_distance(&p, &q).unwrap();
        let gap = (l1 - (2.0 - 2.0 * ov)).abs();
        assert!(gap <= 1e-12, "identity off by {gap}");
        worst = worst.max(gap);
    }
    let elapsed = started.elapsed();
    println!("criterion 06: PASS worst identity gap {worst:.2e}, {elapsed:?}");
}

#[test]
fn criterion_07_volume_identities() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2007);
    let c = 5;
    let m = 3;
    let mut worst_identity = 0.0f64;
    let mut worst_volume = 0.0f64;
    for trial in 0..20u64 {
        let centroids = sample_centroids(c, 5, 2.0, 700 + trial).unwrap();
        let counts: Vec<u64> = (0..c).map(|_| rng.gen_range(30..=60)).collect();
        let ds = generate_embeddings(&EmbeddingSpec {
            centroids,
            spread: 2.5,
            counts,
            seed: 800 + trial,
        })
        .unwrap();
        let proj = fit_pca(&ds, m).unwrap();
        let pds = project(&proj, &ds).unwrap();
        let widths = scott_bin_widths(&pds, m).unwrap();
        let grid = build_grid(&pds, &widths).unwrap();

        // Volume identity for arbitrary positive weights: the histogram
        // volume must equal the plain sum of the per-point weights.
        let l: Vec<f64> = (0..c).map(|_| rng.gen_range(0.2..5.0)).collect();
        let p: Vec<f64> = (0..c).map(|_| rng.gen_range(0.2..5.0)).collect();
        let w = WeightVectors::new(l.clone(), p.clone()).unwrap();
        for i in 0..c {
            let vol = histogram_volume(
                &build_scaled_histogram(&pds, ClusterSelector::ByLabel(i), &w, &grid).unwrap(),
            );
            let direct: f64 = pds
                .points()
                .iter()
                .filter(|pt| pt.true_label == i)
                .map(|pt| 1.0 / (l[pt.true_label] * p[pt.predicted_label]))
                .sum();
            let gap = (vol - direct).abs();
            assert!(gap <= 1e-9, "volume identity off by {gap}");
            worst_identity = worst_identity.max(gap);
        }

        let counted = count_confusion(&ds).unwrap();
        let label_counts = counted.row_sums();
        let pred_counts = counted.col_sums();
        assert!(pred_counts.iter().all(|&n| n > 0.0), "empty prediction cluster");
        let ones = vec![1.0; c];

        let mut check = |vols: Vec<f64>| {
            for v in vols {
                let gap = (v - 1.0).abs();
                assert!(gap <= 1e-6, "normalized volume off by {gap}");
                worst_volume = worst_volume.max(gap);
            }
        };

        let row_w = WeightVectors::new(label_counts.clone(), ones.clone()).unwrap();
        check(
            (0..c)
                .map(|i| {
                    histogram_volume(
                        &build_scaled_histogram(&pds, ClusterSelector::ByLabel(i), &row_w, &grid)
                            .unwrap(),
                    )
                })
                .collect(),
        );

        let col_w = WeightVectors::new(ones.clone(), pred_counts.clone()).unwrap();
        check(
            (0..c)
                .map(|j| {
                    histogram_volume(
                        &build_scaled_histogram(
                            &pds,
                            ClusterSelector::ByPrediction(j),
                            &col_w,
                            &grid,
                        )
                        .unwrap(),
                    )
                })
                .collect(),
        );

        let sw = scaling_weights(
            &counted,
            1e-9,
            IpfConfig { tolerance: 1e-8, max_steps: 40_000 },
        )
        .unwrap();
        let bis_w = WeightVectors::new(sw.a, sw.b).unwrap();
        check(
            (0..c)
                .map(|i| {
                    histogram_volume(
                        &build_scaled_histogram(&pds, ClusterSelector::ByLabel(i), &bis_w, &grid)
                            .unwrap(),
                    )
                })
                .collect(),
        );
        check(
            (0..c)
                .map(|j| {
                    histogram_volume(
                        &build_scaled_histogram(
                            &pds,
                            ClusterSelector::ByPrediction(j),
                            &bis_w,
                            &grid,
                        )
                        .unwrap(),
                    )
                })
                .collect(),
        );
    }
    let elapsed = started.elapsed();
    println!(
        "criterion 07: PASS worst identity gap {worst_identity:.2e}, worst unit-volume gap {worst_volume:.2e}, {elapsed:?}"
    );
}

#[test]
fn criterion_08_bistochastic_recovers_balanced_reference() {
    let started = Instant::now();
    let cfg = scenario("exp1.json");
    assert_eq!(
        (cfg.alpha, cfg.num_classes, cfg.base_per_class, cfg.num_seeds),
        (0.1, 10, 100, 100)
    );
    assert_eq!(cfg.confusable_pairs.len(), 3);
    let report = run_experiment1(&cfg, &cfg.seeds(), ScoreMetric::Full).unwrap();
    let bis_median = report.summary[&NormalizationKind::Bis].median;
    for kind in [NormalizationKind::Row, NormalizationKind::Col, NormalizationKind::All] {
        assert!(
            bis_median > report.summary[&kind].median,
            "median not strictly greatest vs {kind:?}"
        );
    }
    let wins = strict_wins(&report.scores);
    let bis_wins = wins[&NormalizationKind::Bis];
    assert!(bis_wins >= 80, "bis wins only {bis_wins}/100 seeds");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 08: PASS bis median {bis_median:.4} strictly greatest, {bis_wins}/100 strict wins, {elapsed:?}"
    );
}

#[test]
fn criterion_09_each_normalization_matches_its_gcm() {
    let started = Instant::now();
    let cfg = scenario("exp2.json");
    assert_eq!((cfg.alpha, cfg.m, cfg.num_seeds), (0.3, 5, 100));
    let reports = run_experiment2(&cfg, &cfg.seeds()).unwrap();
    let pairings = [
        (GcmVariantKind::AllLike, NormalizationKind::All),
        (GcmVariantKind::RowLike, NormalizationKind::Row),
        (GcmVariantKind::ColLike, NormalizationKind::Col),
        (GcmVariantKind::BisLike, NormalizationKind::Bis),
    ];
    let mut counts = Vec::new();
    for (variant, kind) in pairings {
        let wins = strict_wins(&reports[&variant].scores)[&kind];
        assert!(
            wins > 50,
            "{kind:?} tops the {variant} comparison in only {wins}/100 seeds"
        );
        counts.push(format!("{variant}:{wins}"));
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "criterion 09: PASS matched wins {} (need > 50 each), {elapsed:?}",
        counts.join(" ")
    );
}

#[test]
fn criterion_10_offdiagonal_strengthens_the_gap() {
    let started = Instant::now();
    let cfg = scenario("exp1.json");
    let seeds = cfg.seeds();
    let gap = |metric: ScoreMetric| {
        let report = run_experiment1(&cfg, &seeds, metric).unwrap();
        let bis = report.summary[&NormalizationKind::Bis].median;
        let best_other = [NormalizationKind::Row, NormalizationKind::Col, NormalizationKind::All]
            .iter()
            .map(|k| report.summary[k].median)
            .fold(f64::NEG_INFINITY, f64::max);
        bis - best_other
    };
    let full = gap(ScoreMetric::Full);
    let off = gap(ScoreMetric::OffDiagonal);
    let elapsed = started.elapsed();
    assert!(
        off >= full,
        "off-diagonal gap {off:.4} below full-overlap gap {full:.4}"
    );
    println!(
        "criterion 10: PASS off-diagonal gap {off:.4} >= full gap {full:.4}, {elapsed:?}"
    );
}
