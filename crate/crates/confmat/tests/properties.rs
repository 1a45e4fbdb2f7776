//! Randomized invariants for the normalization, metric, geometry and
//! generator layers: seeded bulk checks where a fixed sample count is
//! part of the contract, proptest where shrinking helps.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use confmat::experiments::quantile_sorted;
use confmat::geometry::{
    build_grid, build_scaled_histogram, count_confusion, fit_pca, gcm, histogram_volume, project,
    scott_bin_widths, ClusterSelector, EmbeddedDataset, EmbeddedPoint, WeightVectors,
};
use confmat::matrix::{kl_divergence, l1_distance, overlap, ConfusionMatrix};
use confmat::scaling::{
    bistochastic_normalize, ipf_observed, lemma1_oracle, IpfConfig,
};
use confmat::synthgen::{
    generate_embeddings, sample_centroids, sample_class_counts, sample_similarity_kernel,
    simulate_confusion, EmbeddingSpec, HeterogeneityConfig,
};

fn random_positive(c: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> ConfusionMatrix {
    let rows = (0..c)
        .map(|_| (0..c).map(|_| rng.gen_range(lo..hi)).collect())
        .collect();
    ConfusionMatrix::with_index_labels(rows).unwrap()
}

fn max_abs_diff(a: &ConfusionMatrix, b: &ConfusionMatrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn l1_diff(a: &ConfusionMatrix, b: &ConfusionMatrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum()
}

fn scale_rows(m: &ConfusionMatrix, alpha: &[f64]) -> ConfusionMatrix {
    let c = m.dim();
    let rows = (0..c)
        .map(|i| (0..c).map(|j| alpha[i] * m.get(i, j)).collect())
        .collect();
    ConfusionMatrix::with_index_labels(rows).unwrap()
}

fn scale_cols(m: &ConfusionMatrix, beta: &[f64]) -> ConfusionMatrix {
    let c = m.dim();
    let rows = (0..c)
        .map(|i| (0..c).map(|j| m.get(i, j) * beta[j]).collect())
        .collect();
    ConfusionMatrix::with_index_labels(rows).unwrap()
}

#[test]
fn row_col_all_normalizations_are_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let c = rng.gen_range(2..=10);
        let m = random_positive(c, 0.1, 10.0, &mut rng);
        let row = m.row_normalize().unwrap();
        let col = m.col_normalize().unwrap();
        let all = m.all_normalize().unwrap();
        assert!(max_abs_diff(&row.row_normalize().unwrap(), &row) <= 1e-12);
        assert!(max_abs_diff(&col.col_normalize().unwrap(), &col) <= 1e-12);
        assert!(max_abs_diff(&all.all_normalize().unwrap(), &all) <= 1e-12);
    }
}

#[test]
fn row_and_col_normalizations_ignore_diagonal_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let c = rng.gen_range(2..=10);
        let m = random_positive(c, 0.1, 10.0, &mut rng);
        let alpha: Vec<f64> = (0..c).map(|_| rng.gen_range(0.1..10.0)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(0.1..10.0)).collect();
        let left = scale_rows(&m, &alpha).row_normalize().unwrap();
        let right = scale_cols(&m, &beta).col_normalize().unwrap();
        assert!(max_abs_diff(&left, &m.row_normalize().unwrap()) <= 1e-12);
        assert!(max_abs_diff(&right, &m.col_normalize().unwrap()) <= 1e-12);
    }
}

#[test]
fn flat_normalization_minimizes_i_divergence_at_its_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..20u64 {
        let m = random_positive(3, 0.1, 2.0, &mut rng);
        let flat = m.all_normalize().unwrap();
        let best = kl_divergence(&flat, &m).unwrap();
        let samples =
            lemma1_oracle(&m, &flat.row_sums(), &flat.col_sums(), 1000, 900 + trial).unwrap();
        for s in &samples {
            assert!(best <= kl_divergence(s, &m).unwrap());
        }
    }
}

#[test]
fn overlap_is_symmetric_and_matches_l1_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let c = rng.gen_range(2..=8);
        let p = random_positive(c, 0.05, 5.0, &mut rng);
        let q = random_positive(c, 0.05, 5.0, &mut rng);
        let forward = overlap(&p, &q).unwrap();
        let backward = overlap(&q, &p).unwrap();
        assert_eq!(forward, backward);
        let l1 = l1_distance(&p, &q).unwrap();
        assert!((l1 - (2.0 - 2.0 * forward)).abs() <= 1e-12);
    }
}

#[test]
fn ipf_residual_contracts_linearly_near_the_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let m = random_positive(8, 0.1, 5.0, &mut rng);
        let ones = vec![1.0; 8];
        let mut residuals = Vec::new();
        let res = ipf_observed(&m, &ones, &ones, IpfConfig::default(), |_, r| {
            residuals.push(r);
        })
        .unwrap();
        assert!(res.converged);
        assert!(residuals.len() >= 2, "expected a multi-sweep run");
        let tail = &residuals[residuals.len().saturating_sub(10)..];
        let rho = tail
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max);
        assert!(rho < 1.0, "fitted contraction factor {rho} not below 1");
    }
}

#[test]
fn gcm_entries_never_exceed_cluster_volumes() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..10 {
        let c = 3;
        let centroids: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let points: Vec<EmbeddedPoint> = (0..60)
            .map(|_| {
                let y = rng.gen_range(0..c);
                EmbeddedPoint {
                    embedding: centroids[y]
                        .iter()
                        .map(|&v| v + rng.gen_range(-2.0..2.0))
                        .collect(),
                    true_label: y,
                    predicted_label: rng.gen_range(0..c),
                }
            })
            .collect();
        let ds = EmbeddedDataset::with_index_names(points, c).unwrap();
        let proj = fit_pca(&ds, 2).unwrap();
        let pds = project(&proj, &ds).unwrap();
        let widths = scott_bin_widths(&pds, 2).unwrap();
        let grid = build_grid(&pds, &widths).unwrap();
        let w = WeightVectors::new(
            (0..c).map(|_| rng.gen_range(0.2..5.0)).collect(),
            (0..c).map(|_| rng.gen_range(0.2..5.0)).collect(),
        )
        .unwrap();
        let g = gcm(&pds, &grid, &w).unwrap();
        for i in 0..c {
            let vol_i = histogram_volume(
                &build_scaled_histogram(&pds, ClusterSelector::ByLabel(i), &w, &grid).unwrap(),
            );
            for j in 0..c {
                let vol_j = histogram_volume(
                    &build_scaled_histogram(&pds, ClusterSelector::ByPrediction(j), &w, &grid)
                        .unwrap(),
                );
                assert!(g.get(i, j) <= vol_i.min(vol_j) + 1e-9);
            }
        }
    }
}

#[test]
fn fine_grids_reduce_unit_weight_gcms_to_counts() {
    // One far-apart point group per (label, prediction) pair, so every
    // grid cell holds points of at most one pair and the min inside a
    // cell is the pair's own count.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let c = 3;
    let mut points = Vec::new();
    for y in 0..c {
        for yh in 0..c {
            for _ in 0..(y + 1 + 2 * yh) {
                points.push(EmbeddedPoint {
                    embedding: vec![
                        30.0 * y as f64 + rng.gen_range(-0.05..0.05),
                        30.0 * yh as f64 + rng.gen_range(-0.05..0.05),
                    ],
                    true_label: y,
                    predicted_label: yh,
                });
            }
        }
    }
    let ds = EmbeddedDataset::with_index_names(points, c).unwrap();
    let counts = count_confusion(&ds).unwrap();
    let proj = fit_pca(&ds, 2).unwrap();
    let pds = project(&proj, &ds).unwrap();
    let grid = build_grid(&pds, &[0.5, 0.5]).unwrap();
    let r = grid.cell_volume();
    let unit = 1.0 / r.sqrt();
    let w = WeightVectors::new(vec![unit; c], vec![unit; c]).unwrap();
    let g = gcm(&pds, &grid, &w).unwrap();
    for i in 0..c {
        for j in 0..c {
            assert!((g.get(i, j) - r * counts.get(i, j)).abs() <= 1e-9);
        }
    }
}

#[test]
fn dirichlet_counts_respect_floor_and_alpha_ordering() {
    let levels = [10.0, 3.0, 1.0, 0.3, 0.1];
    let mut mean_ratios = Vec::new();
    for &alpha in &levels {
        let mut ratio_sum = 0.0;
        for seed in 0..1000u64 {
            let counts = sample_class_counts(&HeterogeneityConfig {
                alpha,
                num_classes: 10,
                base_per_class: 100,
                floor_fraction: 0.15,
                seed,
            })
            .unwrap();
            assert_eq!(counts.iter().sum::<u64>(), 1000);
            assert!(counts.iter().all(|&n| n >= 15));
            if seed < 200 {
                let max = *counts.iter().max().unwrap() as f64;
                let min = *counts.iter().min().unwrap() as f64;
                ratio_sum += max / min;
            }
        }
        mean_ratios.push(ratio_sum / 200.0);
    }
    for pair in mean_ratios.windows(2) {
        assert!(
            pair[1] >= pair[0],
            "imbalance should grow as alpha falls: {mean_ratios:?}"
        );
    }
}

#[test]
fn synthetic_generators_are_seed_reproducible() {
    let counts_cfg = HeterogeneityConfig {
        alpha: 0.5,
        num_classes: 6,
        base_per_class: 80,
        floor_fraction: 0.2,
        seed: 99,
    };
    let counts = sample_class_counts(&counts_cfg).unwrap();
    assert_eq!(counts, sample_class_counts(&counts_cfg).unwrap());

    let kernel = sample_similarity_kernel(6, 0.3, &[(0, 1)], 77).unwrap();
    let kernel2 = sample_similarity_kernel(6, 0.3, &[(0, 1)], 77).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(kernel.get(i, j), kernel2.get(i, j));
        }
    }

    let sim = simulate_confusion(&kernel, &counts, &vec![1.0; 6], 55).unwrap();
    let sim2 = simulate_confusion(&kernel, &counts, &vec![1.0; 6], 55).unwrap();
    assert_eq!(sim.data(), sim2.data());

    let centroids = sample_centroids(6, 4, 2.0, 33).unwrap();
    assert_eq!(centroids, sample_centroids(6, 4, 2.0, 33).unwrap());
    let spec = EmbeddingSpec {
        centroids,
        spread: 1.5,
        counts: counts.clone(),
        seed: 44,
    };
    let ds = generate_embeddings(&spec).unwrap();
    let ds2 = generate_embeddings(&spec).unwrap();
    assert_eq!(ds.len(), ds2.len());
    for (a, b) in ds.points().iter().zip(ds2.points()) {
        assert_eq!(a.embedding, b.embedding);
        assert_eq!(a.true_label, b.true_label);
        assert_eq!(a.predicted_label, b.predicted_label);
    }

    // Counting the generated pairs by hand must agree exactly.
    let counted = count_confusion(&ds).unwrap();
    let mut tally: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for p in ds.points() {
        *tally.entry((p.true_label, p.predicted_label)).or_insert(0) += 1;
    }
    for i in 0..6 {
        for j in 0..6 {
            let want = *tally.get(&(i, j)).unwrap_or(&0) as f64;
            assert_eq!(counted.get(i, j), want);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bistochastic_fixed_point_and_diagonal_invariance(
        c in 2usize..=5,
        raw in prop::collection::vec(0.1f64..10.0, 25),
        alpha in prop::collection::vec(0.1f64..10.0, 5),
        beta in prop::collection::vec(0.1f64..10.0, 5),
    ) {
        let rows: Vec<Vec<f64>> = (0..c).map(|i| raw[i * 5..i * 5 + c].to_vec()).collect();
        let m = ConfusionMatrix::with_index_labels(rows).unwrap();
        let cfg = IpfConfig::default();
        let bis = bistochastic_normalize(&m, 1e-15, cfg).unwrap();
        let twice = bistochastic_normalize(&bis, 1e-15, cfg).unwrap();
        prop_assert!(l1_diff(&twice, &bis) <= 1e-8);
        let scaled = scale_cols(&scale_rows(&m, &alpha[..c]), &beta[..c]);
        let bis_scaled = bistochastic_normalize(&scaled, 1e-15, cfg).unwrap();
        prop_assert!(l1_diff(&bis_scaled, &bis) <= 1e-8);
    }

    #[test]
    fn sorted_quantiles_are_monotone(
        mut values in prop::collection::vec(0.0f64..1.0, 1..40),
        q1 in 0.0f64..=1.0,
        q2 in 0.0f64..=1.0,
    ) {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let a = quantile_sorted(&values, lo).unwrap();
        let b = quantile_sorted(&values, hi).unwrap();
        prop_assert!(a <= b);
    }
}
