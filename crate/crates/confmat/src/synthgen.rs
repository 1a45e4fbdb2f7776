//! Synthetic data generation standing in for a trained classifier:
//! Dirichlet-heterogeneous class counts with a per-class floor, a
//! row-stochastic class-similarity kernel, multinomial confusion
//! simulation under prediction bias, and Gaussian-cluster embeddings
//! classified by nearest centroid.
//!
//! All sampling uses a counter-based seedable generator so results are
//! identical across platforms and runs. Each operation draws from its
//! own stream of the caller's seed:
//!
//! * stream 1: class counts
//! * stream 2: similarity kernel noise
//! * stream 3: confusion row draws
//! * stream 4: embedding coordinates and nearest-centroid tie breaks
//! * stream 5: centroid positions

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{EmbeddedDataset, EmbeddedPoint};
use crate::matrix::ConfusionMatrix;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dirichlet class-count sampler configuration. `alpha` controls
/// heterogeneity (smaller is more extreme); every class keeps at least
/// `floor_fraction * base_per_class` samples.
#[derive(Debug, Clone)]
pub struct HeterogeneityConfig {
    pub alpha: f64,
    pub num_classes: usize,
    pub base_per_class: u64,
    pub floor_fraction: f64,
    pub seed: u64,
}

impl HeterogeneityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.base_per_class == 0 {
            return Err(Error::InvalidParameter(
                "base_per_class must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.floor_fraction) {
            return Err(Error::InvalidParameter(format!(
                "floor_fraction must be in [0,1), got {}",
                self.floor_fraction
            )));
        }
        Ok(())
    }
}

/// Samples per-class counts: each class first receives its floor of
/// `floor(floor_fraction * base_per_class)` samples, then the leftover
/// budget is distributed multinomially with Dirichlet(alpha)-sampled
/// probabilities. Totals always equal `num_classes * base_per_class`.
pub fn sample_class_counts(cfg: &HeterogeneityConfig) -> Result<Vec<u64>> {
    cfg.validate()?;
    let c = cfg.num_classes;
    let floor = (cfg.floor_fraction * cfg.base_per_class as f64).floor() as u64;
    let budget = c as u64 * cfg.base_per_class - c as u64 * floor;
    let mut rng = stream_rng(cfg.seed, 1);
    let gamma = Gamma::new(cfg.alpha, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("bad Dirichlet concentration: {}", e)))?;
    let mut probs: Vec<f64> = (0..c).map(|_| gamma.sample(&mut rng)).collect();
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        for p in &mut probs {
            *p /= sum;
        }
    } else {
        // All gamma draws underflowed (possible at tiny alpha); fall
        // back to a balanced allocation rather than dividing by zero.
        probs = vec![1.0 / c as f64; c];
    }
    let mut counts = vec![floor; c];
    for _ in 0..budget {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = c - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = k;
                break;
            }
        }
        counts[chosen] += 1;
    }
    Ok(counts)
}

/// Row-stochastic class-similarity kernel: entry (i, j) is the
/// probability the synthetic classifier predicts j for a class-i
/// sample. Diagonally dominant by construction.
#[derive(Debug, Clone)]
pub struct SimilarityKernel {
    s: Vec<f64>,
    c: usize,
}

impl SimilarityKernel {
    /// Validates and wraps an explicit kernel matrix.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.len();
        if c < 2 {
            return Err(Error::InvalidParameter(format!(
                "kernel needs at least 2 classes, got {}",
                c
            )));
        }
        let mut s = Vec::with_capacity(c * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::ShapeMismatch(format!(
                    "kernel row {} has {} entries, expected {}",
                    i,
                    row.len(),
                    c
                )));
            }
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "kernel entry ({}, {}) = {} invalid",
                        i, j, x
                    )));
                }
                sum += x;
                if i != j && x >= row[i] {
                    return Err(Error::InvalidParameter(format!(
                        "kernel row {} is not diagonally dominant",
                        i
                    )));
                }
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "kernel row {} sums to {}, expected 1",
                    i, sum
                )));
            }
            s.extend_from_slice(row);
        }
        Ok(SimilarityKernel { s, c })
    }

    /// The exact identity kernel: every sample predicted correctly.
    pub fn identity(c: usize) -> Result<Self> {
        let rows = (0..c)
            .map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(rows)
    }

    pub fn dim(&self) -> usize {
        self.c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.c + j]
    }
}

/// Samples a similarity kernel: every off-diagonal entry gets noise
/// 0.01 * U(0.5, 1.5); each confusable pair (a, b) additionally
/// receives `similarity_strength / 2` on both S_ab and S_ba; diagonals
/// absorb the remainder so rows sum to exactly 1.
pub fn sample_similarity_kernel(
    c: usize,
    similarity_strength: f64,
    confusable_pairs: &[(usize, usize)],
    seed: u64,
) -> Result<SimilarityKernel> {
    if c < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {}",
            c
        )));
    }
    if !(0.0..1.0).contains(&similarity_strength) {
        return Err(Error::InvalidParameter(format!(
            "similarity_strength must be in [0,1), got {}",
            similarity_strength
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &(a, b) in confusable_pairs {
        if a >= c || b >= c {
            return Err(Error::InvalidParameter(format!(
                "confusable pair ({}, {}) outside 0..{}",
                a, b, c
            )));
        }
        if a == b {
            return Err(Error::InvalidParameter(format!(
                "confusable pair ({}, {}) is degenerate",
                a, b
            )));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(Error::InvalidParameter(format!(
                "confusable pair ({}, {}) listed twice",
                a, b
            )));
        }
    }
    let mut rng = stream_rng(seed, 2);
    let mut s = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            if i != j {
                s[i * c + j] = 0.01 * rng.gen_range(0.5..1.5);
            }
        }
    }
    for &(a, b) in confusable_pairs {
        s[a * c + b] += similarity_strength / 2.0;
        s[b * c + a] += similarity_strength / 2.0;
    }
    for i in 0..c {
        let off: f64 = (0..c).filter(|&j| j != i).map(|j| s[i * c + j]).sum();
        s[i * c + i] = 1.0 - off;
    }
    // A class in several pairs can accumulate more partner mass than a
    // dominant diagonal allows; surface that as a parameter problem.
    for i in 0..c {
        let diag = s[i * c + i];
        for j in 0..c {
            if i != j && s[i * c + j] >= diag {
                return Err(Error::InvalidParameter(format!(
                    "similarity_strength {} leaves row {} without a dominant diagonal",
                    similarity_strength, i
                )));
            }
        }
    }
    Ok(SimilarityKernel { s, c })
}

/// Simulates a confusion matrix: row i is a multinomial draw with
/// `label_counts[i]` trials over probabilities proportional to
/// S_ij * bias_j. Bias all-ones leaves the kernel's structure intact.
pub fn simulate_confusion(
    kernel: &SimilarityKernel,
    label_counts: &[u64],
    prediction_bias: &[f64],
    seed: u64,
) -> Result<ConfusionMatrix> {
    let c = kernel.dim();
    if label_counts.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{} label counts for a {}-class kernel",
            label_counts.len(),
            c
        )));
    }
    if prediction_bias.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{} bias entries for a {}-class kernel",
            prediction_bias.len(),
            c
        )));
    }
    for &b in prediction_bias {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::NonPositiveInput(format!(
                "prediction bias must be strictly positive, got {}",
                b
            )));
        }
    }
    if label_counts.iter().all(|&n| n == 0) {
        return Err(Error::DegenerateInput(
            "all label counts are zero; nothing to simulate".into(),
        ));
    }
    let mut rng = stream_rng(seed, 3);
    let mut data = vec![0.0; c * c];
    for i in 0..c {
        let weights: Vec<f64> = (0..c).map(|j| kernel.get(i, j) * prediction_bias[j]).collect();
        let total: f64 = weights.iter().sum();
        for _ in 0..label_counts[i] {
            let u: f64 = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = c - 1;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = j;
                    break;
                }
            }
            data[i * c + chosen] += 1.0;
        }
    }
    let labels = (0..c).map(|i| i.to_string()).collect();
    ConfusionMatrix::from_flat(labels, data)
}

/// Gaussian-cluster embedding recipe: `counts[i]` points isotropically
/// spread around `centroids[i]`, classified by nearest centroid.
#[derive(Debug, Clone)]
pub struct EmbeddingSpec {
    pub centroids: Vec<Vec<f64>>,
    pub spread: f64,
    pub counts: Vec<u64>,
    pub seed: u64,
}

impl EmbeddingSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.centroids.len();
        if c < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 centroids, got {}",
                c
            )));
        }
        let dim = self.centroids[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter("zero-dimensional centroids".into()));
        }
        for (i, cent) in self.centroids.iter().enumerate() {
            if cent.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "centroid {} has dimension {}, expected {}",
                    i,
                    cent.len(),
                    dim
                )));
            }
            if cent.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "centroid {} has a non-finite coordinate",
                    i
                )));
            }
        }
        if !(self.spread > 0.0) || !self.spread.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "spread must be positive and finite, got {}",
                self.spread
            )));
        }
        if self.counts.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {} centroids",
                self.counts.len(),
                c
            )));
        }
        if self.counts.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter(
                "every class needs at least one point".into(),
            ));
        }
        Ok(())
    }
}

/// Generates the embedding dataset described by `spec`. Exact distance
/// ties (coincident centroids) are broken uniformly at random so tied
/// centroids share their points rather than one taking everything.
pub fn generate_embeddings(spec: &EmbeddingSpec) -> Result<EmbeddedDataset> {
    spec.validate()?;
    let c = spec.centroids.len();
    let mut rng = stream_rng(spec.seed, 4);
    let mut points = Vec::with_capacity(spec.counts.iter().sum::<u64>() as usize);
    let mut tied = Vec::with_capacity(c);
    for (label, centroid) in spec.centroids.iter().enumerate() {
        for _ in 0..spec.counts[label] {
            let embedding: Vec<f64> = centroid
                .iter()
                .map(|&m| m + spec.spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut best = f64::INFINITY;
            tied.clear();
            for (k, other) in spec.centroids.iter().enumerate() {
                let d2: f64 = embedding
                    .iter()
                    .zip(other)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if d2 < best {
                    best = d2;
                    tied.clear();
                    tied.push(k);
                } else if d2 == best {
                    tied.push(k);
                }
            }
            let predicted_label = if tied.len() == 1 {
                tied[0]
            } else {
                tied[rng.gen_range(0..tied.len())]
            };
            points.push(EmbeddedPoint { embedding, true_label: label, predicted_label });
        }
    }
    EmbeddedDataset::with_index_names(points, c)
}

/// Samples `c` centroids with independent N(0, scale^2) coordinates.
pub fn sample_centroids(c: usize, dim: usize, scale: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if c < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 centroids, got {}",
            c
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("zero-dimensional centroids".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "scale must be positive and finite, got {}",
            scale
        )));
    }
    let mut rng = stream_rng(seed, 5);
    Ok((0..c)
        .map(|_| {
            (0..dim)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect())
}
