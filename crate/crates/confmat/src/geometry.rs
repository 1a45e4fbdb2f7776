//! Latent-space pipeline: PCA projection, histogram grids sized by
//! Scott's rule, weighted sparse histograms, and the geometric confusion
//! matrix (GCM) that measures cluster overlap in the projected space.
//!
//! A point contributes weight 1/(r * l_y * p_yhat) to its grid cell,
//! where r is the cell volume and (l, p) are per-class weight vectors
//! indexed by the point's true and predicted label. Choosing (l, p) as
//! all-ones-over-sqrt(r), (cluster sizes, 1), (1, prediction-cluster
//! sizes), or the inverted scaling diagonals (a, b) makes the resulting
//! GCM mimic the all, row, col, and bistochastic normalizations.
//!
//! Everything here is deterministic: no randomness, sparse cells in
//! ordered maps, fixed summation order. The same dataset always yields
//! the bit-identical GCM.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::ConfusionMatrix;
use crate::scaling::{scaling_weights, IpfConfig};

/// One labeled, classified point in the ambient embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPoint {
    pub embedding: Vec<f64>,
    pub true_label: usize,
    pub predicted_label: usize,
}

/// Point cloud with class names shared by true and predicted labels.
#[derive(Debug, Clone)]
pub struct EmbeddedDataset {
    points: Vec<EmbeddedPoint>,
    dim: usize,
    class_names: Vec<String>,
}

impl EmbeddedDataset {
    pub fn new(points: Vec<EmbeddedPoint>, class_names: Vec<String>) -> Result<Self> {
        let c = class_names.len();
        if c < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {}",
                c
            )));
        }
        let first = points
            .first()
            .ok_or_else(|| Error::DegenerateInput("empty dataset".into()))?;
        let dim = first.embedding.len();
        if dim == 0 {
            return Err(Error::DegenerateInput("zero-dimensional embeddings".into()));
        }
        for (idx, p) in points.iter().enumerate() {
            if p.embedding.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "point {} has dimension {}, expected {}",
                    idx,
                    p.embedding.len(),
                    dim
                )));
            }
            if p.true_label >= c || p.predicted_label >= c {
                return Err(Error::InvalidParameter(format!(
                    "point {} has label ({}, {}) outside 0..{}",
                    idx, p.true_label, p.predicted_label, c
                )));
            }
            if p.embedding.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "point {} has a non-finite coordinate",
                    idx
                )));
            }
        }
        Ok(EmbeddedDataset { points, dim, class_names })
    }

    /// Convenience constructor naming classes "0", "1", ...
    pub fn with_index_names(points: Vec<EmbeddedPoint>, num_classes: usize) -> Result<Self> {
        let names = (0..num_classes).map(|i| i.to_string()).collect();
        Self::new(points, names)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn points(&self) -> &[EmbeddedPoint] {
        &self.points
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
}

/// Affine map onto the top principal directions: x -> basis * (x - mean).
#[derive(Debug, Clone)]
pub struct Projection {
    mean: Vec<f64>,
    /// m rows, each an orthonormal direction of length n.
    basis: Vec<Vec<f64>>,
}

impl Projection {
    pub fn output_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "point has dimension {}, projection expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self
            .basis
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((b, xi), mi)| b * (xi - mi))
                    .sum()
            })
            .collect())
    }
}

/// A point after projection, keeping its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub coords: Vec<f64>,
    pub true_label: usize,
    pub predicted_label: usize,
}

/// Projected point cloud; the input to grids and histograms.
#[derive(Debug, Clone)]
pub struct ProjectedDataset {
    points: Vec<ProjectedPoint>,
    dim: usize,
    class_names: Vec<String>,
}

impl ProjectedDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn points(&self) -> &[ProjectedPoint] {
        &self.points
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
}

/// Regular hyperrectangle grid anchored at the data minimum. A point's
/// cell index is floor((x_k - origin_k) / width_k) per dimension;
/// points on the upper boundary of the last cell fold inward so every
/// point lands in exactly one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    origin: Vec<f64>,
    widths: Vec<f64>,
    cells: Vec<usize>,
}

impl Grid {
    pub fn new(origin: Vec<f64>, widths: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if origin.len() != widths.len() || origin.len() != cells.len() {
            return Err(Error::ShapeMismatch(format!(
                "origin/widths/cells lengths {}, {}, {} differ",
                origin.len(),
                widths.len(),
                cells.len()
            )));
        }
        if origin.is_empty() {
            return Err(Error::InvalidParameter("zero-dimensional grid".into()));
        }
        for &w in &widths {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "grid widths must be positive and finite, got {}",
                    w
                )));
            }
        }
        if cells.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter("grid has a zero-cell dimension".into()));
        }
        Ok(Grid { origin, widths, cells })
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Volume r of a single cell: the product of the widths.
    pub fn cell_volume(&self) -> f64 {
        self.widths.iter().product()
    }

    /// Cell index of a point, clamped into the grid extent.
    pub fn cell_of(&self, coords: &[f64]) -> Vec<usize> {
        coords
            .iter()
            .zip(&self.origin)
            .zip(&self.widths)
            .zip(&self.cells)
            .map(|(((x, o), w), &n)| {
                let idx = ((x - o) / w).floor();
                (idx.max(0.0) as usize).min(n - 1)
            })
            .collect()
    }
}

/// Per-class weight vectors (l for true labels, p for predictions).
#[derive(Debug, Clone)]
pub struct WeightVectors {
    l: Vec<f64>,
    p: Vec<f64>,
}

impl WeightVectors {
    pub fn new(l: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        for &x in l.iter().chain(&p) {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::NonPositiveInput(format!(
                    "weight vectors must be strictly positive, got {}",
                    x
                )));
            }
        }
        Ok(WeightVectors { l, p })
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }
}

/// Which cluster of a projected dataset a histogram is built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterSelector {
    ByLabel(usize),
    ByPrediction(usize),
}

/// Sparse weighted histogram over a grid. Heights sum the weights
/// 1/(r * l_y * p_yhat) of the cluster points in each cell; absent
/// cells are zero.
#[derive(Debug, Clone)]
pub struct ScaledHistogram {
    grid: Grid,
    heights: BTreeMap<Vec<usize>, f64>,
}

impl ScaledHistogram {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn heights(&self) -> &BTreeMap<Vec<usize>, f64> {
        &self.heights
    }

    /// Lebesgue volume under the histogram: r * sum of heights, which
    /// telescopes to the per-point sum of 1/(l_y * p_yhat).
    pub fn volume(&self) -> f64 {
        self.grid.cell_volume() * self.heights.values().sum::<f64>()
    }
}

/// Fits the top-m principal directions of the embeddings. Each
/// direction is sign-fixed so its largest-magnitude coordinate is
/// positive, making the projection deterministic.
pub fn fit_pca(ds: &EmbeddedDataset, m: usize) -> Result<Projection> {
    let n = ds.dim();
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "projection dimension {} must be in 1..={}",
            m, n
        )));
    }
    let count = ds.len();
    if count < 2 {
        return Err(Error::DegenerateInput(
            "PCA needs at least 2 points".into(),
        ));
    }
    let mut mean = vec![0.0; n];
    for p in ds.points() {
        for (acc, x) in mean.iter_mut().zip(&p.embedding) {
            *acc += x;
        }
    }
    for acc in &mut mean {
        *acc /= count as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for p in ds.points() {
        let d = DVector::from_iterator(n, p.embedding.iter().zip(&mean).map(|(x, m)| x - m));
        cov += &d * d.transpose();
    }
    cov /= (count - 1) as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut basis = Vec::with_capacity(m);
    for &k in order.iter().take(m) {
        let col = eig.eigenvectors.column(k);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let mut arg = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[arg].abs() {
                arg = i;
            }
        }
        if v[arg] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        basis.push(v);
    }
    Ok(Projection { mean, basis })
}

/// Projects every point, carrying labels through unchanged.
pub fn project(proj: &Projection, ds: &EmbeddedDataset) -> Result<ProjectedDataset> {
    if proj.input_dim() != ds.dim() {
        return Err(Error::ShapeMismatch(format!(
            "projection expects dimension {}, dataset has {}",
            proj.input_dim(),
            ds.dim()
        )));
    }
    let points = ds
        .points()
        .iter()
        .map(|p| {
            Ok(ProjectedPoint {
                coords: proj.apply(&p.embedding)?,
                true_label: p.true_label,
                predicted_label: p.predicted_label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectedDataset {
        points,
        dim: proj.output_dim(),
        class_names: ds.class_names().to_vec(),
    })
}

/// Scott's-rule bin widths: 3.5 * sigma_k * n^(-1/(2+m)) per dimension,
/// with sigma over n-1. A zero-variance dimension gets a sentinel width
/// of 1, which spans its degenerate range in a single bin.
pub fn scott_bin_widths(pds: &ProjectedDataset, m: usize) -> Result<Vec<f64>> {
    let n = pds.len();
    if n < 2 {
        return Err(Error::DegenerateInput(
            "bin widths need at least 2 points".into(),
        ));
    }
    let factor = 3.5 * (n as f64).powf(-1.0 / (2.0 + m as f64));
    let mut widths = Vec::with_capacity(pds.dim());
    for k in 0..pds.dim() {
        let mean: f64 = pds.points().iter().map(|p| p.coords[k]).sum::<f64>() / n as f64;
        let ss: f64 = pds
            .points()
            .iter()
            .map(|p| (p.coords[k] - mean).powi(2))
            .sum();
        let sigma = (ss / (n - 1) as f64).sqrt();
        widths.push(if sigma > 0.0 { factor * sigma } else { 1.0 });
    }
    Ok(widths)
}

/// Builds the grid covering the points: origin at the per-dimension
/// minimum, enough cells to reach the maximum.
pub fn build_grid(pds: &ProjectedDataset, widths: &[f64]) -> Result<Grid> {
    if pds.is_empty() {
        return Err(Error::DegenerateInput("cannot grid an empty point set".into()));
    }
    if widths.len() != pds.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} widths for {}-dimensional points",
            widths.len(),
            pds.dim()
        )));
    }
    let dim = pds.dim();
    let mut origin = vec![f64::INFINITY; dim];
    let mut top = vec![f64::NEG_INFINITY; dim];
    for p in pds.points() {
        for k in 0..dim {
            origin[k] = origin[k].min(p.coords[k]);
            top[k] = top[k].max(p.coords[k]);
        }
    }
    let cells = (0..dim)
        .map(|k| {
            let span = (top[k] - origin[k]) / widths[k];
            (span.ceil() as usize).max(1)
        })
        .collect();
    Grid::new(origin, widths.to_vec(), cells)
}

/// Accumulates the scaled histogram of one cluster: each cluster point
/// adds 1/(r * l_y * p_yhat) to the height of its cell. An empty
/// cluster yields an empty histogram of volume zero.
pub fn build_scaled_histogram(
    pds: &ProjectedDataset,
    cluster: ClusterSelector,
    w: &WeightVectors,
    grid: &Grid,
) -> Result<ScaledHistogram> {
    let c = pds.num_classes();
    if w.l().len() != c || w.p().len() != c {
        return Err(Error::ShapeMismatch(format!(
            "weight vectors have lengths {} and {}, expected {}",
            w.l().len(),
            w.p().len(),
            c
        )));
    }
    if grid.dim() != pds.dim() {
        return Err(Error::ShapeMismatch(format!(
            "grid dimension {} vs points dimension {}",
            grid.dim(),
            pds.dim()
        )));
    }
    let r = grid.cell_volume();
    let mut heights = BTreeMap::new();
    for p in pds.points() {
        let selected = match cluster {
            ClusterSelector::ByLabel(i) => p.true_label == i,
            ClusterSelector::ByPrediction(j) => p.predicted_label == j,
        };
        if !selected {
            continue;
        }
        let weight = 1.0 / (r * w.l()[p.true_label] * w.p()[p.predicted_label]);
        *heights.entry(grid.cell_of(&p.coords)).or_insert(0.0) += weight;
    }
    Ok(ScaledHistogram { grid: grid.clone(), heights })
}

/// Lebesgue volume under a scaled histogram (see
/// [`ScaledHistogram::volume`]).
pub fn histogram_volume(h: &ScaledHistogram) -> f64 {
    h.volume()
}

/// Geometric confusion matrix: entry (i, j) is the Lebesgue overlap of
/// the label-i and prediction-j scaled histograms, i.e. the cell-wise
/// sum of r * min(height_i, height_j).
pub fn gcm(pds: &ProjectedDataset, grid: &Grid, w: &WeightVectors) -> Result<ConfusionMatrix> {
    let c = pds.num_classes();
    let mut label_hists = Vec::with_capacity(c);
    let mut pred_hists = Vec::with_capacity(c);
    for k in 0..c {
        label_hists.push(build_scaled_histogram(pds, ClusterSelector::ByLabel(k), w, grid)?);
        pred_hists.push(build_scaled_histogram(
            pds,
            ClusterSelector::ByPrediction(k),
            w,
            grid,
        )?);
    }
    let r = grid.cell_volume();
    let mut data = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for (cell, &hi) in label_hists[i].heights() {
                if let Some(&hj) = pred_hists[j].heights().get(cell) {
                    acc += r * hi.min(hj);
                }
            }
            data[i * c + j] = acc;
        }
    }
    ConfusionMatrix::from_flat(pds.class_names().to_vec(), data)
}

/// The four weightings under which a GCM mimics a normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GcmVariantKind {
    AllLike,
    RowLike,
    ColLike,
    BisLike,
}

impl GcmVariantKind {
    pub const KINDS: [GcmVariantKind; 4] = [
        GcmVariantKind::AllLike,
        GcmVariantKind::RowLike,
        GcmVariantKind::ColLike,
        GcmVariantKind::BisLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GcmVariantKind::AllLike => "all_like",
            GcmVariantKind::RowLike => "row_like",
            GcmVariantKind::ColLike => "col_like",
            GcmVariantKind::BisLike => "bis_like",
        }
    }
}

impl fmt::Display for GcmVariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The four GCMs of one dataset, keyed by weighting.
#[derive(Debug, Clone)]
pub struct GcmVariants {
    pub all_like: ConfusionMatrix,
    pub row_like: ConfusionMatrix,
    pub col_like: ConfusionMatrix,
    pub bis_like: ConfusionMatrix,
}

impl GcmVariants {
    pub fn get(&self, kind: GcmVariantKind) -> &ConfusionMatrix {
        match kind {
            GcmVariantKind::AllLike => &self.all_like,
            GcmVariantKind::RowLike => &self.row_like,
            GcmVariantKind::ColLike => &self.col_like,
            GcmVariantKind::BisLike => &self.bis_like,
        }
    }
}

/// Tallies the (true, predicted) pairs of a dataset into counts.
pub fn count_confusion(ds: &EmbeddedDataset) -> Result<ConfusionMatrix> {
    let c = ds.num_classes();
    let mut data = vec![0.0; c * c];
    for p in ds.points() {
        data[p.true_label * c + p.predicted_label] += 1.0;
    }
    ConfusionMatrix::from_flat(ds.class_names().to_vec(), data)
}

/// Runs the full pipeline once (PCA to m dimensions, Scott grid) and
/// evaluates the GCM under all four weightings. `counts` must be the
/// confusion matrix tallied from the dataset itself; the row and column
/// sums are the cluster sizes the RowLike and ColLike weightings divide
/// by, so every class must appear at least once as a label and as a
/// prediction.
pub fn gcm_variants(
    ds: &EmbeddedDataset,
    counts: &ConfusionMatrix,
    m: usize,
    cfg: IpfConfig,
) -> Result<GcmVariants> {
    let tallied = count_confusion(ds)?;
    if counts.labels() != tallied.labels() || counts.data() != tallied.data() {
        return Err(Error::InvalidParameter(
            "counts matrix does not match the dataset's (label, prediction) tallies".into(),
        ));
    }
    let c = ds.num_classes();
    let label_sizes = counts.row_sums();
    let pred_sizes = counts.col_sums();
    for (k, &s) in label_sizes.iter().enumerate() {
        if s <= 0.0 {
            return Err(Error::EmptyCluster(format!(
                "true class {:?} has no points",
                ds.class_names()[k]
            )));
        }
    }
    for (k, &s) in pred_sizes.iter().enumerate() {
        if s <= 0.0 {
            return Err(Error::EmptyCluster(format!(
                "predicted class {:?} has no points",
                ds.class_names()[k]
            )));
        }
    }
    let proj = fit_pca(ds, m)?;
    let pds = project(&proj, ds)?;
    let widths = scott_bin_widths(&pds, m)?;
    let grid = build_grid(&pds, &widths)?;
    let inv_sqrt_r = 1.0 / grid.cell_volume().sqrt();
    let ones = vec![1.0; c];
    let sw = scaling_weights(counts, counts.default_eps(), cfg)?;
    let all_w = WeightVectors::new(vec![inv_sqrt_r; c], vec![inv_sqrt_r; c])?;
    let row_w = WeightVectors::new(label_sizes, ones.clone())?;
    let col_w = WeightVectors::new(ones, pred_sizes)?;
    let bis_w = WeightVectors::new(sw.a, sw.b)?;
    Ok(GcmVariants {
        all_like: gcm(&pds, &grid, &all_w)?,
        row_like: gcm(&pds, &grid, &row_w)?,
        col_like: gcm(&pds, &grid, &col_w)?,
        bis_like: gcm(&pds, &grid, &bis_w)?,
    })
}
