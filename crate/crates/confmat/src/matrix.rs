//! Core confusion-matrix type, smoothing, the three standard
//! normalizations, and the comparison metrics used everywhere else.
//!
//! Rows index true classes, columns predicted classes. Entries are
//! nonnegative reals: raw counts straight from a classifier, or masses
//! after normalization. The type does not care which; operations state
//! their own requirements (e.g. strict positivity for KL).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Square nonnegative matrix with class labels naming rows and columns
/// in the same order. Invariants enforced at construction: C >= 2,
/// every entry finite and >= 0, total mass > 0, labels unique.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    /// Row-major, length C*C.
    data: Vec<f64>,
}

impl ConfusionMatrix {
    /// Builds a matrix from row vectors.
    pub fn from_rows(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = labels.len();
        if rows.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "{} labels but {} rows",
                c,
                rows.len()
            )));
        }
        let mut data = Vec::with_capacity(c * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::ShapeMismatch(format!(
                    "row {} has {} entries, expected {}",
                    i,
                    row.len(),
                    c
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(labels, data)
    }

    /// Builds a matrix from a row-major slice of length C*C.
    pub fn from_flat(labels: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let c = labels.len();
        if c < 2 {
            return Err(Error::InvalidParameter(format!(
                "confusion matrix needs at least 2 classes, got {}",
                c
            )));
        }
        if data.len() != c * c {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {0}x{0} matrix, expected {}",
                data.len(),
                c * c
            )));
        }
        for i in 0..c {
            for j in (i + 1)..c {
                if labels[i] == labels[j] {
                    return Err(Error::InvalidParameter(format!(
                        "duplicate class label {:?}",
                        labels[i]
                    )));
                }
            }
        }
        let mut total = 0.0;
        for &x in &data {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "entries must be finite and nonnegative, got {}",
                    x
                )));
            }
            total += x;
        }
        if total <= 0.0 {
            return Err(Error::DegenerateInput(
                "matrix has zero total mass".into(),
            ));
        }
        Ok(ConfusionMatrix { labels, data })
    }

    /// Builds a matrix with labels "0", "1", ... for quick construction.
    pub fn with_index_labels(rows: Vec<Vec<f64>>) -> Result<Self> {
        let labels = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::from_rows(labels, rows)
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Row-major entries, length C*C.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim() + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let c = self.dim();
        (0..c).map(|i| self.data[i * c..(i + 1) * c].iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let c = self.dim();
        let mut sums = vec![0.0; c];
        for i in 0..c {
            for j in 0..c {
                sums[j] += self.data[i * c + j];
            }
        }
        sums
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Adds eps to every entry, making the matrix strictly positive.
    pub fn smooth(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing eps must be positive and finite, got {}",
                eps
            )));
        }
        let data = self.data.iter().map(|&x| x + eps).collect();
        Ok(ConfusionMatrix { labels: self.labels.clone(), data })
    }

    /// Default smoothing amount: 1e-6 of the mean entry, floored at 1e-12
    /// so matrices with tiny mass still become strictly positive.
    pub fn default_eps(&self) -> f64 {
        let c = self.dim() as f64;
        (1e-6 * self.total() / (c * c)).max(1e-12)
    }

    /// Divides each row by its sum. Errors on a zero row; smooth first
    /// when rows may be empty.
    pub fn row_normalize(&self) -> Result<Self> {
        let c = self.dim();
        let sums = self.row_sums();
        for (i, &s) in sums.iter().enumerate() {
            if s <= 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "row {} ({:?}) has zero sum",
                    i, self.labels[i]
                )));
            }
        }
        let mut data = self.data.clone();
        for i in 0..c {
            for j in 0..c {
                data[i * c + j] /= sums[i];
            }
        }
        Ok(ConfusionMatrix { labels: self.labels.clone(), data })
    }

    /// Divides each column by its sum. Errors on a zero column.
    pub fn col_normalize(&self) -> Result<Self> {
        let c = self.dim();
        let sums = self.col_sums();
        for (j, &s) in sums.iter().enumerate() {
            if s <= 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "column {} ({:?}) has zero sum",
                    j, self.labels[j]
                )));
            }
        }
        let mut data = self.data.clone();
        for i in 0..c {
            for j in 0..c {
                data[i * c + j] /= sums[j];
            }
        }
        Ok(ConfusionMatrix { labels: self.labels.clone(), data })
    }

    /// Divides every entry by the total mass.
    pub fn all_normalize(&self) -> Result<Self> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::DegenerateInput(
                "matrix has zero total mass".into(),
            ));
        }
        let data = self.data.iter().map(|&x| x / total).collect();
        Ok(ConfusionMatrix { labels: self.labels.clone(), data })
    }
}

/// The four normalizations this crate compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NormalizationKind {
    Row,
    Col,
    All,
    Bis,
}

impl NormalizationKind {
    pub const KINDS: [NormalizationKind; 4] = [
        NormalizationKind::Row,
        NormalizationKind::Col,
        NormalizationKind::All,
        NormalizationKind::Bis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormalizationKind::Row => "row",
            NormalizationKind::Col => "col",
            NormalizationKind::All => "all",
            NormalizationKind::Bis => "bis",
        }
    }
}

impl fmt::Display for NormalizationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormalizationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(NormalizationKind::Row),
            "col" => Ok(NormalizationKind::Col),
            "all" => Ok(NormalizationKind::All),
            "bis" => Ok(NormalizationKind::Bis),
            _ => Err(Error::Parse(format!(
                "unknown normalization {:?}, expected row|col|all|bis",
                s
            ))),
        }
    }
}

fn check_same_shape(p: &ConfusionMatrix, q: &ConfusionMatrix) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{0} vs {}x{1}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// Generalized I-divergence sum(P ln(P/M) - P + M) with 0 ln 0 := 0.
/// Always >= 0, and 0 exactly when P = M. M must be strictly positive.
pub fn kl_divergence(p: &ConfusionMatrix, m: &ConfusionMatrix) -> Result<f64> {
    check_same_shape(p, m)?;
    let mut acc = 0.0;
    for (&pe, &me) in p.data().iter().zip(m.data()) {
        if me <= 0.0 {
            return Err(Error::NonPositiveInput(format!(
                "KL reference matrix must be strictly positive, got {}",
                me
            )));
        }
        if pe == 0.0 {
            acc += me;
        } else {
            acc += pe * (pe / me).ln() - pe + me;
        }
    }
    Ok(acc)
}

/// Mass shared by the all-normalized inputs: sum of entrywise minima.
/// 1 exactly when the normalized matrices coincide, down to 0 for
/// disjoint supports.
pub fn overlap(p: &ConfusionMatrix, q: &ConfusionMatrix) -> Result<f64> {
    check_same_shape(p, q)?;
    let pn = p.all_normalize()?;
    let qn = q.all_normalize()?;
    let mut acc = 0.0;
    for (&a, &b) in pn.data().iter().zip(qn.data()) {
        acc += a.min(b);
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// Overlap restricted to off-diagonal structure: diagonals are zeroed,
/// then each remainder is all-normalized. Undefined when either matrix
/// has no off-diagonal mass.
pub fn offdiag_overlap(p: &ConfusionMatrix, q: &ConfusionMatrix) -> Result<f64> {
    check_same_shape(p, q)?;
    let c = p.dim();
    let zero_diag = |m: &ConfusionMatrix| -> (Vec<f64>, f64) {
        let mut data = m.data().to_vec();
        for i in 0..c {
            data[i * c + i] = 0.0;
        }
        let total = data.iter().sum();
        (data, total)
    };
    let (pd, pt) = zero_diag(p);
    let (qd, qt) = zero_diag(q);
    if pt <= 0.0 || qt <= 0.0 {
        return Err(Error::UndefinedMetric(
            "off-diagonal overlap undefined: an input has no off-diagonal mass",
        ));
    }
    let mut acc = 0.0;
    for (&a, &b) in pd.iter().zip(&qd) {
        acc += (a / pt).min(b / qt);
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// L1 distance between the all-normalized inputs. Satisfies
/// l1_distance = 2 - 2*overlap.
pub fn l1_distance(p: &ConfusionMatrix, q: &ConfusionMatrix) -> Result<f64> {
    check_same_shape(p, q)?;
    let pn = p.all_normalize()?;
    let qn = q.all_normalize()?;
    let mut acc = 0.0;
    for (&a, &b) in pn.data().iter().zip(qn.data()) {
        acc += (a - b).abs();
    }
    Ok(acc)
}
