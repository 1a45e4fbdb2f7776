//! File formats: confusion matrices as CSV or JSON, embedding datasets
//! as CSV, scaling diagnostics as JSON, plus atomic file writes.
//!
//! Reals are printed with 12 significant digits, which is enough for a
//! written value to re-read to a double that prints identically, so
//! write/read/write round-trips are byte-stable.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EmbeddedDataset, EmbeddedPoint};
use crate::matrix::ConfusionMatrix;
use crate::scaling::IpfResult;

/// Canonical decimal rendering: 12 significant digits, scientific.
pub fn format_real(x: f64) -> String {
    format!("{:.11e}", x)
}

fn check_csv_token(label: &str) -> Result<()> {
    if label.is_empty() || label.contains([',', '"', '\n', '\r']) {
        return Err(Error::InvalidParameter(format!(
            "label {:?} cannot be written to CSV",
            label
        )));
    }
    Ok(())
}

/// Renders a confusion matrix as CSV: header `label,<class>,...`, one
/// row per true class in label order.
pub fn confusion_to_csv(m: &ConfusionMatrix) -> Result<String> {
    let c = m.dim();
    let mut out = String::from("label");
    for name in m.labels() {
        check_csv_token(name)?;
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..c {
        out.push_str(&m.labels()[i]);
        for j in 0..c {
            out.push(',');
            out.push_str(&format_real(m.get(i, j)));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses the CSV format written by [`confusion_to_csv`]. Rows must
/// appear in header order; non-square data and negative entries are
/// rejected.
pub fn confusion_from_csv(text: &str) -> Result<ConfusionMatrix> {
    let mut lines = text.lines().map(str::trim_end).filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty confusion CSV".into()))?;
    let mut fields = header.split(',').map(str::trim);
    if fields.next() != Some("label") {
        return Err(Error::Parse(
            "confusion CSV header must start with `label`".into(),
        ));
    }
    let labels: Vec<String> = fields.map(String::from).collect();
    let c = labels.len();
    if c == 0 {
        return Err(Error::Parse("confusion CSV header names no classes".into()));
    }
    let mut rows = Vec::with_capacity(c);
    for (i, line) in lines.enumerate() {
        if i >= c {
            return Err(Error::Parse(format!(
                "confusion CSV has more than {} data rows",
                c
            )));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != c + 1 {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                i + 1,
                fields.len(),
                c + 1
            )));
        }
        if fields[0] != labels[i] {
            return Err(Error::Parse(format!(
                "row {} is labeled {:?}, expected {:?} (rows must follow header order)",
                i + 1,
                fields[0],
                labels[i]
            )));
        }
        let row = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad real {:?} in row {}", f, i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() != c {
        return Err(Error::Parse(format!(
            "confusion CSV has {} data rows, expected {}",
            rows.len(),
            c
        )));
    }
    ConfusionMatrix::from_rows(labels, rows)
}

#[derive(Serialize, Deserialize)]
struct ConfusionFile {
    labels: Vec<String>,
    entries: Vec<Vec<f64>>,
}

/// Renders a confusion matrix as pretty JSON
/// `{"labels":[...], "entries":[[...],...]}`.
pub fn confusion_to_json(m: &ConfusionMatrix) -> String {
    let c = m.dim();
    let file = ConfusionFile {
        labels: m.labels().to_vec(),
        entries: (0..c)
            .map(|i| (0..c).map(|j| m.get(i, j)).collect())
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("confusion JSON serializes");
    s.push('\n');
    s
}

/// Parses the JSON format written by [`confusion_to_json`].
pub fn confusion_from_json(text: &str) -> Result<ConfusionMatrix> {
    let file: ConfusionFile = serde_json::from_str(text)?;
    ConfusionMatrix::from_rows(file.labels, file.entries)
}

/// True when the path's extension selects the JSON format.
pub fn has_json_extension(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false)
}

/// Reads a confusion matrix, dispatching on extension: `.json` parses
/// as JSON, anything else as CSV.
pub fn load_confusion(path: &Path) -> Result<ConfusionMatrix> {
    let text = fs::read_to_string(path)?;
    if has_json_extension(path) {
        confusion_from_json(&text)
    } else {
        confusion_from_csv(&text)
    }
}

/// Writes a confusion matrix atomically, dispatching on extension as
/// in [`load_confusion`].
pub fn save_confusion(path: &Path, m: &ConfusionMatrix) -> Result<()> {
    let content = if has_json_extension(path) {
        confusion_to_json(m)
    } else {
        confusion_to_csv(m)?
    };
    write_atomic(path, &content)
}

/// Renders an embedding dataset as CSV with header
/// `id,true_label,predicted_label,e_1,...,e_n`. Ids are row indices.
pub fn embeddings_to_csv(ds: &EmbeddedDataset) -> Result<String> {
    for name in ds.class_names() {
        check_csv_token(name)?;
    }
    let mut out = String::from("id,true_label,predicted_label");
    for k in 1..=ds.dim() {
        out.push_str(&format!(",e_{}", k));
    }
    out.push('\n');
    for (id, p) in ds.points().iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}",
            id,
            ds.class_names()[p.true_label],
            ds.class_names()[p.predicted_label]
        ));
        for x in &p.embedding {
            out.push(',');
            out.push_str(&format_real(*x));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses the embedding CSV format. Label strings map to indices in
/// first-appearance order (scanning each row's true label before its
/// prediction) unless `class_names` supplies the mapping, in which
/// case unknown labels are rejected. The id column is ignored.
pub fn embeddings_from_csv(
    text: &str,
    class_names: Option<&[String]>,
) -> Result<EmbeddedDataset> {
    let mut lines = text.lines().map(str::trim_end).filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty embedding CSV".into()))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() < 4
        || fields[0] != "id"
        || fields[1] != "true_label"
        || fields[2] != "predicted_label"
    {
        return Err(Error::Parse(
            "embedding CSV header must be `id,true_label,predicted_label,e_1,...`".into(),
        ));
    }
    let n = fields.len() - 3;
    for (k, f) in fields[3..].iter().enumerate() {
        if *f != format!("e_{}", k + 1) {
            return Err(Error::Parse(format!(
                "embedding CSV column {} is {:?}, expected \"e_{}\"",
                k + 4,
                f,
                k + 1
            )));
        }
    }
    let mut names: Vec<String> = class_names.map(|ns| ns.to_vec()).unwrap_or_default();
    let fixed = class_names.is_some();
    let index_of = |name: &str, names: &mut Vec<String>| -> Result<usize> {
        if let Some(i) = names.iter().position(|n| n == name) {
            return Ok(i);
        }
        if fixed {
            return Err(Error::Parse(format!(
                "label {:?} not in the supplied class names",
                name
            )));
        }
        names.push(name.to_string());
        Ok(names.len() - 1)
    };
    let mut points = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n + 3 {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                row + 1,
                fields.len(),
                n + 3
            )));
        }
        let true_label = index_of(fields[1], &mut names)?;
        let predicted_label = index_of(fields[2], &mut names)?;
        let embedding = fields[3..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad real {:?} in row {}", f, row + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        points.push(EmbeddedPoint { embedding, true_label, predicted_label });
    }
    EmbeddedDataset::new(points, names)
}

/// Convergence record of one scaling run, written as a JSON sidecar by
/// the CLI alongside bistochastic outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingDiagnostics {
    pub steps: usize,
    pub residual: f64,
    pub converged: bool,
    pub row_scales: Vec<f64>,
    pub col_scales: Vec<f64>,
}

impl From<&IpfResult> for ScalingDiagnostics {
    fn from(res: &IpfResult) -> Self {
        ScalingDiagnostics {
            steps: res.steps,
            residual: res.residual,
            converged: res.converged,
            row_scales: res.row_scales.clone(),
            col_scales: res.col_scales.clone(),
        }
    }
}

/// Pretty JSON rendering of a diagnostics record.
pub fn diagnostics_json(d: &ScalingDiagnostics) -> String {
    let mut s = serde_json::to_string_pretty(d).expect("diagnostics serialize");
    s.push('\n');
    s
}

/// Writes `content` to `path` through a temporary file in the same
/// directory followed by a rename, so readers never observe a partial
/// file.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{:?} has no file name", path)))?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = dir.join(format!(
        ".{}.tmp.{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, content)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}
