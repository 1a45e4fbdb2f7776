//! Command-line front-end: normalize confusion matrices, compare them,
//! build geometric confusion matrices from embeddings, and run the two
//! synthetic experiments with CSV reports and SVG heatmaps.
//!
//! Exit codes: 0 success, 2 input error, 3 scaling non-convergence,
//! 4 undefined metric.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use confmat::error::Error;
use confmat::experiments::{
    experiment1_seed_artifacts, experiment2_seed_artifacts, run_experiment1, run_experiment2,
    scenario_kernel, ExperimentConfig, ScoreMetric,
};
use confmat::geometry::{
    build_grid, count_confusion, fit_pca, gcm, project, scott_bin_widths, GcmVariantKind,
    WeightVectors,
};
use confmat::io::{
    confusion_to_csv, confusion_to_json, diagnostics_json, has_json_extension, load_confusion,
    write_atomic, ScalingDiagnostics,
};
use confmat::matrix::{offdiag_overlap, overlap, ConfusionMatrix, NormalizationKind};
use confmat::scaling::{ipf, scaling_weights, IpfConfig};

#[derive(Parser)]
#[command(
    name = "confmat",
    version,
    about = "Confusion-matrix normalization and geometry toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Row,
    Col,
    All,
    Bis,
}

impl From<KindArg> for NormalizationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Row => NormalizationKind::Row,
            KindArg::Col => NormalizationKind::Col,
            KindArg::All => NormalizationKind::All,
            KindArg::Bis => NormalizationKind::Bis,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    All,
    Row,
    Col,
    Bis,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a confusion matrix (CSV or JSON, detected by extension)
    Normalize {
        /// Which normalization to apply
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Smoothing added to every entry first; bis defaults to a
        /// mass-scaled eps, the others to no smoothing
        #[arg(long)]
        eps: Option<f64>,
        /// Scaling stop tolerance on the worst marginal deviation
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        /// Scaling step cap (two steps per sweep)
        #[arg(long = "max-steps", default_value_t = 10_000)]
        max_steps: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// Print the overlap and L1 distance between two matrices
    Overlap {
        /// Zero both diagonals before comparing
        #[arg(long)]
        offdiag: bool,
        a: PathBuf,
        b: PathBuf,
    },
    /// Build a geometric confusion matrix from an embeddings CSV
    Gcm {
        /// Projected dimension for the PCA step
        #[arg(long, default_value_t = 5)]
        m: usize,
        /// Histogram weighting: the GCM analogue of each normalization
        #[arg(long, value_enum)]
        variant: VariantArg,
        /// Fixed class-name list (one name per line); otherwise names
        /// map in first-appearance order
        #[arg(long)]
        labels: Option<PathBuf>,
        embeddings: PathBuf,
        output: PathBuf,
    },
    /// Print the bistochastic scaling weight vectors a and b as JSON
    Weights {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        #[arg(long = "max-steps", default_value_t = 10_000)]
        max_steps: usize,
        input: PathBuf,
    },
    /// Run the normalization-recovery experiment from a scenario JSON
    Exp1 {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "num-seeds")]
        num_seeds: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        scenario: PathBuf,
        outdir: PathBuf,
    },
    /// Run the GCM-matching experiment from a scenario JSON
    Exp2 {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "num-seeds")]
        num_seeds: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        scenario: PathBuf,
        outdir: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } => 3,
        Error::UndefinedMetric(_) => 4,
        _ => 2,
    }
}

fn init_threads() -> Result<(), String> {
    let raw = match std::env::var("CONFMAT_THREADS") {
        Ok(v) => v,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => return Err(e.to_string()),
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("CONFMAT_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() {
    if let Err(msg) = init_threads() {
        eprintln!("confmat: {msg}");
        std::process::exit(2);
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("confmat: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn run(command: Command) -> Result<i32, Error> {
    match command {
        Command::Normalize { kind, eps, tolerance, max_steps, input, output } => {
            cmd_normalize(kind.into(), eps, tolerance, max_steps, &input, &output)
        }
        Command::Overlap { offdiag, a, b } => cmd_overlap(offdiag, &a, &b),
        Command::Gcm { m, variant, labels, embeddings, output } => {
            cmd_gcm(m, variant, labels.as_deref(), &embeddings, &output)
        }
        Command::Weights { eps, tolerance, max_steps, input } => {
            cmd_weights(eps, tolerance, max_steps, &input)
        }
        Command::Exp1 { seed, num_seeds, alpha, scenario, outdir } => {
            cmd_experiment(1, seed, num_seeds, alpha, &scenario, &outdir)
        }
        Command::Exp2 { seed, num_seeds, alpha, scenario, outdir } => {
            cmd_experiment(2, seed, num_seeds, alpha, &scenario, &outdir)
        }
    }
}

/// Writes the matrix in the same format the input used, regardless of
/// the output path's extension.
fn save_like_input(output: &Path, m: &ConfusionMatrix, input_was_json: bool) -> Result<(), Error> {
    let text = if input_was_json { confusion_to_json(m) } else { confusion_to_csv(m)? };
    write_atomic(output, &text)
}

fn cmd_normalize(
    kind: NormalizationKind,
    eps: Option<f64>,
    tolerance: f64,
    max_steps: usize,
    input: &Path,
    output: &Path,
) -> Result<i32, Error> {
    let m = load_confusion(input)?;
    let as_json = has_json_extension(input);
    if kind != NormalizationKind::Bis {
        let base = match eps {
            Some(e) => m.smooth(e)?,
            None => m,
        };
        let normalized = match kind {
            NormalizationKind::Row => base.row_normalize()?,
            NormalizationKind::Col => base.col_normalize()?,
            NormalizationKind::All => base.all_normalize()?,
            NormalizationKind::Bis => unreachable!(),
        };
        save_like_input(output, &normalized, as_json)?;
        return Ok(0);
    }

    let cfg = IpfConfig::new(tolerance, max_steps)?;
    let smoothed = m.smooth(eps.unwrap_or_else(|| m.default_eps()))?;
    let ones = vec![1.0; m.dim()];
    let res = ipf(&smoothed, &ones, &ones, cfg)?;
    save_like_input(output, &res.matrix, as_json)?;
    let mut sidecar = output.as_os_str().to_owned();
    sidecar.push(".diag.json");
    write_atomic(Path::new(&sidecar), &diagnostics_json(&ScalingDiagnostics::from(&res)))?;
    if res.converged {
        Ok(0)
    } else {
        eprintln!(
            "confmat: scaling stopped after {} steps at residual {:.3e}; best iterate written",
            res.steps, res.residual
        );
        Ok(3)
    }
}

fn cmd_overlap(offdiag: bool, a: &Path, b: &Path) -> Result<i32, Error> {
    let p = load_confusion(a)?;
    let q = load_confusion(b)?;
    let v = if offdiag { offdiag_overlap(&p, &q)? } else { overlap(&p, &q)? };
    println!("overlap={:.6} l1={:.6}", v, 2.0 - 2.0 * v);
    Ok(0)
}

fn read_label_file(path: &Path) -> Result<Vec<String>, Error> {
    let text = fs::read_to_string(path)?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if names.len() < 2 {
        return Err(Error::Parse(format!(
            "label file {} needs at least 2 names, found {}",
            path.display(),
            names.len()
        )));
    }
    Ok(names)
}

fn cmd_gcm(
    m: usize,
    variant: VariantArg,
    labels: Option<&Path>,
    embeddings: &Path,
    output: &Path,
) -> Result<i32, Error> {
    let text = fs::read_to_string(embeddings)?;
    let names = labels.map(read_label_file).transpose()?;
    let ds = confmat::io::embeddings_from_csv(&text, names.as_deref())?;
    let counts = count_confusion(&ds)?;
    let c = ds.num_classes();
    let proj = fit_pca(&ds, m)?;
    let pds = project(&proj, &ds)?;
    let widths = scott_bin_widths(&pds, m)?;
    let grid = build_grid(&pds, &widths)?;

    let positive = |sums: Vec<f64>, what: &str| -> Result<Vec<f64>, Error> {
        if let Some(i) = sums.iter().position(|&s| s <= 0.0) {
            return Err(Error::EmptyCluster(format!(
                "{what} cluster {:?} has no points",
                ds.class_names()[i]
            )));
        }
        Ok(sums)
    };
    let ones = vec![1.0; c];
    let w = match variant {
        VariantArg::All => {
            let u = 1.0 / grid.cell_volume().sqrt();
            WeightVectors::new(vec![u; c], vec![u; c])?
        }
        VariantArg::Row => WeightVectors::new(positive(counts.row_sums(), "label")?, ones)?,
        VariantArg::Col => WeightVectors::new(ones, positive(counts.col_sums(), "prediction")?)?,
        VariantArg::Bis => {
            let sw = scaling_weights(&counts, counts.default_eps(), IpfConfig::default())?;
            WeightVectors::new(sw.a, sw.b)?
        }
    };
    let g = gcm(&pds, &grid, &w)?;
    write_atomic(output, &confusion_to_csv(&g)?)?;
    Ok(0)
}

fn cmd_weights(
    eps: Option<f64>,
    tolerance: f64,
    max_steps: usize,
    input: &Path,
) -> Result<i32, Error> {
    let m = load_confusion(input)?;
    let cfg = IpfConfig::new(tolerance, max_steps)?;
    let sw = scaling_weights(&m, eps.unwrap_or_else(|| m.default_eps()), cfg)?;
    println!("{}", serde_json::json!({ "a": sw.a, "b": sw.b }));
    Ok(0)
}

fn cmd_experiment(
    which: u8,
    seed: Option<u64>,
    num_seeds: Option<usize>,
    alpha: Option<f64>,
    scenario: &Path,
    outdir: &Path,
) -> Result<i32, Error> {
    let text = fs::read_to_string(scenario)?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = num_seeds {
        cfg.num_seeds = n;
    }
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    cfg.validate()?;
    fs::create_dir_all(outdir)?;
    let seeds = cfg.seeds();

    let mut heatmaps: Vec<(String, String)> = Vec::new();
    if which == 1 {
        let report = run_experiment1(&cfg, &seeds, ScoreMetric::Full)?;
        write_atomic(&outdir.join("exp1_scores.csv"), &report.per_seed_csv())?;
        write_atomic(&outdir.join("exp1_summary.csv"), &report.summary_csv())?;
        let kernel = scenario_kernel(&cfg)?;
        let art = experiment1_seed_artifacts(&cfg, &kernel, seeds[0])?;
        heatmaps.push(("heatmap_reference.svg".into(), heatmap_svg(&art.reference, "reference")));
        heatmaps.push(("heatmap_raw.svg".into(), heatmap_svg(&art.observed, "raw")));
        for kind in NormalizationKind::KINDS {
            heatmaps.push((
                format!("heatmap_{}.svg", kind.name()),
                heatmap_svg(&art.normalized[&kind], kind.name()),
            ));
        }
    } else {
        let reports = run_experiment2(&cfg, &seeds)?;
        for (variant, report) in &reports {
            write_atomic(
                &outdir.join(format!("exp2_{variant}_scores.csv")),
                &report.per_seed_csv(),
            )?;
            write_atomic(
                &outdir.join(format!("exp2_{variant}_summary.csv")),
                &report.summary_csv(),
            )?;
        }
        let art = experiment2_seed_artifacts(&cfg, seeds[0])?;
        heatmaps.push(("heatmap_raw.svg".into(), heatmap_svg(&art.observed, "raw")));
        for kind in NormalizationKind::KINDS {
            heatmaps.push((
                format!("heatmap_{}.svg", kind.name()),
                heatmap_svg(&art.normalized[&kind], kind.name()),
            ));
        }
        for variant in GcmVariantKind::KINDS {
            heatmaps.push((
                format!("heatmap_gcm_{variant}.svg"),
                heatmap_svg(art.gcms.get(variant), &format!("gcm {variant}")),
            ));
        }
    }
    for (name, svg) in &heatmaps {
        write_atomic(&outdir.join(name), svg)?;
    }
    println!("wrote reports and {} heatmaps to {}", heatmaps.len(), outdir.display());
    Ok(0)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a matrix as a grid of cells shaded linearly from white at 0
/// to dark blue at the matrix maximum, with a tooltip per cell.
fn heatmap_svg(m: &ConfusionMatrix, title: &str) -> String {
    const CELL: usize = 32;
    const LEFT: usize = 70;
    const TOP: usize = 52;
    let c = m.dim();
    let width = LEFT + c * CELL + 16;
    let height = TOP + c * CELL + 16;
    let max = m.data().iter().fold(0.0f64, |a, &b| a.max(b));
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"8\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        xml_escape(title)
    ));
    for (j, label) in m.labels().iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            LEFT + j * CELL + CELL / 2,
            TOP - 8,
            xml_escape(label)
        ));
    }
    for (i, label) in m.labels().iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            LEFT - 8,
            TOP + i * CELL + CELL / 2 + 4,
            xml_escape(label)
        ));
    }
    for i in 0..c {
        for j in 0..c {
            let t = if max > 0.0 { m.get(i, j) / max } else { 0.0 };
            let ch = |from: f64, to: f64| (from + (to - from) * t).round() as u8;
            let (r, g, b) = (ch(255.0, 8.0), ch(255.0, 48.0), ch(255.0, 107.0));
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" \
                 fill=\"rgb({r},{g},{b})\" stroke=\"#cccccc\"><title>{}</title></rect>\n",
                LEFT + j * CELL,
                TOP + i * CELL,
                confmat::io::format_real(m.get(i, j))
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}
