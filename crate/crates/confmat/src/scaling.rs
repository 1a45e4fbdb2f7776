//! Matrix scaling to prescribed marginals, and bistochastic
//! normalization built on top of it.
//!
//! Two routes reach the same limit and cross-check each other:
//! [`ipf`] rescales the matrix in place, alternating exact row fits and
//! column fits while accumulating the applied factors; [`ras`] never
//! touches the matrix and instead updates the two diagonal scale vectors
//! directly. In exact arithmetic their iterates coincide sweep for
//! sweep, so disagreement beyond roundoff means one of them is wrong.
//!
//! Scaling the smoothed matrix to all-ones marginals yields the
//! bistochastic normalization; the inverted diagonals from the same run
//! are the weights the geometry module feeds into scaled histograms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{ConfusionMatrix, NormalizationKind};

/// Stopping rule for the scaling iterations: stop once the L1 marginal
/// residual drops to `tolerance`, give up after `max_steps` half-sweeps
/// (each full sweep is two steps: one row pass, one column pass).
#[derive(Debug, Clone, Copy)]
pub struct IpfConfig {
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for IpfConfig {
    fn default() -> Self {
        IpfConfig { tolerance: 1e-10, max_steps: 10_000 }
    }
}

impl IpfConfig {
    pub fn new(tolerance: f64, max_steps: usize) -> Result<Self> {
        let cfg = IpfConfig { tolerance, max_steps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive and finite, got {}",
                self.tolerance
            )));
        }
        if self.max_steps < 2 || self.max_steps % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "max_steps must be even and at least 2, got {}",
                self.max_steps
            )));
        }
        Ok(())
    }
}

/// Outcome of a scaling run: the scaled matrix, the diagonal factors
/// that produce it from the input (diag(row_scales) * M * diag(col_scales)),
/// and the stopping diagnostics.
#[derive(Debug, Clone)]
pub struct IpfResult {
    pub matrix: ConfusionMatrix,
    pub row_scales: Vec<f64>,
    pub col_scales: Vec<f64>,
    pub steps: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Inverted diagonal scales: a_i = 1/D1_ii, b_j = 1/D2_jj, so that
/// diag(1/a) * smooth(M) * diag(1/b) is bistochastic.
#[derive(Debug, Clone)]
pub struct ScalingWeights {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Relative slack allowed between the row and column target totals,
/// which must agree for the marginals to be feasible.
const MARGINAL_TOTAL_SLACK: f64 = 1e-9;

fn check_scaling_inputs(m: &ConfusionMatrix, u: &[f64], v: &[f64]) -> Result<()> {
    let c = m.dim();
    if u.len() != c || v.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "matrix is {}x{0}, targets have lengths {} and {}",
            c,
            u.len(),
            v.len()
        )));
    }
    for &x in m.data() {
        if x <= 0.0 {
            return Err(Error::NonPositiveInput(format!(
                "scaling requires a strictly positive matrix, got entry {}",
                x
            )));
        }
    }
    for &t in u.iter().chain(v) {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveInput(format!(
                "target marginals must be positive and finite, got {}",
                t
            )));
        }
    }
    let u_total: f64 = u.iter().sum();
    let v_total: f64 = v.iter().sum();
    if (u_total - v_total).abs() > MARGINAL_TOTAL_SLACK * u_total {
        return Err(Error::InfeasibleMarginals {
            row_total: u_total,
            col_total: v_total,
        });
    }
    Ok(())
}

/// L1 distance of the matrix marginals from their targets.
fn marginal_residual(q: &[f64], c: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut res = 0.0;
    for i in 0..c {
        let s: f64 = q[i * c..(i + 1) * c].iter().sum();
        res += (s - u[i]).abs();
    }
    for j in 0..c {
        let mut s = 0.0;
        for i in 0..c {
            s += q[i * c + j];
        }
        res += (s - v[j]).abs();
    }
    res
}

/// Scales M to row sums u and column sums v by alternating exact row
/// and column rescaling, rows first. An input already meeting the
/// targets is returned unchanged with zero steps. Non-convergence is
/// reported through the `converged` flag, not an error.
pub fn ipf(
    m: &ConfusionMatrix,
    u: &[f64],
    v: &[f64],
    cfg: IpfConfig,
) -> Result<IpfResult> {
    ipf_observed(m, u, v, cfg, |_, _| {})
}

/// [`ipf`] with a probe called after every full sweep with the sweep
/// number (from 1) and the residual at that point. Lets tests watch the
/// convergence trajectory without touching the iteration itself.
pub fn ipf_observed(
    m: &ConfusionMatrix,
    u: &[f64],
    v: &[f64],
    cfg: IpfConfig,
    mut on_sweep: impl FnMut(usize, f64),
) -> Result<IpfResult> {
    cfg.validate()?;
    check_scaling_inputs(m, u, v)?;
    let c = m.dim();
    let mut q = m.data().to_vec();
    let mut d1 = vec![1.0; c];
    let mut d2 = vec![1.0; c];
    let mut steps = 0;
    let mut residual = marginal_residual(&q, c, u, v);
    while residual > cfg.tolerance && steps < cfg.max_steps {
        for i in 0..c {
            let s: f64 = q[i * c..(i + 1) * c].iter().sum();
            let f = u[i] / s;
            for e in &mut q[i * c..(i + 1) * c] {
                *e *= f;
            }
            d1[i] *= f;
        }
        steps += 1;
        for j in 0..c {
            let mut s = 0.0;
            for i in 0..c {
                s += q[i * c + j];
            }
            let f = v[j] / s;
            for i in 0..c {
                q[i * c + j] *= f;
            }
            d2[j] *= f;
        }
        steps += 1;
        residual = marginal_residual(&q, c, u, v);
        on_sweep(steps / 2, residual);
    }
    let converged = residual <= cfg.tolerance;
    Ok(IpfResult {
        matrix: ConfusionMatrix::from_flat(m.labels().to_vec(), q)?,
        row_scales: d1,
        col_scales: d2,
        steps,
        residual,
        converged,
    })
}

/// Same fixed point as [`ipf`], different bookkeeping: the matrix is
/// never modified; instead D2 starts as the identity and the diagonals
/// are alternately re-solved, D1_ii = r_i / sum_j M_ij D2_jj then
/// D2_jj = c_j / sum_i M_ij D1_ii. Returns D1 M D2 and the diagonals.
pub fn ras(
    m: &ConfusionMatrix,
    r: &[f64],
    c_targets: &[f64],
    cfg: IpfConfig,
) -> Result<IpfResult> {
    cfg.validate()?;
    check_scaling_inputs(m, r, c_targets)?;
    let c = m.dim();
    let md = m.data();
    let mut d1 = vec![1.0; c];
    let mut d2 = vec![1.0; c];
    let product = |d1: &[f64], d2: &[f64]| -> Vec<f64> {
        let mut q = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                q[i * c + j] = d1[i] * md[i * c + j] * d2[j];
            }
        }
        q
    };
    let mut steps = 0;
    let mut residual = marginal_residual(&product(&d1, &d2), c, r, c_targets);
    while residual > cfg.tolerance && steps < cfg.max_steps {
        for i in 0..c {
            let mut s = 0.0;
            for j in 0..c {
                s += md[i * c + j] * d2[j];
            }
            d1[i] = r[i] / s;
        }
        steps += 1;
        for j in 0..c {
            let mut s = 0.0;
            for i in 0..c {
                s += md[i * c + j] * d1[i];
            }
            d2[j] = c_targets[j] / s;
        }
        steps += 1;
        residual = marginal_residual(&product(&d1, &d2), c, r, c_targets);
    }
    let converged = residual <= cfg.tolerance;
    Ok(IpfResult {
        matrix: ConfusionMatrix::from_flat(m.labels().to_vec(), product(&d1, &d2))?,
        row_scales: d1,
        col_scales: d2,
        steps,
        residual,
        converged,
    })
}

fn require_converged(res: IpfResult) -> Result<IpfResult> {
    if res.converged {
        Ok(res)
    } else {
        Err(Error::NonConvergence {
            steps: res.steps,
            residual: res.residual,
            best: Box::new(res),
        })
    }
}

/// Smooths M by eps, then scales it to unit row and column sums.
/// Errors if the iteration does not reach the tolerance; the carried
/// best iterate must not be mistaken for the normalization.
pub fn bistochastic_normalize(
    m: &ConfusionMatrix,
    eps: f64,
    cfg: IpfConfig,
) -> Result<ConfusionMatrix> {
    let smoothed = m.smooth(eps)?;
    let ones = vec![1.0; m.dim()];
    let res = require_converged(ipf(&smoothed, &ones, &ones, cfg)?)?;
    Ok(res.matrix)
}

/// Inverted diagonals of the all-ones [`ras`] run on the smoothed
/// matrix: a_i = 1/D1_ii, b_j = 1/D2_jj. The D2-starts-as-identity
/// convention pins down the otherwise free common factor between the
/// two diagonals.
pub fn scaling_weights(
    m: &ConfusionMatrix,
    eps: f64,
    cfg: IpfConfig,
) -> Result<ScalingWeights> {
    let smoothed = m.smooth(eps)?;
    let ones = vec![1.0; m.dim()];
    let res = require_converged(ras(&smoothed, &ones, &ones, cfg)?)?;
    Ok(ScalingWeights {
        a: res.row_scales.iter().map(|&d| 1.0 / d).collect(),
        b: res.col_scales.iter().map(|&d| 1.0 / d).collect(),
    })
}

/// Applies one of the four normalizations to the eps-smoothed matrix.
pub fn apply_normalization(
    m: &ConfusionMatrix,
    kind: NormalizationKind,
    eps: f64,
    cfg: IpfConfig,
) -> Result<ConfusionMatrix> {
    match kind {
        NormalizationKind::Row => m.smooth(eps)?.row_normalize(),
        NormalizationKind::Col => m.smooth(eps)?.col_normalize(),
        NormalizationKind::All => m.smooth(eps)?.all_normalize(),
        NormalizationKind::Bis => bistochastic_normalize(m, eps, cfg),
    }
}

/// Test oracle: random matrices with row sums r and column sums c,
/// built by projecting random mixtures of permutation matrices onto the
/// marginal constraints with a short scaling run. Any minimizer claim
/// can be checked against such samples, since the scaled solution must
/// beat every one of them on I-divergence.
pub fn lemma1_oracle(
    m: &ConfusionMatrix,
    r: &[f64],
    c_targets: &[f64],
    samples: usize,
    rng_seed: u64,
) -> Result<Vec<ConfusionMatrix>> {
    check_scaling_inputs(m, r, c_targets)?;
    let c = m.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(0x10);
    let cfg = IpfConfig { tolerance: 1e-9, max_steps: 10_000 };
    let mut out = Vec::with_capacity(samples);
    let mut perm: Vec<usize> = (0..c).collect();
    for _ in 0..samples {
        let mut x = vec![0.05 / c as f64; c * c];
        for _ in 0..c {
            let w: f64 = rng.gen_range(0.05..1.0);
            perm.shuffle(&mut rng);
            for (i, &j) in perm.iter().enumerate() {
                x[i * c + j] += w;
            }
        }
        let start = ConfusionMatrix::from_flat(m.labels().to_vec(), x)?;
        let res = require_converged(ipf(&start, r, c_targets, cfg)?)?;
        out.push(res.matrix);
    }
    Ok(out)
}
