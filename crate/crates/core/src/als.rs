//! Alternating least squares over the weight matrix and the kernel.
//!
//! Each iteration solves one nonnegative least-squares problem per agent for
//! the rows of `a` (then normalizes them), followed by a single least-squares
//! problem for `c`. Iteration stops once both relative changes fall below the
//! tolerance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsolve::{self, Regularizer};
use crate::model::{drift_into, BasisSpec, KernelCoef, WeightMatrix};
use crate::rng::{self, tag};
use crate::simulate::TrajectoryData;
use crate::tensors::{self, AssemblyMode, RegressionBlock};

/// How the kernel-step regularizer is chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum RegStrategy {
    /// Use `AlsOptions::reg` as given.
    #[default]
    Fixed,
    /// Ridge penalty with weight picked by the L-curve at every kernel step.
    LcurveIdentity,
    /// Penalty `x^T B_psi x` (basis Gram matrix under the data) with weight
    /// picked by the L-curve.
    AdaptiveRkhs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub reg: Regularizer,
    pub strategy: RegStrategy,
    pub c0_seed: u64,
    pub c0: Option<Vec<f64>>,
    pub mode: AssemblyMode,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10,
            reg: Regularizer::None,
            strategy: RegStrategy::Fixed,
            c0_seed: 0,
            c0: None,
            mode: AssemblyMode::Auto,
        }
    }
}

impl AlsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be >= 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub rel_change_a: f64,
    pub rel_change_c: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a_hat: WeightMatrix,
    pub c_hat: KernelCoef,
    pub history: Vec<IterRecord>,
    pub converged: bool,
    /// Per-agent regression residuals (operator-regression stage); empty for ALS.
    #[serde(default)]
    pub residuals: Vec<f64>,
}

/// `(1 / (M T)) sum_{m, l < L} |dX - a B(X) c dt|_F^2` with `T = L dt`.
pub fn loss(data: &TrajectoryData, basis: &BasisSpec, a: &WeightMatrix, c: &KernelCoef) -> Result<f64> {
    if a.n() != data.n() || basis.dim != data.d() || c.len() != basis.p() {
        return Err(Error::DimensionMismatch("loss arguments do not match the data".into()));
    }
    let ent = a.entries();
    let r = tensors::mean_drift_residual(data, |x, f| drift_into(ent, basis, |_| c.as_slice(), x, f));
    Ok(data.dt() * r)
}

/// Loss with a per-agent coefficient matrix (`p x N`).
pub(crate) fn loss_multitype(data: &TrajectoryData, basis: &BasisSpec, a: &WeightMatrix, cmat: &DMatrix<f64>) -> f64 {
    let cols: Vec<Vec<f64>> = (0..a.n()).map(|i| cmat.column(i).iter().cloned().collect()).collect();
    let ent = a.entries();
    data.dt() * tensors::mean_drift_residual(data, |x, f| drift_into(ent, basis, |i| cols[i].as_slice(), x, f))
}

/// Unit Gaussian starting vector.
pub fn random_unit(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, tag::INIT_COEF, 0);
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Inserts a zero at position `i` of a row over `j != i`.
pub(crate) fn expand_row(i: usize, reduced: &DVector<f64>) -> Vec<f64> {
    let mut row = Vec::with_capacity(reduced.len() + 1);
    row.extend_from_slice(&reduced.as_slice()[..i]);
    row.push(0.0);
    row.extend_from_slice(&reduced.as_slice()[i..]);
    row
}

/// NNLS for every agent's row, normalized onto the admissible set.
pub(crate) fn graph_step(blocks: &[RegressionBlock]) -> Result<WeightMatrix> {
    let n = blocks.len();
    let rows: Vec<DVector<f64>> = blocks.par_iter().map(RegressionBlock::nnls).collect::<Result<_>>()?;
    let mut raw = DMatrix::zeros(n, n);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in expand_row(i, r).into_iter().enumerate() {
            raw[(i, j)] = v;
        }
    }
    let a = WeightMatrix::from_raw(raw)?;
    if a.zero_rows().iter().all(|&z| z) {
        return Err(Error::AllRowsDegenerate);
    }
    Ok(a)
}

/// Kernel step under the chosen regularization strategy.
pub(crate) fn kernel_step(block: &RegressionBlock, opts: &AlsOptions, bpsi: Option<&DMatrix<f64>>) -> Result<DVector<f64>> {
    match opts.strategy {
        RegStrategy::Fixed => block.solve(&opts.reg),
        RegStrategy::LcurveIdentity | RegStrategy::AdaptiveRkhs => {
            let (g, h) = block.normal_form();
            let p = g.nrows();
            let penalty = match (&opts.strategy, bpsi) {
                (RegStrategy::AdaptiveRkhs, Some(b)) => b.clone(),
                _ => DMatrix::identity(p, p),
            };
            let lambda = linsolve::lcurve_select(&g, &h, block.response_sq, Some(&penalty))?;
            linsolve::solve_normal(&g, &h, &Regularizer::TikhonovGeneralized { lambda, penalty })
        }
    }
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let base: f64 = old.iter().map(|v| v * v).sum::<f64>().sqrt();
    if base > 0.0 {
        diff / base
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// One graph half-step followed by one kernel half-step from `c`.
fn als_sweep(
    data: &TrajectoryData,
    basis: &BasisSpec,
    c: &KernelCoef,
    opts: &AlsOptions,
    bpsi: Option<&DMatrix<f64>>,
) -> Result<(WeightMatrix, KernelCoef, f64)> {
    let blocks = tensors::assemble_graph_blocks(data, basis, c, opts.mode)?;
    let a = graph_step(&blocks)?;
    let kb = tensors::assemble_kernel_block(data, basis, &a, opts.mode)?;
    let c_new = KernelCoef::from(kernel_step(&kb, opts, bpsi)?);
    let l = loss(data, basis, &a, &c_new)?;
    if !l.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((a, c_new, l))
}

pub fn als_fit(data: &TrajectoryData, basis: &BasisSpec, opts: &AlsOptions) -> Result<FitResult> {
    opts.validate()?;
    basis.validate()?;
    let p = basis.p();
    let bpsi = match opts.strategy {
        RegStrategy::AdaptiveRkhs => Some(tensors::bpsi_matrix(data, basis)?),
        _ => None,
    };
    let (start, try_both_signs) = match &opts.c0 {
        Some(c0) => {
            if c0.len() != p {
                return Err(Error::DimensionMismatch(format!("c0 has {} entries, basis p={p}", c0.len())));
            }
            (KernelCoef::new(c0.clone())?, false)
        }
        None => (KernelCoef(random_unit(p, opts.c0_seed)), true),
    };

    let mut history = Vec::new();
    // A random start only fixes c up to sign, and NNLS makes the two signs
    // behave differently; the first sweep is run from both and the better kept.
    let (mut a, mut c, first_loss) = {
        let plus = als_sweep(data, basis, &start, opts, bpsi.as_ref());
        if try_both_signs {
            let minus = als_sweep(data, basis, &start.scaled(-1.0), opts, bpsi.as_ref());
            match (plus, minus) {
                (Ok(p1), Ok(m1)) => {
                    if m1.2 < p1.2 {
                        m1
                    } else {
                        p1
                    }
                }
                (Ok(p1), Err(_)) => p1,
                (Err(_), Ok(m1)) => m1,
                (Err(e), Err(_)) => return Err(e),
            }
        } else {
            plus?
        }
    };
    history.push(IterRecord {
        iter: 1,
        rel_change_a: f64::INFINITY,
        rel_change_c: rel_change(c.as_slice(), start.as_slice()),
        loss: first_loss,
    });
    let mut converged = false;
    for iter in 2..=opts.max_iter {
        let (a_new, c_new, l) = als_sweep(data, basis, &c, opts, bpsi.as_ref())?;
        let da = rel_change(a_new.entries().as_slice(), a.entries().as_slice());
        let dc = rel_change(c_new.as_slice(), c.as_slice());
        history.push(IterRecord { iter, rel_change_a: da, rel_change_c: dc, loss: l });
        a = a_new;
        c = c_new;
        if da <= opts.tol && dc <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult { a_hat: a, c_hat: c, history, converged, residuals: Vec::new() })
}
