//! Operator regression followed by a deterministic rank-1 factorization.
//!
//! The first stage regresses, for every agent `i`, the products
//! `Z_i = a_i^T c^T` (an `(N-1) x p` matrix, vectorized j-major) directly from
//! the increments; this is an ordinary linear problem. The second stage splits
//! the estimates into a nonnegative normalized weight matrix and a kernel
//! coefficient vector with two alternating sweeps.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::als::{expand_row, loss, FitResult, IterRecord};
use crate::error::{Error, Result};
use crate::linsolve::{self, Regularizer};
use crate::model::{BasisSpec, KernelCoef, SystemSpec, WeightMatrix};
use crate::rng::{self, tag};
use crate::simulate::{simulate, TrajectoryData};
use crate::tensors::{self, AssemblyMode};

#[derive(Debug, Clone, PartialEq)]
pub struct ZEstimates {
    /// One `(N-1) x p` matrix per agent; row `jj` is the `jj`-th agent other than `i`.
    pub z: Vec<DMatrix<f64>>,
    /// `|A z - b|^2 / rows` per agent.
    pub residuals: Vec<f64>,
    /// `sigma_min(A_i)^2 / M` per agent.
    pub min_sv_sq_per_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OralsOptions {
    pub reg: Regularizer,
    pub mode: AssemblyMode,
}

impl Default for OralsOptions {
    fn default() -> Self {
        Self { reg: Regularizer::MinNorm, mode: AssemblyMode::Auto }
    }
}

fn reshape(z: &DVector<f64>, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n - 1, p, z.as_slice())
}

/// Least-squares estimate of every `Z_i`.
pub fn operator_regression(data: &TrajectoryData, basis: &BasisSpec, opts: &OralsOptions) -> Result<ZEstimates> {
    regress(data, basis, opts, true)
}

/// With `singular_values = false` the per-agent eigenvalue computation is
/// skipped and `min_sv_sq_per_m` is left as NaN; the fit does not need it.
fn regress(data: &TrajectoryData, basis: &BasisSpec, opts: &OralsOptions, singular_values: bool) -> Result<ZEstimates> {
    basis.validate()?;
    if data.states().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("states"));
    }
    let n = data.n();
    let p = basis.p();
    let per_m = (data.steps() * data.d()) as f64;
    // Agents are processed one at a time: each block only needs the pairs of
    // its own agent, and this bounds memory for large N p.
    let out: Vec<(DMatrix<f64>, f64, f64)> = (0..n)
        .map(|i| {
            let block = tensors::assemble_sensing_block(i, data, basis, opts.mode)?;
            let z = block.solve(&opts.reg)?;
            let resid = block.residual_sq(&z);
            let s = if singular_values {
                let (g, _) = block.normal_form();
                g.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min).max(0.0) * per_m
            } else {
                f64::NAN
            };
            Ok((reshape(&z, n, p), resid, s))
        })
        .collect::<Result<_>>()?;
    let mut est = ZEstimates { z: vec![], residuals: vec![], min_sv_sq_per_m: vec![] };
    for (z, r, s) in out {
        est.z.push(z);
        est.residuals.push(r);
        est.min_sv_sq_per_m.push(s);
    }
    Ok(est)
}

/// Result of the factorization stage, with the per-sweep changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub a: WeightMatrix,
    pub c: KernelCoef,
    /// `(rel_change_a, rel_change_c)` for each sweep.
    pub deltas: Vec<(f64, f64)>,
}

fn normalized_rows(z: &[DMatrix<f64>], c: &DVector<f64>) -> Result<WeightMatrix> {
    let n = z.len();
    let cc = c.norm_squared();
    let mut raw = DMatrix::zeros(n, n);
    for (i, zi) in z.iter().enumerate() {
        let row = (zi * c).map(|v| v.max(0.0) / cc);
        for (j, v) in expand_row(i, &row).into_iter().enumerate() {
            raw[(i, j)] = v;
        }
    }
    WeightMatrix::from_raw(raw)
}

fn coef_from_rows(z: &[DMatrix<f64>], a: &WeightMatrix) -> DVector<f64> {
    let p = z[0].ncols();
    let mut num = DVector::zeros(p);
    let mut den = 0.0;
    for (i, zi) in z.iter().enumerate() {
        let ai = DVector::from_iterator(zi.nrows(), (0..a.n()).filter(|&j| j != i).map(|j| a.get(i, j)));
        num += zi.transpose() * &ai;
        den += ai.norm_squared();
    }
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

fn rel(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let base: f64 = old.iter().map(|v| v * v).sum::<f64>().sqrt();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

/// Sweeps of `a_ij = max(0, (Z_i c)_j) / |c|^2` (rows normalized) and
/// `c = sum_i Z_i^T a_i / sum_i |a_i|^2`, starting from the top right singular
/// vector of the stacked estimates.
pub fn deterministic_als_sweeps(z: &[DMatrix<f64>], sweeps: usize) -> Result<Factorization> {
    if z.is_empty() {
        return Err(Error::AllZero);
    }
    let n = z.len();
    let p = z[0].ncols();
    if z.iter().any(|zi| zi.nrows() != n - 1 || zi.ncols() != p) {
        return Err(Error::DimensionMismatch("estimates must all be (N-1) x p".into()));
    }
    let mut stacked = DMatrix::zeros(n * (n - 1), p);
    for (i, zi) in z.iter().enumerate() {
        stacked.rows_mut(i * (n - 1), n - 1).copy_from(zi);
    }
    if stacked.iter().all(|&v| v == 0.0) {
        return Err(Error::AllZero);
    }
    let mut c = linsolve::rank1_factor(&stacked)?.v;
    // The singular vector has a free sign; pick the one under which the
    // weights come out mostly nonnegative.
    let proj = &stacked * &c;
    let pos: f64 = proj.iter().map(|v| v.max(0.0).powi(2)).sum();
    let neg: f64 = proj.iter().map(|v| (-v).max(0.0).powi(2)).sum();
    if neg > pos {
        c.neg_mut();
    }
    let mut a = WeightMatrix::zeros(n);
    let mut deltas = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let a_new = normalized_rows(z, &c)?;
        if a_new.zero_rows().iter().all(|&f| f) {
            return Err(Error::AllRowsDegenerate);
        }
        let c_new = coef_from_rows(z, &a_new);
        deltas.push((rel(a_new.entries().as_slice(), a.entries().as_slice()), rel(c_new.as_slice(), c.as_slice())));
        a = a_new;
        c = c_new;
    }
    Ok(Factorization { a, c: KernelCoef::from(c), deltas })
}

/// Two-sweep factorization of the operator-regression estimates.
pub fn deterministic_als(z: &ZEstimates) -> Result<(WeightMatrix, KernelCoef)> {
    let f = deterministic_als_sweeps(&z.z, 2)?;
    Ok((f.a, f.c))
}

pub fn orals_fit(data: &TrajectoryData, basis: &BasisSpec, opts: &OralsOptions) -> Result<FitResult> {
    let z = regress(data, basis, opts, false)?;
    let mut history = Vec::new();
    let mut f = deterministic_als_sweeps(&z.z, 1)?;
    for sweeps in 1..=2 {
        if sweeps > 1 {
            f = deterministic_als_sweeps(&z.z, sweeps)?;
        }
        let l = loss(data, basis, &f.a, &f.c)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let (da, dc) = f.deltas[sweeps - 1];
        history.push(IterRecord { iter: sweeps, rel_change_a: da, rel_change_c: dc, loss: l });
    }
    Ok(FitResult { a_hat: f.a, c_hat: f.c, history, converged: true, residuals: z.residuals })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityReport {
    /// `|C_emp - C_theory|_F / |C_theory|_F` per agent (absolute when the theory is zero).
    pub discrepancy: Vec<f64>,
    /// Median over replications of `|z_hat - z|` (all agents stacked).
    pub median_error: f64,
    #[serde(skip)]
    pub empirical_cov: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub theory_cov: Vec<DMatrix<f64>>,
}

/// Compares the spread of `sqrt(M) (z_hat - z)` over `reps` independent
/// datasets with the limiting covariance `sigma^2 dt / L * Abar^{-1}`, where
/// `Abar = (1/(M L)) sum dt^2 B^T B` is estimated from one dataset of size `100 M`.
pub fn normality_harness(
    spec: &SystemSpec,
    a: &WeightMatrix,
    c: &KernelCoef,
    basis: &BasisSpec,
    m: usize,
    reps: usize,
    seed: u64,
) -> Result<NormalityReport> {
    if reps < 2 {
        return Err(Error::InvalidArgument("need at least two replications".into()));
    }
    let n = spec.n;
    let p = basis.p();
    let q = (n - 1) * p;
    let opts = OralsOptions::default();
    let truth: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut z = DVector::zeros(q);
            for (jj, j) in (0..n).filter(|&j| j != i).enumerate() {
                for k in 0..p {
                    z[jj * p + k] = a.get(i, j) * c.0[k];
                }
            }
            z
        })
        .collect();

    let errors: Vec<Vec<DVector<f64>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let s = SystemSpec { seed: rng::derive_seed(seed, tag::EXPERIMENT, r as u64), ..spec.clone() };
            let data = simulate(&s, a, basis, c, m)?;
            let est = operator_regression(&data, basis, &opts)?;
            Ok(est
                .z
                .iter()
                .enumerate()
                .map(|(i, zi)| DVector::from_row_slice(&zi.transpose().as_slice().to_vec()) - &truth[i])
                .collect())
        })
        .collect::<Result<_>>()?;

    let big_spec = SystemSpec { seed: rng::derive_seed(seed, tag::EXPERIMENT, u64::MAX), ..spec.clone() };
    let big = simulate(&big_spec, a, basis, c, 100 * m)?;
    let scale = spec.dt * spec.dt * spec.d as f64;
    let mut discrepancy = Vec::with_capacity(n);
    let mut empirical_cov = Vec::with_capacity(n);
    let mut theory_cov = Vec::with_capacity(n);
    for i in 0..n {
        let (g, _) = tensors::assemble_sensing_block(i, &big, basis, AssemblyMode::Normal)?.normal_form();
        let abar = g * scale;
        let theory = pinv_sym(&abar) * (spec.sigma * spec.sigma * spec.dt / spec.steps as f64);
        let mean = errors.iter().map(|e| &e[i]).fold(DVector::zeros(q), |acc, v| acc + v) / reps as f64;
        let mut emp = DMatrix::zeros(q, q);
        for e in &errors {
            let dv = (&e[i] - &mean) * (m as f64).sqrt();
            emp += &dv * dv.transpose();
        }
        emp /= (reps - 1) as f64;
        let tn = theory.norm();
        let diff = (&emp - &theory).norm();
        discrepancy.push(if tn > 0.0 { diff / tn } else { diff });
        empirical_cov.push(emp);
        theory_cov.push(theory);
    }
    let mut norms: Vec<f64> = errors.iter().map(|e| e.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()).collect();
    norms.sort_by(f64::total_cmp);
    let median_error = median_sorted(&norms);
    Ok(NormalityReport { discrepancy, median_error, empirical_cov, theory_cov })
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pinv_sym(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let n = g.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 1e-12 * lmax {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::graph_error;
    use crate::model::presets::*;
    use crate::model::{sample_weight_matrix, InitDist};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn truth_z(a: &WeightMatrix, c: &[f64]) -> Vec<DMatrix<f64>> {
        let n = a.n();
        (0..n)
            .map(|i| {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                DMatrix::from_fn(n - 1, c.len(), |jj, k| a.get(i, others[jj]) * c[k])
            })
            .collect()
    }

    #[test]
    fn exact_products_factor_exactly() {
        let a = sample_weight_matrix(6, 3, 2).unwrap();
        let c = vec![-0.5, 2.0, 1.0];
        let f = deterministic_als_sweeps(&truth_z(&a, &c), 2).unwrap();
        assert!((f.a.entries() - a.entries()).norm() < 1e-10);
        for k in 0..3 {
            assert!((f.c.0[k] - c[k]).abs() < 1e-10);
        }
        // A third sweep changes nothing.
        let g = deterministic_als_sweeps(&truth_z(&a, &c), 3).unwrap();
        assert!((g.a.entries() - f.a.entries()).norm() < 1e-12);
        assert!((g.c.to_dvector() - f.c.to_dvector()).norm() < 1e-12);
    }

    #[test]
    fn single_nonzero_product() {
        let mut z = vec![DMatrix::zeros(2, 2); 3];
        z[0][(0, 0)] = 1.0;
        z[0][(0, 1)] = 2.0;
        let f = deterministic_als_sweeps(&z, 2).unwrap();
        assert_eq!(f.a.entries().row(0).iter().cloned().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert!((f.c.0[0] - 1.0).abs() < 1e-12 && (f.c.0[1] - 2.0).abs() < 1e-12);
        assert_eq!(f.a.zero_rows(), &[false, true, true]);
    }

    #[test]
    fn all_zero_is_rejected() {
        assert_eq!(deterministic_als_sweeps(&vec![DMatrix::zeros(2, 2); 3], 2).unwrap_err(), Error::AllZero);
    }

    /// Oracle: polish the Frobenius objective `sum_i |Z_i - a_i c^T|^2` over a
    /// local grid in `c` with `a` given by its closed form; the factorization
    /// output must sit within the grid spacing of the grid minimizer.
    #[test]
    fn perturbed_products_match_local_grid_minimizer() {
        let a = sample_weight_matrix(4, 2, 5).unwrap();
        let c = vec![1.0, -0.7];
        let mut z = truth_z(&a, &c);
        let mut rng = rng::stream(6, 0, 0);
        for zi in z.iter_mut() {
            for v in zi.iter_mut() {
                *v += 1e-4 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let f = deterministic_als_sweeps(&z, 2).unwrap();
        assert!((f.a.entries() - a.entries()).norm() < 1e-3);
        assert!(((f.c.0[0] - c[0]).powi(2) + (f.c.0[1] - c[1]).powi(2)).sqrt() < 1e-3);
        let objective = |cv: &DVector<f64>| {
            let aw = normalized_rows(&z, cv).unwrap();
            z.iter()
                .enumerate()
                .map(|(i, zi)| {
                    let ai = DVector::from_iterator(3, (0..4).filter(|&j| j != i).map(|j| aw.get(i, j)));
                    (zi - &ai * cv.transpose()).norm_squared()
                })
                .sum::<f64>()
        };
        let step = 2e-5;
        let mut best = (f64::INFINITY, DVector::zeros(2));
        for s0 in -50..=50 {
            for s1 in -50..=50 {
                let cv = DVector::from_vec(vec![c[0] + s0 as f64 * step, c[1] + s1 as f64 * step]);
                let o = objective(&cv);
                if o < best.0 {
                    best = (o, cv);
                }
            }
        }
        assert!((f.c.to_dvector() - &best.1).norm() < 3.0 * step, "{} vs {}", f.c.to_dvector(), best.1);
    }

    fn noiseless(m: usize) -> (TrajectoryData, WeightMatrix) {
        let spec = SystemSpec { n: 6, d: 2, sigma: 0.0, dt: 1e-4, steps: 5, init: InitDist::UniformBox { lo: 0.0, hi: 1.5 }, seed: 1 };
        let a = sample_weight_matrix(6, 2, 1).unwrap();
        (simulate(&spec, &a, &lj_basis_exact(2), &lj_coef_exact(), m).unwrap(), a)
    }

    #[test]
    fn regression_is_exact_on_noiseless_data() {
        let (data, a) = noiseless(50);
        let est = operator_regression(&data, &lj_basis_exact(2), &OralsOptions::default()).unwrap();
        for (zi, ti) in est.z.iter().zip(truth_z(&a, &lj_coef_exact().0)) {
            assert!((zi - &ti).norm() <= 1e-9 * ti.norm());
        }
        assert!(est.min_sv_sq_per_m.iter().all(|&v| v > 0.0));
        let fit = orals_fit(&data, &lj_basis_exact(2), &OralsOptions::default()).unwrap();
        assert!(graph_error(&a, &fit.a_hat) < 1e-8);
        assert!(fit.c_hat.to_dvector().dot(&lj_coef_exact().to_dvector()) > 0.0);
    }

    #[test]
    fn zero_response_gives_zero_estimates() {
        let spec = SystemSpec { n: 3, d: 1, sigma: 0.0, dt: 0.1, steps: 2, init: InitDist::Gaussian { mean: 0.0, std: 1.0 }, seed: 0 };
        let a = sample_weight_matrix(3, 2, 0).unwrap();
        let data = simulate(&spec, &a, &fourier_pair(), &KernelCoef::zeros(2), 10).unwrap();
        let est = operator_regression(&data, &fourier_pair(), &OralsOptions::default()).unwrap();
        assert!(est.z.iter().all(|z| z.norm() == 0.0));
    }

    /// Tiny instance solved with hand-built 4x4 normal equations.
    #[test]
    fn regression_matches_hand_normal_equations() {
        let spec = SystemSpec { n: 3, d: 1, sigma: 0.2, dt: 0.05, steps: 2, init: InitDist::Gaussian { mean: 0.0, std: 1.0 }, seed: 3 };
        let a = sample_weight_matrix(3, 2, 3).unwrap();
        let basis = fourier_pair();
        let data = simulate(&spec, &a, &basis, &KernelCoef(vec![1.0, 0.5]), 8).unwrap();
        let est = operator_regression(&data, &basis, &OralsOptions { reg: Regularizer::None, mode: AssemblyMode::Long }).unwrap();
        for i in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let mut g = DMatrix::<f64>::zeros(4, 4);
            let mut h = DVector::<f64>::zeros(4);
            for m in 0..8 {
                for l in 0..2 {
                    let x = data.state(m, l);
                    let y = data.state(m, l + 1);
                    let row: Vec<f64> = others.iter().flat_map(|&j| [(x[j] - x[i]).sin(), (x[j] - x[i]).cos()]).collect();
                    let v = (y[i] - x[i]) / 0.05;
                    for r in 0..4 {
                        h[r] += row[r] * v;
                        for s in 0..4 {
                            g[(r, s)] += row[r] * row[s];
                        }
                    }
                }
            }
            let z = g.lu().solve(&h).unwrap();
            let got = DVector::from_row_slice(est.z[i].transpose().as_slice());
            assert!((got - &z).norm() <= 1e-9 * z.norm());
        }
    }

    #[test]
    fn noiseless_deviations_vanish() {
        let spec = SystemSpec { n: 3, d: 1, sigma: 0.0, dt: 0.1, steps: 1, init: InitDist::Gaussian { mean: 0.0, std: 1.0 }, seed: 0 };
        let a = sample_weight_matrix(3, 2, 0).unwrap();
        let r = normality_harness(&spec, &a, &KernelCoef(vec![1.0, 0.5]), &fourier_pair(), 50, 5, 1).unwrap();
        assert!(r.median_error < 1e-10);
        assert!(r.discrepancy.iter().all(|&d| d < 1e-12));
    }
}
