//! Three-fold alternating least squares for systems where agent `i` uses its
//! own kernel coefficients `cmat[:, i]`, with `cmat = u v^T` of rank `Q` and
//! `v^T v = I`. Each iteration updates the weight matrix (nonnegative LS per
//! row), the coefficient factor `u` (one LS problem), and the type factor `v`
//! (LS per agent followed by orthogonal Procrustes), optionally snapping the
//! rows of `v` to `Q` K-means centroids.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::als::{expand_row, loss_multitype};
use crate::error::{Error, Result};
use crate::linsolve::{self, Regularizer};
use crate::metrics::trajectory_error;
use crate::model::{BasisSpec, WeightMatrix};
use crate::rng::{self, tag};
use crate::simulate::{simulate_multitype, TrajectoryData};
use crate::tensors::{self, AssemblyMode, RegressionBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct ThreefoldOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Replace the rows of `v` by their K-means centroids after each v-step.
    pub use_kmeans: bool,
    /// Cluster the rows of `v` for labels only, leaving `v` untouched.
    pub label_only: bool,
    pub seed: u64,
    pub mode: AssemblyMode,
}

impl Default for ThreefoldOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 50, use_kmeans: false, label_only: false, seed: 0, mode: AssemblyMode::Auto }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultitypeIter {
    pub iter: usize,
    pub rel_change_a: f64,
    pub rel_change_u: f64,
    pub rel_change_v: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultitypeFactors {
    pub a: WeightMatrix,
    /// `p x Q`.
    #[serde(serialize_with = "ser_matrix")]
    pub u: DMatrix<f64>,
    /// `N x Q`, orthonormal columns.
    #[serde(serialize_with = "ser_matrix")]
    pub v: DMatrix<f64>,
    /// `p x N`, equal to `u v^T`.
    #[serde(serialize_with = "ser_matrix")]
    pub cmat: DMatrix<f64>,
    /// Type of every agent, when clustering was requested.
    pub labels: Option<Vec<usize>>,
    pub history: Vec<MultitypeIter>,
    pub converged: bool,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect();
    rows.serialize(s)
}

fn rel_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let diff = (new - old).norm();
    let base = old.norm();
    if base > 0.0 {
        diff / base
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn negated(block: &RegressionBlock) -> RegressionBlock {
    RegressionBlock {
        design: block.design.as_ref().map(|a| -a),
        response: block.response.clone(),
        normal: block.normal.as_ref().map(|(g, h)| (g.clone(), -h)),
        ..block.clone()
    }
}

/// a-step. Agent `i` uses `c_i = u v_i^T`; since only the product of a row of
/// `a` and `c_i` is identified, both signs of `v_i` are tried and the row of
/// `v` is flipped when the negative one fits better.
fn a_step(
    data: &TrajectoryData,
    basis: &BasisSpec,
    u: &DMatrix<f64>,
    v: &mut DMatrix<f64>,
    mode: AssemblyMode,
) -> Result<WeightMatrix> {
    let n = data.n();
    let cmat = u * v.transpose();
    let cols: Vec<Vec<f64>> = (0..n).map(|i| cmat.column(i).iter().cloned().collect()).collect();
    let agents: Vec<usize> = (0..n).collect();
    let blocks = tensors::assemble_graph_blocks_with(data, basis, &agents, |i| cols[i].as_slice(), mode)?;
    let rows: Vec<(DVector<f64>, bool)> = blocks
        .par_iter()
        .map(|b| {
            let plus = b.nnls()?;
            let nb = negated(b);
            let minus = nb.nnls()?;
            Ok(if nb.residual_sq(&minus) < b.residual_sq(&plus) { (minus, true) } else { (plus, false) })
        })
        .collect::<Result<_>>()?;
    let mut raw = DMatrix::zeros(n, n);
    for (i, (r, flip)) in rows.iter().enumerate() {
        for (j, w) in expand_row(i, r).into_iter().enumerate() {
            raw[(i, j)] = w;
        }
        if *flip {
            v.row_mut(i).neg_mut();
        }
    }
    WeightMatrix::from_raw(raw)
}

/// u-step: one LS problem over `vec(u)` (index `k * Q + q`).
fn u_step(data: &TrajectoryData, basis: &BasisSpec, a: &WeightMatrix, v: &DMatrix<f64>, mode: AssemblyMode) -> Result<DMatrix<f64>> {
    let (p, d, q) = (basis.p(), basis.dim, v.ncols());
    let cols = p * q;
    let blocks = tensors::assemble_feature_blocks(data, basis, a, false, cols, mode, |i, feat, out| {
        for dim in 0..d {
            for k in 0..p {
                for t in 0..q {
                    out[dim * cols + k * q + t] = feat[k * d + dim] * v[(i, t)];
                }
            }
        }
    })?;
    let x = blocks[0].solve(&Regularizer::MinNorm)?;
    Ok(DMatrix::from_row_slice(p, q, x.as_slice()))
}

/// v-step: LS for every row of `v`, then the nearest orthonormal frame.
fn v_step(data: &TrajectoryData, basis: &BasisSpec, a: &WeightMatrix, u: &DMatrix<f64>, mode: AssemblyMode) -> Result<DMatrix<f64>> {
    let (p, d, q, n) = (basis.p(), basis.dim, u.ncols(), data.n());
    let blocks = tensors::assemble_feature_blocks(data, basis, a, true, q, mode, |_, feat, out| {
        for dim in 0..d {
            for t in 0..q {
                out[dim * q + t] = (0..p).map(|k| feat[k * d + dim] * u[(k, t)]).sum();
            }
        }
    })?;
    let rows: Vec<DVector<f64>> = blocks.par_iter().map(|b| b.solve(&Regularizer::MinNorm)).collect::<Result<_>>()?;
    let mut raw = DMatrix::zeros(n, q);
    for (i, r) in rows.iter().enumerate() {
        raw.row_mut(i).copy_from(&r.transpose());
    }
    orthonormalize(&raw)
}

fn orthonormalize(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linsolve::procrustes_orthonormalize(v).map_err(|e| match e {
        Error::RankDeficient { .. } => Error::RankDeficientV,
        other => other,
    })
}

fn cluster_rows(v: &DMatrix<f64>, seed: u64) -> Result<linsolve::KmeansResult> {
    let pts: Vec<Vec<f64>> = (0..v.nrows()).map(|i| v.row(i).iter().cloned().collect()).collect();
    linsolve::kmeans(&pts, v.ncols(), seed)
}

/// Orders columns by decreasing `|u[:, q]|` and makes the largest entry of
/// each `u` column positive, flipping `v` alongside.
fn fix_gauge(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    let q = u.ncols();
    let mut order: Vec<usize> = (0..q).collect();
    let norms: Vec<f64> = (0..q).map(|t| u.column(t).norm()).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let u0 = u.clone();
    let v0 = v.clone();
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u0.column(src));
        v.set_column(dst, &v0.column(src));
        let col = u.column(dst);
        let mut best = 0;
        for k in 1..col.len() {
            if col[k].abs() > col[best].abs() {
                best = k;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(dst).neg_mut();
            v.column_mut(dst).neg_mut();
        }
    }
}

pub fn threefold_fit(data: &TrajectoryData, basis: &BasisSpec, q: usize, opts: &ThreefoldOptions) -> Result<MultitypeFactors> {
    basis.validate()?;
    let (n, p) = (data.n(), basis.p());
    if q == 0 || q > p.min(n) {
        return Err(Error::InvalidArgument(format!("Q={q} must lie in 1..={}", p.min(n))));
    }
    if opts.max_iter == 0 || !(opts.tol >= 0.0) {
        return Err(Error::InvalidArgument("need max_iter >= 1 and tol >= 0".into()));
    }
    let mut rng = rng::stream(opts.seed, tag::INIT_COEF, 1);
    let mut u = DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut v = orthonormalize(&DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal)))?;
    let mut a = WeightMatrix::zeros(n);
    let mut labels = None;
    let mut history = Vec::new();
    let mut converged = false;

    for iter in 1..=opts.max_iter {
        let (a_prev, u_prev, v_prev) = (a.clone(), u.clone(), v.clone());
        a = a_step(data, basis, &u, &mut v, opts.mode)?;
        if a.zero_rows().iter().all(|&z| z) {
            // Nothing left to explain the increments: no interaction at all.
            u.fill(0.0);
            converged = true;
            break;
        }
        u = u_step(data, basis, &a, &v, opts.mode)?;
        v = v_step(data, basis, &a, &u, opts.mode)?;
        if opts.use_kmeans || opts.label_only {
            let km = cluster_rows(&v, rng::derive_seed(opts.seed, tag::KMEANS, iter as u64))?;
            if opts.use_kmeans {
                let snapped = DMatrix::from_fn(n, q, |i, t| km.centroids[km.labels[i]][t]);
                v = orthonormalize(&snapped)?;
            }
            labels = Some(km.labels);
        }
        let loss = loss_multitype(data, basis, &a, &(&u * v.transpose()));
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let rec = MultitypeIter {
            iter,
            rel_change_a: if iter == 1 { f64::INFINITY } else { rel_change(a.entries(), a_prev.entries()) },
            rel_change_u: rel_change(&u, &u_prev),
            rel_change_v: rel_change(&v, &v_prev),
            loss,
        };
        let done = rec.rel_change_a <= opts.tol && rec.rel_change_u <= opts.tol && rec.rel_change_v <= opts.tol;
        history.push(rec);
        if done {
            converged = true;
            break;
        }
    }
    fix_gauge(&mut u, &mut v);
    let cmat = &u * v.transpose();
    Ok(MultitypeFactors { a, u, v, cmat, labels, history, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub q: usize,
    /// Mean relative trajectory error on the test set; infinite if the fit
    /// or the prediction failed.
    pub traj_err: f64,
}

/// Fits every candidate `Q` on `train` and predicts `test` from its initial
/// conditions. Predictions reuse the test system's seed, so they share the
/// initial states and noise draws of a test set produced by `simulate` with
/// that seed. Ties go to the smallest `Q`.
pub fn model_select(
    train: &TrajectoryData,
    test: &TrajectoryData,
    basis: &BasisSpec,
    candidates: &[usize],
    opts: &ThreefoldOptions,
) -> Result<(usize, Vec<SelectionRow>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate Q".into()));
    }
    let mut qs = candidates.to_vec();
    qs.sort_unstable();
    qs.dedup();
    let table: Vec<SelectionRow> = qs
        .iter()
        .map(|&q| {
            let err = threefold_fit(train, basis, q, opts)
                .and_then(|f| simulate_multitype(&test.spec, &f.a, basis, &f.cmat, test.m()))
                .and_then(|pred| trajectory_error(test, &pred))
                .unwrap_or(f64::INFINITY);
            SelectionRow { q, traj_err: if err.is_nan() { f64::INFINITY } else { err } }
        })
        .collect();
    let mut best = &table[0];
    for row in &table[1..] {
        if row.traj_err < best.traj_err {
            best = row;
        }
    }
    Ok((best.q, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::als::{als_fit, AlsOptions};
    use crate::model::presets::*;
    use crate::model::{drift, drift_multitype, sample_weight_matrix, InitDist, KernelCoef, SystemSpec};

    fn spec(n: usize, sigma: f64, seed: u64) -> SystemSpec {
        SystemSpec { n, d: 1, sigma, dt: 1e-3, steps: 10, init: InitDist::UniformBox { lo: 0.0, hi: 5.0 }, seed }
    }

    fn two_type_truth(n: usize, p: usize) -> DMatrix<f64> {
        let c1: Vec<f64> = (0..p).map(|k| if k < p / 2 { 1.0 - 0.2 * k as f64 } else { 0.0 }).collect();
        let c2: Vec<f64> = (0..p).map(|k| if k >= p / 2 { 0.5 + 0.1 * k as f64 } else { -0.2 }).collect();
        DMatrix::from_fn(p, n, |k, i| if i % 2 == 0 { c1[k] } else { c2[k] })
    }

    #[test]
    fn rejects_bad_q() {
        let basis = hat_basis(1, 4, 0.0, 5.0);
        let a = sample_weight_matrix(4, 3, 0).unwrap();
        let data = simulate_multitype(&spec(4, 0.0, 0), &a, &basis, &two_type_truth(4, 4), 5).unwrap();
        assert!(threefold_fit(&data, &basis, 0, &ThreefoldOptions::default()).is_err());
        assert!(threefold_fit(&data, &basis, 5, &ThreefoldOptions::default()).is_err());
    }

    #[test]
    fn single_type_matches_als_drift() {
        let basis = hat_basis(1, 4, 0.0, 5.0);
        let a = sample_weight_matrix(5, 3, 2).unwrap();
        let c = KernelCoef(vec![1.0, -0.5, 0.3, 0.2]);
        let data = crate::simulate::simulate(&spec(5, 0.0, 2), &a, &basis, &c, 40).unwrap();
        let fit = threefold_fit(&data, &basis, 1, &ThreefoldOptions { max_iter: 100, tol: 1e-12, ..Default::default() }).unwrap();
        let als = als_fit(&data, &basis, &AlsOptions { max_iter: 50, tol: 1e-12, ..Default::default() }).unwrap();
        for m in [0, 17, 39] {
            let x = data.state_matrix(m, 3);
            let f3 = drift_multitype(&fit.a, &basis, &fit.cmat, &x).unwrap();
            let f1 = drift(&als.a_hat, &basis, &als.c_hat, &x).unwrap();
            assert!((&f3 - &f1).norm() <= 1e-6 * f1.norm(), "{} vs {}", f3, f1);
        }
    }

    #[test]
    fn exact_two_type_recovery() {
        let (n, p) = (8, 4);
        let basis = hat_basis(1, p, 0.0, 5.0);
        let a = sample_weight_matrix(n, n - 1, 5).unwrap();
        let cmat = two_type_truth(n, p);
        let data = simulate_multitype(&spec(n, 0.0, 5), &a, &basis, &cmat, 60).unwrap();
        let opts = ThreefoldOptions { max_iter: 300, tol: 1e-13, use_kmeans: true, ..Default::default() };
        let fit = threefold_fit(&data, &basis, 2, &opts).unwrap();
        assert!(crate::metrics::graph_error(&a, &fit.a) < 1e-6, "{}", crate::metrics::graph_error(&a, &fit.a));
        assert!((&fit.cmat - &cmat).norm() < 1e-6 * cmat.norm(), "{}", fit.cmat);
        let labels = fit.labels.unwrap();
        for i in 0..n {
            assert_eq!(labels[i] == labels[0], i % 2 == 0);
        }
    }

    #[test]
    fn invariants_hold_every_run() {
        let (n, p) = (6, 4);
        let basis = hat_basis(1, p, 0.0, 5.0);
        let a = sample_weight_matrix(n, 3, 7).unwrap();
        let data = simulate_multitype(&spec(n, 0.05, 7), &a, &basis, &two_type_truth(n, p), 30).unwrap();
        for use_kmeans in [false, true] {
            let opts = ThreefoldOptions { max_iter: 8, use_kmeans, ..Default::default() };
            let fit = threefold_fit(&data, &basis, 2, &opts).unwrap();
            let vtv = fit.v.transpose() * &fit.v;
            assert!((vtv - DMatrix::identity(2, 2)).norm() < 1e-8);
            assert!((&fit.u * fit.v.transpose() - &fit.cmat).norm() < 1e-12);
            if use_kmeans {
                let mut distinct: Vec<DVector<f64>> = Vec::new();
                for i in 0..n {
                    let col = fit.cmat.column(i).into_owned();
                    if !distinct.iter().any(|c| (c - &col).norm() < 1e-10) {
                        distinct.push(col);
                    }
                }
                assert!(distinct.len() <= 2);
                assert_eq!(fit.labels.as_ref().unwrap().len(), n);
            }
        }
    }

    #[test]
    fn u_step_does_not_increase_loss() {
        let (n, p) = (6, 4);
        let basis = hat_basis(1, p, 0.0, 5.0);
        let a = sample_weight_matrix(n, 3, 9).unwrap();
        let data = simulate_multitype(&spec(n, 0.05, 9), &a, &basis, &two_type_truth(n, p), 20).unwrap();
        let mut rng = rng::stream(3, tag::EXPERIMENT, 0);
        let u0 = DMatrix::from_fn(p, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut v = orthonormalize(&DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal))).unwrap();
        let ah = a_step(&data, &basis, &u0, &mut v, AssemblyMode::Auto).unwrap();
        let before = loss_multitype(&data, &basis, &ah, &(&u0 * v.transpose()));
        let u1 = u_step(&data, &basis, &ah, &v, AssemblyMode::Auto).unwrap();
        let after = loss_multitype(&data, &basis, &ah, &(&u1 * v.transpose()));
        assert!(after <= before * (1.0 + 1e-12), "{after} > {before}");
    }

    #[test]
    fn zero_kernel_ties_pick_smallest_q() {
        let basis = hat_basis(1, 4, 0.0, 5.0);
        let a = sample_weight_matrix(5, 2, 1).unwrap();
        let zero = DMatrix::zeros(4, 5);
        let train = simulate_multitype(&spec(5, 0.0, 1), &a, &basis, &zero, 10).unwrap();
        let test = simulate_multitype(&spec(5, 0.0, 2), &a, &basis, &zero, 4).unwrap();
        let (q, table) = model_select(&train, &test, &basis, &[2, 1], &ThreefoldOptions::default()).unwrap();
        assert_eq!(q, 1);
        assert!(table.iter().all(|r| r.traj_err == 0.0));
    }
}
