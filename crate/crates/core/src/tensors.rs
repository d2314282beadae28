//! Basis tensors, increments and regression-block assembly.
//!
//! Every block stacks one group of rows per observation `(m, l)`. Graph and
//! sensing blocks belong to a single agent `i` and order their rows as
//! `(m, l, dim)`; kernel-type blocks cover all agents with rows `(m, l, i, dim)`.
//! In all cases `m` is the slowest index. Graph-block columns run over `j != i`
//! in ascending order; sensing-block columns are `(j, k)` with `j` major.
//!
//! Blocks are either kept as the long design matrix or reduced to the scaled
//! Gram pair `(A^T A / rows, A^T b / rows)`. The reduction walks the
//! trajectories in fixed-size chunks and sums the chunk contributions in
//! chunk order, so the result does not depend on the number of threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linsolve::{self, Regularizer};
use crate::model::{BasisSpec, KernelCoef, WeightMatrix};
use crate::simulate::TrajectoryData;

/// `values[((j * N + i) * p + k) * d + dim] = psi_k(X_j - X_i)[dim]`, zero for `j == i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTensor {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub values: Vec<f64>,
}

impl BasisTensor {
    pub fn get(&self, j: usize, i: usize, dim: usize, k: usize) -> f64 {
        self.values[((j * self.n + i) * self.p + k) * self.d + dim]
    }
}

/// Fills `out[((i * N + j) * p + k) * d + dim] = psi_k(X_j - X_i)[dim]` for one
/// row-major state; the `j == i` slices are zeroed.
fn pair_values(basis: &BasisSpec, x: &[f64], n: usize, out: &mut [f64], diff: &mut [f64]) {
    let d = basis.dim;
    let pd = basis.p() * d;
    for i in 0..n {
        for j in 0..n {
            let slot = &mut out[(i * n + j) * pd..(i * n + j + 1) * pd];
            if i == j {
                slot.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            for k in 0..d {
                diff[k] = x[j * d + k] - x[i * d + k];
            }
            basis.eval_into(diff, slot);
        }
    }
}

pub fn build_basis_tensor(basis: &BasisSpec, x: &DMatrix<f64>) -> Result<BasisTensor> {
    let (n, d) = x.shape();
    if d != basis.dim {
        return Err(Error::DimensionMismatch(format!("state has d={d}, basis d={}", basis.dim)));
    }
    let p = basis.p();
    let flat: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| x[(i, k)]).collect();
    let mut by_i = vec![0.0; n * n * p * d];
    pair_values(basis, &flat, n, &mut by_i, &mut vec![0.0; d]);
    // Reorder to the (j, i) leading layout.
    let mut values = vec![0.0; n * n * p * d];
    for i in 0..n {
        for j in 0..n {
            let src = (i * n + j) * p * d;
            let dst = (j * n + i) * p * d;
            values[dst..dst + p * d].copy_from_slice(&by_i[src..src + p * d]);
        }
    }
    Ok(BasisTensor { n, d, p, values })
}

/// Finite-difference velocities `(X_{l+1} - X_l) / dt`, flat `[m][l][i][dim]` with `l < L`.
pub fn increments(data: &TrajectoryData) -> Vec<f64> {
    let s = data.state_len();
    let steps = data.steps();
    let dt = data.dt();
    let mut out = Vec::with_capacity(data.m() * steps * s);
    for m in 0..data.m() {
        for l in 0..steps {
            let (cur, next) = (data.state(m, l), data.state(m, l + 1));
            out.extend(cur.iter().zip(next).map(|(a, b)| (b - a) / dt));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssemblyMode {
    /// Normal equations when `d L M > (N - 1) p`, long matrix otherwise.
    #[default]
    Auto,
    Long,
    Normal,
}

impl AssemblyMode {
    pub fn use_normal(self, data: &TrajectoryData, p: usize) -> bool {
        match self {
            AssemblyMode::Long => false,
            AssemblyMode::Normal => true,
            AssemblyMode::Auto => data.d() * data.steps() * data.m() > (data.n() - 1) * p,
        }
    }
}

/// Row ordering of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLayout {
    /// Rows `(m, l, dim)` for one agent.
    Agent(usize),
    /// Rows `(m, l, i, dim)` over all agents.
    AllAgents,
}

/// One least-squares subproblem, kept in long form, normal form, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBlock {
    pub design: Option<DMatrix<f64>>,
    pub response: Option<DVector<f64>>,
    /// `(A^T A / rows, A^T b / rows)`.
    pub normal: Option<(DMatrix<f64>, DVector<f64>)>,
    /// `b^T b / rows`.
    pub response_sq: f64,
    pub rows: usize,
    pub cols: usize,
    pub layout: RowLayout,
}

impl RegressionBlock {
    pub fn from_long(design: DMatrix<f64>, response: DVector<f64>, layout: RowLayout) -> Self {
        let rows = design.nrows();
        let cols = design.ncols();
        let response_sq = response.norm_squared() / rows as f64;
        Self { design: Some(design), response: Some(response), normal: None, response_sq, rows, cols, layout }
    }

    /// The scaled Gram pair, computed from the design if needed.
    pub fn normal_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        if let Some((g, h)) = &self.normal {
            return (g.clone(), h.clone());
        }
        let a = self.design.as_ref().expect("block has neither form");
        let b = self.response.as_ref().expect("block has neither form");
        let at = a.transpose();
        let s = 1.0 / self.rows as f64;
        ((&at * a) * s, (&at * b) * s)
    }

    /// Regularized LS for `(1/rows) |Ax - b|^2 + lambda x^T P x`.
    pub fn solve(&self, reg: &Regularizer) -> Result<DVector<f64>> {
        match (&self.design, &self.response) {
            (Some(a), Some(b)) => {
                let scaled = match reg {
                    Regularizer::TikhonovId { lambda } => Regularizer::TikhonovId { lambda: lambda * self.rows as f64 },
                    Regularizer::TikhonovGeneralized { lambda, penalty } => Regularizer::TikhonovGeneralized {
                        lambda: lambda * self.rows as f64,
                        penalty: penalty.clone(),
                    },
                    other => other.clone(),
                };
                linsolve::solve_ls(a, b, &scaled)
            }
            _ => {
                let (g, h) = self.normal.as_ref().expect("block has neither form");
                linsolve::solve_normal(g, h, reg)
            }
        }
    }

    pub fn nnls(&self) -> Result<DVector<f64>> {
        match (&self.design, &self.response) {
            (Some(a), Some(b)) => linsolve::nnls(a, b),
            _ => {
                let (g, h) = self.normal.as_ref().expect("block has neither form");
                linsolve::nnls_normal(g, h)
            }
        }
    }

    /// `|Ax - b|^2 / rows`.
    pub fn residual_sq(&self, x: &DVector<f64>) -> f64 {
        match (&self.design, &self.response) {
            (Some(a), Some(b)) => (a * x - b).norm_squared() / self.rows as f64,
            _ => {
                let (g, h) = self.normal.as_ref().expect("block has neither form");
                (x.dot(&(g * x)) - 2.0 * x.dot(h) + self.response_sq).max(0.0)
            }
        }
    }
}

/// Chunk-local rows for one block.
struct ChunkBuf {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

enum Partial {
    Long(Vec<ChunkBuf>),
    Normal(Vec<(DMatrix<f64>, DVector<f64>, f64)>),
}

/// Chunks evaluated concurrently before their partial sums are folded in.
const WAVE: usize = 16;

/// Fixed chunking of trajectories; depends on `M` only.
fn chunks(m: usize) -> Vec<(usize, usize)> {
    let size = m.div_ceil(64).max(8);
    (0..m).step_by(size).map(|s| (s, (s + size).min(m))).collect()
}

/// Per-observation workspace handed to the fill callbacks.
pub(crate) struct Obs<'a> {
    pub x: &'a [f64],
    /// Velocity `(X_{l+1} - X_l) / dt`, row-major `N x d`.
    pub v: &'a [f64],
}

/// Generic assembly driver. `fill(obs, scratch, bufs, row)` writes the rows of
/// observation `obs` for every block starting at chunk-local row `row`.
fn assemble<S, F>(
    data: &TrajectoryData,
    nblocks: usize,
    rows_per_obs: usize,
    cols: usize,
    normal: bool,
    layout: impl Fn(usize) -> RowLayout,
    scratch: impl Fn() -> S + Sync,
    fill: F,
) -> Vec<RegressionBlock>
where
    F: Fn(&Obs, &mut S, &mut [ChunkBuf], usize) + Sync,
{
    let steps = data.steps();
    let s = data.state_len();
    let dt = data.dt();
    let plan = chunks(data.m());
    let work = |&(m0, m1): &(usize, usize)| -> Partial {
        let rows = (m1 - m0) * steps * rows_per_obs;
            let mut bufs: Vec<ChunkBuf> =
                (0..nblocks).map(|_| ChunkBuf { x: DMatrix::zeros(rows, cols), y: DVector::zeros(rows) }).collect();
            let mut sc = scratch();
            let mut v = vec![0.0; s];
            let mut row = 0;
            for m in m0..m1 {
                for l in 0..steps {
                    let (cur, next) = (data.state(m, l), data.state(m, l + 1));
                    for q in 0..s {
                        v[q] = (next[q] - cur[q]) / dt;
                    }
                    fill(&Obs { x: cur, v: &v }, &mut sc, &mut bufs, row);
                    row += rows_per_obs;
                }
            }
            if normal {
                Partial::Normal(
                    bufs.into_iter()
                        .map(|b| {
                            let xt = b.x.transpose();
                            (&xt * &b.x, &xt * &b.y, b.y.norm_squared())
                        })
                        .collect(),
                )
            } else {
                Partial::Long(bufs)
            }
    };

    let total_rows = data.m() * steps * rows_per_obs;
    if normal {
        let mut acc: Vec<(DMatrix<f64>, DVector<f64>, f64)> =
            (0..nblocks).map(|_| (DMatrix::zeros(cols, cols), DVector::zeros(cols), 0.0)).collect();
        for wave in plan.chunks(WAVE) {
            let parts: Vec<Partial> = wave.par_iter().map(work).collect();
            for part in parts {
                let Partial::Normal(blocks) = part else { unreachable!() };
                for (a, (g, h, bb)) in acc.iter_mut().zip(blocks) {
                    a.0 += g;
                    a.1 += h;
                    a.2 += bb;
                }
            }
        }
        let scale = 1.0 / total_rows as f64;
        acc.into_iter()
            .enumerate()
            .map(|(b, (g, h, bb))| RegressionBlock {
                design: None,
                response: None,
                normal: Some((g * scale, h * scale)),
                response_sq: bb * scale,
                rows: total_rows,
                cols,
                layout: layout(b),
            })
            .collect()
    } else {
        let mut designs: Vec<(DMatrix<f64>, DVector<f64>)> =
            (0..nblocks).map(|_| (DMatrix::zeros(total_rows, cols), DVector::zeros(total_rows))).collect();
        let mut offset = 0;
        for wave in plan.chunks(WAVE) {
            let parts: Vec<Partial> = wave.par_iter().map(work).collect();
            for part in parts {
                let Partial::Long(blocks) = part else { unreachable!() };
                let rows = blocks.first().map_or(0, |b| b.x.nrows());
                for (dst, b) in designs.iter_mut().zip(blocks) {
                    dst.0.rows_mut(offset, rows).copy_from(&b.x);
                    dst.1.rows_mut(offset, rows).copy_from(&b.y);
                }
                offset += rows;
            }
        }
        designs
            .into_iter()
            .enumerate()
            .map(|(b, (x, y))| RegressionBlock::from_long(x, y, layout(b)))
            .collect()
    }
}

fn check_basis(data: &TrajectoryData, basis: &BasisSpec) -> Result<()> {
    if basis.dim != data.d() {
        return Err(Error::DimensionMismatch(format!("data has d={}, basis d={}", data.d(), basis.dim)));
    }
    Ok(())
}

fn check_agent(data: &TrajectoryData, i: usize) -> Result<()> {
    if i >= data.n() {
        return Err(Error::InvalidArgument(format!("agent {i} out of range for N={}", data.n())));
    }
    Ok(())
}

/// Graph blocks for a set of agents, with agent `i` using kernel coefficients
/// `coefs(i)`. Column `jj` of block `i` holds `Phi_{c_i}(X_j - X_i)` where `j`
/// is the `jj`-th agent other than `i`.
pub(crate) fn assemble_graph_blocks_with<'c>(
    data: &TrajectoryData,
    basis: &BasisSpec,
    agents: &[usize],
    coefs: impl Fn(usize) -> &'c [f64] + Sync,
    mode: AssemblyMode,
) -> Result<Vec<RegressionBlock>> {
    check_basis(data, basis)?;
    for &i in agents {
        check_agent(data, i)?;
    }
    let n = data.n();
    let d = data.d();
    let normal = mode.use_normal(data, basis.p());
    Ok(assemble(
        data,
        agents.len(),
        d,
        n - 1,
        normal,
        |b| RowLayout::Agent(agents[b]),
        || (vec![0.0; d], vec![0.0; d]),
        |obs, (diff, phi), bufs, row| {
            for (b, &i) in agents.iter().enumerate() {
                let c = coefs(i);
                let buf = &mut bufs[b];
                let mut col = 0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    for k in 0..d {
                        diff[k] = obs.x[j * d + k] - obs.x[i * d + k];
                        phi[k] = 0.0;
                    }
                    basis.add_kernel(c, diff, 1.0, phi);
                    for k in 0..d {
                        buf.x[(row + k, col)] = phi[k];
                    }
                    col += 1;
                }
                for k in 0..d {
                    buf.y[row + k] = obs.v[i * d + k];
                }
            }
        },
    ))
}

/// Graph blocks for every agent under one kernel `c`.
pub fn assemble_graph_blocks(
    data: &TrajectoryData,
    basis: &BasisSpec,
    c: &KernelCoef,
    mode: AssemblyMode,
) -> Result<Vec<RegressionBlock>> {
    if c.len() != basis.p() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} basis functions", c.len(), basis.p())));
    }
    if c.norm() == 0.0 {
        return Err(Error::ZeroCoefficient);
    }
    let agents: Vec<usize> = (0..data.n()).collect();
    assemble_graph_blocks_with(data, basis, &agents, |_| c.as_slice(), mode)
}

/// Regression for row `i` of the weight matrix given the kernel `c`.
pub fn assemble_graph_block(
    i: usize,
    data: &TrajectoryData,
    basis: &BasisSpec,
    c: &KernelCoef,
    mode: AssemblyMode,
) -> Result<RegressionBlock> {
    check_agent(data, i)?;
    if c.len() != basis.p() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} basis functions", c.len(), basis.p())));
    }
    if c.norm() == 0.0 {
        return Err(Error::ZeroCoefficient);
    }
    Ok(assemble_graph_blocks_with(data, basis, &[i], |_| c.as_slice(), mode)?.remove(0))
}

/// Kernel features `F[i][k][dim] = sum_{j != i} a_ij psi_k(X_j - X_i)[dim]`,
/// flat `(i * p + k) * d + dim`.
fn kernel_features(basis: &BasisSpec, a: &DMatrix<f64>, x: &[f64], n: usize, out: &mut [f64], diff: &mut [f64], vals: &mut [f64]) {
    let d = basis.dim;
    let pd = basis.p() * d;
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let fi = &mut out[i * pd..(i + 1) * pd];
        for j in 0..n {
            let w = a[(i, j)];
            if j == i || w == 0.0 {
                continue;
            }
            for k in 0..d {
                diff[k] = x[j * d + k] - x[i * d + k];
            }
            basis.eval_into(diff, vals);
            for (f, v) in fi.iter_mut().zip(vals.iter()) {
                *f += w * v;
            }
        }
    }
}

/// Blocks built from kernel features. `per_agent = false` gives one block with
/// rows `(m, l, i, dim)`; `per_agent = true` gives one block per agent with rows
/// `(m, l, dim)`. `map(i, feat, out)` turns the `p x d` feature slice of agent
/// `i` (k-major) into `d` design rows of width `cols` (row-major in `out`).
pub(crate) fn assemble_feature_blocks<M>(
    data: &TrajectoryData,
    basis: &BasisSpec,
    a: &WeightMatrix,
    per_agent: bool,
    cols: usize,
    mode: AssemblyMode,
    map: M,
) -> Result<Vec<RegressionBlock>>
where
    M: Fn(usize, &[f64], &mut [f64]) + Sync,
{
    check_basis(data, basis)?;
    if a.n() != data.n() {
        return Err(Error::DimensionMismatch(format!("weight matrix N={}, data N={}", a.n(), data.n())));
    }
    let n = data.n();
    let d = data.d();
    let p = basis.p();
    let normal = mode.use_normal(data, p);
    let (nblocks, rows_per_obs) = if per_agent { (n, d) } else { (1, n * d) };
    let ent = a.entries();
    Ok(assemble(
        data,
        nblocks,
        rows_per_obs,
        cols,
        normal,
        |b| if per_agent { RowLayout::Agent(b) } else { RowLayout::AllAgents },
        || (vec![0.0; n * p * d], vec![0.0; d], vec![0.0; p * d], vec![0.0; d * cols]),
        |obs, (feat, diff, vals, rows), bufs, row| {
            kernel_features(basis, ent, obs.x, n, feat, diff, vals);
            for i in 0..n {
                map(i, &feat[i * p * d..(i + 1) * p * d], rows);
                let (buf, r0) = if per_agent { (&mut bufs[i], row) } else { (&mut bufs[0], row + i * d) };
                for k in 0..d {
                    for c in 0..cols {
                        buf.x[(r0 + k, c)] = rows[k * cols + c];
                    }
                    buf.y[r0 + k] = obs.v[i * d + k];
                }
            }
        },
    ))
}

/// Regression for the kernel coefficients given the weight matrix.
pub fn assemble_kernel_block(
    data: &TrajectoryData,
    basis: &BasisSpec,
    a: &WeightMatrix,
    mode: AssemblyMode,
) -> Result<RegressionBlock> {
    let p = basis.p();
    let d = basis.dim;
    let blocks = assemble_feature_blocks(data, basis, a, false, p, mode, |_, feat, out| {
        for k in 0..p {
            for dim in 0..d {
                out[dim * p + k] = feat[k * d + dim];
            }
        }
    })?;
    Ok(blocks.into_iter().next().expect("one block"))
}

/// Sensing blocks for a set of agents: unknown `z_i = vec_{j-major}(a_ij c_k)`.
pub fn assemble_sensing_blocks(
    data: &TrajectoryData,
    basis: &BasisSpec,
    agents: &[usize],
    mode: AssemblyMode,
) -> Result<Vec<RegressionBlock>> {
    check_basis(data, basis)?;
    for &i in agents {
        check_agent(data, i)?;
    }
    let n = data.n();
    let d = data.d();
    let p = basis.p();
    let pd = p * d;
    let normal = mode.use_normal(data, p);
    Ok(assemble(
        data,
        agents.len(),
        d,
        (n - 1) * p,
        normal,
        |b| RowLayout::Agent(agents[b]),
        || (vec![0.0; d], vec![0.0; pd]),
        |obs, (diff, vals), bufs, row| {
            for (b, &i) in agents.iter().enumerate() {
                let buf = &mut bufs[b];
                let mut jj = 0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    for k in 0..d {
                        diff[k] = obs.x[j * d + k] - obs.x[i * d + k];
                    }
                    basis.eval_into(diff, vals);
                    for k in 0..p {
                        for dim in 0..d {
                            buf.x[(row + dim, jj * p + k)] = vals[k * d + dim];
                        }
                    }
                    jj += 1;
                }
                for k in 0..d {
                    buf.y[row + k] = obs.v[i * d + k];
                }
            }
        },
    ))
}

pub fn assemble_sensing_block(i: usize, data: &TrajectoryData, basis: &BasisSpec, mode: AssemblyMode) -> Result<RegressionBlock> {
    Ok(assemble_sensing_blocks(data, basis, &[i], mode)?.remove(0))
}

/// Gram matrix of the basis under the empirical pair distribution:
/// `B[k][k'] = mean over (m, l, i != j) of <psi_k(r_ij), psi_k'(r_ij)>`.
pub fn bpsi_matrix(data: &TrajectoryData, basis: &BasisSpec) -> Result<DMatrix<f64>> {
    check_basis(data, basis)?;
    let n = data.n();
    let d = data.d();
    let p = basis.p();
    let plan = chunks(data.m());
    let parts: Vec<DMatrix<f64>> = plan
        .par_iter()
        .map(|&(m0, m1)| {
            let mut acc = DMatrix::zeros(p, p);
            let mut vals = vec![0.0; n * n * p * d];
            let mut diff = vec![0.0; d];
            for m in m0..m1 {
                for l in 0..data.steps() {
                    pair_values(basis, data.state(m, l), n, &mut vals, &mut diff);
                    for pair in vals.chunks(p * d) {
                        for k in 0..p {
                            for k2 in k..p {
                                let mut s = 0.0;
                                for dim in 0..d {
                                    s += pair[k * d + dim] * pair[k2 * d + dim];
                                }
                                acc[(k, k2)] += s;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut b = DMatrix::zeros(p, p);
    for part in parts {
        b += part;
    }
    let count = ((n - 1) * n * data.steps() * data.m()) as f64;
    for k in 0..p {
        for k2 in k..p {
            let v = b[(k, k2)] / count;
            b[(k, k2)] = v;
            b[(k2, k)] = v;
        }
    }
    Ok(b)
}

/// Mean squared drift residual over `(m, l)`: `sum |v - f(X)|_F^2 / (M L)`,
/// with `f` evaluated into the provided buffer.
pub(crate) fn mean_drift_residual(data: &TrajectoryData, drift: impl Fn(&[f64], &mut [f64]) + Sync) -> f64 {
    let s = data.state_len();
    let dt = data.dt();
    let plan = chunks(data.m());
    let parts: Vec<f64> = plan
        .par_iter()
        .map(|&(m0, m1)| {
            let mut f = vec![0.0; s];
            let mut acc = 0.0;
            for m in m0..m1 {
                for l in 0..data.steps() {
                    let (cur, next) = (data.state(m, l), data.state(m, l + 1));
                    drift(cur, &mut f);
                    for q in 0..s {
                        let r = (next[q] - cur[q]) / dt - f[q];
                        acc += r * r;
                    }
                }
            }
            acc
        })
        .collect();
    parts.iter().sum::<f64>() / (data.m() * data.steps()) as f64
}
