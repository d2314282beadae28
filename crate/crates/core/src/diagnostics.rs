//! Identifiability diagnostics: the exploration measure and norms under it,
//! conditioning of regression blocks, RIP-ratio scans for the row-wise sensing
//! operators, loss-landscape grids, and a Monte-Carlo check of the Gaussian
//! coercivity constants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BasisFn, BasisSpec, KernelCoef};
use crate::rng::{self, tag};
use crate::simulate::TrajectoryData;
use crate::tensors::RegressionBlock;

/// Uniformly weighted samples of pairwise differences `r_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub d: usize,
    /// Flat `[sample][dim]`.
    pub samples: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn from_samples(d: usize, samples: Vec<f64>) -> Result<Self> {
        if d == 0 || samples.len() % d != 0 {
            return Err(Error::ShapeMismatch(format!("{} values do not split into d={d} samples", samples.len())));
        }
        Ok(Self { d, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.samples[s * self.d..(s + 1) * self.d]
    }

    /// `sqrt(mean_s |f(r_s)|^2)` for a vector field `f` written into its buffer.
    pub fn l2_norm_of(&self, f: impl Fn(&[f64], &mut [f64]) + Sync) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let d = self.d;
        // Fixed-size chunks keep the summation order independent of the thread pool.
        let parts: Vec<f64> = self
            .samples
            .par_chunks(4096 * d)
            .map(|chunk| {
                let mut out = vec![0.0; d];
                chunk
                    .chunks(d)
                    .map(|r| {
                        f(r, &mut out);
                        out.iter().map(|v| v * v).sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .collect();
        Ok((parts.iter().sum::<f64>() * self.weight()).sqrt())
    }
}

/// All `r_ij = X_j - X_i` with `i != j` at the times `l < L` of every trajectory.
pub fn exploration_measure(data: &TrajectoryData) -> EmpiricalMeasure {
    let (n, d) = (data.n(), data.d());
    let mut samples = Vec::with_capacity(data.m() * data.steps() * n * (n - 1) * d);
    for m in 0..data.m() {
        for l in 0..data.steps() {
            let x = data.state(m, l);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        samples.extend((0..d).map(|k| x[j * d + k] - x[i * d + k]));
                    }
                }
            }
        }
    }
    EmpiricalMeasure { d, samples }
}

/// `|Phi_c|` in `L^2(rho)`.
pub fn l2rho_norm(basis: &BasisSpec, coef: &KernelCoef, measure: &EmpiricalMeasure) -> Result<f64> {
    if coef.len() != basis.p() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} basis functions", coef.len(), basis.p())));
    }
    if measure.d != basis.dim {
        return Err(Error::DimensionMismatch(format!("measure d={}, basis d={}", measure.d, basis.dim)));
    }
    measure.l2_norm_of(|r, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        basis.add_kernel(coef.as_slice(), r, 1.0, out);
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingvalReport {
    /// `sigma_min(A)^2 / M`.
    pub min_sv_sq: f64,
    /// `sigma_max(A) / sigma_min(A)`; infinite for a singular design.
    pub condition: f64,
}

/// Smallest squared singular value of a block's design divided by the number
/// of trajectories `m` that produced it.
pub fn min_singval_sq(block: &RegressionBlock, m: usize) -> SingvalReport {
    let (smin_sq, smax_sq) = match &block.design {
        Some(a) => {
            let sv = a.clone().svd(false, false).singular_values;
            let smax = sv.iter().cloned().fold(0.0, f64::max);
            let smin = if a.nrows() < a.ncols() { 0.0 } else { sv.iter().cloned().fold(f64::INFINITY, f64::min) };
            (smin * smin, smax * smax)
        }
        None => {
            let (g, _) = block.normal_form();
            let ev = SymmetricEigen::new(g).eigenvalues;
            let rows = block.rows as f64;
            let lmax = ev.iter().cloned().fold(0.0, f64::max);
            let lmin = ev.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
            (lmin * rows, lmax * rows)
        }
    };
    let condition = if smin_sq > 0.0 { (smax_sq / smin_sq).sqrt() } else { f64::INFINITY };
    SingvalReport { min_sv_sq: smin_sq / m as f64, condition }
}

/// Per-sample sensing matrices of agent `i`: `A[jj][k] = psi_k(X_j - X_i)[dim]`
/// for every trajectory, time `l < L` and state component `dim`.
pub fn sensing_matrices(data: &TrajectoryData, basis: &BasisSpec, i: usize) -> Result<Vec<DMatrix<f64>>> {
    let (n, d, p) = (data.n(), data.d(), basis.p());
    if basis.dim != d {
        return Err(Error::DimensionMismatch(format!("data has d={d}, basis d={}", basis.dim)));
    }
    if i >= n {
        return Err(Error::InvalidArgument(format!("agent {i} out of range for N={n}")));
    }
    let mut out = Vec::with_capacity(data.m() * data.steps() * d);
    let mut diff = vec![0.0; d];
    let mut vals = vec![0.0; p * d];
    for m in 0..data.m() {
        for l in 0..data.steps() {
            let x = data.state(m, l);
            let mut mats = vec![DMatrix::zeros(n - 1, p); d];
            for (jj, j) in (0..n).filter(|&j| j != i).enumerate() {
                for k in 0..d {
                    diff[k] = x[j * d + k] - x[i * d + k];
                }
                basis.eval_into(&diff, &mut vals);
                for k in 0..p {
                    for (dim, mat) in mats.iter_mut().enumerate() {
                        mat[(jj, k)] = vals[k * d + dim];
                    }
                }
            }
            out.extend(mats);
        }
    }
    Ok(out)
}

/// I.i.d. standard Gaussian sensing matrices.
pub fn gaussian_sensing(count: usize, rows: usize, cols: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = rng::stream(seed, tag::PROBE, 1);
    (0..count).map(|_| DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RipReport {
    /// `R_l / C`, each in `[0, 2]`.
    pub ratios: Vec<f64>,
    pub c: f64,
    pub delta: f64,
}

fn random_unit(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Second-moment matrix `G = (1/M) sum_m vec(A_m) vec(A_m)^T` (row-major vec),
/// so that `(1/M) sum_m |u^T A_m v|^2 = vec(u v^T)^T G vec(u v^T)`.
fn sensing_moment(mats: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = mats.first().ok_or(Error::InvalidArgument("no sensing matrices".into()))?;
    let (r, c) = first.shape();
    if mats.iter().any(|a| a.shape() != (r, c)) {
        return Err(Error::ShapeMismatch("sensing matrices differ in shape".into()));
    }
    let q = r * c;
    let mut stacked = DMatrix::zeros(mats.len(), q);
    for (m, a) in mats.iter().enumerate() {
        for j in 0..r {
            for k in 0..c {
                stacked[(m, j * c + k)] = a[(j, k)];
            }
        }
    }
    let st = stacked.transpose();
    Ok((&st * &stacked) / mats.len() as f64)
}

fn outer_vec(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(u.len() * v.len(), |idx, _| u[idx / v.len()] * v[idx % v.len()])
}

/// Rank-1 RIP ratios `R = (1/M) sum_m |u^T A_m v|^2` over random unit pairs,
/// normalized by `C = (max R + min R) / 2`.
pub fn rip_scan(sensing: &[DMatrix<f64>], n_probe: usize, seed: u64) -> Result<RipReport> {
    if n_probe < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 probes, got {n_probe}")));
    }
    let g = sensing_moment(sensing)?;
    let (r, c) = sensing[0].shape();
    let mut rng = rng::stream(seed, tag::PROBE, 0);
    let raw: Vec<f64> = (0..n_probe)
        .map(|_| {
            let u = random_unit(&mut rng, r);
            let v = random_unit(&mut rng, c);
            let z = outer_vec(&u, &v);
            z.dot(&(&g * &z))
        })
        .collect();
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let cnorm = 0.5 * (max + min);
    if !(cnorm > 0.0) {
        return Err(Error::DegenerateDenominator(cnorm));
    }
    Ok(RipReport { ratios: raw.iter().map(|x| x / cnorm).collect(), c: cnorm, delta: (max - min) / (max + min) })
}

/// Loss `E(theta1, theta2) = (1/M) sum_m |U*^T A_m V* - U^T A_m V|^2` on a
/// uniform periodic grid, for `2 x 2` sensing matrices with `U, V` unit
/// vectors at angles `theta1`, `theta2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Landscape {
    pub size: usize,
    /// Row-major `[i1][i2]` with `theta = 2 pi i / size`.
    pub loss: Vec<f64>,
    /// Grid indices of strict 8-neighbour local minima.
    pub minima: Vec<(usize, usize)>,
}

impl Landscape {
    pub fn at(&self, i1: usize, i2: usize) -> f64 {
        self.loss[i1 * self.size + i2]
    }

    pub fn theta(&self, i: usize) -> f64 {
        std::f64::consts::TAU * i as f64 / self.size as f64
    }

    pub fn max(&self) -> f64 {
        self.loss.iter().cloned().fold(0.0, f64::max)
    }

    /// Local minima whose loss exceeds `frac` of the grid maximum.
    pub fn spurious_minima(&self, frac: f64) -> Vec<(usize, usize)> {
        let cut = frac * self.max();
        self.minima.iter().cloned().filter(|&(a, b)| self.at(a, b) > cut).collect()
    }
}

fn angle_vec(t1: f64, t2: f64) -> DVector<f64> {
    let u = DVector::from_vec(vec![t1.cos(), t1.sin()]);
    let v = DVector::from_vec(vec![t2.cos(), t2.sin()]);
    outer_vec(&u, &v)
}

/// Loss at one pair of angles.
pub fn landscape_loss(sensing: &[DMatrix<f64>], truth: (f64, f64), theta: (f64, f64)) -> Result<f64> {
    let g = sensing_moment(sensing)?;
    let dz = angle_vec(truth.0, truth.1) - angle_vec(theta.0, theta.1);
    Ok(dz.dot(&(&g * &dz)))
}

pub fn landscape_scan(size: usize, sensing: &[DMatrix<f64>], truth: (f64, f64)) -> Result<Landscape> {
    if size < 3 {
        return Err(Error::InvalidArgument(format!("grid size {size} is too small")));
    }
    let g = sensing_moment(sensing)?;
    if g.nrows() != 4 {
        return Err(Error::ShapeMismatch("landscape scans need 2 x 2 sensing matrices".into()));
    }
    let zstar = angle_vec(truth.0, truth.1);
    let step = std::f64::consts::TAU / size as f64;
    let loss: Vec<f64> = (0..size * size)
        .into_par_iter()
        .map(|idx| {
            let dz = &zstar - angle_vec(step * (idx / size) as f64, step * (idx % size) as f64);
            dz.dot(&(&g * &dz))
        })
        .collect();
    let gmax = loss.iter().cloned().fold(0.0, f64::max);
    let slack = 1e-12 * gmax;
    let mut minima = Vec::new();
    for a in 0..size {
        for b in 0..size {
            let v = loss[a * size + b];
            let strict = (-1i64..=1).all(|da| {
                (-1i64..=1).all(|db| {
                    if da == 0 && db == 0 {
                        return true;
                    }
                    let na = (a as i64 + da).rem_euclid(size as i64) as usize;
                    let nb = (b as i64 + db).rem_euclid(size as i64) as usize;
                    v < loss[na * size + nb] - slack
                })
            });
            if strict {
                minima.push((a, b));
            }
        }
    }
    Ok(Landscape { size, loss, minima })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityCheck {
    pub ratio: f64,
    pub bound: f64,
}

/// Reference values of `1 - c_0` for Gaussian initial laws.
pub fn gaussian_coercivity_bound(d: usize) -> Option<f64> {
    match d {
        1 => Some((4.0f64 / 15.0).sqrt()),
        2 => Some(0.1269),
        3 => Some(0.2661),
        _ => None,
    }
}

/// Estimates `E[phi(|r12|) phi(|r13|) cos angle(r12, r13)] / E[phi(|r12|)^2]`
/// for `X1, X2, X3` i.i.d. standard Gaussian in `R^d`.
pub fn gaussian_coercivity_mc(d: usize, phi: &BasisFn, n_mc: usize, seed: u64) -> Result<CoercivityCheck> {
    let bound = gaussian_coercivity_bound(d).ok_or(Error::InvalidArgument(format!("dimension {d} not in 1..=3")))?;
    if n_mc == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    const CHUNK: usize = 16384;
    let nchunks = n_mc.div_ceil(CHUNK);
    let parts: Vec<(f64, f64)> = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, tag::MONTE_CARLO, c as u64);
            let count = CHUNK.min(n_mc - c * CHUNK);
            let (mut num, mut den) = (0.0, 0.0);
            let mut x = [[0.0; 3]; 3];
            for _ in 0..count {
                for row in x.iter_mut() {
                    for v in row.iter_mut().take(d) {
                        *v = rng.sample(StandardNormal);
                    }
                }
                let (mut n12, mut n13, mut dot) = (0.0f64, 0.0f64, 0.0);
                for k in 0..d {
                    let r12 = x[1][k] - x[0][k];
                    let r13 = x[2][k] - x[0][k];
                    n12 += r12 * r12;
                    n13 += r13 * r13;
                    dot += r12 * r13;
                }
                let (n12, n13) = (n12.sqrt(), n13.sqrt());
                let f12 = phi.eval(n12);
                den += f12 * f12;
                if n12 > 0.0 && n13 > 0.0 {
                    num += f12 * phi.eval(n13) * dot / (n12 * n13);
                }
            }
            (num, den)
        })
        .collect();
    let num: f64 = parts.iter().map(|p| p.0).sum::<f64>() / n_mc as f64;
    let den: f64 = parts.iter().map(|p| p.1).sum::<f64>() / n_mc as f64;
    if den < 1e-14 {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(CoercivityCheck { ratio: num / den, bound })
}
