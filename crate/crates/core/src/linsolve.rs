//! Dense least-squares kernels shared by every estimator: regularized and
//! nonnegative least squares, rank-1 factorization, orthogonal Procrustes and
//! K-means.
//!
//! Two entry points exist for each least-squares solve. The `*_ls` functions
//! take the long design matrix `A` and response `b`; the `*_normal` functions
//! take the Gram pair `(G, h) = (A^T A, A^T b)` up to a common positive scale.
//! Regularization weights always multiply the penalty against the quadratic form
//! that is actually passed in, so `solve_normal(A^T A / n, A^T b / n, λ)` equals
//! `solve_ls(A / sqrt(n), b / sqrt(n), λ)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    /// Plain least squares; rank deficiency is an error.
    None,
    /// Truncated pseudo-inverse: singular values below `rcond * sigma_max` are dropped.
    PseudoInverse { rcond: f64 },
    /// Minimum-norm least-squares solution.
    MinNorm,
    /// Ridge penalty `lambda * |x|^2`.
    TikhonovId { lambda: f64 },
    /// Penalty `lambda * x^T P x` with `P` symmetric positive semidefinite.
    TikhonovGeneralized { lambda: f64, penalty: DMatrix<f64> },
}

impl Regularizer {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Regularizer::None | Regularizer::MinNorm => Ok(()),
            Regularizer::PseudoInverse { rcond } => {
                if !(rcond.is_finite() && *rcond >= 0.0) {
                    return Err(Error::InvalidArgument(format!("rcond must be >= 0, got {rcond}")));
                }
                Ok(())
            }
            Regularizer::TikhonovId { lambda } => check_lambda(*lambda),
            Regularizer::TikhonovGeneralized { lambda, penalty } => {
                check_lambda(*lambda)?;
                if penalty.nrows() != n || penalty.ncols() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "penalty is {}x{}, expected {n}x{n}",
                        penalty.nrows(),
                        penalty.ncols()
                    )));
                }
                check_psd(penalty)
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")))
    }
}

fn check_psd(p: &DMatrix<f64>) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("penalty"));
    }
    let scale = p.norm().max(f64::MIN_POSITIVE);
    let asym = (p - p.transpose()).norm();
    if asym > 1e-12 * scale {
        return Err(Error::InvalidArgument("penalty matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(p.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * scale {
        return Err(Error::InvalidArgument(format!(
            "penalty matrix is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    Ok(())
}

fn ensure_finite_mat(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(name))
    }
}

fn ensure_finite_vec(v: &DVector<f64>, name: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(name))
    }
}

/// Truncated SVD solve. Returns the solution and the numerical rank.
fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, usize) {
    svd_filter_solve(a, b, rel_tol, 0.0)
}

/// `sum_i s_i / (s_i^2 + lambda) (u_i^T b) v_i` over singular values above
/// `rel_tol * s_max`; `lambda = 0` is the truncated pseudo-inverse.
fn svd_filter_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64, lambda: f64) -> (DVector<f64>, usize) {
    let n = a.ncols();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * smax;
    let mut x = DVector::zeros(n);
    let mut rank = 0;
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            rank += 1;
            let coef = s * u.column(idx).dot(b) / (s * s + lambda);
            x.axpy(coef, &vt.row(idx).transpose(), 1.0);
        }
    }
    (x, rank)
}

/// Pseudo-inverse solve of a symmetric PSD system via eigendecomposition.
fn eigen_pinv_solve(g: &DMatrix<f64>, h: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, usize) {
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * lmax;
    let mut x = DVector::zeros(g.ncols());
    let mut rank = 0;
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        if l > tol && l > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(idx);
            x.axpy(v.dot(h) / l, &v, 1.0);
        }
    }
    (x, rank)
}

/// Symmetric diagonal (Jacobi) scaling `D G D` with `D = diag(G)^{-1/2}`.
fn jacobi_scale(g: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        g.nrows(),
        (0..g.nrows()).map(|i| {
            let d = g[(i, i)];
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        }),
    )
}

/// Solves the SPD system `g x = h` after Jacobi scaling. Returns `None` when the
/// scaled matrix is numerically singular at the given relative tolerance.
fn scaled_spd_solve(g: &DMatrix<f64>, h: &DVector<f64>, rel_tol: f64) -> Option<DVector<f64>> {
    let d = jacobi_scale(g);
    let gs = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * d[i] * d[j]);
    let hs = h.component_mul(&d);
    // Eigenvalues only: the vectors are needed just when Cholesky breaks down.
    let ev = gs.symmetric_eigenvalues();
    let lmax = ev.iter().cloned().fold(0.0, f64::max);
    let lmin = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lmax > 0.0) || lmin <= rel_tol * lmax {
        return None;
    }
    let y = match gs.clone().cholesky() {
        Some(ch) => ch.solve(&hs),
        None => eigen_pinv_solve_from(&SymmetricEigen::new(gs), &hs),
    };
    Some(y.component_mul(&d))
}

fn eigen_pinv_solve_from(eig: &SymmetricEigen<f64, nalgebra::Dyn>, h: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(h.len());
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let v = eig.eigenvectors.column(idx);
            x.axpy(v.dot(h) / l, &v, 1.0);
        }
    }
    x
}

fn numerical_rank_sym(g: &DMatrix<f64>, rel_tol: f64) -> usize {
    let ev = g.symmetric_eigenvalues();
    let lmax = ev.iter().cloned().fold(0.0, f64::max);
    ev.iter().filter(|&&l| l > rel_tol * lmax && l > 0.0).count()
}

/// Least squares `argmin |Ax - b|^2` (plus the regularization term).
pub fn solve_ls(a: &DMatrix<f64>, b: &DVector<f64>, reg: &Regularizer) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::DimensionMismatch(format!("design is {m}x{n}")));
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!("response has {} rows, design {m}", b.len())));
    }
    ensure_finite_mat(a, "design")?;
    ensure_finite_vec(b, "response")?;
    reg.validate(n)?;
    let eps = f64::EPSILON * m.max(n) as f64;
    match reg {
        Regularizer::None => {
            let (x, rank) = svd_solve(a, b, eps);
            if rank < n {
                return Err(Error::SingularSystem { rank, cols: n });
            }
            Ok(x)
        }
        Regularizer::PseudoInverse { rcond } => Ok(svd_solve(a, b, *rcond).0),
        Regularizer::MinNorm => Ok(svd_solve(a, b, eps).0),
        Regularizer::TikhonovId { lambda } => Ok(svd_filter_solve(a, b, eps, *lambda).0),
        Regularizer::TikhonovGeneralized { lambda, penalty } => {
            let g = a.tr_mul(a) + penalty * *lambda;
            let h = a.tr_mul(b);
            Ok(spd_or_pinv(&g, &h))
        }
    }
}

fn spd_or_pinv(g: &DMatrix<f64>, h: &DVector<f64>) -> DVector<f64> {
    match g.clone().cholesky() {
        Some(ch) => ch.solve(h),
        None => eigen_pinv_solve(g, h, f64::EPSILON * g.nrows() as f64).0,
    }
}

/// Least squares from the Gram pair `(G, h)`; same semantics as [`solve_ls`]
/// applied to any `A, b` with `A^T A = G`, `A^T b = h`.
pub fn solve_normal(g: &DMatrix<f64>, h: &DVector<f64>, reg: &Regularizer) -> Result<DVector<f64>> {
    let n = g.nrows();
    if n == 0 || g.ncols() != n || h.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "normal matrix {}x{} with vector of length {}",
            g.nrows(),
            g.ncols(),
            h.len()
        )));
    }
    ensure_finite_mat(g, "normal matrix")?;
    ensure_finite_vec(h, "normal vector")?;
    reg.validate(n)?;
    // Rank decisions on a Gram matrix are limited by the eigensolver accuracy,
    // i.e. relative eigenvalue resolution of about n * eps.
    let tol = 16.0 * f64::EPSILON * n as f64;
    match reg {
        Regularizer::None => match scaled_spd_solve(g, h, tol) {
            Some(x) => Ok(x),
            None => Err(Error::SingularSystem { rank: numerical_rank_sym(g, tol), cols: n }),
        },
        Regularizer::MinNorm => match scaled_spd_solve(g, h, 1e3 * tol) {
            Some(x) => Ok(x),
            None => Ok(eigen_pinv_solve(g, h, tol).0),
        },
        Regularizer::PseudoInverse { rcond } => Ok(eigen_pinv_solve(g, h, (rcond * rcond).max(tol)).0),
        Regularizer::TikhonovId { lambda } => {
            let mut gl = g.clone();
            for i in 0..n {
                gl[(i, i)] += lambda;
            }
            Ok(scaled_spd_solve(&gl, h, tol).unwrap_or_else(|| eigen_pinv_solve(&gl, h, tol).0))
        }
        Regularizer::TikhonovGeneralized { lambda, penalty } => {
            let gl = g + penalty * *lambda;
            Ok(scaled_spd_solve(&gl, h, tol).unwrap_or_else(|| eigen_pinv_solve(&gl, h, tol).0))
        }
    }
}

/// Picks a Tikhonov weight at the corner of the L-curve.
///
/// `lambda` is scanned over 20 log-spaced points in `[1e-12, 1] * |G|_2`; for each
/// the point `(log residual, log penalty)` is formed and the interior point with
/// the largest Menger curvature is returned. `bb` is `b^T b` on the same scale
/// as `(G, h)`; `penalty = None` means the identity.
pub fn lcurve_select(g: &DMatrix<f64>, h: &DVector<f64>, bb: f64, penalty: Option<&DMatrix<f64>>) -> Result<f64> {
    let n = g.nrows();
    let ident = DMatrix::identity(n, n);
    let p = penalty.unwrap_or(&ident);
    let gnorm = SymmetricEigen::new(g.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    const POINTS: usize = 20;
    let mut lambdas = Vec::with_capacity(POINTS);
    let mut curve = Vec::with_capacity(POINTS);
    for k in 0..POINTS {
        let expo = -12.0 + 12.0 * k as f64 / (POINTS - 1) as f64;
        let lambda = 10f64.powf(expo) * gnorm;
        let reg = Regularizer::TikhonovGeneralized { lambda, penalty: p.clone() };
        let x = solve_normal(g, h, &reg)?;
        let resid = (x.dot(&(g * &x)) - 2.0 * x.dot(h) + bb).max(f64::MIN_POSITIVE);
        let pen = x.dot(&(p * &x)).max(f64::MIN_POSITIVE);
        lambdas.push(lambda);
        curve.push((resid.ln(), pen.ln()));
    }
    let mut best = (f64::NEG_INFINITY, lambdas[POINTS / 2]);
    for k in 1..POINTS - 1 {
        let kappa = menger_curvature(curve[k - 1], curve[k], curve[k + 1]);
        if kappa > best.0 {
            best = (kappa, lambdas[k]);
        }
    }
    Ok(best.1)
}

fn menger_curvature(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let ab = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let bc = ((c.0 - b.0).powi(2) + (c.1 - b.1).powi(2)).sqrt();
    let ca = ((a.0 - c.0).powi(2) + (a.1 - c.1).powi(2)).sqrt();
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let denom = ab * bc * ca;
    if denom <= 0.0 || !denom.is_finite() {
        0.0
    } else {
        // Positive for the convex corner of a standard L-curve.
        -2.0 * cross / denom
    }
}

/// Subproblem oracle for the active-set NNLS iteration.
trait NnlsProblem {
    fn n(&self) -> usize;
    /// Negative gradient `A^T (b - A x)`.
    fn dual(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Unconstrained least squares restricted to the passive columns.
    fn solve_passive(&self, passive: &[usize]) -> DVector<f64>;
    /// Scale of `A^T b` used for relative tolerances.
    fn scale(&self) -> f64;
}

struct LongProblem<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    atb_norm: f64,
}

impl NnlsProblem for LongProblem<'_> {
    fn n(&self) -> usize {
        self.a.ncols()
    }
    fn dual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&(self.b - self.a * x))
    }
    fn solve_passive(&self, passive: &[usize]) -> DVector<f64> {
        let sub = self.a.select_columns(passive);
        let eps = f64::EPSILON * sub.nrows().max(sub.ncols()) as f64;
        svd_solve(&sub, self.b, eps).0
    }
    fn scale(&self) -> f64 {
        self.atb_norm
    }
}

struct GramProblem<'a> {
    g: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
}

impl NnlsProblem for GramProblem<'_> {
    fn n(&self) -> usize {
        self.g.ncols()
    }
    fn dual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.h - self.g * x
    }
    fn solve_passive(&self, passive: &[usize]) -> DVector<f64> {
        let sub = self.g.select_rows(passive).select_columns(passive);
        let rhs = DVector::from_iterator(passive.len(), passive.iter().map(|&j| self.h[j]));
        solve_normal(&sub, &rhs, &Regularizer::MinNorm).unwrap_or_else(|_| DVector::zeros(passive.len()))
    }
    fn scale(&self) -> f64 {
        self.h.norm()
    }
}

const NNLS_DUAL_TOL: f64 = 1e-10;

fn lawson_hanson(problem: &dyn NnlsProblem) -> Result<DVector<f64>> {
    let n = problem.n();
    let max_outer = 3 * n;
    let scale = problem.scale();
    let tol = NNLS_DUAL_TOL * if scale > 0.0 { scale } else { 1.0 };
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut w = problem.dual(&x);
    let mut outer = 0;
    loop {
        // Most violated dual constraint among the active (zero) set.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol && best.is_none_or(|(_, v)| w[j] > v) {
                best = Some((j, w[j]));
            }
        }
        let Some((t, _)) = best else { break };
        if outer == max_outer {
            return Err(Error::IterationLimit(max_outer));
        }
        outer += 1;
        passive[t] = true;
        let mut inner = 0;
        loop {
            inner += 1;
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sp = problem.solve_passive(&idx);
            let mut s = DVector::zeros(n);
            for (pos, &j) in idx.iter().enumerate() {
                s[j] = sp[pos];
            }
            if idx.iter().all(|&j| s[j] > 0.0) {
                x = s;
                break;
            }
            if inner == 1 && s[t] <= 0.0 && idx.len() == 1 {
                // The entering column cannot improve the fit numerically.
                passive[t] = false;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &j in &idx {
                if s[j] <= 0.0 {
                    let denom = x[j] - s[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x = &x + (&s - &x) * alpha;
            for &j in &idx {
                if x[j] <= 1e-300 || (s[j] <= 0.0 && (x[j] - s[j]).abs() <= f64::EPSILON * x[j].abs()) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if inner > n + 1 {
                break;
            }
        }
        for j in 0..n {
            if !passive[j] {
                x[j] = 0.0;
            }
        }
        w = problem.dual(&x);
        // Guard against re-selecting a column the solver just rejected.
        if !passive[t] {
            w[t] = w[t].min(tol);
        }
    }
    Ok(x)
}

/// Nonnegative least squares `argmin_{x >= 0} |Ax - b|^2` (Lawson–Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!("response has {} rows, design {}", b.len(), a.nrows())));
    }
    ensure_finite_mat(a, "design")?;
    ensure_finite_vec(b, "response")?;
    let atb_norm = a.tr_mul(b).norm();
    lawson_hanson(&LongProblem { a, b, atb_norm })
}

/// NNLS from the Gram pair `(A^T A, A^T b)`.
pub fn nnls_normal(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
    if g.nrows() != g.ncols() || h.len() != g.nrows() {
        return Err(Error::DimensionMismatch("normal system is not square".into()));
    }
    ensure_finite_mat(g, "normal matrix")?;
    ensure_finite_vec(h, "normal vector")?;
    lawson_hanson(&GramProblem { g, h })
}

/// Top singular triple `Z ~ sigma u v^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Factor {
    pub u: DVector<f64>,
    pub sigma: f64,
    pub v: DVector<f64>,
}

/// Top singular triple of `z`. The sign is fixed so that the largest-magnitude
/// entry of `v` is positive (lowest index on ties).
pub fn rank1_factor(z: &DMatrix<f64>) -> Result<Rank1Factor> {
    let (m, n) = z.shape();
    if m == 0 || n == 0 {
        return Err(Error::DimensionMismatch(format!("matrix is {m}x{n}")));
    }
    ensure_finite_mat(z, "matrix")?;
    let svd = z.clone().svd(true, true);
    let (top, sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    let mut u: DVector<f64> = svd.u.as_ref().expect("u").column(top).into_owned();
    let mut v: DVector<f64> = svd.v_t.as_ref().expect("v_t").row(top).transpose();
    if sigma == 0.0 {
        // Any unit pair works; pick the first coordinate axes.
        u = DVector::zeros(m);
        u[0] = 1.0;
        v = DVector::zeros(n);
        v[0] = 1.0;
    }
    let mut pivot = 0;
    for i in 1..n {
        if v[i].abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        u.neg_mut();
        v.neg_mut();
    }
    Ok(Rank1Factor { u, sigma: sigma.max(0.0), v })
}

/// Nearest matrix with orthonormal columns, `U W^T` from `V = U S W^T`.
pub fn procrustes_orthonormalize(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, q) = v.shape();
    if q == 0 || n < q {
        return Err(Error::DimensionMismatch(format!("need N >= Q >= 1, got {n}x{q}")));
    }
    ensure_finite_mat(v, "type matrix")?;
    let svd = v.clone().svd(true, true);
    let s = &svd.singular_values;
    let largest = s.iter().cloned().fold(0.0, f64::max);
    let smallest = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(largest > 0.0) || smallest < 1e-12 * largest {
        return Err(Error::RankDeficient { smallest, largest });
    }
    Ok(svd.u.expect("u") * svd.v_t.expect("v_t"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

const KMEANS_RESTARTS: u64 = 10;
const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with K-means++ seeding; best of 10 seeded restarts.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KmeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidArgument(format!("need 1 <= K <= #points, got K={k}, {} points", points.len())));
    }
    let q = points[0].len();
    if points.iter().any(|p| p.len() != q) {
        return Err(Error::DimensionMismatch("points have different dimensions".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("points"));
    }
    let mut best: Option<KmeansResult> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = rng::stream(seed, tag::KMEANS, restart);
        let run = lloyd(points, kmeans_pp(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, ctr) in centroids.iter().enumerate() {
                let d = sq_dist(p, ctr);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect()
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KmeansResult {
    let k = centroids.len();
    let q = points[0].len();
    let mut labels = assign(points, &centroids);
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; q]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // Empty clusters are re-seeded at the point farthest from its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[labels[a]])
                            .total_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                    })
                    .expect("nonempty");
                centroids[c] = points[far].clone();
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
            }
        }
        let next = assign(points, &centroids);
        if next == labels {
            break;
        }
        labels = next;
    }
    // Final centroids are the exact means of the final assignment.
    let mut sums = vec![vec![0.0; q]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(&labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    let wcss = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    KmeansResult { labels, centroids, wcss }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng::stream(seed, 99, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn identity_plain_solve() {
        let x = solve_ls(&DMatrix::identity(2, 2), &dvector![3.0, 4.0], &Regularizer::None).unwrap();
        assert!((x - dvector![3.0, 4.0]).norm() < 1e-14);
    }

    #[test]
    fn min_norm_splits_evenly() {
        let x = solve_ls(&dmatrix![1.0, 1.0], &dvector![2.0], &Regularizer::MinNorm).unwrap();
        assert!((x - dvector![1.0, 1.0]).norm() < 1e-14);
        let g = dmatrix![1.0, 1.0; 1.0, 1.0];
        let xn = solve_normal(&g, &dvector![2.0, 2.0], &Regularizer::MinNorm).unwrap();
        assert!((xn - dvector![1.0, 1.0]).norm() < 1e-12);
    }

    #[test]
    fn ridge_matches_hand_normal_equations() {
        // A^T A + 0.1 I = [[2.1, 1], [1, 2.1]], A^T b = (4, 4) -> x = 4 / 3.1 each.
        let a = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
        let b = dvector![1.0, 1.0, 3.0];
        let x = solve_ls(&a, &b, &Regularizer::TikhonovId { lambda: 0.1 }).unwrap();
        let expect = 4.0 / 3.1;
        assert!((x[0] - expect).abs() < 1e-13 && (x[1] - expect).abs() < 1e-13);
        let xg = solve_normal(&a.tr_mul(&a), &a.tr_mul(&b), &Regularizer::TikhonovId { lambda: 0.1 }).unwrap();
        assert!((xg - x).norm() < 1e-12);
    }

    #[test]
    fn plain_solve_rejects_rank_deficiency() {
        let a = dmatrix![1.0, 2.0; 2.0, 4.0; 3.0, 6.0];
        let err = solve_ls(&a, &dvector![1.0, 2.0, 3.0], &Regularizer::None).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { rank: 1, cols: 2 }));
        let err = solve_normal(&a.tr_mul(&a), &dvector![14.0, 28.0], &Regularizer::None).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { .. }));
    }

    #[test]
    fn rejects_non_finite_input() {
        let a = dmatrix![1.0, f64::NAN];
        assert_eq!(solve_ls(&a, &dvector![1.0], &Regularizer::MinNorm), Err(Error::NonFiniteInput("design")));
        assert!(matches!(nnls(&a, &dvector![1.0]), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn rejects_indefinite_penalty() {
        let reg = Regularizer::TikhonovGeneralized { lambda: 1.0, penalty: dmatrix![1.0, 0.0; 0.0, -1.0] };
        assert!(matches!(reg.validate(2), Err(Error::InvalidArgument(_))));
        let reg = Regularizer::TikhonovGeneralized { lambda: 1.0, penalty: dmatrix![1.0, 0.5; 0.0, 1.0] };
        assert!(matches!(reg.validate(2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn generalized_tikhonov_psd_penalty() {
        let a = seeded_matrix(6, 3, 1);
        let b = seeded_matrix(6, 1, 2).column(0).into_owned();
        // Rank-1 PSD penalty: Cholesky of A^T A + P still succeeds, and the
        // result satisfies the regularized normal equations.
        let p = dmatrix![1.0, 1.0, 0.0; 1.0, 1.0, 0.0; 0.0, 0.0, 0.0];
        let x = solve_ls(&a, &b, &Regularizer::TikhonovGeneralized { lambda: 0.3, penalty: p.clone() }).unwrap();
        let resid = (a.tr_mul(&a) + &p * 0.3) * &x - a.tr_mul(&b);
        assert!(resid.norm() < 1e-12);
    }

    #[test]
    fn ridge_converges_to_min_norm() {
        // Rank-deficient system: third column duplicates the first.
        let base = seeded_matrix(8, 2, 3);
        let a = DMatrix::from_fn(8, 3, |i, j| if j < 2 { base[(i, j)] } else { base[(i, 0)] });
        let b = seeded_matrix(8, 1, 4).column(0).into_owned();
        let xmin = solve_ls(&a, &b, &Regularizer::MinNorm).unwrap();
        let mut ratios = vec![];
        for lambda in [1e-4, 1e-6, 1e-8] {
            let x = solve_ls(&a, &b, &Regularizer::TikhonovId { lambda }).unwrap();
            ratios.push((x - &xmin).norm() / lambda);
        }
        let c = ratios[0] * 10.0;
        assert!(ratios.iter().all(|&r| r <= c), "{ratios:?}");
    }

    #[test]
    fn nnls_projection_cases() {
        let x = nnls(&DMatrix::identity(2, 2), &dvector![1.0, -1.0]).unwrap();
        assert_eq!(x, dvector![1.0, 0.0]);
        let b = dvector![0.2, 0.5, 0.3];
        let x = nnls(&DMatrix::identity(3, 3), &b).unwrap();
        assert!((x - b).norm() < 1e-15);
    }

    #[test]
    fn nnls_matches_grid_search() {
        let a = seeded_matrix(3, 2, 11);
        let b = dvector![0.7, -0.4, 1.1];
        let obj = |x0: f64, x1: f64| {
            let r = &a * dvector![x0, x1] - &b;
            r.norm_squared()
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=2000 {
            for j in 0..=2000 {
                let (x0, x1) = (i as f64 * 1e-3, j as f64 * 1e-3);
                let f = obj(x0, x1);
                if f < best.0 {
                    best = (f, x0, x1);
                }
            }
        }
        let x = nnls(&a, &b).unwrap();
        assert!((x[0] - best.1).abs() <= 2e-3 && (x[1] - best.2).abs() <= 2e-3, "{x} vs {best:?}");
        let xg = nnls_normal(&a.tr_mul(&a), &a.tr_mul(&b)).unwrap();
        assert!((xg - x).norm() < 1e-10);
    }

    #[test]
    fn nnls_interior_optimum_equals_plain_ls() {
        let a = seeded_matrix(10, 3, 5);
        let truth = dvector![0.5, 1.5, 2.0];
        let b = &a * &truth;
        let x = nnls(&a, &b).unwrap();
        let xl = solve_ls(&a, &b, &Regularizer::None).unwrap();
        assert!((x - xl).norm() < 1e-10);
    }

    #[test]
    fn nnls_kkt_conditions_hold() {
        for seed in 0..20 {
            let a = seeded_matrix(12, 6, 100 + seed);
            let b = seeded_matrix(12, 1, 200 + seed).column(0).into_owned();
            let x = nnls(&a, &b).unwrap();
            let w = a.tr_mul(&(&b - &a * &x));
            let tol = 1e-8 * a.tr_mul(&b).norm();
            for j in 0..6 {
                assert!(x[j] >= 0.0);
                if x[j] > 0.0 {
                    assert!(w[j].abs() <= tol, "seed {seed}: active gradient {}", w[j]);
                } else {
                    assert!(w[j] <= tol, "seed {seed}: dual infeasible {}", w[j]);
                }
            }
        }
    }

    #[test]
    fn rank1_simple_cases() {
        let mut z = DMatrix::zeros(3, 3);
        z[(0, 0)] = 2.0;
        let f = rank1_factor(&z).unwrap();
        assert!((f.sigma - 2.0).abs() < 1e-14);
        assert!((f.u.clone() - dvector![1.0, 0.0, 0.0]).norm() < 1e-14);
        assert!((f.v.clone() - dvector![1.0, 0.0, 0.0]).norm() < 1e-14);

        let a = dvector![0.6, 0.8];
        let c = dvector![1.0, 2.0, 2.0];
        let f = rank1_factor(&(&a * c.transpose())).unwrap();
        assert!((f.sigma - 3.0).abs() < 1e-13);
        assert!((f.u - a).norm() < 1e-13);
        assert!((f.v - c / 3.0).norm() < 1e-13);
    }

    #[test]
    fn rank1_sign_convention() {
        // Largest |v| entry negative in the input factor -> flipped to positive.
        let u = dvector![0.6, -0.8];
        let v = dvector![0.0, -1.0];
        let f = rank1_factor(&(&u * v.transpose() * 5.0)).unwrap();
        assert!(f.v[1] > 0.0);
        assert!((&f.u * f.v.transpose() * f.sigma - &u * v.transpose() * 5.0).norm() < 1e-12);
    }

    #[test]
    fn rank1_perturbed_recovers_direction() {
        let a = dvector![0.3, -0.5, 0.8, 0.1];
        let c = dvector![1.0, -2.0, 0.5];
        let a_unit = a.normalize();
        let c_unit = c.normalize();
        let noise = seeded_matrix(4, 3, 21) * 1e-6;
        let z = &a * c.transpose() + &noise;
        let f = rank1_factor(&z).unwrap();
        // Oracle: full SVD of the same matrix, top triple by singular value.
        let svd = z.clone().svd(true, true);
        let top = svd.singular_values.imax();
        let v_or: DVector<f64> = svd.v_t.unwrap().row(top).transpose();
        assert!((f.sigma - svd.singular_values[top]).abs() < 1e-12);
        assert!(1.0 - f.v.dot(&v_or).abs() < 1e-12);
        let angle_u = f.u.dot(&a_unit).abs().min(1.0).acos();
        let angle_v = f.v.dot(&c_unit).abs().min(1.0).acos();
        assert!(angle_u < 1e-5 && angle_v < 1e-5);
        // Spectral-norm residual equals the second singular value.
        let resid = &z - &f.u * f.v.transpose() * f.sigma;
        let mut s: Vec<f64> = svd.singular_values.iter().cloned().collect();
        s.sort_by(|x, y| y.total_cmp(x));
        let rs = resid.svd(false, false).singular_values.max();
        assert!((rs - s[1]).abs() < 1e-12);
    }

    #[test]
    fn procrustes_identity_and_scaling() {
        let q = procrustes_orthonormalize(&DMatrix::identity(4, 2)).unwrap();
        assert!((q - DMatrix::<f64>::identity(4, 2)).norm() < 1e-12);
        let q = procrustes_orthonormalize(&(DMatrix::identity(5, 3) * 2.0)).unwrap();
        assert!((q - DMatrix::<f64>::identity(5, 3)).norm() < 1e-12);
        let bad = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(procrustes_orthonormalize(&bad), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn procrustes_is_nearest_frame() {
        let v = seeded_matrix(4, 2, 31);
        let x = procrustes_orthonormalize(&v).unwrap();
        assert!((x.tr_mul(&x) - DMatrix::<f64>::identity(2, 2)).norm() < 1e-10);
        let base = (&x - &v).norm();
        // Scan rotations exp(tK) X along each of the 6 skew generators of so(4).
        for a in 0..4 {
            for b in (a + 1)..4 {
                let mut k = DMatrix::<f64>::zeros(4, 4);
                k[(a, b)] = 1.0;
                k[(b, a)] = -1.0;
                let mut t = -0.5;
                while t <= 0.5 {
                    let rot = (&k * t).exp();
                    let cand = &rot * &x;
                    assert!((cand - &v).norm() >= base - 1e-12);
                    t += 1e-2;
                }
            }
        }
        // Random frames never beat it either.
        for s in 0..2000 {
            let cand = procrustes_orthonormalize(&seeded_matrix(4, 2, 1000 + s)).unwrap();
            let qr = cand.clone().qr().q();
            assert!((qr - &v).norm() >= base - 1e-12);
        }
    }

    #[test]
    fn kmeans_two_clusters() {
        let pts: Vec<Vec<f64>> = [0.0, 0.1, 10.0, 10.1].iter().map(|&x| vec![x]).collect();
        let r = kmeans(&pts, 2, 3).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[2], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[2]);
        let mut c: Vec<f64> = r.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn kmeans_one_point_per_cluster() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 5, 0).unwrap();
        assert!(r.wcss.abs() < 1e-20);
        let mut l = r.labels.clone();
        l.sort();
        l.dedup();
        assert_eq!(l.len(), 5);
    }

    #[test]
    fn kmeans_matches_exhaustive_two_partition() {
        let mut rng = rng::stream(77, 1, 0);
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let shift = if i < 10 { 0.0 } else { 1.5 };
                vec![shift + rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]
            })
            .collect();
        let wcss_of = |mask: u32| -> f64 {
            let mut total = 0.0;
            for side in [0, 1] {
                let members: Vec<&Vec<f64>> =
                    pts.iter().enumerate().filter(|(i, _)| ((mask >> i) & 1) == side).map(|(_, p)| p).collect();
                if members.is_empty() {
                    return f64::INFINITY;
                }
                let cx = members.iter().map(|p| p[0]).sum::<f64>() / members.len() as f64;
                let cy = members.iter().map(|p| p[1]).sum::<f64>() / members.len() as f64;
                total += members.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>();
            }
            total
        };
        let (mut best_mask, mut best) = (0, f64::INFINITY);
        // Fix point 0 on side 0 to skip mirrored partitions.
        for mask in 0..(1u32 << 19) {
            let m = mask << 1;
            let w = wcss_of(m);
            if w < best {
                best = w;
                best_mask = m;
            }
        }
        let r = kmeans(&pts, 2, 5).unwrap();
        assert!((r.wcss - best).abs() < 1e-9);
        for i in 0..20 {
            let same = r.labels[i] == r.labels[0];
            assert_eq!(same, (best_mask >> i) & 1 == 0);
        }
    }

    #[test]
    fn lcurve_picks_a_grid_value() {
        let a = seeded_matrix(30, 5, 8);
        let truth = dvector![1.0, -1.0, 0.5, 0.0, 2.0];
        let noise = seeded_matrix(30, 1, 9).column(0) * 0.1;
        let b = &a * &truth + noise;
        let g = a.tr_mul(&a);
        let h = a.tr_mul(&b);
        let lambda = lcurve_select(&g, &h, b.norm_squared(), None).unwrap();
        let gnorm = SymmetricEigen::new(g.clone()).eigenvalues.max();
        assert!(lambda >= 1e-12 * gnorm * 0.999 && lambda <= gnorm * 1.001);
        let x = solve_normal(&g, &h, &Regularizer::TikhonovId { lambda }).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn rank1_reproduces_exact_factors(
                u in proptest::collection::vec(-1.0f64..1.0, 4),
                v in proptest::collection::vec(-1.0f64..1.0, 3),
                sigma in 0.1f64..10.0,
            ) {
                let u = DVector::from_vec(u);
                let v = DVector::from_vec(v);
                prop_assume!(u.norm() > 0.1 && v.norm() > 0.1);
                let (u, mut v) = (u.normalize(), v.normalize());
                let mut u = u;
                let p = v.iamax();
                if v[p] < 0.0 { u.neg_mut(); v.neg_mut(); }
                let f = rank1_factor(&(&u * v.transpose() * sigma)).unwrap();
                prop_assert!((f.sigma - sigma).abs() < 1e-10 * sigma);
                prop_assert!((f.u - u).norm() < 1e-9);
                prop_assert!((f.v - v).norm() < 1e-9);
            }

            #[test]
            fn kmeans_invariant_to_translation_and_scaling(
                shift in -50.0f64..50.0,
                scale in 0.1f64..10.0,
                seed in 0u64..1000,
            ) {
                let mut rng = rng::stream(seed, 3, 0);
                let pts: Vec<Vec<f64>> = (0..12).map(|i| {
                    let c = (i % 3) as f64 * 20.0;
                    vec![c + rng.random::<f64>(), rng.random::<f64>()]
                }).collect();
                let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| v * scale + shift).collect()).collect();
                let r1 = kmeans(&pts, 3, 4).unwrap();
                let r2 = kmeans(&moved, 3, 4).unwrap();
                for i in 0..12 {
                    for j in 0..12 {
                        prop_assert_eq!(r1.labels[i] == r1.labels[j], r2.labels[i] == r2.labels[j]);
                    }
                }
            }
        }
    }
}
