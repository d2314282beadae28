//! Weight matrices, basis descriptors, kernel coefficients and drift
//! evaluation.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Nonnegative weight matrix with zero diagonal and unit-ℓ² rows.
///
/// Rows that are identically zero are allowed and flagged; they arise when a
/// nonnegative fit finds no support for an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    zero_rows: Vec<bool>,
}

impl WeightMatrix {
    /// Validates an already-normalized matrix.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix must be square and nonempty, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("weight matrix"));
        }
        let mut zero_rows = vec![false; n];
        for i in 0..n {
            if entries[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!("diagonal entry {i} is nonzero")));
            }
            let row = entries.row(i);
            if row.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
                return Err(Error::InvalidArgument(format!("row {i} has entries outside [0, 1]")));
            }
            let norm = row.norm();
            if norm == 0.0 {
                zero_rows[i] = true;
            } else if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(Self { entries, zero_rows })
    }

    /// Projects a raw nonnegative matrix onto the admissible set: the diagonal
    /// is dropped and each nonzero row is scaled to unit ℓ² norm.
    pub fn from_raw(mut raw: DMatrix<f64>) -> Result<Self> {
        let n = raw.nrows();
        if n == 0 || raw.ncols() != n {
            return Err(Error::DimensionMismatch(format!("weight matrix must be square, got {}x{}", n, raw.ncols())));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("weight matrix"));
        }
        if raw.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("weight matrix has negative entries".into()));
        }
        let mut zero_rows = vec![false; n];
        for i in 0..n {
            raw[(i, i)] = 0.0;
            let norm = raw.row(i).norm();
            if norm > 0.0 {
                raw.row_mut(i).unscale_mut(norm);
            } else {
                zero_rows[i] = true;
            }
        }
        Ok(Self { entries: raw, zero_rows })
    }

    pub fn zeros(n: usize) -> Self {
        Self { entries: DMatrix::zeros(n, n), zero_rows: vec![true; n] }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Flags rows that are identically zero.
    pub fn zero_rows(&self) -> &[bool] {
        &self.zero_rows
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    /// Same matrix with agents relabeled: new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let entries = DMatrix::from_fn(n, n, |i, j| self.entries[(perm[i], perm[j])]);
        let zero_rows = perm.iter().map(|&p| self.zero_rows[p]).collect();
        Self { entries, zero_rows }
    }
}

#[derive(Serialize, Deserialize)]
struct WeightMatrixRepr {
    rows: Vec<Vec<f64>>,
}

impl Serialize for WeightMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = (0..self.n()).map(|i| self.entries.row(i).iter().cloned().collect()).collect();
        WeightMatrixRepr { rows }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = WeightMatrixRepr::deserialize(d)?;
        let n = repr.rows.len();
        if repr.rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("weight matrix rows must have length N"));
        }
        let m = DMatrix::from_fn(n, n, |i, j| repr.rows[i][j]);
        WeightMatrix::from_raw(m).map_err(serde::de::Error::custom)
    }
}

/// Half-open interval `[lo, hi)`; `hi = None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi: Some(hi) }
    }

    pub fn from(lo: f64) -> Self {
        Self { lo, hi: None }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lo && self.hi.is_none_or(|h| r < h)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.lo, self.hi).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (lo, hi) = <(f64, Option<f64>)>::deserialize(d)?;
        Ok(Self { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trig {
    Sin,
    Cos,
}

impl Trig {
    fn apply(self, x: f64) -> f64 {
        match self {
            Trig::Sin => x.sin(),
            Trig::Cos => x.cos(),
        }
    }
}

/// Scalar profile `psi~(r)` of one basis function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisFn {
    /// `r^exponent` on `support`, zero elsewhere.
    PowerLaw { exponent: f64, support: Interval },
    Indicator { support: Interval },
    /// `sin(frequency * r)` or `cos(frequency * r)`.
    Trig { trig: Trig, frequency: f64 },
    /// Piecewise linear through `(knots[k], coefs[k])`, zero outside the knots.
    Spline { knots: Vec<f64>, coefs: Vec<f64> },
    /// Piecewise linear through `(grid[k], values[k])`, constant beyond the ends.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
    /// `sum_k coefs[k] r^k`.
    Polynomial { coefs: Vec<f64> },
    /// `trig(frequency * r) / (r + shift)`.
    DampedTrig { trig: Trig, frequency: f64, shift: f64 },
}

fn lerp_table(xs: &[f64], ys: &[f64], r: f64) -> f64 {
    // xs is strictly increasing (validated).
    let hi = xs.partition_point(|&x| x <= r);
    if hi == 0 {
        return ys[0];
    }
    if hi == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[hi - 1], xs[hi]);
    let t = (r - x0) / (x1 - x0);
    ys[hi - 1] + t * (ys[hi] - ys[hi - 1])
}

impl BasisFn {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            BasisFn::PowerLaw { exponent, support } => {
                if support.contains(r) {
                    r.powf(*exponent)
                } else {
                    0.0
                }
            }
            BasisFn::Indicator { support } => {
                if support.contains(r) {
                    1.0
                } else {
                    0.0
                }
            }
            BasisFn::Trig { trig, frequency } => trig.apply(frequency * r),
            BasisFn::Spline { knots, coefs } => {
                if r < knots[0] || r > knots[knots.len() - 1] {
                    0.0
                } else {
                    lerp_table(knots, coefs, r)
                }
            }
            BasisFn::Tabulated { grid, values } => lerp_table(grid, values, r),
            BasisFn::Polynomial { coefs } => coefs.iter().rev().fold(0.0, |acc, &c| acc * r + c),
            BasisFn::DampedTrig { trig, frequency, shift } => trig.apply(frequency * r) / (r + shift),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|v| v.is_finite());
        let increasing = |xs: &[f64]| xs.windows(2).all(|w| w[0] < w[1]);
        match self {
            BasisFn::PowerLaw { exponent, support } => {
                if !exponent.is_finite() || !support.lo.is_finite() {
                    return Err(Error::InvalidArgument("power law parameters must be finite".into()));
                }
            }
            BasisFn::Indicator { support } => {
                if !support.lo.is_finite() {
                    return Err(Error::InvalidArgument("indicator lower bound must be finite".into()));
                }
            }
            BasisFn::Trig { frequency, .. } => {
                if !frequency.is_finite() {
                    return Err(Error::InvalidArgument("trig frequency must be finite".into()));
                }
            }
            BasisFn::Spline { knots: xs, coefs: ys } | BasisFn::Tabulated { grid: xs, values: ys } => {
                if xs.len() < 2 || xs.len() != ys.len() || !finite(xs) || !finite(ys) || !increasing(xs) {
                    return Err(Error::InvalidArgument(
                        "piecewise-linear basis needs >= 2 strictly increasing finite nodes".into(),
                    ));
                }
            }
            BasisFn::Polynomial { coefs } => {
                if coefs.is_empty() || !finite(coefs) {
                    return Err(Error::InvalidArgument("polynomial needs finite coefficients".into()));
                }
            }
            BasisFn::DampedTrig { frequency, shift, .. } => {
                if !frequency.is_finite() || !(shift.is_finite() && *shift > 0.0) {
                    return Err(Error::InvalidArgument("damped trig needs finite frequency and shift > 0".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `psi(x) = psi~(|x|) x / |x|`.
    RadialLift,
    /// `psi(x) = psi~(x)` for scalar states.
    DirectScalar,
}

fn default_cutoff() -> f64 {
    1e-14
}

/// Basis `{psi_k}` for the interaction kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub dim: usize,
    pub kind: BasisKind,
    #[serde(default = "default_cutoff")]
    pub singular_cutoff: f64,
    pub functions: Vec<BasisFn>,
}

impl BasisSpec {
    pub fn new(dim: usize, kind: BasisKind, functions: Vec<BasisFn>) -> Result<Self> {
        let spec = Self { dim, kind, singular_cutoff: default_cutoff(), functions };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("basis dimension must be >= 1".into()));
        }
        if self.kind == BasisKind::DirectScalar && self.dim != 1 {
            return Err(Error::InvalidArgument("direct scalar basis requires d = 1".into()));
        }
        if self.functions.is_empty() {
            return Err(Error::InvalidArgument("basis has no functions".into()));
        }
        if !(self.singular_cutoff.is_finite() && self.singular_cutoff > 0.0) {
            return Err(Error::InvalidArgument("singular cutoff must be > 0".into()));
        }
        self.functions.iter().try_for_each(BasisFn::validate)
    }

    pub fn p(&self) -> usize {
        self.functions.len()
    }

    /// Subset of the basis, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self { functions: idx.iter().map(|&k| self.functions[k].clone()).collect(), ..self.clone() }
    }

    /// Scalar argument and unit direction for `x`. Returns `None` when the lift
    /// is singular (|x| at or below the cutoff).
    #[inline]
    fn argument(&self, x: &[f64], dir: &mut [f64]) -> Option<f64> {
        match self.kind {
            BasisKind::DirectScalar => {
                dir[0] = 1.0;
                Some(x[0])
            }
            BasisKind::RadialLift => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r <= self.singular_cutoff {
                    return None;
                }
                for (dv, xv) in dir.iter_mut().zip(x) {
                    *dv = xv / r;
                }
                Some(r)
            }
        }
    }

    /// All basis values at `x`; `out[k * d + dim] = psi_k(x)[dim]`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        debug_assert_eq!(x.len(), d);
        debug_assert_eq!(out.len(), d * self.p());
        let mut dir = [0.0f64; 8];
        let mut dir_vec;
        let dir: &mut [f64] = if d <= 8 {
            &mut dir[..d]
        } else {
            dir_vec = vec![0.0; d];
            &mut dir_vec
        };
        match self.argument(x, dir) {
            None => out.iter_mut().for_each(|v| *v = 0.0),
            Some(r) => {
                for (k, f) in self.functions.iter().enumerate() {
                    let s = f.eval(r);
                    for (o, dv) in out[k * d..(k + 1) * d].iter_mut().zip(dir.iter()) {
                        *o = s * dv;
                    }
                }
            }
        }
    }

    /// Kernel value `sum_k c_k psi_k(x)` accumulated into `out` (length d), scaled by `w`.
    #[inline]
    pub fn add_kernel(&self, c: &[f64], x: &[f64], w: f64, out: &mut [f64]) {
        let d = self.dim;
        let mut dir = [0.0f64; 8];
        let mut dir_vec;
        let dir: &mut [f64] = if d <= 8 {
            &mut dir[..d]
        } else {
            dir_vec = vec![0.0; d];
            &mut dir_vec
        };
        if let Some(r) = self.argument(x, dir) {
            let s: f64 = self.functions.iter().zip(c).map(|(f, ck)| ck * f.eval(r)).sum();
            for (o, dv) in out.iter_mut().zip(dir.iter()) {
                *o += w * s * dv;
            }
        }
    }

    /// Scalar profile `sum_k c_k psi~_k(r)`.
    pub fn profile(&self, c: &[f64], r: f64) -> f64 {
        self.functions.iter().zip(c).map(|(f, ck)| ck * f.eval(r)).sum()
    }
}

/// Coefficients `c` of the kernel in a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelCoef(pub Vec<f64>);

impl KernelCoef {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("kernel coefficients"));
        }
        Ok(Self(c))
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }
}

impl From<DVector<f64>> for KernelCoef {
    fn from(v: DVector<f64>) -> Self {
        Self(v.iter().cloned().collect())
    }
}

/// Distribution of the initial states, drawn independently per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitDist {
    UniformBox { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n: usize,
    pub d: usize,
    /// Stochastic force.
    pub sigma: f64,
    pub dt: f64,
    /// Number of steps `L`; trajectories hold `L + 1` states.
    pub steps: usize,
    pub init: InitDist,
    pub seed: u64,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("need N >= 2 agents, got {}", self.n)));
        }
        if self.d == 0 {
            return Err(Error::InvalidArgument("state dimension must be >= 1".into()));
        }
        if self.steps < 1 {
            return Err(Error::InvalidArgument("need L >= 1 steps".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        match self.init {
            InitDist::UniformBox { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                Err(Error::InvalidArgument("uniform init needs lo < hi".into()))
            }
            InitDist::Gaussian { mean, std } if !(mean.is_finite() && std.is_finite() && std >= 0.0) => {
                Err(Error::InvalidArgument("gaussian init needs std >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Observation horizon `T = L dt`.
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

fn check_kernel_args(basis: &BasisSpec, c: &KernelCoef) -> Result<()> {
    if c.len() != basis.p() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} basis functions", c.len(), basis.p())));
    }
    Ok(())
}

/// `Phi(x) = sum_k c_k psi_k(x)`.
pub fn eval_kernel(basis: &BasisSpec, c: &KernelCoef, x: &[f64]) -> Result<Vec<f64>> {
    check_kernel_args(basis, c)?;
    if x.len() != basis.dim {
        return Err(Error::DimensionMismatch(format!("x has {} components, basis dim {}", x.len(), basis.dim)));
    }
    let mut out = vec![0.0; basis.dim];
    basis.add_kernel(c.as_slice(), x, 1.0, &mut out);
    Ok(out)
}

fn check_state(a: &WeightMatrix, basis: &BasisSpec, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != a.n() || x.ncols() != basis.dim {
        return Err(Error::DimensionMismatch(format!(
            "state is {}x{}, expected {}x{}",
            x.nrows(),
            x.ncols(),
            a.n(),
            basis.dim
        )));
    }
    Ok(())
}

/// Drift `sum_{j != i} a_ij Phi(X_j - X_i)` for every agent, written into `out`
/// (row-major `N x d`). `coefs(i)` gives the coefficient vector used for agent `i`.
pub(crate) fn drift_into<'c>(
    a: &DMatrix<f64>,
    basis: &BasisSpec,
    coefs: impl Fn(usize) -> &'c [f64],
    x: &[f64],
    out: &mut [f64],
) {
    let n = a.nrows();
    let d = basis.dim;
    let mut diff = vec![0.0; d];
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let c = coefs(i);
        let xi = &x[i * d..(i + 1) * d];
        let oi = &mut out[i * d..(i + 1) * d];
        for j in 0..n {
            let w = a[(i, j)];
            if j == i || w == 0.0 {
                continue;
            }
            for (k, dv) in diff.iter_mut().enumerate() {
                *dv = x[j * d + k] - xi[k];
            }
            basis.add_kernel(c, &diff, w, oi);
        }
    }
}

fn state_to_rowmajor(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut v = Vec::with_capacity(n * d);
    for i in 0..n {
        for k in 0..d {
            v.push(x[(i, k)]);
        }
    }
    v
}

/// Drift `a B(X) c` of `dX = a B(X) c dt + sigma dW`, one row per agent.
pub fn drift(a: &WeightMatrix, basis: &BasisSpec, c: &KernelCoef, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_kernel_args(basis, c)?;
    check_state(a, basis, x)?;
    let flat = state_to_rowmajor(x);
    let mut out = vec![0.0; flat.len()];
    drift_into(a.entries(), basis, |_| c.as_slice(), &flat, &mut out);
    Ok(DMatrix::from_row_slice(a.n(), basis.dim, &out))
}

/// Drift with a per-agent kernel: agent `i` uses column `i` of `cmat` (`p x N`).
pub fn drift_multitype(a: &WeightMatrix, basis: &BasisSpec, cmat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cmat.nrows() != basis.p() || cmat.ncols() != a.n() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient matrix is {}x{}, expected {}x{}",
            cmat.nrows(),
            cmat.ncols(),
            basis.p(),
            a.n()
        )));
    }
    check_state(a, basis, x)?;
    let flat = state_to_rowmajor(x);
    let mut out = vec![0.0; flat.len()];
    let cols: Vec<Vec<f64>> = (0..a.n()).map(|i| cmat.column(i).iter().cloned().collect()).collect();
    drift_into(a.entries(), basis, |i| cols[i].as_slice(), &flat, &mut out);
    Ok(DMatrix::from_row_slice(a.n(), basis.dim, &out))
}

/// Random sparse weight matrix: `degree` neighbours per agent chosen uniformly,
/// Uniform[0, 1] weights, rows normalized.
pub fn sample_weight_matrix(n: usize, degree: usize, seed: u64) -> Result<WeightMatrix> {
    if n < 2 || degree < 1 || degree > n - 1 {
        return Err(Error::DegreeOutOfRange { degree, n });
    }
    let mut rng = rng::stream(seed, tag::GRAPH, 0);
    let mut raw = DMatrix::zeros(n, n);
    for i in 0..n {
        for pos in index::sample(&mut rng, n - 1, degree) {
            let j = if pos >= i { pos + 1 } else { pos };
            // Uniform on (0, 1] so the support size is exact.
            raw[(i, j)] = 1.0 - rng.random::<f64>();
        }
    }
    WeightMatrix::from_raw(raw)
}

/// Basis and coefficient presets used by the experiments.
pub mod presets {
    use super::*;

    /// The ten truncated Lennard-Jones-type profiles: `r^-9` and `r^-3` on
    /// `[0.5 + 0.25k, inf)` for k = 0..2, then indicators of `[0, 0.5 + 0.25k)`
    /// for k = 0..3.
    pub fn lj_basis(d: usize) -> BasisSpec {
        let mut f = Vec::with_capacity(10);
        for exponent in [-9.0, -3.0] {
            for k in 0..3 {
                f.push(BasisFn::PowerLaw { exponent, support: Interval::from(0.5 + 0.25 * k as f64) });
            }
        }
        for k in 0..4 {
            f.push(BasisFn::Indicator { support: Interval::new(0.0, 0.5 + 0.25 * k as f64) });
        }
        BasisSpec::new(d, BasisKind::RadialLift, f).expect("valid preset")
    }

    /// Truth in the ten-function basis: `(c1, c4, c7) = (-1/3, 4/3, -160)`.
    pub fn lj_coef() -> KernelCoef {
        let mut c = vec![0.0; 10];
        c[0] = -1.0 / 3.0;
        c[3] = 4.0 / 3.0;
        c[6] = -160.0;
        KernelCoef(c)
    }

    /// First seven functions of [`lj_basis`].
    pub fn lj_basis_p7(d: usize) -> BasisSpec {
        lj_basis(d).select(&[0, 1, 2, 3, 4, 5, 6])
    }

    pub fn lj_coef_p7() -> KernelCoef {
        KernelCoef(lj_coef().0[..7].to_vec())
    }

    /// Well-specified three-function basis `{psi1, psi4, psi7}`.
    pub fn lj_basis_exact(d: usize) -> BasisSpec {
        lj_basis(d).select(&[0, 3, 6])
    }

    pub fn lj_coef_exact() -> KernelCoef {
        KernelCoef(vec![-1.0 / 3.0, 4.0 / 3.0, -160.0])
    }

    fn trig(trig: Trig, frequency: f64) -> BasisFn {
        BasisFn::Trig { trig, frequency }
    }

    /// Kuramoto coupling `sin(x)` as a scalar kernel.
    pub fn kuramoto_truth() -> BasisSpec {
        BasisSpec::new(1, BasisKind::DirectScalar, vec![trig(Trig::Sin, 1.0)]).expect("valid preset")
    }

    /// Misspecified hypothesis space: `cos x` and `sin kx, cos kx` for k = 2..7.
    pub fn kuramoto_h() -> BasisSpec {
        let mut f = vec![trig(Trig::Cos, 1.0)];
        for k in 2..=7 {
            f.push(trig(Trig::Sin, k as f64));
            f.push(trig(Trig::Cos, k as f64));
        }
        BasisSpec::new(1, BasisKind::DirectScalar, f).expect("valid preset")
    }

    /// [`kuramoto_h`] with `sin x` prepended.
    pub fn kuramoto_h_phi() -> BasisSpec {
        let mut b = kuramoto_h();
        b.functions.insert(0, trig(Trig::Sin, 1.0));
        b
    }

    /// Fourier pair `{sin x, cos x}` on scalar states.
    pub fn fourier_pair() -> BasisSpec {
        BasisSpec::new(1, BasisKind::DirectScalar, vec![trig(Trig::Sin, 1.0), trig(Trig::Cos, 1.0)])
            .expect("valid preset")
    }

    /// Hermite pair `{x^4 - 6x^2 + 3, x^5 - 10x^3 + 15x}` on scalar states.
    pub fn hermite_pair() -> BasisSpec {
        BasisSpec::new(
            1,
            BasisKind::DirectScalar,
            vec![
                BasisFn::Polynomial { coefs: vec![3.0, 0.0, -6.0, 0.0, 1.0] },
                BasisFn::Polynomial { coefs: vec![0.0, 15.0, 0.0, -10.0, 0.0, 1.0] },
            ],
        )
        .expect("valid preset")
    }

    /// Truncated pair `{r^-9 1[0.75, inf), r^-3 1[0.25, inf)}` lifted radially in d = 1.
    pub fn lj_pair() -> BasisSpec {
        BasisSpec::new(
            1,
            BasisKind::RadialLift,
            vec![
                BasisFn::PowerLaw { exponent: -9.0, support: Interval::from(0.75) },
                BasisFn::PowerLaw { exponent: -3.0, support: Interval::from(0.25) },
            ],
        )
        .expect("valid preset")
    }

    /// Damped Fourier basis `sin(2 pi k r) / (r + 0.1)`, k = 1..p.
    pub fn damped_fourier(d: usize, p: usize) -> BasisSpec {
        let f = (1..=p)
            .map(|k| BasisFn::DampedTrig { trig: Trig::Sin, frequency: 2.0 * std::f64::consts::PI * k as f64, shift: 0.1 })
            .collect();
        BasisSpec::new(d, BasisKind::RadialLift, f).expect("valid preset")
    }

    /// Piecewise-linear hat functions centred on a uniform grid of `p` nodes over `[lo, hi]`.
    pub fn hat_basis(d: usize, p: usize, lo: f64, hi: f64) -> BasisSpec {
        let h = (hi - lo) / (p - 1) as f64;
        let f = (0..p)
            .map(|k| {
                let c = lo + h * k as f64;
                BasisFn::Spline { knots: vec![c - h, c, c + h], coefs: vec![0.0, 1.0, 0.0] }
            })
            .collect();
        BasisSpec::new(d, BasisKind::RadialLift, f).expect("valid preset")
    }
}
