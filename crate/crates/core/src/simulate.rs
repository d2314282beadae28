//! Euler–Maruyama trajectory generation and observation noise.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drift_into, BasisSpec, InitDist, KernelCoef, SystemSpec, WeightMatrix};
use crate::rng::{self, tag};

/// Where a dataset came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// FNV-1a hash of the generating weight matrix.
    pub a_hash: Option<String>,
    /// FNV-1a hash of the generating kernel coefficients.
    pub c_hash: Option<String>,
    pub sigma_obs: f64,
}

/// `M` trajectories of `L + 1` states each, stored as one flat row-major array
/// indexed `[m][l][i][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub spec: SystemSpec,
    pub provenance: Provenance,
    m: usize,
    states: Vec<f64>,
}

impl TrajectoryData {
    pub fn from_states(spec: SystemSpec, provenance: Provenance, m: usize, states: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if m == 0 {
            return Err(Error::InvalidArgument("need at least one trajectory".into()));
        }
        let expect = m * (spec.steps + 1) * spec.n * spec.d;
        if states.len() != expect {
            return Err(Error::ShapeMismatch(format!("{} state values, expected {expect}", states.len())));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("states"));
        }
        Ok(Self { spec, provenance, m, states })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of steps `L`.
    pub fn steps(&self) -> usize {
        self.spec.steps
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn dt(&self) -> f64 {
        self.spec.dt
    }

    /// Values per state snapshot, `N * d`.
    pub fn state_len(&self) -> usize {
        self.spec.n * self.spec.d
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// One full trajectory, `(L + 1) * N * d` values.
    pub fn trajectory(&self, m: usize) -> &[f64] {
        let len = (self.spec.steps + 1) * self.state_len();
        &self.states[m * len..(m + 1) * len]
    }

    /// State of trajectory `m` at time index `l`, row-major `N x d`.
    pub fn state(&self, m: usize, l: usize) -> &[f64] {
        let s = self.state_len();
        let off = (m * (self.spec.steps + 1) + l) * s;
        &self.states[off..off + s]
    }

    pub fn state_matrix(&self, m: usize, l: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.spec.n, self.spec.d, self.state(m, l))
    }

    /// The first `count` trajectories.
    pub fn take(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.m {
            return Err(Error::InvalidArgument(format!("cannot take {count} of {} trajectories", self.m)));
        }
        let len = (self.spec.steps + 1) * self.state_len();
        Ok(Self { m: count, states: self.states[..count * len].to_vec(), ..self.clone() })
    }
}

/// FNV-1a over the bit patterns of `values`, as 16 hex digits.
pub fn fnv_hash(values: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn draw_init(init: &InitDist, rng: &mut impl Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = match *init {
            InitDist::UniformBox { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            InitDist::Gaussian { mean, std } => mean + std * rng.sample::<f64, _>(StandardNormal),
        };
    }
}

const BLOW_UP: f64 = 1e12;

fn run_trajectories<'c>(
    spec: &SystemSpec,
    a: &WeightMatrix,
    basis: &BasisSpec,
    coefs: impl Fn(usize) -> &'c [f64] + Sync,
    m: usize,
) -> Result<Vec<f64>> {
    let s = spec.n * spec.d;
    let per = (spec.steps + 1) * s;
    let sq = spec.sigma * spec.dt.sqrt();
    let chunks: Vec<Result<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|traj| {
            let mut rng = rng::stream(spec.seed, tag::TRAJECTORY, traj as u64);
            let mut out = vec![0.0; per];
            draw_init(&spec.init, &mut rng, &mut out[..s]);
            let mut f = vec![0.0; s];
            for l in 0..spec.steps {
                let (done, rest) = out.split_at_mut((l + 1) * s);
                let cur = &done[l * s..];
                drift_into(a.entries(), basis, &coefs, cur, &mut f);
                let next = &mut rest[..s];
                for q in 0..s {
                    let noise: f64 = rng.sample(StandardNormal);
                    let v = cur[q] + f[q] * spec.dt + sq * noise;
                    if !v.is_finite() || v.abs() > BLOW_UP {
                        return Err(Error::NonFiniteState { trajectory: traj, step: l + 1 });
                    }
                    next[q] = v;
                }
            }
            Ok(out)
        })
        .collect();
    let mut states = Vec::with_capacity(m * per);
    for c in chunks {
        states.extend_from_slice(&c?);
    }
    Ok(states)
}

fn check_inputs(spec: &SystemSpec, a: &WeightMatrix, basis: &BasisSpec, m: usize) -> Result<()> {
    spec.validate()?;
    basis.validate()?;
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    if a.n() != spec.n || basis.dim != spec.d {
        return Err(Error::DimensionMismatch(format!(
            "spec has N={}, d={}; weight matrix N={}, basis d={}",
            spec.n,
            spec.d,
            a.n(),
            basis.dim
        )));
    }
    Ok(())
}

/// Simulates `m` trajectories. Trajectory `k` depends only on `(spec.seed, k)`,
/// so two systems simulated with the same spec share initial conditions and
/// noise paths.
pub fn simulate(spec: &SystemSpec, a: &WeightMatrix, basis: &BasisSpec, c: &KernelCoef, m: usize) -> Result<TrajectoryData> {
    check_inputs(spec, a, basis, m)?;
    if c.len() != basis.p() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} basis functions", c.len(), basis.p())));
    }
    let states = run_trajectories(spec, a, basis, |_| c.as_slice(), m)?;
    let provenance = Provenance {
        a_hash: Some(fnv_hash(a.entries().as_slice())),
        c_hash: Some(fnv_hash(c.as_slice())),
        sigma_obs: 0.0,
    };
    Ok(TrajectoryData { spec: spec.clone(), provenance, m, states })
}

/// Simulation with per-agent kernels: agent `i` uses column `i` of `cmat` (`p x N`).
pub fn simulate_multitype(
    spec: &SystemSpec,
    a: &WeightMatrix,
    basis: &BasisSpec,
    cmat: &DMatrix<f64>,
    m: usize,
) -> Result<TrajectoryData> {
    check_inputs(spec, a, basis, m)?;
    if cmat.nrows() != basis.p() || cmat.ncols() != spec.n {
        return Err(Error::DimensionMismatch(format!(
            "coefficient matrix is {}x{}, expected {}x{}",
            cmat.nrows(),
            cmat.ncols(),
            basis.p(),
            spec.n
        )));
    }
    let cols: Vec<Vec<f64>> = (0..spec.n).map(|i| cmat.column(i).iter().cloned().collect()).collect();
    let states = run_trajectories(spec, a, basis, |i| cols[i].as_slice(), m)?;
    let provenance = Provenance {
        a_hash: Some(fnv_hash(a.entries().as_slice())),
        c_hash: Some(fnv_hash(cmat.as_slice())),
        sigma_obs: 0.0,
    };
    Ok(TrajectoryData { spec: spec.clone(), provenance, m, states })
}

/// Adds i.i.d. `N(0, sigma_obs^2)` to every observed value.
pub fn add_observation_noise(data: &TrajectoryData, sigma_obs: f64, seed: u64) -> TrajectoryData {
    let mut out = data.clone();
    if sigma_obs == 0.0 {
        return out;
    }
    out.provenance.sigma_obs = sigma_obs;
    let per = (data.spec.steps + 1) * data.state_len();
    out.states.par_chunks_mut(per).enumerate().for_each(|(m, chunk)| {
        let mut rng = rng::stream(seed, tag::OBS_NOISE, m as u64);
        for v in chunk.iter_mut() {
            *v += sigma_obs * rng.sample::<f64, _>(StandardNormal);
        }
    });
    out
}

/// Pairwise differences `r[i][j] = X_j - X_i`, stored at `((i * N + j) * d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDiffs {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl PairwiseDiffs {
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.n + j) * self.d;
        &self.values[off..off + self.d]
    }
}

pub fn pairwise_diffs(x: &DMatrix<f64>) -> PairwiseDiffs {
    let (n, d) = x.shape();
    let mut values = vec![0.0; n * n * d];
    for i in 0..n {
        for j in 0..n {
            for k in 0..d {
                values[(i * n + j) * d + k] = x[(j, k)] - x[(i, k)];
            }
        }
    }
    PairwiseDiffs { n, d, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;
    use crate::model::{sample_weight_matrix, BasisFn, BasisKind};

    fn spec(n: usize, d: usize, sigma: f64, dt: f64, steps: usize) -> SystemSpec {
        SystemSpec { n, d, sigma, dt, steps, init: InitDist::UniformBox { lo: 0.0, hi: 1.5 }, seed: 11 }
    }

    #[test]
    fn no_force_no_kernel_is_constant() {
        let s = spec(4, 2, 0.0, 0.1, 5);
        let a = sample_weight_matrix(4, 2, 1).unwrap();
        let data = simulate(&s, &a, &lj_basis(2), &KernelCoef::zeros(10), 3).unwrap();
        for m in 0..3 {
            for l in 1..=5 {
                assert_eq!(data.state(m, l), data.state(m, 0));
            }
        }
    }

    #[test]
    fn two_agent_linear_euler_recursion() {
        let s = spec(2, 1, 0.0, 0.05, 20);
        let a = WeightMatrix::from_raw(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let basis = BasisSpec::new(1, BasisKind::RadialLift, vec![BasisFn::Polynomial { coefs: vec![0.0, 1.0] }]).unwrap();
        let data = simulate(&s, &a, &basis, &KernelCoef(vec![1.0]), 1).unwrap();
        let (mut x1, mut x2) = (data.state(0, 0)[0], data.state(0, 0)[1]);
        for l in 1..=20 {
            let (n1, n2) = (x1 + 0.05 * (x2 - x1), x2 + 0.05 * (x1 - x2));
            x1 = n1;
            x2 = n2;
            assert!((data.state(0, l)[0] - x1).abs() < 1e-12);
            assert!((data.state(0, l)[1] - x2).abs() < 1e-12);
        }
    }

    // Pairs settle at the zero of phi, r* = 4^(-1/6). A Uniform[0,1.5]^2 start has its
    // median spacing just below r*, so the median grows slightly while clustering.
    #[test]
    fn lj_system_settles_at_equilibrium_spacing() {
        let steps = 20_000;
        let s = SystemSpec { n: 6, d: 2, sigma: 1e-3, dt: 1e-4, steps, init: InitDist::UniformBox { lo: 0.0, hi: 1.5 }, seed: 3 };
        let a = sample_weight_matrix(6, 2, 3).unwrap();
        let data = simulate(&s, &a, &lj_basis(2), &lj_coef(), 20).unwrap();
        let median_dist = |l: usize| {
            let mut all = vec![];
            for m in 0..20 {
                let pd = pairwise_diffs(&data.state_matrix(m, l));
                for i in 0..6 {
                    for j in (i + 1)..6 {
                        let r = pd.get(i, j);
                        all.push((r[0] * r[0] + r[1] * r[1]).sqrt());
                    }
                }
            }
            all.sort_by(f64::total_cmp);
            all[all.len() / 2]
        };
        let r_star = 4f64.powf(-1.0 / 6.0);
        let (start, end) = (median_dist(0), median_dist(steps));
        assert!((end - r_star).abs() < 0.01, "{end}");
        assert!((end - r_star).abs() < (start - r_star).abs());
    }

    #[test]
    fn trajectories_extend_with_m() {
        let s = spec(3, 2, 0.1, 1e-2, 4);
        let a = sample_weight_matrix(3, 2, 1).unwrap();
        let small = simulate(&s, &a, &lj_basis(2), &lj_coef(), 10).unwrap();
        let big = simulate(&s, &a, &lj_basis(2), &lj_coef(), 100).unwrap();
        assert_eq!(small, big.take(10).unwrap());
    }

    #[test]
    fn simulation_is_thread_count_independent() {
        let s = spec(5, 2, 0.1, 1e-3, 10);
        let a = sample_weight_matrix(5, 2, 2).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&s, &a, &lj_basis(2), &lj_coef(), 37).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn blow_up_is_reported() {
        let s = SystemSpec { n: 2, d: 1, sigma: 0.0, dt: 1.0, steps: 200, init: InitDist::UniformBox { lo: 0.0, hi: 1.0 }, seed: 0 };
        let a = WeightMatrix::from_raw(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let basis = BasisSpec::new(1, BasisKind::RadialLift, vec![BasisFn::Polynomial { coefs: vec![0.0, 1.0] }]).unwrap();
        let err = simulate(&s, &a, &basis, &KernelCoef(vec![-10.0]), 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { trajectory: 0, .. }));
    }

    #[test]
    fn observation_noise_statistics() {
        let s = SystemSpec { n: 10, d: 1, sigma: 0.0, dt: 1.0, steps: 999, init: InitDist::UniformBox { lo: 0.0, hi: 1.0 }, seed: 0 };
        let a = sample_weight_matrix(10, 1, 0).unwrap();
        let basis = kuramoto_truth();
        let data = simulate(&s, &a, &basis, &KernelCoef(vec![0.0]), 100).unwrap();
        assert_eq!(add_observation_noise(&data, 0.0, 1), data);
        let noisy = add_observation_noise(&data, 1.0, 1);
        assert_eq!(noisy, add_observation_noise(&data, 1.0, 1));
        let diffs: Vec<f64> = noisy.states().iter().zip(data.states()).map(|(a, b)| a - b).collect();
        assert_eq!(diffs.len(), 1_000_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((0.997..=1.003).contains(&var.sqrt()), "std {}", var.sqrt());
    }

    #[test]
    fn pairwise_differences() {
        let pd = pairwise_diffs(&DMatrix::from_row_slice(2, 1, &[0.0, 3.0]));
        assert_eq!(pd.get(0, 1), &[3.0]);
        assert_eq!(pd.get(1, 0), &[-3.0]);
        let mut rng = rng::stream(4, 0, 0);
        let x = DMatrix::from_fn(4, 2, |_, _| rng.random::<f64>());
        let pd = pairwise_diffs(&x);
        for i in 0..4 {
            assert_eq!(pd.get(i, i), &[0.0, 0.0]);
            for j in 0..4 {
                for k in 0..2 {
                    assert_eq!(pd.get(i, j)[k], x[(j, k)] - x[(i, k)]);
                    assert_eq!(pd.get(i, j)[k], -pd.get(j, i)[k]);
                }
            }
        }
    }
}
