//! Experiment drivers. Each returns plain result structs; writing them out is
//! left to [`crate::run`].

use std::time::Instant;

use nalgebra::DMatrix;
use netkernel_core::als::{als_fit, FitResult};
use netkernel_core::diagnostics::{self, EmpiricalMeasure, Landscape, RipReport};
use netkernel_core::metrics::{self, AssignOrder, LeaderGroups, LeadershipConfig};
use netkernel_core::model::sample_weight_matrix;
use netkernel_core::multitype::{model_select, SelectionRow};
use netkernel_core::orals::orals_fit;
use netkernel_core::rng::{derive_seed, tag};
use netkernel_core::simulate::{add_observation_noise, simulate, simulate_multitype};
use netkernel_core::{BasisSpec, InitDist, KernelCoef, SystemSpec, TrajectoryData, WeightMatrix};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::*;
use crate::error::CliError;

// Sub-streams of the experiment seed.
const GRAPH_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const MEASURE_STREAM: u64 = 3;
const RUN_STREAM: u64 = 100;

pub fn sub_seed(seed: u64, k: u64) -> u64 {
    derive_seed(seed, tag::EXPERIMENT, k)
}

/// Planted leader graph. Followers are split into contiguous blocks, one per
/// leader; each follower puts a weight in (0.7, 1] on its leader and a weight in
/// (0, 0.3] on one other member of its block. Leaders listen to one another
/// (or, alone, to one of their followers).
pub fn leader_graph(n: usize, leaders: &[usize], seed: u64) -> Result<WeightMatrix, CliError> {
    let mut rng = netkernel_core::rng::stream(seed, tag::GRAPH, 1);
    let followers: Vec<usize> = (0..n).filter(|i| !leaders.contains(i)).collect();
    let k = leaders.len();
    if followers.len() < 2 * k {
        return Err(CliError::Config(format!("{n} agents cannot host {k} leaders with two followers each")));
    }
    let groups = followers_by_leader(n, leaders);
    let mut raw = DMatrix::zeros(n, n);
    for (g, &l) in leaders.iter().enumerate() {
        let members = &groups[g];
        for &f in members {
            raw[(f, l)] = 0.7 + 0.3 * (1.0 - rng.random::<f64>());
            let others: Vec<usize> = members.iter().copied().filter(|&o| o != f).collect();
            let o = others[rng.random_range(0..others.len())];
            raw[(f, o)] = 0.3 * (1.0 - rng.random::<f64>());
        }
        if k > 1 {
            for &o in leaders.iter().filter(|&&o| o != l) {
                raw[(l, o)] = 1.0 - rng.random::<f64>();
            }
        } else {
            raw[(l, members[0])] = 1.0;
        }
    }
    Ok(WeightMatrix::from_raw(raw)?)
}

/// Followers of each leader in [`leader_graph`], sorted.
pub fn followers_by_leader(n: usize, leaders: &[usize]) -> Vec<Vec<usize>> {
    let followers: Vec<usize> = (0..n).filter(|i| !leaders.contains(i)).collect();
    let k = leaders.len();
    let per = followers.len().div_ceil(k);
    (0..k).map(|g| followers.iter().copied().skip(g * per).take(per).collect()).collect()
}

pub fn build_graph(graph: &GraphConfig, n: usize, seed: u64) -> Result<WeightMatrix, CliError> {
    match graph {
        GraphConfig::Random { degree } => Ok(sample_weight_matrix(n, *degree, seed)?),
        GraphConfig::Explicit { rows } => explicit_graph(rows),
        GraphConfig::Complete => Ok(WeightMatrix::from_raw(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }))?),
        GraphConfig::Leaders { leaders } => leader_graph(n, leaders, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Errors {
    pub graph_err: f64,
    pub kernel_err: f64,
    pub traj_err: f64,
}

/// Truth, hypothesis space and held-out data for one problem.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: Problem,
    pub seed: u64,
    pub a: WeightMatrix,
    pub true_basis: BasisSpec,
    pub c: KernelCoef,
    pub basis: BasisSpec,
    pub test: TrajectoryData,
    pub measure: EmpiricalMeasure,
}

impl Prepared {
    pub fn new(problem: &Problem, seed: u64) -> Result<Self, CliError> {
        problem.validate()?;
        let a = build_graph(&problem.graph, problem.system.n, sub_seed(seed, GRAPH_STREAM))?;
        Self::with_graph(problem, seed, a)
    }

    pub fn with_graph(problem: &Problem, seed: u64, a: WeightMatrix) -> Result<Self, CliError> {
        let (true_basis, c) = problem.kernel.build(problem.system.d)?;
        let basis = problem.hypothesis_basis()?;
        let mut test_sys = problem.system.clone();
        test_sys.steps = problem.test_steps.unwrap_or(problem.system.steps);
        let test = simulate(&test_sys.spec(sub_seed(seed, TEST_STREAM)), &a, &true_basis, &c, problem.n_test.max(1))?;
        let big = simulate(&problem.system.spec(sub_seed(seed, MEASURE_STREAM)), &a, &true_basis, &c, problem.measure_m)?;
        let measure = diagnostics::exploration_measure(&big);
        Ok(Self { problem: problem.clone(), seed, a, true_basis, c, basis, test, measure })
    }

    /// Training data of run `run` with `m` trajectories; runs are nested in `m`.
    pub fn train(&self, m: usize, run: usize) -> Result<TrajectoryData, CliError> {
        let s = sub_seed(self.seed, RUN_STREAM + run as u64);
        let data = simulate(&self.problem.system.spec(s), &self.a, &self.true_basis, &self.c, m)?;
        Ok(if self.problem.sigma_obs > 0.0 {
            add_observation_noise(&data, self.problem.sigma_obs, derive_seed(s, tag::OBS_NOISE, 0))
        } else {
            data
        })
    }

    pub fn evaluate(&self, a_hat: &WeightMatrix, c_hat: &KernelCoef) -> Result<Errors, CliError> {
        let graph_err = metrics::graph_error(&self.a, a_hat);
        let kernel_err = metrics::kernel_error(&self.true_basis, &self.c, &self.basis, c_hat, &self.measure)?;
        // A prediction that blows up counts as an infinite error.
        let traj_err = simulate(&self.test.spec, a_hat, &self.basis, c_hat, self.test.m())
            .and_then(|pred| metrics::trajectory_error(&self.test, &pred))
            .unwrap_or(f64::INFINITY);
        Ok(Errors { graph_err, kernel_err, traj_err })
    }
}

pub fn fit(alg: Algorithm, data: &TrajectoryData, basis: &BasisSpec, als: &AlsConfig, seed: u64) -> Result<FitResult, CliError> {
    Ok(match alg {
        Algorithm::Als => als_fit(data, basis, &als.als_options(seed))?,
        Algorithm::Orals => orals_fit(data, basis, &als.orals_options())?,
    })
}

pub fn timed_fit(
    alg: Algorithm,
    data: &TrajectoryData,
    basis: &BasisSpec,
    als: &AlsConfig,
    seed: u64,
) -> Result<(FitResult, f64), CliError> {
    let t = Instant::now();
    let f = fit(alg, data, basis, als, seed)?;
    Ok((f, t.elapsed().as_secs_f64() * 1e3))
}

/// One row of a study table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub run: usize,
    pub graph_err: f64,
    pub kernel_err: f64,
    pub traj_err: f64,
    pub wall_ms: f64,
}

/// Least-squares slope of `log y` against `log x`, over the points with
/// positive finite coordinates. NaN with fewer than two such points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Linear-interpolated quantile of a sample; NaN when empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    #[serde(rename = "M")]
    pub m: usize,
    pub metric: &'static str,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slopes {
    pub graph: f64,
    pub kernel: f64,
    pub traj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTable {
    pub algorithm: Algorithm,
    pub rows: Vec<RunRow>,
    /// Slopes of the per-level medians against the swept quantity.
    pub slopes: Slopes,
}

/// Slopes of the per-`x` medians of each metric against `x`.
fn median_slopes(points: &[(f64, RunRow)]) -> Slopes {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let med = |f: fn(&RunRow) -> f64| -> Vec<f64> {
        xs.iter()
            .map(|&x| median(&points.iter().filter(|p| p.0 == x).map(|p| f(&p.1)).collect::<Vec<_>>()))
            .collect()
    };
    Slopes {
        graph: loglog_slope(&xs, &med(|r| r.graph_err)),
        kernel: loglog_slope(&xs, &med(|r| r.kernel_err)),
        traj: loglog_slope(&xs, &med(|r| r.traj_err)),
    }
}

impl StudyTable {
    fn new(algorithm: Algorithm, rows: Vec<RunRow>) -> Self {
        let pts: Vec<(f64, RunRow)> = rows.iter().map(|r| (r.m as f64, *r)).collect();
        Self { algorithm, slopes: median_slopes(&pts), rows }
    }

    /// Per-`M` medians of one metric, in increasing `M`.
    pub fn medians(&self, metric: fn(&RunRow) -> f64) -> Vec<(usize, f64)> {
        let mut ms: Vec<usize> = self.rows.iter().map(|r| r.m).collect();
        ms.sort_unstable();
        ms.dedup();
        ms.iter()
            .map(|&m| (m, median(&self.rows.iter().filter(|r| r.m == m).map(metric).collect::<Vec<_>>())))
            .collect()
    }

    pub fn quartiles(&self) -> Vec<Quartiles> {
        let metrics: [(&'static str, fn(&RunRow) -> f64); 3] =
            [("graph_err", |r| r.graph_err), ("kernel_err", |r| r.kernel_err), ("traj_err", |r| r.traj_err)];
        let mut ms: Vec<usize> = self.rows.iter().map(|r| r.m).collect();
        ms.sort_unstable();
        ms.dedup();
        let mut out = vec![];
        for m in ms {
            for (name, f) in metrics {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.m == m).map(f).collect();
                out.push(Quartiles { m, metric: name, q1: quantile(&v, 0.25), median: median(&v), q3: quantile(&v, 0.75) });
            }
        }
        out
    }
}

fn run_grid(
    prep: &Prepared,
    cells: &[(usize, usize)],
    alg: Algorithm,
    als: &AlsConfig,
) -> Result<Vec<RunRow>, CliError> {
    cells
        .par_iter()
        .map(|&(m, run)| {
            let data = prep.train(m, run)?;
            let (f, wall_ms) = timed_fit(alg, &data, &prep.basis, als, sub_seed(prep.seed, RUN_STREAM + run as u64))?;
            let e = prep.evaluate(&f.a_hat, &f.c_hat)?;
            Ok(RunRow { m, run, graph_err: e.graph_err, kernel_err: e.kernel_err, traj_err: e.traj_err, wall_ms })
        })
        .collect()
}

pub fn study_convergence(p: &ConvergenceParams, seed: u64) -> Result<Vec<StudyTable>, CliError> {
    let prep = Prepared::new(&p.problem, seed)?;
    let cells: Vec<(usize, usize)> = p.m_grid.iter().flat_map(|&m| (0..p.runs).map(move |r| (m, r))).collect();
    p.algorithms
        .iter()
        .map(|&alg| Ok(StudyTable::new(alg, run_grid(&prep, &cells, alg, &p.als)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseRow {
    pub level: f64,
    #[serde(flatten)]
    pub run: RunRow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseTable {
    pub algorithm: Algorithm,
    pub rows: Vec<NoiseRow>,
    /// Slopes of the per-level medians against the level.
    pub slopes: Slopes,
}

pub fn study_noise(p: &NoiseParams, seed: u64) -> Result<Vec<NoiseTable>, CliError> {
    if p.levels.is_empty() {
        return Err(CliError::Config("noise grid is empty".into()));
    }
    // The graph and measure stay fixed across levels; only the noise changes.
    let base = Prepared::new(&p.problem, seed)?;
    let preps: Vec<Prepared> = p
        .levels
        .iter()
        .map(|&level| {
            let mut problem = p.problem.clone();
            match p.sweep {
                NoiseSweep::Sigma => problem.system.sigma = level,
                NoiseSweep::SigmaObs => problem.sigma_obs = level,
            }
            Ok(Prepared { problem, ..base.clone() })
        })
        .collect::<Result<_, CliError>>()?;
    p.algorithms
        .iter()
        .map(|&alg| {
            let mut rows = vec![];
            for (prep, &level) in preps.iter().zip(&p.levels) {
                let cells: Vec<(usize, usize)> = (0..p.runs).map(|r| (p.m, r)).collect();
                rows.extend(run_grid(prep, &cells, alg, &p.als)?.into_iter().map(|run| NoiseRow { level, run }));
            }
            let pts: Vec<(f64, RunRow)> = rows.iter().map(|r| (r.level, r.run)).collect();
            Ok(NoiseTable { algorithm: alg, slopes: median_slopes(&pts), rows })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegRow {
    pub regularizer: String,
    #[serde(flatten)]
    pub run: RunRow,
}

pub fn study_regularizers(p: &RegularizerParams, seed: u64) -> Result<Vec<RegRow>, CliError> {
    let prep = Prepared::new(&p.problem, seed)?;
    let cells: Vec<(usize, usize)> = (0..p.runs).map(|r| (p.m, r)).collect();
    let mut out = vec![];
    for reg in &p.regularizers {
        let als = AlsConfig { reg: reg.clone(), ..p.als.clone() };
        for run in run_grid(&prep, &cells, Algorithm::Als, &als)? {
            out.push(RegRow { regularizer: reg.label(), run });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RipOutcome {
    pub report: RipReport,
    pub landscape: Option<Landscape>,
    /// Landscape minima whose loss exceeds `1e-3` of the grid maximum.
    pub spurious_minima: usize,
}

/// Sensing matrices of agent 0 from a simulated system, or Gaussian ones.
pub fn rip_sensing(p: &RipParams, seed: u64) -> Result<Vec<DMatrix<f64>>, CliError> {
    match &p.problem {
        None => {
            let (r, c) = p.gaussian_shape.unwrap_or((2, 2));
            Ok(diagnostics::gaussian_sensing(p.m, r, c, seed))
        }
        Some(problem) => {
            let prep_a = build_graph(&problem.graph, problem.system.n, sub_seed(seed, GRAPH_STREAM))?;
            let (tb, c) = problem.kernel.build(problem.system.d)?;
            let data = simulate(&problem.system.spec(sub_seed(seed, RUN_STREAM)), &prep_a, &tb, &c, p.m)?;
            Ok(diagnostics::sensing_matrices(&data, &problem.hypothesis_basis()?, 0)?)
        }
    }
}

pub fn study_rip(p: &RipParams, seed: u64) -> Result<RipOutcome, CliError> {
    let sensing = rip_sensing(p, seed)?;
    let report = diagnostics::rip_scan(&sensing, p.n_probe, seed)?;
    let landscape = match p.landscape {
        Some(size) => {
            if sensing[0].shape() != (2, 2) {
                return Err(CliError::Config("the landscape needs 2 x 2 sensing matrices".into()));
            }
            // A fixed truth direction keeps instances comparable.
            let mut rng = netkernel_core::rng::stream(seed, tag::PROBE, 2);
            let truth = (std::f64::consts::TAU * rng.random::<f64>(), std::f64::consts::TAU * rng.random::<f64>());
            Some(diagnostics::landscape_scan(size, &sensing, truth)?)
        }
        None => None,
    };
    let spurious_minima = landscape.as_ref().map_or(0, |l| l.spurious_minima(1e-3).len());
    Ok(RipOutcome { report, landscape, spurious_minima })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KuramotoOutcome {
    pub errors: Errors,
    pub converged: bool,
    pub c_hat: Vec<f64>,
    pub a_hat: Vec<Vec<f64>>,
}

pub fn kuramoto(p: &KuramotoParams, seed: u64) -> Result<KuramotoOutcome, CliError> {
    let problem = Problem {
        system: SystemConfig {
            n: p.n,
            d: 1,
            sigma: p.sigma,
            dt: p.dt,
            steps: p.steps,
            init: InitDist::UniformBox { lo: -p.init_half_width, hi: p.init_half_width },
        },
        graph: GraphConfig::Random { degree: p.degree },
        kernel: KernelConfig { basis: BasisConfig::KuramotoTruth, coef: Some(vec![p.kappa]) },
        hypothesis: Some(if p.with_truth { BasisConfig::KuramotoHPhi } else { BasisConfig::KuramotoH }),
        sigma_obs: p.sigma_obs,
        n_test: 20,
        measure_m: 200,
        test_steps: None,
    };
    let prep = Prepared::new(&problem, seed)?;
    let data = prep.train(p.m, 0)?;
    let f = fit(Algorithm::Als, &data, &prep.basis, &p.als, seed)?;
    let errors = prep.evaluate(&f.a_hat, &f.c_hat)?;
    Ok(KuramotoOutcome { errors, converged: f.converged, c_hat: f.c_hat.0.clone(), a_hat: matrix_rows(f.a_hat.entries()) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderOutcome {
    pub graph_err: f64,
    pub truth: LeaderGroups,
    pub estimated: LeaderGroups,
    pub leaders_match: bool,
    pub groups_match: bool,
}

pub fn leader_follower(p: &LeaderParams, seed: u64) -> Result<LeaderOutcome, CliError> {
    let prep = Prepared::new(&p.problem, seed)?;
    let data = prep.train(p.m, 0)?;
    let f = fit(Algorithm::Als, &data, &prep.basis, &p.als, seed)?;
    let cfg = LeadershipConfig::new(p.alpha, 1.0 - p.alpha)?;
    let truth = metrics::classify_leaders_followers(&prep.a, &cfg, p.hint, AssignOrder::Greedy, seed)?;
    let estimated = metrics::classify_leaders_followers(&f.a_hat, &cfg, p.hint, AssignOrder::Greedy, seed)?;
    Ok(LeaderOutcome {
        graph_err: metrics::graph_error(&prep.a, &f.a_hat),
        leaders_match: truth.leaders == estimated.leaders,
        groups_match: truth == estimated,
        truth,
        estimated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionOutcome {
    pub selected: usize,
    pub table: Vec<SelectionRow>,
}

pub fn multitype_select(p: &MultitypeParams, seed: u64) -> Result<SelectionOutcome, CliError> {
    let basis = p.basis.build(p.system.d)?;
    let a = build_graph(&p.graph, p.system.n, sub_seed(seed, GRAPH_STREAM))?;
    let cmat = DMatrix::from_fn(basis.p(), p.system.n, |k, i| p.kernels[p.types[i]][k]);
    let train = simulate_multitype(&p.system.spec(sub_seed(seed, RUN_STREAM)), &a, &basis, &cmat, p.m)?;
    let train = if p.sigma_obs > 0.0 {
        add_observation_noise(&train, p.sigma_obs, derive_seed(seed, tag::OBS_NOISE, 0))
    } else {
        train
    };
    let test_spec = SystemSpec { steps: p.test_steps, dt: p.test_dt, ..p.system.spec(sub_seed(seed, TEST_STREAM)) };
    let test = simulate_multitype(&test_spec, &a, &basis, &cmat, p.n_test)?;
    let (selected, table) = model_select(&train, &test, &basis, &p.candidates, &p.threefold.options(seed))?;
    Ok(SelectionOutcome { selected, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    /// Wall time against `M` at the largest `N`, per algorithm.
    pub slope_m_als: f64,
    pub slope_m_orals: f64,
}

/// Times full fits. ALS runs a fixed number of sweeps (`tol = 0`) so the work
/// per fit does not depend on when it happens to converge. Each point is the
/// minimum over `repeats` timings.
pub fn benchmark(p: &BenchmarkParams, seed: u64) -> Result<BenchOutcome, CliError> {
    let ns = if p.n_grid.is_empty() { vec![p.problem.system.n] } else { p.n_grid.clone() };
    let als = AlsConfig { tol: 0.0, ..AlsConfig::default() };
    let basis = p.problem.hypothesis_basis()?;
    let mut rows = vec![];
    for &n in &ns {
        let mut problem = p.problem.clone();
        problem.system.n = n;
        let a = build_graph(&problem.graph, n, sub_seed(seed, GRAPH_STREAM))?;
        let (tb, c) = problem.kernel.build(problem.system.d)?;
        let mmax = *p.m_grid.iter().max().unwrap();
        let all = simulate(&problem.system.spec(sub_seed(seed, RUN_STREAM)), &a, &tb, &c, mmax)?;
        for &m in &p.m_grid {
            let data = all.take(m)?;
            for alg in [Algorithm::Als, Algorithm::Orals] {
                let mut best = f64::INFINITY;
                for _ in 0..p.repeats {
                    best = best.min(timed_fit(alg, &data, &basis, &als, seed)?.1);
                }
                rows.push(BenchRow { algorithm: alg, n, m, wall_ms: best });
            }
        }
    }
    let nmax = *ns.iter().max().unwrap();
    let slope = |alg: Algorithm| {
        let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.algorithm == alg && r.n == nmax).collect();
        loglog_slope(&sel.iter().map(|r| r.m as f64).collect::<Vec<_>>(), &sel.iter().map(|r| r.wall_ms).collect::<Vec<_>>())
    };
    Ok(BenchOutcome { slope_m_als: slope(Algorithm::Als), slope_m_orals: slope(Algorithm::Orals), rows })
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

