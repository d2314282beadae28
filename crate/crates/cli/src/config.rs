//! Experiment configuration files.
//!
//! A config is a JSON object
//!
//! ```json
//! { "schema_version": 1, "experiment": "fit-als", "seed": 7, "params": { ... } }
//! ```
//!
//! where the shape of `params` depends on `experiment`. Unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use netkernel_core::als::{AlsOptions, RegStrategy};
use netkernel_core::linsolve::Regularizer;
use netkernel_core::model::presets;
use netkernel_core::multitype::ThreefoldOptions;
use netkernel_core::orals::OralsOptions;
use netkernel_core::tensors::AssemblyMode;
use netkernel_core::{BasisSpec, InitDist, KernelCoef, SystemSpec, WeightMatrix};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    FitAls,
    FitOrals,
    FitThreefold,
    StudyConvergence,
    StudyNoise,
    StudyRegularizers,
    StudyRip,
    Kuramoto,
    LeaderFollower,
    MultitypeSelect,
    Benchmark,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    experiment: ExperimentKind,
    #[serde(default)]
    seed: u64,
    #[serde(default = "empty_object")]
    params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

#[derive(Debug, Clone)]
pub enum Experiment {
    Simulate(SimulateParams),
    FitAls(FitParams),
    FitOrals(FitParams),
    FitThreefold(ThreefoldParams),
    StudyConvergence(ConvergenceParams),
    StudyNoise(NoiseParams),
    StudyRegularizers(RegularizerParams),
    StudyRip(RipParams),
    Kuramoto(KuramotoParams),
    LeaderFollower(LeaderParams),
    MultitypeSelect(MultitypeParams),
    Benchmark(BenchmarkParams),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub experiment: Experiment,
    /// Directory of the config file; relative data paths resolve against it.
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn kind(&self) -> ExperimentKind {
        match &self.experiment {
            Experiment::Simulate(_) => ExperimentKind::Simulate,
            Experiment::FitAls(_) => ExperimentKind::FitAls,
            Experiment::FitOrals(_) => ExperimentKind::FitOrals,
            Experiment::FitThreefold(_) => ExperimentKind::FitThreefold,
            Experiment::StudyConvergence(_) => ExperimentKind::StudyConvergence,
            Experiment::StudyNoise(_) => ExperimentKind::StudyNoise,
            Experiment::StudyRegularizers(_) => ExperimentKind::StudyRegularizers,
            Experiment::StudyRip(_) => ExperimentKind::StudyRip,
            Experiment::Kuramoto(_) => ExperimentKind::Kuramoto,
            Experiment::LeaderFollower(_) => ExperimentKind::LeaderFollower,
            Experiment::MultitypeSelect(_) => ExperimentKind::MultitypeSelect,
            Experiment::Benchmark(_) => ExperimentKind::Benchmark,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn params<T: for<'de> Deserialize<'de>>(v: serde_json::Value) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("params: {e}")))
}

pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig, CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Config("config is empty".into()));
    }
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            raw.schema_version
        )));
    }
    let p = raw.params;
    let experiment = match raw.experiment {
        ExperimentKind::Simulate => Experiment::Simulate(params(p)?),
        ExperimentKind::FitAls => Experiment::FitAls(params(p)?),
        ExperimentKind::FitOrals => Experiment::FitOrals(params(p)?),
        ExperimentKind::FitThreefold => Experiment::FitThreefold(params(p)?),
        ExperimentKind::StudyConvergence => Experiment::StudyConvergence(params(p)?),
        ExperimentKind::StudyNoise => Experiment::StudyNoise(params(p)?),
        ExperimentKind::StudyRegularizers => Experiment::StudyRegularizers(params(p)?),
        ExperimentKind::StudyRip => Experiment::StudyRip(params(p)?),
        ExperimentKind::Kuramoto => Experiment::Kuramoto(params(p)?),
        ExperimentKind::LeaderFollower => Experiment::LeaderFollower(params(p)?),
        ExperimentKind::MultitypeSelect => Experiment::MultitypeSelect(params(p)?),
        ExperimentKind::Benchmark => Experiment::Benchmark(params(p)?),
    };
    let cfg = ExperimentConfig { seed: raw.seed, experiment, base_dir: base_dir.to_path_buf() };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

// ---- shared pieces ----

/// System settings without the seed, which comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub dt: f64,
    pub steps: usize,
    pub init: InitDist,
}

impl SystemConfig {
    pub fn spec(&self, seed: u64) -> SystemSpec {
        SystemSpec { n: self.n, d: self.d, sigma: self.sigma, dt: self.dt, steps: self.steps, init: self.init, seed }
    }

    /// The settings of the Lennard-Jones showcase system.
    pub fn lj_typical() -> Self {
        Self { n: 6, d: 2, sigma: 1e-3, dt: 1e-4, steps: 50, init: InitDist::UniformBox { lo: 0.0, hi: 1.5 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConfig {
    /// `degree` random neighbours per agent.
    Random { degree: usize },
    /// Explicit nonnegative matrix; rows are normalized.
    Explicit { rows: Vec<Vec<f64>> },
    /// Every off-diagonal entry equal.
    Complete,
    /// Planted leaders: each follower listens mostly to its group's leader.
    Leaders { leaders: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisConfig {
    /// The ten truncated Lennard-Jones pieces.
    Lj,
    LjP7,
    /// The three pieces that represent the true Lennard-Jones kernel exactly.
    LjExact,
    KuramotoTruth,
    KuramotoH,
    KuramotoHPhi,
    FourierPair,
    HermitePair,
    LjPair,
    DampedFourier { p: usize },
    Hat { p: usize, lo: f64, hi: f64 },
    Custom { spec: BasisSpec },
}

impl BasisConfig {
    pub fn build(&self, d: usize) -> Result<BasisSpec, CliError> {
        let scalar = |b: BasisSpec| {
            if d != 1 {
                Err(CliError::Config(format!("basis {self:?} needs d = 1, got {d}")))
            } else {
                Ok(b)
            }
        };
        match self {
            BasisConfig::Lj => Ok(presets::lj_basis(d)),
            BasisConfig::LjP7 => Ok(presets::lj_basis_p7(d)),
            BasisConfig::LjExact => Ok(presets::lj_basis_exact(d)),
            BasisConfig::KuramotoTruth => scalar(presets::kuramoto_truth()),
            BasisConfig::KuramotoH => scalar(presets::kuramoto_h()),
            BasisConfig::KuramotoHPhi => scalar(presets::kuramoto_h_phi()),
            BasisConfig::FourierPair => scalar(presets::fourier_pair()),
            BasisConfig::HermitePair => scalar(presets::hermite_pair()),
            BasisConfig::LjPair => scalar(presets::lj_pair()),
            BasisConfig::DampedFourier { p } => {
                if *p == 0 {
                    return Err(CliError::Config("damped_fourier needs p >= 1".into()));
                }
                Ok(presets::damped_fourier(d, *p))
            }
            BasisConfig::Hat { p, lo, hi } => {
                if *p < 2 || !(lo < hi) {
                    return Err(CliError::Config("hat basis needs p >= 2 and lo < hi".into()));
                }
                Ok(presets::hat_basis(d, *p, *lo, *hi))
            }
            BasisConfig::Custom { spec } => {
                spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
                if spec.dim != d {
                    return Err(CliError::Config(format!("custom basis has d={}, system d={d}", spec.dim)));
                }
                Ok(spec.clone())
            }
        }
    }

    /// Known true coefficients for the presets that define a truth.
    pub fn default_coef(&self) -> Option<KernelCoef> {
        match self {
            BasisConfig::Lj => Some(presets::lj_coef()),
            BasisConfig::LjP7 => Some(presets::lj_coef_p7()),
            BasisConfig::LjExact => Some(presets::lj_coef_exact()),
            BasisConfig::KuramotoTruth => Some(KernelCoef(vec![1.0])),
            _ => None,
        }
    }
}

/// A true kernel: basis plus coefficients (defaulted for presets with a known truth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub basis: BasisConfig,
    #[serde(default)]
    pub coef: Option<Vec<f64>>,
}

impl KernelConfig {
    pub fn build(&self, d: usize) -> Result<(BasisSpec, KernelCoef), CliError> {
        let basis = self.basis.build(d)?;
        let coef = match &self.coef {
            Some(c) => KernelCoef(c.clone()),
            None => self
                .basis
                .default_coef()
                .ok_or_else(|| CliError::Config(format!("basis {:?} needs explicit coef", self.basis)))?,
        };
        if coef.len() != basis.p() {
            return Err(CliError::Config(format!("{} coefficients for {} basis functions", coef.len(), basis.p())));
        }
        if coef.0.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config("non-finite kernel coefficient".into()));
        }
        Ok((basis, coef))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Auto,
    Long,
    Normal,
}

impl From<ModeConfig> for AssemblyMode {
    fn from(m: ModeConfig) -> Self {
        match m {
            ModeConfig::Auto => AssemblyMode::Auto,
            ModeConfig::Long => AssemblyMode::Long,
            ModeConfig::Normal => AssemblyMode::Normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegConfig {
    None,
    MinNorm,
    Pinv { rcond: f64 },
    Ridge { lambda: f64 },
    /// Ridge with the weight chosen by the L-curve.
    Lcurve,
    /// Data-adaptive RKHS penalty with the weight chosen by the L-curve.
    Rkhs,
}

impl RegConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = match self {
            RegConfig::Pinv { rcond } => !(rcond.is_finite() && *rcond >= 0.0),
            RegConfig::Ridge { lambda } => !(lambda.is_finite() && *lambda >= 0.0),
            _ => false,
        };
        if bad {
            return Err(CliError::Config(format!("invalid regularizer {self:?}")));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            RegConfig::None => "none".into(),
            RegConfig::MinNorm => "min_norm".into(),
            RegConfig::Pinv { rcond } => format!("pinv({rcond:e})"),
            RegConfig::Ridge { lambda } => format!("ridge({lambda:e})"),
            RegConfig::Lcurve => "lcurve".into(),
            RegConfig::Rkhs => "rkhs".into(),
        }
    }

    fn split(&self) -> (Regularizer, RegStrategy) {
        match self {
            RegConfig::None => (Regularizer::None, RegStrategy::Fixed),
            RegConfig::MinNorm => (Regularizer::MinNorm, RegStrategy::Fixed),
            RegConfig::Pinv { rcond } => (Regularizer::PseudoInverse { rcond: *rcond }, RegStrategy::Fixed),
            RegConfig::Ridge { lambda } => (Regularizer::TikhonovId { lambda: *lambda }, RegStrategy::Fixed),
            RegConfig::Lcurve => (Regularizer::None, RegStrategy::LcurveIdentity),
            RegConfig::Rkhs => (Regularizer::None, RegStrategy::AdaptiveRkhs),
        }
    }
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    10
}

fn default_min_norm() -> RegConfig {
    RegConfig::MinNorm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlsConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_min_norm")]
    pub reg: RegConfig,
    #[serde(default)]
    pub mode: ModeConfig,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self { tol: default_tol(), max_iter: default_max_iter(), reg: default_min_norm(), mode: ModeConfig::Auto }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.reg.validate()?;
        if !(self.tol.is_finite() && self.tol >= 0.0) || self.max_iter == 0 {
            return Err(CliError::Config("als needs tol >= 0 and max_iter >= 1".into()));
        }
        Ok(())
    }

    pub fn als_options(&self, seed: u64) -> AlsOptions {
        let (reg, strategy) = self.reg.split();
        AlsOptions { tol: self.tol, max_iter: self.max_iter, reg, strategy, c0_seed: seed, c0: None, mode: self.mode.into() }
    }

    /// Operator regression has no inner L-curve; the L-curve variants fall
    /// back to the minimum-norm solution there.
    pub fn orals_options(&self) -> OralsOptions {
        let reg = match self.reg.split() {
            (Regularizer::None, RegStrategy::Fixed) => Regularizer::None,
            (_, RegStrategy::LcurveIdentity | RegStrategy::AdaptiveRkhs) => Regularizer::MinNorm,
            (r, _) => r,
        };
        OralsOptions { reg, mode: self.mode.into() }
    }
}

fn default_threefold_iter() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreefoldConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_threefold_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub use_kmeans: bool,
    #[serde(default)]
    pub label_only: bool,
    #[serde(default)]
    pub mode: ModeConfig,
}

impl Default for ThreefoldConfig {
    fn default() -> Self {
        Self { tol: default_tol(), max_iter: default_threefold_iter(), use_kmeans: false, label_only: false, mode: ModeConfig::Auto }
    }
}

impl ThreefoldConfig {
    pub fn options(&self, seed: u64) -> ThreefoldOptions {
        ThreefoldOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            use_kmeans: self.use_kmeans,
            label_only: self.label_only,
            seed,
            mode: self.mode.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Als,
    Orals,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Als => "als",
            Algorithm::Orals => "orals",
        }
    }
}

fn both_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Als, Algorithm::Orals]
}

fn default_n_test() -> usize {
    20
}

fn default_measure_m() -> usize {
    200
}

/// The estimation problem shared by the studies: a true system plus the
/// hypothesis space used to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub system: SystemConfig,
    pub graph: GraphConfig,
    pub kernel: KernelConfig,
    /// Hypothesis space; the true basis when absent.
    #[serde(default)]
    pub hypothesis: Option<BasisConfig>,
    #[serde(default)]
    pub sigma_obs: f64,
    /// Test trajectories for the trajectory error.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Trajectories used to estimate the exploration measure.
    #[serde(default = "default_measure_m")]
    pub measure_m: usize,
    /// Steps of the test trajectories; the training `steps` when absent.
    #[serde(default)]
    pub test_steps: Option<usize>,
}

impl Problem {
    pub fn validate(&self) -> Result<(), CliError> {
        self.system.spec(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.kernel.build(self.system.d)?;
        if let Some(h) = &self.hypothesis {
            h.build(self.system.d)?;
        }
        if !(self.sigma_obs.is_finite() && self.sigma_obs >= 0.0) {
            return Err(CliError::Config("sigma_obs must be >= 0".into()));
        }
        if self.measure_m == 0 || self.test_steps == Some(0) {
            return Err(CliError::Config("measure_m and test_steps must be >= 1".into()));
        }
        match &self.graph {
            GraphConfig::Random { degree } if *degree == 0 || *degree >= self.system.n => {
                Err(CliError::Config(format!("degree {degree} out of range for N={}", self.system.n)))
            }
            GraphConfig::Explicit { rows } if rows.len() != self.system.n || rows.iter().any(|r| r.len() != self.system.n) => {
                Err(CliError::Config("explicit graph must be N x N".into()))
            }
            GraphConfig::Leaders { leaders } if leaders.is_empty() || leaders.iter().any(|&l| l >= self.system.n) => {
                Err(CliError::Config("leaders must be non-empty agent indices".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn hypothesis_basis(&self) -> Result<BasisSpec, CliError> {
        match &self.hypothesis {
            Some(h) => h.build(self.system.d),
            None => self.kernel.basis.build(self.system.d),
        }
    }
}

pub fn explicit_graph(rows: &[Vec<f64>]) -> Result<WeightMatrix, CliError> {
    let n = rows.len();
    let raw = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    WeightMatrix::from_raw(raw).map_err(|e| CliError::Config(e.to_string()))
}

// ---- per-experiment params ----

fn default_out_file() -> PathBuf {
    PathBuf::from("trajectories.bin")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub system: SystemConfig,
    pub graph: GraphConfig,
    pub kernel: KernelConfig,
    pub m: usize,
    #[serde(default)]
    pub sigma_obs: f64,
    /// Trajectory file name inside the output directory.
    #[serde(default = "default_out_file")]
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParams {
    /// Trajectory file written by `simulate`.
    pub data: PathBuf,
    pub basis: BasisConfig,
    #[serde(default)]
    pub als: AlsConfig,
    /// `truth.json` written by `simulate`; enables error reporting.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreefoldParams {
    pub data: PathBuf,
    pub basis: BasisConfig,
    pub q: usize,
    #[serde(default)]
    pub threefold: ThreefoldConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceParams {
    pub problem: Problem,
    pub m_grid: Vec<usize>,
    pub runs: usize,
    #[serde(default = "both_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub als: AlsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSweep {
    Sigma,
    SigmaObs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub problem: Problem,
    pub sweep: NoiseSweep,
    pub levels: Vec<f64>,
    pub m: usize,
    pub runs: usize,
    #[serde(default = "both_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub als: AlsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerParams {
    pub problem: Problem,
    pub m: usize,
    pub runs: usize,
    pub regularizers: Vec<RegConfig>,
    #[serde(default)]
    pub als: AlsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RipParams {
    /// Sensing from simulated data of this system; Gaussian sensing when absent.
    #[serde(default)]
    pub problem: Option<Problem>,
    /// Sensing matrices (Gaussian) or trajectories (simulated).
    pub m: usize,
    pub n_probe: usize,
    /// Shape of Gaussian sensing matrices.
    #[serde(default)]
    pub gaussian_shape: Option<(usize, usize)>,
    /// Side of the loss-landscape grid; no landscape when absent.
    #[serde(default)]
    pub landscape: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KuramotoParams {
    pub n: usize,
    pub degree: usize,
    pub kappa: f64,
    pub sigma: f64,
    pub sigma_obs: f64,
    pub dt: f64,
    pub steps: usize,
    pub m: usize,
    pub init_half_width: f64,
    /// Fit in the space that contains `sin x` as well.
    #[serde(default)]
    pub with_truth: bool,
    #[serde(default)]
    pub als: AlsConfig,
}

fn default_alpha() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderParams {
    pub problem: Problem,
    pub m: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Number of leaders, if known.
    #[serde(default)]
    pub hint: Option<usize>,
    #[serde(default)]
    pub als: AlsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultitypeParams {
    pub system: SystemConfig,
    pub graph: GraphConfig,
    /// Basis of the kernels and of the fit.
    pub basis: BasisConfig,
    /// True kernel coefficients, one vector per type.
    pub kernels: Vec<Vec<f64>>,
    /// Type of each agent.
    pub types: Vec<usize>,
    pub m: usize,
    pub n_test: usize,
    pub test_steps: usize,
    pub test_dt: f64,
    pub candidates: Vec<usize>,
    #[serde(default)]
    pub sigma_obs: f64,
    #[serde(default)]
    pub threefold: ThreefoldConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkParams {
    pub problem: Problem,
    pub m_grid: Vec<usize>,
    /// Agent counts; the problem's N when empty.
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(CliError::Config(msg.into())) };
        match &self.experiment {
            Experiment::Simulate(p) => {
                Problem {
                    system: p.system.clone(),
                    graph: p.graph.clone(),
                    kernel: p.kernel.clone(),
                    hypothesis: None,
                    sigma_obs: p.sigma_obs,
                    n_test: 1,
                    measure_m: 1,
                    test_steps: None,
                }
                .validate()?;
                cfg(p.m >= 1, "m must be >= 1")
            }
            Experiment::FitAls(p) | Experiment::FitOrals(p) => p.als.validate(),
            Experiment::FitThreefold(p) => cfg(p.q >= 1, "q must be >= 1"),
            Experiment::StudyConvergence(p) => {
                p.problem.validate()?;
                p.als.validate()?;
                cfg(!p.m_grid.is_empty() && p.m_grid.iter().all(|&m| m >= 1), "m_grid must be non-empty, entries >= 1")?;
                cfg(p.runs >= 1 && !p.algorithms.is_empty(), "need runs >= 1 and at least one algorithm")
            }
            Experiment::StudyNoise(p) => {
                p.problem.validate()?;
                p.als.validate()?;
                cfg(!p.levels.is_empty(), "noise grid is empty")?;
                cfg(p.levels.iter().all(|v| v.is_finite() && *v > 0.0), "noise levels must be > 0")?;
                cfg(p.m >= 1 && p.runs >= 1 && !p.algorithms.is_empty(), "need m, runs >= 1")
            }
            Experiment::StudyRegularizers(p) => {
                p.problem.validate()?;
                p.als.validate()?;
                p.regularizers.iter().try_for_each(RegConfig::validate)?;
                cfg(p.m >= 1 && p.runs >= 1 && !p.regularizers.is_empty(), "need m, runs >= 1 and a regularizer")
            }
            Experiment::StudyRip(p) => {
                if let Some(pr) = &p.problem {
                    pr.validate()?;
                }
                cfg(p.m >= 1 && p.n_probe >= 100, "need m >= 1 and n_probe >= 100")?;
                cfg(p.landscape.is_none_or(|s| s >= 3), "landscape grid needs size >= 3")
            }
            Experiment::Kuramoto(p) => {
                p.als.validate()?;
                cfg(p.n >= 2 && p.degree >= 1 && p.degree < p.n, "need N >= 2 and 1 <= degree < N")?;
                cfg(p.m >= 1 && p.steps >= 1 && p.dt > 0.0 && p.init_half_width > 0.0, "invalid kuramoto sizes")?;
                cfg(p.kappa.is_finite() && p.sigma >= 0.0 && p.sigma_obs >= 0.0, "invalid kuramoto noise")
            }
            Experiment::LeaderFollower(p) => {
                p.problem.validate()?;
                p.als.validate()?;
                cfg(p.m >= 1, "m must be >= 1")?;
                cfg(p.alpha > 0.5 && p.alpha <= 1.0, "alpha must lie in (0.5, 1]")
            }
            Experiment::MultitypeSelect(p) => {
                p.system.spec(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
                let basis = p.basis.build(p.system.d)?;
                cfg(!p.kernels.is_empty() && p.kernels.iter().all(|k| k.len() == basis.p()), "kernels must match the basis")?;
                cfg(p.types.len() == p.system.n && p.types.iter().all(|&t| t < p.kernels.len()), "types must index kernels")?;
                cfg(p.m >= 1 && p.n_test >= 1 && p.test_steps >= 1 && p.test_dt > 0.0, "invalid sizes")?;
                cfg(!p.candidates.is_empty() && p.candidates.iter().all(|&q| q >= 1), "candidates must be >= 1")
            }
            Experiment::Benchmark(p) => {
                p.problem.validate()?;
                cfg(!p.m_grid.is_empty() && p.m_grid.iter().all(|&m| m >= 1), "m_grid must be non-empty")?;
                cfg(p.n_grid.iter().all(|&n| n >= 2) && p.repeats >= 1, "n_grid entries must be >= 2")
            }
        }
    }
}
