//! Experiment harness around `netkernel-core`: JSON configs in, trajectory
//! files, CSV tables and JSON summaries out.

pub mod config;
pub mod error;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use netkernel_core::diagnostics::exploration_measure;
use netkernel_core::io::{read_trajectories, write_trajectories};
use netkernel_core::metrics;
use netkernel_core::multitype::threefold_fit;
use netkernel_core::simulate::{add_observation_noise, simulate};
use netkernel_core::rng::{derive_seed, tag};
use netkernel_core::{BasisSpec, KernelCoef, WeightMatrix};
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::error::CliError;
use crate::experiments::*;

/// Ground truth written next to simulated trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub schema_version: u32,
    pub a: Vec<Vec<f64>>,
    pub basis: BasisSpec,
    pub coef: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a, T: Serialize> {
    schema_version: u32,
    experiment: ExperimentKind,
    seed: u64,
    result: &'a T,
}

fn write_summary<T: Serialize>(out: &Path, cfg: &ExperimentConfig, result: &T) -> Result<PathBuf, CliError> {
    let path = out.join("summary.json");
    let s = Summary { schema_version: SCHEMA_VERSION, experiment: cfg.kind(), seed: cfg.seed, result };
    fs::write(&path, serde_json::to_string_pretty(&s)?)?;
    Ok(path)
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>, CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

/// Shortest round-trip representation, so tables reproduce bit for bit.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub const RUN_HEADER: [&str; 6] = ["M", "run", "graph_err", "kernel_err", "traj_err", "wall_ms"];

fn run_fields(r: &RunRow) -> Vec<String> {
    vec![r.m.to_string(), r.run.to_string(), num(r.graph_err), num(r.kernel_err), num(r.traj_err), num(r.wall_ms)]
}

fn load_truth(path: &Path) -> Result<(WeightMatrix, BasisSpec, KernelCoef), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let t: TruthFile = serde_json::from_str(&text)?;
    let n = t.a.len();
    if t.a.iter().any(|r| r.len() != n) {
        return Err(CliError::Data("truth matrix is not square".into()));
    }
    let a = WeightMatrix::new(DMatrix::from_fn(n, n, |i, j| t.a[i][j]))?;
    Ok((a, t.basis, KernelCoef(t.coef)))
}

#[derive(Debug, Clone, Serialize)]
struct FitSummary {
    algorithm: Algorithm,
    converged: bool,
    iterations: usize,
    history: Vec<netkernel_core::als::IterRecord>,
    a_hat: Vec<Vec<f64>>,
    c_hat: Vec<f64>,
    graph_err: Option<f64>,
    kernel_err: Option<f64>,
}

/// Runs one experiment, writing its artifacts into `out`. Returns the path of
/// the JSON summary.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out)?;
    let seed = cfg.seed;
    match &cfg.experiment {
        Experiment::Simulate(p) => {
            let a = build_graph(&p.graph, p.system.n, sub_seed(seed, 1))?;
            let (basis, c) = p.kernel.build(p.system.d)?;
            let mut data = simulate(&p.system.spec(seed), &a, &basis, &c, p.m)?;
            if p.sigma_obs > 0.0 {
                data = add_observation_noise(&data, p.sigma_obs, derive_seed(seed, tag::OBS_NOISE, 0));
            }
            let file = out.join(&p.file);
            write_trajectories(&file, &data)?;
            let truth = TruthFile { schema_version: SCHEMA_VERSION, a: matrix_rows(a.entries()), basis, coef: c.0.clone() };
            fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
            #[derive(Serialize)]
            struct R {
                file: PathBuf,
                m: usize,
                a_hash: Option<String>,
                c_hash: Option<String>,
            }
            let r = R { file, m: data.m(), a_hash: data.provenance.a_hash.clone(), c_hash: data.provenance.c_hash.clone() };
            write_summary(out, cfg, &r)
        }
        Experiment::FitAls(p) | Experiment::FitOrals(p) => {
            let alg = if matches!(cfg.experiment, Experiment::FitAls(_)) { Algorithm::Als } else { Algorithm::Orals };
            let data = read_trajectories(&cfg.resolve(&p.data))?;
            let basis = p.basis.build(data.d())?;
            let f = fit(alg, &data, &basis, &p.als, seed)?;
            let (graph_err, kernel_err) = match &p.truth {
                Some(t) => {
                    let (a, tb, c) = load_truth(&cfg.resolve(t))?;
                    let measure = exploration_measure(&data);
                    (
                        Some(metrics::graph_error(&a, &f.a_hat)),
                        Some(metrics::kernel_error(&tb, &c, &basis, &f.c_hat, &measure)?),
                    )
                }
                None => (None, None),
            };
            let s = FitSummary {
                algorithm: alg,
                converged: f.converged,
                iterations: f.history.len(),
                history: f.history.clone(),
                a_hat: matrix_rows(f.a_hat.entries()),
                c_hat: f.c_hat.0.clone(),
                graph_err,
                kernel_err,
            };
            write_summary(out, cfg, &s)
        }
        Experiment::FitThreefold(p) => {
            let data = read_trajectories(&cfg.resolve(&p.data))?;
            let basis = p.basis.build(data.d())?;
            let f = threefold_fit(&data, &basis, p.q, &p.threefold.options(seed))?;
            write_summary(out, cfg, &f)
        }
        Experiment::StudyConvergence(p) => {
            let tables = study_convergence(p, seed)?;
            for t in &tables {
                let mut w = csv_writer(&out.join(format!("convergence_{}.csv", t.algorithm.name())), &RUN_HEADER)?;
                for r in &t.rows {
                    w.write_record(run_fields(r))?;
                }
                w.flush()?;
                let mut w =
                    csv_writer(&out.join(format!("convergence_{}_quartiles.csv", t.algorithm.name())), &["M", "metric", "q1", "median", "q3"])?;
                for q in t.quartiles() {
                    w.write_record([q.m.to_string(), q.metric.to_string(), num(q.q1), num(q.median), num(q.q3)])?;
                }
                w.flush()?;
            }
            #[derive(Serialize)]
            struct R<'a> {
                algorithm: Algorithm,
                slopes: &'a Slopes,
            }
            let r: Vec<R> = tables.iter().map(|t| R { algorithm: t.algorithm, slopes: &t.slopes }).collect();
            write_summary(out, cfg, &r)
        }
        Experiment::StudyNoise(p) => {
            let tables = study_noise(p, seed)?;
            let mut header = vec!["level"];
            header.extend(RUN_HEADER);
            for t in &tables {
                let mut w = csv_writer(&out.join(format!("noise_{}.csv", t.algorithm.name())), &header)?;
                for r in &t.rows {
                    let mut rec = vec![num(r.level)];
                    rec.extend(run_fields(&r.run));
                    w.write_record(rec)?;
                }
                w.flush()?;
            }
            #[derive(Serialize)]
            struct R<'a> {
                algorithm: Algorithm,
                sweep: NoiseSweep,
                slopes: &'a Slopes,
            }
            let r: Vec<R> = tables.iter().map(|t| R { algorithm: t.algorithm, sweep: p.sweep, slopes: &t.slopes }).collect();
            write_summary(out, cfg, &r)
        }
        Experiment::StudyRegularizers(p) => {
            let rows = study_regularizers(p, seed)?;
            let mut header = vec!["regularizer"];
            header.extend(RUN_HEADER);
            let mut w = csv_writer(&out.join("regularizers.csv"), &header)?;
            for r in &rows {
                let mut rec = vec![r.regularizer.clone()];
                rec.extend(run_fields(&r.run));
                w.write_record(rec)?;
            }
            w.flush()?;
            #[derive(Serialize)]
            struct R {
                regularizer: String,
                median_graph_err: f64,
                median_kernel_err: f64,
                median_traj_err: f64,
            }
            let r: Vec<R> = p
                .regularizers
                .iter()
                .map(|reg| {
                    let sel: Vec<&RegRow> = rows.iter().filter(|r| r.regularizer == reg.label()).collect();
                    let med = |f: fn(&RunRow) -> f64| median(&sel.iter().map(|r| f(&r.run)).collect::<Vec<_>>());
                    R {
                        regularizer: reg.label(),
                        median_graph_err: med(|r| r.graph_err),
                        median_kernel_err: med(|r| r.kernel_err),
                        median_traj_err: med(|r| r.traj_err),
                    }
                })
                .collect();
            write_summary(out, cfg, &r)
        }
        Experiment::StudyRip(p) => {
            let o = study_rip(p, seed)?;
            let mut w = csv_writer(&out.join("rip_ratios.csv"), &["probe", "ratio"])?;
            for (k, r) in o.report.ratios.iter().enumerate() {
                w.write_record([k.to_string(), num(*r)])?;
            }
            w.flush()?;
            if let Some(l) = &o.landscape {
                let mut w = csv_writer(&out.join("landscape.csv"), &["i", "j", "theta1", "theta2", "loss"])?;
                for i in 0..l.size {
                    for j in 0..l.size {
                        w.write_record([i.to_string(), j.to_string(), num(l.theta(i)), num(l.theta(j)), num(l.at(i, j))])?;
                    }
                }
                w.flush()?;
            }
            #[derive(Serialize)]
            struct R {
                c: f64,
                delta: f64,
                n_probe: usize,
                spurious_minima: usize,
            }
            let r = R { c: o.report.c, delta: o.report.delta, n_probe: o.report.ratios.len(), spurious_minima: o.spurious_minima };
            write_summary(out, cfg, &r)
        }
        Experiment::Kuramoto(p) => write_summary(out, cfg, &kuramoto(p, seed)?),
        Experiment::LeaderFollower(p) => write_summary(out, cfg, &leader_follower(p, seed)?),
        Experiment::MultitypeSelect(p) => {
            let o = multitype_select(p, seed)?;
            let mut w = csv_writer(&out.join("selection.csv"), &["Q", "traj_err"])?;
            for r in &o.table {
                w.write_record([r.q.to_string(), num(r.traj_err)])?;
            }
            w.flush()?;
            write_summary(out, cfg, &o)
        }
        Experiment::Benchmark(p) => {
            let o = benchmark(p, seed)?;
            let mut w = csv_writer(&out.join("benchmark.csv"), &["algorithm", "N", "M", "wall_ms"])?;
            for r in &o.rows {
                w.write_record([r.algorithm.name().to_string(), r.n.to_string(), r.m.to_string(), num(r.wall_ms)])?;
            }
            w.flush()?;
            write_summary(out, cfg, &o)
        }
    }
}
