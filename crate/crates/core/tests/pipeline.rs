use netkernel_core::als::{als_fit, AlsOptions};
use netkernel_core::diagnostics::exploration_measure;
use netkernel_core::io::{read_trajectories, write_trajectories};
use netkernel_core::linsolve::Regularizer;
use netkernel_core::metrics::{graph_error, kernel_error, trajectory_error};
use netkernel_core::model::{presets, sample_weight_matrix};
use netkernel_core::orals::{orals_fit, OralsOptions};
use netkernel_core::simulate::{add_observation_noise, simulate};
use netkernel_core::{InitDist, SystemSpec};

fn lj_spec(sigma: f64, seed: u64) -> SystemSpec {
    SystemSpec { n: 6, d: 2, sigma, dt: 1e-4, steps: 5, init: InitDist::UniformBox { lo: 0.0, hi: 1.5 }, seed }
}

#[test]
fn noiseless_lj_system_is_recovered_by_both_algorithms() {
    let a = sample_weight_matrix(6, 2, 11).unwrap();
    let basis = presets::lj_basis_exact(2);
    let c = presets::lj_coef_exact();
    let data = simulate(&lj_spec(0.0, 4), &a, &basis, &c, 50).unwrap();
    let measure = exploration_measure(&data);

    let opts = AlsOptions { tol: 1e-12, max_iter: 100, reg: Regularizer::MinNorm, ..AlsOptions::default() };
    let als = als_fit(&data, &basis, &opts).unwrap();
    assert!(als.converged);
    assert!(graph_error(&a, &als.a_hat) < 1e-8);
    assert!(kernel_error(&basis, &c, &basis, &als.c_hat, &measure).unwrap() < 1e-8);

    let orals = orals_fit(&data, &basis, &OralsOptions::default()).unwrap();
    assert!(graph_error(&a, &orals.a_hat) < 1e-8);
    assert!(kernel_error(&basis, &c, &basis, &orals.c_hat, &measure).unwrap() < 1e-8);
}

#[test]
fn more_data_gives_smaller_errors_under_noise() {
    let a = sample_weight_matrix(6, 2, 2).unwrap();
    let basis = presets::lj_basis_exact(2);
    let c = presets::lj_coef_exact();
    let data = simulate(&lj_spec(1e-2, 8), &a, &basis, &c, 2000).unwrap();
    let err = |m: usize| {
        let f = orals_fit(&data.take(m).unwrap(), &basis, &OralsOptions::default()).unwrap();
        graph_error(&a, &f.a_hat)
    };
    assert!(err(2000) < err(50));
}

#[test]
fn predicted_trajectories_match_when_the_estimate_is_exact() {
    let a = sample_weight_matrix(5, 2, 1).unwrap();
    let basis = presets::fourier_pair();
    let c = netkernel_core::KernelCoef(vec![1.0, 0.5]);
    let spec = SystemSpec { n: 5, d: 1, sigma: 0.0, dt: 1e-2, steps: 20, init: InitDist::Gaussian { mean: 0.0, std: 1.0 }, seed: 3 };
    let x = simulate(&spec, &a, &basis, &c, 10).unwrap();
    let y = simulate(&spec, &a, &basis, &c, 10).unwrap();
    assert_eq!(trajectory_error(&x, &y).unwrap(), 0.0);
}

#[test]
fn noisy_data_survives_a_file_round_trip() {
    let a = sample_weight_matrix(6, 2, 5).unwrap();
    let data = simulate(&lj_spec(1e-3, 1), &a, &presets::lj_basis(2), &presets::lj_coef(), 7).unwrap();
    let data = add_observation_noise(&data, 1e-3, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.bin");
    write_trajectories(&path, &data).unwrap();
    let back = read_trajectories(&path).unwrap();
    assert_eq!(back.states(), data.states());
    assert_eq!(back.m(), 7);
    assert_eq!(back.spec, data.spec);
}
