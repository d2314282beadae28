//! Estimation-error metrics, the trajectory-prediction bound, and the
//! leader/follower classification built on leadership features.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::linsolve;
use crate::model::{BasisSpec, KernelCoef, WeightMatrix};
use crate::simulate::TrajectoryData;

/// `|A - B|_F / |A|_F`; zero when both vanish, infinite when only `A` does.
pub fn relative_frobenius(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> f64 {
    let diff = (truth - est).norm();
    let base = truth.norm();
    if base > 0.0 {
        diff / base
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn graph_error(a_true: &WeightMatrix, a_hat: &WeightMatrix) -> f64 {
    relative_frobenius(a_true.entries(), a_hat.entries())
}

/// `|Phi - Phi_hat| / |Phi|` in `L^2(rho)`. The true kernel may live in a
/// different basis from the estimate (misspecified hypothesis spaces).
pub fn kernel_error(
    true_basis: &BasisSpec,
    c_true: &KernelCoef,
    basis: &BasisSpec,
    c_hat: &KernelCoef,
    measure: &EmpiricalMeasure,
) -> Result<f64> {
    for (b, c) in [(true_basis, c_true), (basis, c_hat)] {
        if c.len() != b.p() {
            return Err(Error::DimensionMismatch(format!("{} coefficients for {} basis functions", c.len(), b.p())));
        }
        if b.dim != measure.d {
            return Err(Error::DimensionMismatch(format!("basis d={}, measure d={}", b.dim, measure.d)));
        }
    }
    let truth = measure.l2_norm_of(|r, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        true_basis.add_kernel(c_true.as_slice(), r, 1.0, out);
    })?;
    if truth == 0.0 {
        return Err(Error::ZeroTrueKernel);
    }
    let diff = measure.l2_norm_of(|r, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        true_basis.add_kernel(c_true.as_slice(), r, 1.0, out);
        basis.add_kernel(c_hat.as_slice(), r, -1.0, out);
    })?;
    Ok(diff / truth)
}

fn check_same_shape(a: &TrajectoryData, b: &TrajectoryData) -> Result<()> {
    if (a.m(), a.steps(), a.n(), a.d()) != (b.m(), b.steps(), b.n(), b.d()) {
        return Err(Error::ShapeMismatch(format!(
            "trajectories are {}x{}x{}x{} and {}x{}x{}x{}",
            a.m(),
            a.steps() + 1,
            a.n(),
            a.d(),
            b.m(),
            b.steps() + 1,
            b.n(),
            b.d()
        )));
    }
    Ok(())
}

/// Relative discrete `L^2(0, T)` error per trajectory, averaged over trajectories.
pub fn trajectory_error(truth: &TrajectoryData, pred: &TrajectoryData) -> Result<f64> {
    check_same_shape(truth, pred)?;
    let mut total = 0.0;
    for m in 0..truth.m() {
        let (t, p) = (truth.trajectory(m), pred.trajectory(m));
        let num: f64 = t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = t.iter().map(|a| a * a).sum();
        total += if den > 0.0 {
            (num / den).sqrt()
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    Ok(total / truth.m() as f64)
}

/// `sup_l mean_m |X_hat_l - X_l|_F^2`.
pub fn empirical_sup_gap(truth: &TrajectoryData, pred: &TrajectoryData) -> Result<f64> {
    check_same_shape(truth, pred)?;
    let mut sup: f64 = 0.0;
    for l in 0..=truth.steps() {
        let mean = (0..truth.m())
            .map(|m| truth.state(m, l).iter().zip(pred.state(m, l)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / truth.m() as f64;
        sup = sup.max(mean);
    }
    Ok(sup)
}

/// Right-hand side `C1 T^2 exp(2 C1 C2 T) (C2 |a - a_hat|_F^2 + |c_hat - c|^2)`
/// with `C1 = 2 p C0^2` and `C2 = |c_hat|^2 + |c|^2`.
pub fn trajectory_bound(
    a: &WeightMatrix,
    a_hat: &WeightMatrix,
    c: &KernelCoef,
    c_hat: &KernelCoef,
    c0: f64,
    horizon: f64,
) -> Result<f64> {
    if a.n() != a_hat.n() || c.len() != c_hat.len() {
        return Err(Error::DimensionMismatch("estimator and truth differ in shape".into()));
    }
    let p = c.len() as f64;
    let c1 = 2.0 * p * c0 * c0;
    let c2 = c_hat.norm().powi(2) + c.norm().powi(2);
    let da = (a.entries() - a_hat.entries()).norm_squared();
    let dc: f64 = c.as_slice().iter().zip(c_hat.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    let pre = c1 * horizon * horizon * (2.0 * c1 * c2 * horizon).exp();
    let gap = c2 * da + dc;
    // Avoid inf * 0 when the estimator is exact.
    Ok(if gap == 0.0 { 0.0 } else { pre * gap })
}

/// `max_s max_k (|psi_k(r_s)| + |D psi_k(r_s)|)` with the Jacobian taken by
/// central differences of step `1e-5` (Frobenius norm).
pub fn basis_bound_c0(basis: &BasisSpec, measure: &EmpiricalMeasure) -> Result<f64> {
    if measure.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if measure.d != basis.dim {
        return Err(Error::DimensionMismatch(format!("measure d={}, basis d={}", measure.d, basis.dim)));
    }
    const H: f64 = 1e-5;
    let (d, p) = (basis.dim, basis.p());
    let mut val = vec![0.0; p * d];
    let mut plus = vec![0.0; p * d];
    let mut minus = vec![0.0; p * d];
    let mut x = vec![0.0; d];
    let mut best: f64 = 0.0;
    for s in 0..measure.len() {
        let r = measure.sample(s);
        basis.eval_into(r, &mut val);
        let mut jac = vec![0.0; p];
        for e in 0..d {
            x.copy_from_slice(r);
            x[e] = r[e] + H;
            basis.eval_into(&x, &mut plus);
            x[e] = r[e] - H;
            basis.eval_into(&x, &mut minus);
            for k in 0..p {
                for dim in 0..d {
                    let g = (plus[k * d + dim] - minus[k * d + dim]) / (2.0 * H);
                    jac[k] += g * g;
                }
            }
        }
        for k in 0..p {
            let v: f64 = val[k * d..(k + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
            best = best.max(v + jac[k].sqrt());
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadershipConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl LeadershipConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self { alpha, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.alpha + self.beta - 1.0).abs() > 1e-12 || self.alpha <= self.beta {
            return Err(Error::InvalidArgument(format!(
                "need alpha + beta = 1 and alpha > beta, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// `L_i = alpha |a_i.|_1 + beta |a_.i|_1`.
pub fn leadership_features(a: &WeightMatrix, cfg: &LeadershipConfig) -> Vec<f64> {
    let e = a.entries();
    (0..a.n())
        .map(|i| {
            let row: f64 = e.row(i).iter().map(|v| v.abs()).sum();
            let col: f64 = e.column(i).iter().map(|v| v.abs()).sum();
            cfg.alpha * row + cfg.beta * col
        })
        .collect()
}

/// How followers are handed to groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignOrder {
    /// Each round assigns the best `(follower, group)` pair over all remaining
    /// followers; ties go to the lowest follower, then the lowest group.
    #[default]
    Greedy,
    /// Followers are taken in index order, each joining its best group.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderGroups {
    /// Sorted leader indices.
    pub leaders: Vec<usize>,
    /// One group per leader (same order), sorted, leader included.
    pub groups: Vec<Vec<usize>>,
}

/// Leaders by 2-means on the leadership features (or the `hint` largest
/// features), then followers attached to the group they interact with most.
pub fn classify_leaders_followers(
    a: &WeightMatrix,
    cfg: &LeadershipConfig,
    hint: Option<usize>,
    order: AssignOrder,
    seed: u64,
) -> Result<LeaderGroups> {
    cfg.validate()?;
    let n = a.n();
    let feats = leadership_features(a, cfg);
    let mut leaders: Vec<usize> = match hint {
        Some(k) => {
            if k == 0 || k >= n {
                return Err(Error::InvalidArgument(format!("cannot pick {k} leaders among {n} agents")));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&x, &y| feats[y].total_cmp(&feats[x]).then(x.cmp(&y)));
            idx.truncate(k);
            idx
        }
        None => {
            let pts: Vec<Vec<f64>> = feats.iter().map(|&f| vec![f]).collect();
            let km = linsolve::kmeans(&pts, 2, seed)?;
            let (c0, c1) = (km.centroids[0][0], km.centroids[1][0]);
            if (c0 - c1).abs() < 1e-9 {
                return Err(Error::NoLeaders);
            }
            let top = if c0 > c1 { 0 } else { 1 };
            (0..n).filter(|&i| km.labels[i] == top).collect()
        }
    };
    leaders.sort_unstable();
    let e = a.entries();
    let score = |group: &[usize], j: usize| -> f64 {
        group.iter().map(|&i| cfg.alpha * e[(i, j)].abs() + cfg.beta * e[(j, i)].abs()).sum()
    };
    let mut groups: Vec<Vec<usize>> = leaders.iter().map(|&l| vec![l]).collect();
    let mut free: Vec<usize> = (0..n).filter(|i| !leaders.contains(i)).collect();
    match order {
        AssignOrder::Greedy => {
            while !free.is_empty() {
                let mut best = (f64::NEG_INFINITY, 0, 0);
                for (fi, &j) in free.iter().enumerate() {
                    for (k, g) in groups.iter().enumerate() {
                        let s = score(g, j);
                        if s > best.0 {
                            best = (s, fi, k);
                        }
                    }
                }
                let j = free.remove(best.1);
                groups[best.2].push(j);
            }
        }
        AssignOrder::Sequential => {
            for j in free.drain(..) {
                let mut best = (f64::NEG_INFINITY, 0);
                for (k, g) in groups.iter().enumerate() {
                    let s = score(g, j);
                    if s > best.0 {
                        best = (s, k);
                    }
                }
                groups[best.1].push(j);
            }
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    Ok(LeaderGroups { leaders, groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::exploration_measure;
    use crate::model::presets::*;
    use crate::model::{sample_weight_matrix, InitDist, SystemSpec};
    use crate::rng::{self, tag};
    use crate::simulate::{simulate, Provenance};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn graph_error_cases() {
        let a = sample_weight_matrix(5, 3, 1).unwrap();
        let b = sample_weight_matrix(5, 3, 2).unwrap();
        assert_eq!(graph_error(&a, &a), 0.0);
        assert_eq!(graph_error(&a, &WeightMatrix::zeros(5)), 1.0);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..5 {
            for j in 0..5 {
                num += (a.get(i, j) - b.get(i, j)).powi(2);
                den += a.get(i, j).powi(2);
            }
        }
        assert!((graph_error(&a, &b) - (num / den).sqrt()).abs() < 1e-14);
    }

    fn measure() -> EmpiricalMeasure {
        let spec = SystemSpec { n: 4, d: 1, sigma: 0.3, dt: 0.01, steps: 5, init: InitDist::Gaussian { mean: 0.0, std: 2.0 }, seed: 3 };
        let a = sample_weight_matrix(4, 2, 3).unwrap();
        let data = simulate(&spec, &a, &fourier_pair(), &KernelCoef(vec![1.0, 0.5]), 40).unwrap();
        exploration_measure(&data)
    }

    #[test]
    fn kernel_error_cases() {
        let mu = measure();
        let b = fourier_pair();
        let c = KernelCoef(vec![1.0, -0.4]);
        assert_eq!(kernel_error(&b, &c, &b, &c, &mu).unwrap(), 0.0);
        assert!((kernel_error(&b, &c, &b, &KernelCoef::zeros(2), &mu).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(kernel_error(&b, &KernelCoef::zeros(2), &b, &c, &mu), Err(Error::ZeroTrueKernel));
        let s = kernel_error(&b, &c.scaled(3.0), &b, &KernelCoef(vec![0.9, -0.3]).scaled(3.0), &mu).unwrap();
        let u = kernel_error(&b, &c, &b, &KernelCoef(vec![0.9, -0.3]), &mu).unwrap();
        assert!((s - u).abs() < 1e-14);
    }

    #[test]
    fn kernel_error_across_bases() {
        // Truth sin(x) measured against a cosine-only estimate: the residual
        // is computed directly over the samples.
        let mu = measure();
        let truth = fourier_pair();
        let est = truth.select(&[1]);
        let err = kernel_error(&truth, &KernelCoef(vec![1.0, 0.0]), &est, &KernelCoef(vec![0.2]), &mu).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..mu.len() {
            let r = mu.sample(s)[0];
            num += (r.sin() - 0.2 * r.cos()).powi(2);
            den += r.sin().powi(2);
        }
        assert!((err - (num / den).sqrt()).abs() < 1e-13);
    }

    fn traj(states: Vec<f64>, m: usize, steps: usize) -> TrajectoryData {
        let spec = SystemSpec { n: 2, d: 1, sigma: 0.0, dt: 0.1, steps, init: InitDist::Gaussian { mean: 0.0, std: 1.0 }, seed: 0 };
        TrajectoryData::from_states(spec, Provenance::default(), m, states).unwrap()
    }

    #[test]
    fn trajectory_error_cases() {
        let mut r = rng::stream(1, tag::EXPERIMENT, 0);
        let t: Vec<f64> = (0..3 * 4 * 2).map(|_| r.random::<f64>() + 0.1).collect();
        let p: Vec<f64> = t.iter().map(|v| v + 0.05 * r.random::<f64>()).collect();
        let (tt, pp) = (traj(t.clone(), 3, 3), traj(p.clone(), 3, 3));
        assert_eq!(trajectory_error(&tt, &tt).unwrap(), 0.0);
        assert_eq!(trajectory_error(&tt, &traj(vec![0.0; 24], 3, 3)).unwrap(), 1.0);
        let mut oracle = 0.0;
        for m in 0..3 {
            let (mut num, mut den) = (0.0, 0.0);
            for q in 0..8 {
                num += (t[m * 8 + q] - p[m * 8 + q]).powi(2);
                den += t[m * 8 + q].powi(2);
            }
            oracle += (num / den).sqrt() / 3.0;
        }
        assert!((trajectory_error(&tt, &pp).unwrap() - oracle).abs() < 1e-14);
        assert!(matches!(trajectory_error(&tt, &traj(vec![0.0; 16], 2, 3)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn bound_cases() {
        let a = sample_weight_matrix(4, 3, 1).unwrap();
        let c = KernelCoef(vec![1.0, 0.5]);
        assert_eq!(trajectory_bound(&a, &a, &c, &c, 2.0, 1.0).unwrap(), 0.0);
        let delta = 1e-3;
        let ch = KernelCoef(vec![1.0 + delta, 0.5]);
        let (c0, t) = (1.5, 0.2);
        let c1 = 2.0 * 2.0 * c0 * c0;
        let c2 = ch.norm().powi(2) + c.norm().powi(2);
        let expect = c1 * t * t * (2.0 * c1 * c2 * t).exp() * delta * delta;
        let got = trajectory_bound(&a, &a, &c, &ch, c0, t).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn c0_of_fourier_pair() {
        // |sin| + |cos| peaks at sqrt(2) on a dense grid.
        let mu = EmpiricalMeasure::from_samples(1, (0..2000).map(|k| k as f64 * 0.00314).collect()).unwrap();
        let c0 = basis_bound_c0(&fourier_pair(), &mu).unwrap();
        assert!((c0 - 2f64.sqrt()).abs() < 1e-5, "{c0}");
    }

    fn two_star(n: usize) -> WeightMatrix {
        // Agents 0 and 5 listen to their own halves; followers listen to
        // their leader and one peer.
        let mut raw = DMatrix::zeros(n, n);
        let half = n / 2;
        for (leader, lo, hi) in [(0, 0, half), (half, half, n)] {
            for j in lo..hi {
                if j != leader {
                    raw[(leader, j)] = 1.0;
                    raw[(j, leader)] = 1.0;
                    let peer = if j + 1 < hi { j + 1 } else { lo + 1 };
                    if peer != j && peer != leader {
                        raw[(j, peer)] = 0.3;
                    }
                }
            }
        }
        WeightMatrix::from_raw(raw).unwrap()
    }

    #[test]
    fn two_hubs_are_found() {
        let a = two_star(10);
        let cfg = LeadershipConfig::new(0.8, 0.2).unwrap();
        for order in [AssignOrder::Greedy, AssignOrder::Sequential] {
            let out = classify_leaders_followers(&a, &cfg, None, order, 0).unwrap();
            assert_eq!(out.leaders, vec![0, 5]);
            assert_eq!(out.groups, vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]]);
        }
        let hinted = classify_leaders_followers(&a, &cfg, Some(2), AssignOrder::Greedy, 0).unwrap();
        assert_eq!(hinted.leaders, vec![0, 5]);
    }

    #[test]
    fn features_and_degenerate_cases() {
        let cfg = LeadershipConfig::new(0.7, 0.3).unwrap();
        assert!(LeadershipConfig::new(0.4, 0.6).is_err());
        assert_eq!(leadership_features(&WeightMatrix::zeros(4), &cfg), vec![0.0; 4]);
        assert_eq!(classify_leaders_followers(&WeightMatrix::zeros(4), &cfg, None, AssignOrder::Greedy, 0), Err(Error::NoLeaders));
        // Circulant rows: row sums equal column sums.
        let circ = WeightMatrix::new(DMatrix::from_row_slice(3, 3, &[0.0, 0.6, 0.8, 0.8, 0.0, 0.6, 0.6, 0.8, 0.0])).unwrap();
        let f = leadership_features(&circ, &cfg);
        for v in f {
            assert!((v - 1.4).abs() < 1e-12);
        }
        let a = sample_weight_matrix(6, 3, 4).unwrap();
        let f = leadership_features(&a, &cfg);
        for i in 0..6 {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 0..6 {
                r += a.get(i, j);
                c += a.get(j, i);
            }
            assert!((f[i] - (0.7 * r + 0.3 * c)).abs() < 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn classification_follows_relabeling(seed in 0u64..1000) {
            let a = two_star(10);
            let mut r = rng::stream(seed, tag::EXPERIMENT, 0);
            let mut perm: Vec<usize> = (0..10).collect();
            for k in (1..10).rev() {
                perm.swap(k, r.random_range(0..=k));
            }
            let cfg = LeadershipConfig::new(0.8, 0.2).unwrap();
            let base = classify_leaders_followers(&a, &cfg, None, AssignOrder::Greedy, 0).unwrap();
            let pa = a.permuted(&perm);
            let out = classify_leaders_followers(&pa, &cfg, None, AssignOrder::Greedy, 0).unwrap();
            // Agent i of the permuted system is agent perm[i] of the original.
            let mut mapped: Vec<Vec<usize>> = out.groups.iter()
                .map(|g| { let mut v: Vec<usize> = g.iter().map(|&i| perm[i]).collect(); v.sort_unstable(); v })
                .collect();
            mapped.sort();
            let mut expect = base.groups.clone();
            expect.sort();
            prop_assert_eq!(mapped, expect);
        }

        #[test]
        fn graph_error_is_scale_free(s in 0.1f64..10.0, seed in 0u64..100) {
            let a = sample_weight_matrix(5, 2, seed).unwrap();
            let b = sample_weight_matrix(5, 2, seed + 1).unwrap();
            let base = graph_error(&a, &b);
            let scaled = relative_frobenius(&(a.entries() * s), &(b.entries() * s));
            prop_assert!((base - scaled).abs() < 1e-12);
        }
    }
}
