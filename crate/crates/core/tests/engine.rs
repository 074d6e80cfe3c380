mod common;

use std::sync::Arc;

use ampmmv::em::{em_update_alpha, em_update_lambda, em_update_sigma_e2, em_update_rho};
use ampmmv::*;

fn db_mean(xs: &[f64]) -> f64 {
    to_db(xs.iter().sum::<f64>() / xs.len() as f64)
}

#[test]
fn clamped_support_matches_smoother() {
    for seed in 0..3 {
        let inst = common::instance::<f64>(1000, 600, 4, 0.1, 0.1, 25.0, 0.0, seed);
        let cfg = SolverConfig { clamp_support: Some(inst.truth.support.clone()), ..Default::default() };
        let out = solve(&inst.problem, &inst.params, &cfg).unwrap();
        let sks = sks_smooth(&SksInput { problem: &inst.problem, support: &inst.truth.support, params: &inst.params }).unwrap();
        let sigma = inst.params.sigma2().sqrt();
        let active: Vec<usize> = (0..1000).filter(|&i| inst.truth.support[i]).collect();
        for t in 0..4 {
            let (mut v_amp, mut v_sks) = (0.0, 0.0);
            for &i in &active {
                let (mu, mu_s) = (out.posterior.theta_mean[(i, t)], sks.theta_hat[(i, t)]);
                assert!((mu - mu_s).abs() <= 1e-2 * sigma, "seed {seed} ({i}, {t}): {mu} vs {mu_s}");
                v_amp += out.posterior.theta_var[(i, t)];
                v_sks += sks.theta_cov_diag[(i, t)];
            }
            // AMP carries one effective noise level per frame, so variances agree on average over the support.
            assert!((v_amp / v_sks - 1.0).abs() <= 0.02, "seed {seed} frame {t}: {v_amp} vs {v_sks}");
        }
    }
}

#[test]
fn schedules_agree_in_tnmse() {
    let (mut serial, mut parallel) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let inst = common::instance::<f64>(500, 200, 4, 0.1, 0.1, 25.0, 0.0, 100 + seed);
        for (schedule, acc) in [(Schedule::Serial, &mut serial), (Schedule::Parallel, &mut parallel)] {
            let cfg = SolverConfig { schedule, ..Default::default() };
            let out = solve(&inst.problem, &inst.params, &cfg).unwrap();
            acc.push(tnmse(&inst.truth.signals, &out.posterior.x_mean).unwrap());
        }
    }
    let (a, b) = (db_mean(&serial), db_mean(&parallel));
    assert!((a - b).abs() < 0.5, "serial {a:.2} dB, parallel {b:.2} dB");
}

#[test]
fn epsilon_barely_matters() {
    let (mut coarse, mut fine) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let inst = common::instance::<Complex64>(300, 120, 4, 0.1, 0.1, 25.0, 0.0, 200 + seed);
        for (epsilon, acc) in [(1e-6, &mut coarse), (1e-8, &mut fine)] {
            let cfg = SolverConfig { epsilon, ..Default::default() };
            let out = solve(&inst.problem, &inst.params, &cfg).unwrap();
            acc.push(tnmse(&inst.truth.signals, &out.posterior.x_mean).unwrap());
        }
    }
    let (a, b) = (db_mean(&coarse), db_mean(&fine));
    assert!((a - b).abs() < 0.1, "eps 1e-6 {a:.3} dB, eps 1e-8 {b:.3} dB");
}

#[test]
fn smoother_bounds_amp_mmv() {
    let (mut amp, mut sks) = (Vec::new(), Vec::new());
    for seed in 0..100 {
        let inst = common::instance::<f64>(100, 50, 3, 0.1, 0.1, 25.0, 0.0, 300 + seed);
        if inst.truth.k() == 0 {
            continue;
        }
        let out = solve(&inst.problem, &inst.params, &SolverConfig::default()).unwrap();
        let s = sks_smooth(&SksInput { problem: &inst.problem, support: &inst.truth.support, params: &inst.params }).unwrap();
        amp.push(tnmse(&inst.truth.signals, &out.posterior.x_mean).unwrap());
        sks.push(tnmse(&inst.truth.signals, &s.x_hat).unwrap());
    }
    let (a, s) = (db_mean(&amp), db_mean(&sks));
    assert!(s <= a + 0.1, "SKS {s:.2} dB, AMP-MMV {a:.2} dB");
}

#[test]
fn implicit_operator_gives_the_same_answer() {
    let inst = common::instance::<Complex64>(120, 50, 3, 0.1, 0.1, 20.0, 0.3, 7);
    let ops: Vec<SharedOperator<Complex64>> = inst
        .problem
        .dense_matrices()
        .into_iter()
        .map(|a| Arc::new(FnOperator::from_dense(a)) as SharedOperator<Complex64>)
        .collect();
    let implicit = MmvProblem::new(ops, inst.problem.observations().to_vec()).unwrap();
    let cfg = SolverConfig::default();
    let a = solve(&inst.problem, &inst.params, &cfg).unwrap();
    let b = solve(&implicit, &inst.params, &cfg).unwrap();
    let diff = (&a.posterior.x_mean - &b.posterior.x_mean).norm();
    assert!(diff <= 1e-10 * a.posterior.x_mean.norm());
    assert_eq!(a.passes, b.passes);
}

#[test]
fn em_updates_are_consistent_at_the_truth() {
    let inst = common::instance::<f64>(2000, 800, 5, 0.1, 0.1, 25.0, 0.0, 11);
    let out = solve(&inst.problem, &inst.params, &SolverConfig::default()).unwrap();
    let post = &out.posterior;
    let p = &inst.params;
    let k_over_n = inst.truth.k() as f64 / 2000.0;
    assert!((em_update_lambda(post) - k_over_n).abs() < 0.01);
    let noise = em_update_sigma_e2(&inst.problem, post);
    assert!((noise / p.sigma_e2 - 1.0).abs() < 0.25, "sigma_e2 {noise} vs {}", p.sigma_e2);
    let alpha = em_update_alpha(post, p).unwrap();
    assert!((alpha - p.alpha).abs() < 0.05, "alpha {alpha}");
    let rho = em_update_rho(post, p).unwrap();
    assert!((rho / p.rho - 1.0).abs() < 0.25, "rho {rho} vs {}", p.rho);
}

#[test]
fn diverging_amp_is_reported_with_its_location() {
    let inst = common::instance::<f64>(40, 20, 3, 0.2, 0.1, 25.0, 0.0, 12);
    let bad: SharedOperator<f64> = Arc::new(FnOperator::new(
        20,
        40,
        |x: &DVector<f64>, out: &mut DVector<f64>| out.fill(x.sum() * f64::NAN),
        |z: &DVector<f64>, out: &mut DVector<f64>| out.fill(z.sum()),
    ));
    let problem = MmvProblem::with_shared_operator(bad, inst.problem.observations().to_vec()).unwrap();
    let cfg = SolverConfig { max_escalations: 0, ..Default::default() };
    match solve(&problem, &inst.params, &cfg) {
        Err(Error::EngineDiverged { frame, pass, iteration }) => assert_eq!((frame, pass, iteration), (0, 0, 1)),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.residual)),
    }
}
