mod common;

use common::{ar_channel, build_model, ma_channel, stable_model};
use fbcap_core::capacity::{
    ar_iid_rate, closed_loop_check, extract_policy, kim_ar_capacity, kim_ma_capacity, ma_capacity_fixed_point,
    scop_finite_n, solve_capacity, solve_capacity_scalar, waterfilling_capacity, Policy, SolverOptions,
};
use fbcap_core::linalg::{self, Mat};
use fbcap_core::state_space::{ChannelModel, StateSpaceNoise};
use proptest::prelude::*;

fn opts() -> SolverOptions {
    SolverOptions::default()
}

#[test]
fn ma_grid_matches_fixed_point() {
    for alpha in [-2.0, -1.5, -0.9, -0.5, -0.1, 0.0, 0.1, 0.5, 0.9, 1.0, 1.5, 2.0] {
        for power in [0.5, 1.0, 2.0] {
            let ch = ma_channel(alpha, power);
            let oracle = ma_capacity_fixed_point(alpha, power).unwrap();
            let general = solve_capacity(&ch, &opts()).unwrap().capacity_nats;
            let scalar = solve_capacity_scalar(&ch, &opts()).unwrap().capacity_nats;
            assert!(
                (general - oracle).abs() < 1e-6,
                "alpha {alpha} P {power}: {general} vs {oracle}"
            );
            assert!(
                (scalar - oracle).abs() < 1e-6,
                "alpha {alpha} P {power}: {scalar} vs {oracle}"
            );
            assert!((general - scalar).abs() < 1e-6);
        }
    }
}

#[test]
fn ma_capacity_solves_root_equation() {
    for (alpha, power) in [(0.3, 1.0), (1.0, 1.0), (-0.7, 2.5)] {
        let c = solve_capacity_scalar(&ma_channel(alpha, power), &opts())
            .unwrap()
            .capacity_nats;
        let x = (-c).exp();
        let lhs = power * x * x;
        let rhs = (1.0 - x * x) * (1.0 - f64::abs(alpha) * x).powi(2);
        assert!((lhs - rhs).abs() < 1e-6, "alpha {alpha}: {lhs} vs {rhs}");
    }
}

#[test]
fn awgn_capacity() {
    for power in [0.1, 1.0, 10.0] {
        let ch = ChannelModel::identity(power, StateSpaceNoise::white(Mat::identity(1, 1)).unwrap()).unwrap();
        let c = solve_capacity(&ch, &opts()).unwrap().capacity_nats;
        assert!((c - 0.5 * (1.0 + power).ln()).abs() < 1e-7);
    }
}

#[test]
fn kim_identity_on_inner_range() {
    let mut alpha = -0.99;
    while alpha <= 0.99 + 1e-12 {
        let a = kim_ma_capacity(alpha, 1.0).unwrap();
        let b = ma_capacity_fixed_point(alpha, 1.0).unwrap();
        assert!((a - b).abs() < 1e-9, "alpha {alpha}: {a} vs {b}");
        alpha += 0.03;
    }
}

#[test]
fn ar_iid_rate_matches_restricted_program() {
    for beta in [0.0, 0.3, 0.8, 1.2, 2.0] {
        let c = solve_capacity_scalar(&ar_channel(beta, 1.0), &SolverOptions::iid()).unwrap();
        assert!((c.capacity_nats - ar_iid_rate(beta)).abs() < 1e-6, "beta {beta}");
        assert!(linalg::sup_norm(&c.gamma) == 0.0);
    }
    assert!((ar_iid_rate(0.0) - 0.5 * 2f64.ln()).abs() < 1e-15);
}

#[test]
fn ar_matches_kim_and_ordering_holds() {
    for beta in [0.2, 0.5, 0.9] {
        let ch = ar_channel(beta, 1.0);
        let fb = solve_capacity_scalar(&ch, &opts()).unwrap().capacity_nats;
        let kim = kim_ar_capacity(beta, 1.0).unwrap();
        let wf = waterfilling_capacity(&ch, 4096).unwrap();
        let iid = ar_iid_rate(beta);
        assert!((fb - kim).abs() < 1e-6, "beta {beta}: {fb} vs {kim}");
        assert!(iid <= wf + 1e-9 && wf <= fb + 1e-9, "beta {beta}: {iid} {wf} {fb}");
    }
}

#[test]
fn waterfilling_grid_converges() {
    for ch in [ma_channel(0.5, 1.0), ar_channel(0.7, 2.0)] {
        let a = waterfilling_capacity(&ch, 2048).unwrap();
        let b = waterfilling_capacity(&ch, 4096).unwrap();
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn capacity_is_increasing_and_concave_in_power() {
    for alpha in [0.3, 0.7, 1.5] {
        let values: Vec<f64> = (1..=8)
            .map(|k| {
                let ch = ma_channel(alpha, 0.5 * k as f64);
                solve_capacity_scalar(&ch, &opts()).unwrap().capacity_nats
            })
            .collect();
        for w in values.windows(2) {
            assert!(w[1] > w[0]);
        }
        for w in values.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] < 1e-7);
        }
    }
}

#[test]
fn ma_policy_is_pure_feedback() {
    for alpha in [-0.8, 0.5, 2.0] {
        let sol = solve_capacity_scalar(&ma_channel(alpha, 1.0), &opts()).unwrap();
        let policy = extract_policy(&sol).unwrap();
        assert!(linalg::sup_norm(&policy.m) < 1e-6, "alpha {alpha}: M = {}", policy.m);
    }
}

#[test]
fn certificates_hold() {
    for ch in [ma_channel(0.5, 1.0), ar_channel(0.9, 2.0), ma_channel(-1.5, 0.5)] {
        let sol = solve_capacity(&ch, &opts()).unwrap();
        assert!(sol.kkt_residual < 1e-6);
        assert!(sol.lmi_margins.iter().all(|&m| m > -1e-7));
        assert!(sol.trace_slack > -1e-7);
        assert!(sol.riccati_residual < 1e-8);
        assert!(!sol.stalled);
    }
}

#[test]
fn closed_loop_awgn() {
    let ch = ChannelModel::identity(2.0, StateSpaceNoise::white(Mat::identity(1, 1)).unwrap()).unwrap();
    let sol = solve_capacity(&ch, &opts()).unwrap();
    let policy = extract_policy(&sol).unwrap();
    let report = closed_loop_check(&ch, &policy, Some(&sol), 10).unwrap();
    assert!(report.psi_y_error.unwrap() < 1e-9);
    assert!((report.psi_y[(0, 0)] - 3.0).abs() < 1e-6);
}

#[test]
fn closed_loop_ma_converges() {
    let ch = ma_channel(0.5, 1.0);
    let sol = solve_capacity_scalar(&ch, &opts()).unwrap();
    let policy = extract_policy(&sol).unwrap();
    let report = closed_loop_check(&ch, &policy, Some(&sol), 500).unwrap();
    assert!(report.detectable);
    assert!(report.psi_y_error.unwrap() < 1e-6);
    assert!(report.sigma_hat_error.unwrap() < 1e-6);
}

#[test]
fn closed_loop_zero_policy_sees_plain_noise() {
    let ch = ma_channel(0.5, 1.0);
    let policy = Policy {
        a: Mat::zeros(1, 1),
        m: Mat::zeros(1, 1),
    };
    let report = closed_loop_check(&ch, &policy, None, 50).unwrap();
    let psi = fbcap_core::kalman::solve_dare(ch.noise()).unwrap().psi;
    assert!(linalg::sup_norm(&(&report.psi_y - &psi)) < 1e-12);
    assert!(linalg::sup_norm(&report.sigma_hat) < 1e-12);
}

#[test]
fn scop_single_step_and_convergence() {
    let ch = ma_channel(0.5, 1.0);
    let one = scop_finite_n(&ch, 1, &opts()).unwrap();
    // Σ1 = 1 gives Ψ_1 = 1.25
    assert!((one.value_nats - 0.5 * (1.0f64 + 1.0 / 1.25).ln()).abs() < 1e-6);
    let c = solve_capacity_scalar(&ch, &opts()).unwrap().capacity_nats;
    let gaps: Vec<f64> = [5, 10, 20, 40]
        .iter()
        .map(|&n| (scop_finite_n(&ch, n, &opts()).unwrap().value_nats - c).abs())
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] < w[0]);
    }
    assert!(gaps[3] < 0.05);
}

#[test]
fn scop_respects_power_budget() {
    let ch = ar_channel(0.5, 2.0);
    let sol = scop_finite_n(&ch, 6, &opts()).unwrap();
    let total: f64 = sol.pi.iter().map(|p| p.trace()).sum();
    assert!(total <= 6.0 * 2.0 + 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scalar_and_general_agree(alpha in -2.0..2.0f64, power in 0.2..5.0f64) {
        let ch = ma_channel(alpha, power);
        let general = solve_capacity(&ch, &opts()).unwrap().capacity_nats;
        let scalar = solve_capacity_scalar(&ch, &opts()).unwrap().capacity_nats;
        let oracle = ma_capacity_fixed_point(alpha, power).unwrap();
        prop_assert!((general - oracle).abs() < 1e-6);
        prop_assert!((scalar - oracle).abs() < 1e-6);
    }

    #[test]
    fn feedback_dominates_restricted_inputs(model in stable_model(2, 1), power in 0.2..4.0f64) {
        let ch = ChannelModel::identity(power, model).unwrap();
        let fb = solve_capacity(&ch, &opts()).unwrap().capacity_nats;
        let iid = solve_capacity(&ch, &SolverOptions::iid()).unwrap().capacity_nats;
        let wf = waterfilling_capacity(&ch, 4096).unwrap();
        prop_assert!(iid <= wf + 1e-6);
        prop_assert!(wf <= fb + 1e-6);
    }

    #[test]
    fn mimo_solution_certificates(entries in prop::collection::vec(-1.0..1.0f64, 64), radius in 0.0..0.9f64, power in 0.5..3.0f64) {
        let ch = ChannelModel::identity(power, build_model(2, 2, 2, radius, &entries)).unwrap();
        let sol = solve_capacity(&ch, &opts()).unwrap();
        prop_assert!(sol.kkt_residual < 1e-6);
        prop_assert!(sol.lmi_margins.iter().all(|&m| m > -1e-7));
        prop_assert!(sol.pi.trace() <= power + 1e-6);
        prop_assert!(sol.riccati_residual < 1e-8);
        let policy = extract_policy(&sol).unwrap();
        let cov = policy.input_covariance(&sol.sigma_hat);
        prop_assert!(linalg::sup_norm(&(&cov - &sol.pi)) < 1e-6);
    }
}
