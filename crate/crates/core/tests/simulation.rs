use antipassive::dynamics::{lossless_residual, replicator_storage};
use antipassive::sim::{
    growth_rate_check, run_scenario, Convergence, IntegratorConfig, Scenario,
};
use nalgebra::DVector;

fn uniform() -> DVector<f64> {
    DVector::from_element(3, 1.0 / 3.0)
}

#[test]
fn counterexamples_do_not_converge() {
    for sc in [Scenario::LogitCounterexample, Scenario::ReplicatorCounterexample] {
        let out = run_scenario(sc, &IntegratorConfig::default(), None).unwrap();
        assert_eq!(out.report.instability.verdict, Convergence::NonConvergent, "{}", sc.name());
        let cross = out.report.linear_crosscheck.as_ref().unwrap();
        assert!(cross.unstable);
        assert!(out.report.linear_crosscheck_analytic.as_ref().unwrap().unstable);
    }
}

#[test]
fn simplex_is_conserved() {
    for sc in Scenario::ALL {
        let out = run_scenario(sc, &IntegratorConfig::default(), None).unwrap();
        assert!(out.report.max_simplex_drift <= 1e-6, "{}: {}", sc.name(), out.report.max_simplex_drift);
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = IntegratorConfig::fixed(0.005, 10.0);
    for sc in Scenario::ALL {
        let a = run_scenario(sc, &cfg, None).unwrap();
        let b = run_scenario(sc, &cfg, None).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    }
}

#[test]
fn rps_control_run_is_lossless() {
    let out = run_scenario(Scenario::RpsLossless, &IntegratorConfig::default(), None).unwrap();
    assert!(out.report.bounded);
    assert!(out.report.storage_drift.unwrap() <= 1e-9);
    assert!(out.report.lossless_residual.unwrap() <= 1e-6);
}

#[test]
fn lossless_residual_converges_at_fourth_order() {
    let x0 = Scenario::RpsLossless.default_x0();
    let residual = |dt: f64| {
        let out = run_scenario(Scenario::RpsLossless, &IntegratorConfig::fixed(dt, 50.0), Some(&x0)).unwrap();
        lossless_residual(&out.trajectory, &uniform()).unwrap()
    };
    let (coarse, fine) = (residual(0.005), residual(0.00125));
    assert!(coarse <= 1e-6);
    assert!(coarse >= 8.0 * fine, "{coarse:e} vs {fine:e}");

    // Larger steps sit well above round-off and expose the dt⁴ law directly.
    let ratio = residual(0.025) / residual(0.0125);
    assert!(ratio > 14.0 && ratio < 19.0, "halving ratio {ratio}");
}

#[test]
fn zero_payoff_has_zero_residual() {
    use antipassive::population::LinearGame;
    use antipassive::sim::{integrate, Game, InitialState};
    let game = Game::Static(LinearGame::new(nalgebra::DMatrix::zeros(3, 3)).unwrap());
    let x0 = DVector::from_column_slice(&[0.5, 0.25, 0.25]);
    let init = InitialState {
        x: x0.clone(),
        phat: None,
        z: DVector::zeros(0),
    };
    let traj = integrate(
        antipassive::dynamics::DynamicsKind::Replicator1,
        &game,
        &init,
        &IntegratorConfig::fixed(0.01, 10.0),
        "zero",
    )
    .unwrap();
    assert_eq!(lossless_residual(&traj, &uniform()).unwrap(), 0.0);
    assert!(replicator_storage(traj.x.last().unwrap(), &uniform()).unwrap().is_finite());
}

#[test]
fn nonlinear_growth_matches_linearization() {
    for sc in [Scenario::LogitCounterexample, Scenario::ReplicatorCounterexample] {
        let g = growth_rate_check(sc, 1e-4, 5.0, 0.005).unwrap();
        assert!(g.linear_rate > 0.0);
        assert!(g.relative_error <= 0.1, "{}: {g:?}", sc.name());
    }
}
