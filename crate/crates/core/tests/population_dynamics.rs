use antipassive::dynamics::{
    linearize, logit2_field, reduce_dynamics, replicator_field, DynamicsKind, LinearizationMode,
};
use antipassive::lti::sigma_max;
use antipassive::population::{check_stable_game, LinearGame, SimplexPoint, TangentBasis};
use antipassive_testkit as kit;
use nalgebra::DVector;
use proptest::prelude::*;

fn simplex_point(weights: Vec<f64>) -> DVector<f64> {
    let v = DVector::from_vec(weights);
    let total = v.sum();
    v / total
}

proptest! {
    #[test]
    fn fields_stay_tangent(
        w in prop::collection::vec(0.01f64..1.0, 3..8),
        p in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let x = simplex_point(w);
        let p = DVector::from_column_slice(&p[..x.len()]);
        prop_assert!(replicator_field(&x, &p).sum().abs() <= 1e-12);
        prop_assert!(logit2_field(&x, &p, &p).0.sum().abs() <= 1e-12);
    }

    #[test]
    fn faces_are_invariant(
        w in prop::collection::vec(0.01f64..1.0, 4),
        p in prop::collection::vec(-5.0f64..5.0, 4),
        zero in 0usize..4,
    ) {
        let mut w = w;
        w[zero] = 0.0;
        let x = simplex_point(w);
        let dx = replicator_field(&x, &DVector::from_vec(p));
        prop_assert_eq!(dx[zero], 0.0);
    }

    #[test]
    fn embedding_is_isometric(m in 2usize..10, seed in any::<u64>()) {
        let n = TangentBasis::new(m).unwrap();
        let mut rng = kit::rng(seed);
        let dw = kit::uniform_vector(&mut rng, m - 1);
        prop_assert!((n.embed(&dw).norm() - dw.norm()).abs() <= 1e-12);
    }

    #[test]
    fn skew_games_are_stable(m in 2usize..7, seed in any::<u64>()) {
        let mut rng = kit::rng(seed);
        let a = kit::uniform_matrix(&mut rng, m, m);
        let game = LinearGame::new(&a - a.transpose()).unwrap();
        let samples = vec![SimplexPoint::uniform(m), SimplexPoint::vertex(m, 0)];
        let rep = check_stable_game(&game, &samples).unwrap();
        prop_assert!(rep.stable);
        prop_assert!(rep.max_eigenvalue <= 1e-7);
    }
}

#[test]
fn payoff_work_identity() {
    // X = X* + Nδw(t), P = P* + Nδq(t) with smooth δw, δq; ∫ẊᵀṖ vs ∫δẇᵀδq̇
    let mut rng = kit::rng(5);
    let n = TangentBasis::new(4).unwrap();
    let (a, b) = (kit::uniform_matrix(&mut rng, 3, 3), kit::uniform_matrix(&mut rng, 3, 3));
    let dw_dot = |t: f64| DVector::from_fn(3, |i, _| (0..3).map(|k| a[(i, k)] * ((k + 1) as f64 * t).cos()).sum());
    let dq_dot = |t: f64| DVector::from_fn(3, |i, _| (0..3).map(|k| b[(i, k)] * ((k + 1) as f64 * t).sin()).sum());
    let (steps, horizon) = (4000, 4.0);
    let h = horizon / steps as f64;
    let (mut ambient, mut tangent) = (0.0, 0.0);
    for i in 0..=steps {
        let t = i as f64 * h;
        let weight = if i == 0 || i == steps { 0.5 * h } else { h };
        let (dw, dq) = (dw_dot(t), dq_dot(t));
        ambient += weight * n.embed(&dw).dot(&n.embed(&dq));
        tangent += weight * dw.dot(&dq);
    }
    assert!((ambient - tangent).abs() <= 1e-8);
}

#[test]
fn reduction_is_basis_invariant() {
    let mut rng = kit::rng(9);
    let n = TangentBasis::new(3).unwrap();
    let q = kit::orthogonal(&mut rng, 2);
    let rotated = TangentBasis::from_matrix(n.matrix() * &q).unwrap();
    let x = SimplexPoint::new(DVector::from_column_slice(&[0.2, 0.5, 0.3])).unwrap();
    for kind in [DynamicsKind::Logit2, DynamicsKind::Replicator2] {
        let lin = linearize(kind, &x, LinearizationMode::AnalyticJacobian).unwrap();
        let (a, b) = (reduce_dynamics(&lin, &n).unwrap(), reduce_dynamics(&lin, &rotated).unwrap());
        for k in 0..40 {
            let w = 10f64.powf(-2.0 + 4.0 * k as f64 / 39.0);
            let (ga, gb) = (a.eval_frequency(w), b.eval_frequency(w));
            let (Ok(ga), Ok(gb)) = (ga, gb) else { continue };
            let sa = ga.singular_values();
            let sb = gb.singular_values();
            let mut sa: Vec<f64> = sa.iter().copied().collect();
            let mut sb: Vec<f64> = sb.iter().copied().collect();
            sa.sort_by(f64::total_cmp);
            sb.sort_by(f64::total_cmp);
            for (u, v) in sa.iter().zip(&sb) {
                assert!((u - v).abs() <= 1e-10 * sigma_max(&ga).max(1.0), "{kind:?} ω = {w}");
            }
            // G_rotated = Qᵀ G Q
            let qc = q.map(|v| nalgebra::Complex::new(v, 0.0));
            assert!((qc.transpose() * &ga * &qc - gb).camax() <= 1e-10);
        }
    }
}

#[test]
fn rps_is_stable_with_equality() {
    let game = LinearGame::rock_paper_scissors();
    let basis = TangentBasis::new(3).unwrap();
    let reduced = basis.reduce(&game.matrix);
    // skew-symmetric after reduction
    assert!((&reduced + reduced.transpose()).amax() <= 1e-15);
    let rep = check_stable_game(&game, &[SimplexPoint::uniform(3)]).unwrap();
    assert!(rep.stable);
}
