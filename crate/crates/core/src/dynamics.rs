//! Evolutionary dynamics, their linearizations and tangent-space reductions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::StateSpace;
use crate::population::{SimplexPoint, TangentBasis};
use crate::sim::Trajectory;

/// States with an entry below this are treated as on the simplex boundary.
pub const INTERIOR_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsKind {
    Replicator1,
    Replicator2,
    Logit1,
    Logit2,
}

impl DynamicsKind {
    pub fn is_second_order(self) -> bool {
        matches!(self, Self::Replicator2 | Self::Logit2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Replicator1 => "replicator1",
            Self::Replicator2 => "replicator2",
            Self::Logit1 => "logit1",
            Self::Logit2 => "logit2",
        }
    }
}

impl std::str::FromStr for DynamicsKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replicator1" | "replicator" => Ok(Self::Replicator1),
            "replicator2" => Ok(Self::Replicator2),
            "logit1" | "logit" => Ok(Self::Logit1),
            "logit2" => Ok(Self::Logit2),
            other => Err(Error::InvalidArgument(format!("unknown dynamics '{other}'"))),
        }
    }
}

pub fn softmax(v: &DVector<f64>) -> DVector<f64> {
    let top = v.max();
    let e = v.map(|x| (x - top).exp());
    let total = e.sum();
    e / total
}

/// `ẋᵢ = xᵢ(pᵢ - xᵀp)`.
pub fn replicator_field(x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
    let mean = x.dot(p);
    x.zip_map(p, |xi, pi| xi * (pi - mean))
}

/// Second-order replicator: `ẋ = replicator(x, p̂)`, `dp̂/dt = p`.
pub fn replicator2_field(x: &DVector<f64>, phat: &DVector<f64>, p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (replicator_field(x, phat), p.clone())
}

/// `ẋ = -x + softmax(p)`.
pub fn logit1_field(x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
    softmax(p) - x
}

/// Second-order logit: `ẋ = -x + softmax(p̂)`, `dp̂/dt = -p̂ + p`.
pub fn logit2_field(x: &DVector<f64>, phat: &DVector<f64>, p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (logit1_field(x, phat), p - phat)
}

/// Storage `V(x) = -Σ x*ᵢ ln(xᵢ/x*ᵢ)`, nonnegative on the open simplex.
pub fn replicator_storage(x: &DVector<f64>, xstar: &DVector<f64>) -> Result<f64> {
    if x.len() != xstar.len() {
        return Err(Error::DimensionMismatch("x and x* differ in length".into()));
    }
    for (index, &value) in x.iter().enumerate() {
        if value.is_nan() || value < INTERIOR_FLOOR {
            return Err(Error::NonInteriorState { index, value });
        }
    }
    Ok(-x
        .iter()
        .zip(xstar.iter())
        .map(|(&xi, &si)| if si > 0.0 { si * (xi / si).ln() } else { 0.0 })
        .sum::<f64>())
}

/// `max_t |V(x(t)) - V(x(0)) - ∫₀ᵗ (x - x*)ᵀp dτ|` for a first-order replicator trajectory.
///
/// The supply integral comes from the work accumulators integrated alongside
/// the state by the same scheme, `∫(x - x*)ᵀp = ∫xᵀp - x*ᵀ∫p`.
pub fn lossless_residual(traj: &Trajectory, xstar: &DVector<f64>) -> Result<f64> {
    if traj.dynamics != DynamicsKind::Replicator1 {
        return Err(Error::InvalidArgument(format!(
            "lossless residual needs a replicator1 trajectory, got {}",
            traj.dynamics.name()
        )));
    }
    let Some(first) = traj.x.first() else {
        return Ok(0.0);
    };
    let v0 = replicator_storage(first, xstar)?;
    let (w0, pi0) = (traj.work[0], &traj.payoff_integral[0]);
    let mut worst = 0.0f64;
    for i in 0..traj.len() {
        let v = replicator_storage(&traj.x[i], xstar)?;
        let supply = (traj.work[i] - w0) - xstar.dot(&(&traj.payoff_integral[i] - pi0));
        worst = worst.max((v - v0 - supply).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearizationMode {
    /// The matrices stated for the uniform state.
    PaperMatrices,
    /// Exact Jacobians of the nonlinear fields.
    AnalyticJacobian,
}

impl std::str::FromStr for LinearizationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper_matrices" => Ok(Self::PaperMatrices),
            "analytic" | "jacobian" | "analytic_jacobian" => Ok(Self::AnalyticJacobian),
            other => Err(Error::InvalidArgument(format!("unknown linearization mode '{other}'"))),
        }
    }
}

/// Linearization `δẋ = A_x δx + β δp̂`, `δp̂' = A_p δp̂ + B_p δp` at `(x*, p̂*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedDynamics {
    pub kind: DynamicsKind,
    pub mode: LinearizationMode,
    pub xstar: Vec<f64>,
    pub phat_star: Vec<f64>,
    #[serde(with = "crate::serde_ext::matrix_rows")]
    pub a_x: DMatrix<f64>,
    #[serde(with = "crate::serde_ext::matrix_rows")]
    pub beta: DMatrix<f64>,
    #[serde(with = "crate::serde_ext::matrix_rows")]
    pub a_p: DMatrix<f64>,
    #[serde(with = "crate::serde_ext::matrix_rows")]
    pub b_p: DMatrix<f64>,
}

impl LinearizedDynamics {
    pub fn strategies(&self) -> usize {
        self.xstar.len()
    }
}

/// Equilibrium auxiliary payoff used for each second-order dynamic:
/// `ln x*` centered to zero mean for logit, `1` for the replicator.
pub fn equilibrium_phat(kind: DynamicsKind, xstar: &DVector<f64>) -> Result<DVector<f64>> {
    match kind {
        DynamicsKind::Logit2 | DynamicsKind::Logit1 => {
            let logs = xstar.map(f64::ln);
            let mean = logs.mean();
            Ok(logs.add_scalar(-mean))
        }
        DynamicsKind::Replicator2 | DynamicsKind::Replicator1 => Ok(DVector::from_element(xstar.len(), 1.0)),
    }
}

pub fn linearize(kind: DynamicsKind, xstar: &SimplexPoint, mode: LinearizationMode) -> Result<LinearizedDynamics> {
    if !kind.is_second_order() {
        return Err(Error::InvalidArgument(format!(
            "linearization is defined for second-order dynamics, got {}",
            kind.name()
        )));
    }
    if !xstar.is_interior() {
        return Err(Error::InvalidArgument("x* must be interior".into()));
    }
    let m = xstar.len();
    let x = xstar.as_vector();
    let eye = DMatrix::<f64>::identity(m, m);
    let ones = DMatrix::<f64>::from_element(m, m, 1.0);
    let phat = equilibrium_phat(kind, x)?;

    if mode == LinearizationMode::PaperMatrices {
        let uniform = 1.0 / m as f64;
        if x.iter().any(|&v| (v - uniform).abs() > 1e-12) {
            return Err(Error::ModeUnavailable("tabulated matrices are stated at the uniform state only".into()));
        }
    }

    let (a_x, beta, a_p) = match (kind, mode) {
        (DynamicsKind::Logit2, LinearizationMode::PaperMatrices) => {
            // 1 on the diagonal, -1 elsewhere, scaled by 1/m
            let beta = (2.0 * &eye - &ones) / m as f64;
            (-&eye, beta, -&eye)
        }
        (DynamicsKind::Logit2, LinearizationMode::AnalyticJacobian) => {
            let s = softmax(&phat);
            let beta = DMatrix::from_diagonal(&s) - &s * s.transpose();
            (-&eye, beta, -&eye)
        }
        (DynamicsKind::Replicator2, LinearizationMode::PaperMatrices) => {
            let a = -(x * DVector::from_element(m, 1.0).transpose());
            let beta = &eye - x * x.transpose();
            (a, beta, DMatrix::zeros(m, m))
        }
        (DynamicsKind::Replicator2, LinearizationMode::AnalyticJacobian) => {
            // ∂/∂x [x ⊙ (p̂ - xᵀp̂ 1)] = diag(p̂ - xᵀp̂) - x p̂ᵀ
            let mean = x.dot(&phat);
            let a = DMatrix::from_diagonal(&phat.add_scalar(-mean)) - x * phat.transpose();
            let beta = DMatrix::from_diagonal(x) - x * x.transpose();
            (a, beta, DMatrix::zeros(m, m))
        }
        _ => unreachable!("first-order kinds rejected above"),
    };
    Ok(LinearizedDynamics {
        kind,
        mode,
        xstar: x.as_slice().to_vec(),
        phat_star: phat.as_slice().to_vec(),
        a_x,
        beta,
        a_p,
        b_p: eye,
    })
}

/// Reduced system with states `(δw, ξ)`, input `δq` and output `δw`, using
/// `δx = Nδw`, `δp̂ = Nξ`, `δp = Nδq`.
pub fn reduce_dynamics(lin: &LinearizedDynamics, basis: &TangentBasis) -> Result<StateSpace> {
    let m = lin.strategies();
    if basis.strategies() != m {
        return Err(Error::DimensionMismatch(format!(
            "basis is for {} strategies, linearization has {m}",
            basis.strategies()
        )));
    }
    let k = m - 1;
    let mut a = DMatrix::zeros(2 * k, 2 * k);
    a.view_mut((0, 0), (k, k)).copy_from(&basis.reduce(&lin.a_x));
    a.view_mut((0, k), (k, k)).copy_from(&basis.reduce(&lin.beta));
    a.view_mut((k, k), (k, k)).copy_from(&basis.reduce(&lin.a_p));
    let mut b = DMatrix::zeros(2 * k, k);
    b.view_mut((k, 0), (k, k)).copy_from(&basis.reduce(&lin.b_p));
    let mut c = DMatrix::zeros(k, 2 * k);
    c.view_mut((0, 0), (k, k)).fill_with_identity();
    StateSpace::new(a, b, c, DMatrix::zeros(k, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::FrequencyGrid;
    use crate::population::finite_difference_jacobian;
    use approx::assert_relative_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        (a - dv(b)).amax() <= tol
    }

    #[test]
    fn replicator_examples() {
        let x = dv(&[0.5, 0.25, 0.25]);
        assert!(close(&replicator_field(&x, &dv(&[1.0, 0.0, 0.0])), &[0.25, -0.125, -0.125], 1e-15));
        assert!(replicator_field(&x, &dv(&[2.0, 2.0, 2.0])).amax() < 1e-15);
        let vertex = dv(&[1.0, 0.0, 0.0]);
        assert_eq!(replicator_field(&vertex, &dv(&[0.3, 5.0, -1.0])).amax(), 0.0);
    }

    #[test]
    fn replicator2_examples() {
        let u = SimplexPoint::uniform(3).into_vector();
        let (dx, dp) = replicator2_field(&u, &dv(&[1.0, 0.0, 0.0]), &dv(&[0.1, 0.2, 0.3]));
        assert!(close(&dx, &[2.0 / 9.0, -1.0 / 9.0, -1.0 / 9.0], 1e-15));
        assert_eq!(dp, dv(&[0.1, 0.2, 0.3]));
        let (dx, dp) = replicator2_field(&u, &dv(&[4.0; 3]), &DVector::zeros(3));
        assert!(dx.amax() < 1e-15 && dp.amax() == 0.0);
    }

    #[test]
    fn logit_examples() {
        let u = SimplexPoint::uniform(3).into_vector();
        let (dx, dp) = logit2_field(&u, &DVector::zeros(3), &DVector::zeros(3));
        assert!(dx.amax() < 1e-15 && dp.amax() == 0.0);

        let phat = dv(&[2f64.ln(), 0.0, 0.0]);
        let (dx, _) = logit2_field(&u, &phat, &phat);
        let third = 1.0 / 3.0;
        assert!(close(&dx, &[0.5 - third, 0.25 - third, 0.25 - third], 1e-15));

        let phat = dv(&[0.3, -1.2, 2.0]);
        let (dx, dp) = logit2_field(&softmax(&phat), &phat, &phat);
        assert!(dx.amax() < 1e-15 && dp.amax() == 0.0);

        assert!(logit1_field(&u, &DVector::zeros(3)).amax() < 1e-15);
        let p = dv(&[1.0, -2.0, 0.5]);
        assert!(logit1_field(&softmax(&p), &p).amax() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_payoffs() {
        let s = softmax(&dv(&[1000.0, 999.0, -1000.0]));
        assert!(s.iter().all(|v| v.is_finite()));
        assert_relative_eq!(s.sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fields_are_tangent() {
        let xs = [[0.2, 0.3, 0.5], [0.9, 0.05, 0.05], [1.0 / 3.0; 3]];
        let ps = [[1.0, -2.0, 0.5], [10.0, 0.0, -3.0], [0.0; 3]];
        for x in &xs {
            for p in &ps {
                let (x, p) = (dv(x), dv(p));
                assert!(replicator_field(&x, &p).sum().abs() <= 1e-12);
                assert!(logit2_field(&x, &p, &p).0.sum().abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn storage_examples() {
        let u = SimplexPoint::uniform(3).into_vector();
        assert_eq!(replicator_storage(&u, &u).unwrap(), 0.0);
        let v = replicator_storage(&dv(&[0.5, 0.25, 0.25]), &u).unwrap();
        let oracle = -(1.5f64.ln() + 2.0 * 0.75f64.ln()) / 3.0;
        assert_relative_eq!(v, oracle, epsilon = 1e-15);
        assert_relative_eq!(v, 0.0566, epsilon = 1e-4);
        assert!(matches!(
            replicator_storage(&dv(&[1.0, 0.0, 0.0]), &u),
            Err(Error::NonInteriorState { index: 1, .. })
        ));
    }

    #[test]
    fn paper_logit_blocks() {
        let lin = linearize(DynamicsKind::Logit2, &SimplexPoint::uniform(3), LinearizationMode::PaperMatrices).unwrap();
        let t = 1.0 / 3.0;
        let want = DMatrix::from_row_slice(3, 3, &[t, -t, -t, -t, t, -t, -t, -t, t]);
        assert!((&lin.beta - want).amax() < 1e-16);
        assert_eq!(lin.a_x, -DMatrix::<f64>::identity(3, 3));
        assert_eq!(lin.a_p, -DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn paper_replicator_blocks() {
        let lin =
            linearize(DynamicsKind::Replicator2, &SimplexPoint::uniform(3), LinearizationMode::PaperMatrices).unwrap();
        assert!((&lin.a_x + DMatrix::from_element(3, 3, 1.0 / 3.0)).amax() < 1e-16);
        let want = DMatrix::<f64>::identity(3, 3) - DMatrix::from_element(3, 3, 1.0 / 9.0);
        assert!((&lin.beta - want).amax() < 1e-16);
    }

    #[test]
    fn paper_mode_needs_uniform_state() {
        let x = SimplexPoint::new(dv(&[0.5, 0.3, 0.2])).unwrap();
        assert!(matches!(
            linearize(DynamicsKind::Logit2, &x, LinearizationMode::PaperMatrices),
            Err(Error::ModeUnavailable(_))
        ));
        assert!(linearize(DynamicsKind::Logit2, &x, LinearizationMode::AnalyticJacobian).is_ok());
    }

    #[test]
    fn analytic_logit_coupling_at_uniform() {
        let lin =
            linearize(DynamicsKind::Logit2, &SimplexPoint::uniform(3), LinearizationMode::AnalyticJacobian).unwrap();
        let want = DMatrix::<f64>::identity(3, 3) / 3.0 - DMatrix::from_element(3, 3, 1.0 / 9.0);
        assert!((&lin.beta - &want).amax() < 1e-15);
        let phat = DVector::from_column_slice(&lin.phat_star);
        let fd = finite_difference_jacobian(softmax, &phat, 1e-6);
        assert!((fd - want).amax() < 1e-9);
    }

    /// Jacobian of the full second-order field in `(x, p̂)` at the equilibrium.
    fn field_jacobians(kind: DynamicsKind, x: &DVector<f64>, phat: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = x.len();
        let p = match kind {
            DynamicsKind::Logit2 => phat.clone(),
            _ => DVector::zeros(m),
        };
        let field = |x: &DVector<f64>, ph: &DVector<f64>| match kind {
            DynamicsKind::Logit2 => logit2_field(x, ph, &p).0,
            _ => replicator2_field(x, ph, &p).0,
        };
        let jx = finite_difference_jacobian(|v| field(v, phat), x, 1e-6);
        let jp = finite_difference_jacobian(|v| field(x, v), phat, 1e-6);
        (jx, jp)
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let points = [
            [0.2, 0.3, 0.5],
            [0.6, 0.3, 0.1],
            [0.25, 0.25, 0.5],
            [0.1, 0.1, 0.8],
            [0.4, 0.35, 0.25],
            [0.05, 0.9, 0.05],
            [0.3, 0.3, 0.4],
            [0.15, 0.45, 0.4],
            [0.7, 0.1, 0.2],
            [1.0 / 3.0; 3],
        ];
        for kind in [DynamicsKind::Logit2, DynamicsKind::Replicator2] {
            for x in &points {
                let xs = SimplexPoint::new(dv(x)).unwrap();
                let lin = linearize(kind, &xs, LinearizationMode::AnalyticJacobian).unwrap();
                let phat = DVector::from_column_slice(&lin.phat_star);
                let (jx, jp) = field_jacobians(kind, xs.as_vector(), &phat);
                let scale = |m: &DMatrix<f64>| m.amax().max(1.0);
                assert!((&jx - &lin.a_x).amax() / scale(&lin.a_x) <= 1e-5, "{kind:?} A_x at {x:?}");
                assert!((&jp - &lin.beta).amax() / scale(&lin.beta) <= 1e-5, "{kind:?} β at {x:?}");
            }
        }
    }

    #[test]
    fn reduced_paper_logit_system() {
        let lin = linearize(DynamicsKind::Logit2, &SimplexPoint::uniform(3), LinearizationMode::PaperMatrices).unwrap();
        let red = reduce_dynamics(&lin, &TangentBasis::new(3).unwrap()).unwrap();
        let t = 2.0 / 3.0;
        let want_a = DMatrix::from_row_slice(
            4,
            4,
            &[-1.0, 0.0, t, 0.0, 0.0, -1.0, 0.0, t, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0],
        );
        assert!((red.a() - want_a).amax() < 1e-15);
        for &w in FrequencyGrid::log_spaced(1e-2, 1e2, 50).points() {
            let g = red.eval_frequency(w).unwrap();
            let s = crate::lti::C64::new(1.0, w);
            let want = crate::lti::C64::new(t, 0.0) / (s * s);
            assert!((g[(0, 0)] - want).norm() < 1e-12);
            assert!(g[(0, 1)].norm() < 1e-15);
        }
    }

    #[test]
    fn reduced_paper_replicator_is_double_integrator() {
        let lin =
            linearize(DynamicsKind::Replicator2, &SimplexPoint::uniform(3), LinearizationMode::PaperMatrices).unwrap();
        let red = reduce_dynamics(&lin, &TangentBasis::new(3).unwrap()).unwrap();
        let mut want = DMatrix::zeros(4, 4);
        want[(0, 2)] = 1.0;
        want[(1, 3)] = 1.0;
        assert!((red.a() - want).amax() < 1e-15);
    }

    #[test]
    fn analytic_replicator_coupling_is_one_third() {
        let lin =
            linearize(DynamicsKind::Replicator2, &SimplexPoint::uniform(3), LinearizationMode::AnalyticJacobian)
                .unwrap();
        let red = reduce_dynamics(&lin, &TangentBasis::new(3).unwrap()).unwrap();
        assert!(red.a().view((0, 0), (2, 2)).amax() < 1e-15);
        let coupling = red.a().view((0, 2), (2, 2)).into_owned();
        assert!((coupling - DMatrix::<f64>::identity(2, 2) / 3.0).amax() < 1e-15);
    }

    #[test]
    fn first_order_kinds_do_not_linearize() {
        assert!(linearize(DynamicsKind::Logit1, &SimplexPoint::uniform(3), LinearizationMode::PaperMatrices).is_err());
    }

    #[test]
    fn kind_names_parse() {
        for k in [DynamicsKind::Replicator1, DynamicsKind::Replicator2, DynamicsKind::Logit1, DynamicsKind::Logit2] {
            assert_eq!(k.name().parse::<DynamicsKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }
}
