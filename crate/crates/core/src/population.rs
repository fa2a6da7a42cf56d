//! Simplex geometry, static stable games and higher-order games.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{is_passive, FrequencyGrid, PassivityCertificate, StateSpace, POSITIVE_REAL_TOL};

/// Tolerance on `Σxᵢ = 1` and `xᵢ ≥ 0` for points built from external data.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Orthonormal basis `N` (m × (m-1)) of the tangent space `{z : 1ᵀz = 0}`.
///
/// Helmert construction: column `j` (1-based) has `1/√(j(j+1))` in its first
/// `j` rows and `-j/√(j(j+1))` in row `j+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    n: DMatrix<f64>,
}

impl TangentBasis {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 strategies, got {m}")));
        }
        let mut n = DMatrix::zeros(m, m - 1);
        for j in 1..m {
            let scale = ((j * (j + 1)) as f64).sqrt();
            for i in 0..j {
                n[(i, j - 1)] = 1.0 / scale;
            }
            n[(j, j - 1)] = -(j as f64) / scale;
        }
        Ok(Self { n })
    }

    /// Wrap an arbitrary basis; columns must be orthonormal and orthogonal to `1`.
    pub fn from_matrix(n: DMatrix<f64>) -> Result<Self> {
        let m = n.nrows();
        if m < 2 || n.ncols() != m - 1 {
            return Err(Error::DimensionMismatch(format!("basis must be m×(m-1), got {}x{}", m, n.ncols())));
        }
        let gram_err = (n.transpose() * &n - DMatrix::identity(m - 1, m - 1)).amax();
        let sum_err = n.row_sum().amax();
        if gram_err > 1e-10 || sum_err > 1e-10 {
            return Err(Error::InvalidArgument("columns are not an orthonormal tangent basis".into()));
        }
        Ok(Self { n })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.n
    }

    pub fn strategies(&self) -> usize {
        self.n.nrows()
    }

    pub fn dim(&self) -> usize {
        self.n.ncols()
    }

    /// Tangent coordinates `Nᵀv`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        self.n.tr_mul(v)
    }

    /// Ambient vector `Nw`.
    pub fn embed(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.n * w
    }

    /// `NᵀMN`.
    pub fn reduce(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.n.tr_mul(m) * &self.n
    }
}

/// Population state on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint(DVector<f64>);

impl SimplexPoint {
    pub fn new(x: DVector<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::InvalidArgument("simplex point needs at least 2 entries".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("simplex point has non-finite entries".into()));
        }
        let sum: f64 = x.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL * x.len() as f64 {
            return Err(Error::InvalidArgument(format!("entries sum to {sum}, expected 1")));
        }
        if let Some((i, &v)) = x.iter().enumerate().find(|(_, v)| **v < -SIMPLEX_TOL) {
            return Err(Error::InvalidArgument(format!("entry {i} is negative ({v})")));
        }
        Ok(Self(x))
    }

    pub fn uniform(m: usize) -> Self {
        Self(DVector::from_element(m, 1.0 / m as f64))
    }

    pub fn vertex(m: usize, i: usize) -> Self {
        let mut x = DVector::zeros(m);
        x[i] = 1.0;
        Self(x)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(v))
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Self {
        p.0.as_slice().to_vec()
    }
}

/// Static population game `x ↦ F(x)` with Jacobian `DF(x)`.
pub trait PopulationGame {
    fn strategies(&self) -> usize;
    fn payoff(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Affine game `F(x) = Ax + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGame {
    #[serde(with = "crate::serde_ext::matrix_rows")]
    pub matrix: DMatrix<f64>,
    #[serde(with = "crate::serde_ext::vector")]
    pub offset: DVector<f64>,
}

impl LinearGame {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch("payoff matrix must be square".into()));
        }
        let m = matrix.nrows();
        Ok(Self {
            matrix,
            offset: DVector::zeros(m),
        })
    }

    /// Standard rock-paper-scissors, `circulant(0, -1, 1)`.
    pub fn rock_paper_scissors() -> Self {
        Self::new(DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 0.0]))
            .expect("3x3 is square")
    }
}

impl PopulationGame for LinearGame {
    fn strategies(&self) -> usize {
        self.matrix.nrows()
    }
    fn payoff(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// Central-difference Jacobian of `f` at `x`.
pub fn finite_difference_jacobian<F>(mut f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let hi = f(&probe);
        probe[j] = x[j] - h;
        let lo = f(&probe);
        probe[j] = x[j];
        jac.set_column(j, &((hi - lo) / (2.0 * h)));
    }
    jac
}

/// Largest relative entrywise gap between the game's Jacobian and finite differences.
pub fn jacobian_error<G: PopulationGame + ?Sized>(game: &G, x: &DVector<f64>) -> f64 {
    let fd = finite_difference_jacobian(|v| game.payoff(v), x, 1e-6);
    let exact = game.jacobian(x);
    (&fd - &exact).amax() / exact.amax().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableGameReport {
    pub stable: bool,
    /// Largest eigenvalue of `sym(NᵀDF(x)N)` over all samples.
    pub max_eigenvalue: f64,
    /// Sample attaining `max_eigenvalue`.
    pub witness_x: Vec<f64>,
    /// Maximizing tangent direction (ambient coordinates, unit norm).
    pub witness_z: Vec<f64>,
}

/// `zᵀDF(x)z ≤ ε` for all tangent `z`, tested at each sample.
pub fn check_stable_game<G: PopulationGame + ?Sized>(game: &G, samples: &[SimplexPoint]) -> Result<StableGameReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    let basis = TangentBasis::new(game.strategies())?;
    let mut best: Option<(f64, &SimplexPoint, DVector<f64>)> = None;
    for x in samples {
        if x.len() != game.strategies() {
            return Err(Error::DimensionMismatch(format!(
                "sample has {} entries, game has {} strategies",
                x.len(),
                game.strategies()
            )));
        }
        let reduced = basis.reduce(&game.jacobian(x.as_vector()));
        let sym = (&reduced + reduced.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let k = eig.eigenvalues.imax();
        let lam = eig.eigenvalues[k];
        if best.as_ref().is_none_or(|(b, _, _)| lam > *b) {
            best = Some((lam, x, basis.embed(&eig.eigenvectors.column(k).into_owned())));
        }
    }
    let (max_eigenvalue, x, z) = best.expect("samples is nonempty");
    Ok(StableGameReport {
        stable: max_eigenvalue <= POSITIVE_REAL_TOL,
        max_eigenvalue,
        witness_x: x.as_vector().as_slice().to_vec(),
        witness_z: z.as_slice().to_vec(),
    })
}

/// Game with internal LTI dynamics acting in tangent coordinates:
///
/// ```text
/// δw = Nᵀ(X - X*)
/// ż  = A z + B δw
/// P  = P* + N(C z + D δw)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameJson", into = "GameJson")]
pub struct HigherOrderGame {
    xstar: SimplexPoint,
    pstar: DVector<f64>,
    internal: StateSpace,
    basis: TangentBasis,
}

#[derive(Serialize, Deserialize)]
struct GameJson {
    #[serde(rename = "Xstar")]
    xstar: Vec<f64>,
    #[serde(rename = "Pstar")]
    pstar: Vec<f64>,
    internal: StateSpace,
    m: usize,
}

impl TryFrom<GameJson> for HigherOrderGame {
    type Error = Error;
    fn try_from(g: GameJson) -> Result<Self> {
        if g.xstar.len() != g.m {
            return Err(Error::DimensionMismatch(format!("Xstar has {} entries, m = {}", g.xstar.len(), g.m)));
        }
        Self::new(SimplexPoint::try_from(g.xstar)?, DVector::from_vec(g.pstar), g.internal)
    }
}

impl From<HigherOrderGame> for GameJson {
    fn from(g: HigherOrderGame) -> Self {
        Self {
            m: g.strategies(),
            xstar: g.xstar.into(),
            pstar: g.pstar.as_slice().to_vec(),
            internal: g.internal,
        }
    }
}

/// Output of one game evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GameResponse {
    pub z_dot: DVector<f64>,
    pub payoff: DVector<f64>,
}

impl HigherOrderGame {
    pub fn new(xstar: SimplexPoint, pstar: DVector<f64>, internal: StateSpace) -> Result<Self> {
        let m = xstar.len();
        if pstar.len() != m {
            return Err(Error::DimensionMismatch(format!("Pstar has {} entries, expected {m}", pstar.len())));
        }
        if internal.inputs() != m - 1 || internal.outputs() != m - 1 {
            return Err(Error::DimensionMismatch(format!(
                "internal system must be {0}x{0}, got {1}x{2}",
                m - 1,
                internal.outputs(),
                internal.inputs()
            )));
        }
        if pstar.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("Pstar has non-finite entries".into()));
        }
        Ok(Self {
            xstar,
            pstar,
            internal,
            basis: TangentBasis::new(m)?,
        })
    }

    pub fn strategies(&self) -> usize {
        self.xstar.len()
    }

    pub fn internal_states(&self) -> usize {
        self.internal.states()
    }

    pub fn xstar(&self) -> &SimplexPoint {
        &self.xstar
    }

    pub fn pstar(&self) -> &DVector<f64> {
        &self.pstar
    }

    pub fn internal(&self) -> &StateSpace {
        &self.internal
    }

    pub fn basis(&self) -> &TangentBasis {
        &self.basis
    }

    /// The game `X ↦ P* - N(...)`, i.e. the internal system negated.
    pub fn negated(&self) -> Self {
        Self {
            internal: self.internal.negated(),
            ..self.clone()
        }
    }

    /// Tangent deviation `Nᵀ(X - X*)`.
    pub fn deviation(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.project(&(x - self.xstar.as_vector()))
    }

    pub fn eval(&self, z: &DVector<f64>, x: &DVector<f64>) -> Result<GameResponse> {
        if z.len() != self.internal.states() || x.len() != self.strategies() {
            return Err(Error::DimensionMismatch("state or strategy vector has the wrong length".into()));
        }
        let dw = self.deviation(x);
        let sys = &self.internal;
        let z_dot = sys.a() * z + sys.b() * &dw;
        let dq = sys.c() * z + sys.d() * &dw;
        Ok(GameResponse {
            z_dot,
            payoff: &self.pstar + self.basis.embed(&dq),
        })
    }
}

/// The constructed game destabilizing the second-order logit dynamics at the
/// uniform state of three strategies. `X*` is uniform and `P* = 0`, which is
/// consistent with `p̂* = P*` and `X* = softmax(p̂*)`.
pub fn paper_logit_game() -> HigherOrderGame {
    let internal = StateSpace::from_rows(
        &[
            &[0.0, -0.8608, 0.0, 0.0],
            &[1.0, -1.0791, 0.0, 0.0],
            &[0.0, 0.0, 0.0, -0.8608],
            &[0.0, 0.0, 1.0, -1.0791],
        ],
        &[&[0.0, 0.0], &[10.0, 10.0], &[0.0, 0.0], &[10.0, 10.0]],
        &[&[0.0, 16.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 16.0]],
        &[&[5.2020, -4.7980], &[-4.7980, 5.2020]],
    )
    .expect("fixed dimensions");
    HigherOrderGame::new(SimplexPoint::uniform(3), DVector::zeros(3), internal).expect("fixed dimensions")
}

/// Hand-built game for the second-order replicator: `-1/(s+1)` per tangent channel.
pub fn paper_replicator_game() -> HigherOrderGame {
    let internal = StateSpace::new(
        -DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        -DMatrix::identity(2, 2),
        DMatrix::zeros(2, 2),
    )
    .expect("fixed dimensions");
    HigherOrderGame::new(SimplexPoint::uniform(3), DVector::zeros(3), internal).expect("fixed dimensions")
}

/// Both passivity orientations of a game's internal map `δw ↦ δq`.
///
/// Since `ẊᵀṖ = δẇᵀNᵀNδq̇ = δẇᵀδq̇`, the game `X ↦ P` is δ-anti-passive
/// exactly when `-internal` is passive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameCertificate {
    pub anti_passive: bool,
    pub passive: bool,
    /// Certificate of `-internal`.
    pub negated: PassivityCertificate,
    /// Certificate of `internal`.
    pub internal: PassivityCertificate,
}

pub fn check_game_antipassive(game: &HigherOrderGame, grid: &FrequencyGrid) -> Result<GameCertificate> {
    let negated = is_passive(&game.internal.negated(), grid)?;
    let internal = is_passive(&game.internal, grid)?;
    Ok(GameCertificate {
        anti_passive: negated.is_passive(),
        passive: internal.is_passive(),
        negated,
        internal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::is_hurwitz;
    use approx::assert_relative_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn two_strategy_basis() {
        let n = TangentBasis::new(2).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_eq!(n.matrix().as_slice(), &[h, -h]);
    }

    #[test]
    fn basis_is_orthonormal_and_tangent() {
        for m in 2..=10 {
            let n = TangentBasis::new(m).unwrap();
            let gram = n.matrix().transpose() * n.matrix();
            assert!((gram - DMatrix::identity(m - 1, m - 1)).amax() <= 1e-12);
            assert!(n.matrix().row_sum().amax() <= 1e-12);
            assert!(n.project(SimplexPoint::uniform(m).as_vector()).amax() <= 1e-12);
        }
        assert!(TangentBasis::new(1).is_err());
    }

    #[test]
    fn foreign_basis_is_validated() {
        let n = TangentBasis::new(4).unwrap();
        assert!(TangentBasis::from_matrix(-n.matrix().clone()).is_ok());
        assert!(TangentBasis::from_matrix(DMatrix::identity(4, 3)).is_err());
    }

    #[test]
    fn simplex_point_validation() {
        assert!(SimplexPoint::new(dv(&[0.5, 0.5])).is_ok());
        assert!(SimplexPoint::new(dv(&[0.6, 0.5])).is_err());
        assert!(SimplexPoint::new(dv(&[1.5, -0.5])).is_err());
        assert!(SimplexPoint::new(dv(&[1.0])).is_err());
        assert!(!SimplexPoint::vertex(3, 0).is_interior());
        let json = serde_json::to_string(&SimplexPoint::uniform(4)).unwrap();
        assert_eq!(json, "[0.25,0.25,0.25,0.25]");
        assert!(serde_json::from_str::<SimplexPoint>("[0.9,0.2]").is_err());
    }

    #[test]
    fn stable_game_examples() {
        let samples: Vec<_> = [[0.2, 0.3, 0.5], [1.0 / 3.0; 3], [0.7, 0.2, 0.1]]
            .iter()
            .map(|x| SimplexPoint::new(dv(x)).unwrap())
            .collect();
        let minus = LinearGame::new(-DMatrix::identity(3, 3)).unwrap();
        let r = check_stable_game(&minus, &samples).unwrap();
        assert!(r.stable);
        assert_relative_eq!(r.max_eigenvalue, -1.0, epsilon = 1e-12);

        let rps = check_stable_game(&LinearGame::rock_paper_scissors(), &samples).unwrap();
        assert!(rps.stable);
        assert!(rps.max_eigenvalue.abs() <= 1e-12);

        let coord = check_stable_game(&LinearGame::new(DMatrix::identity(3, 3)).unwrap(), &samples).unwrap();
        assert!(!coord.stable);
        assert_relative_eq!(coord.max_eigenvalue, 1.0, epsilon = 1e-12);
        let z = dv(&coord.witness_z);
        assert!(z.sum().abs() < 1e-12);
        assert_relative_eq!(z.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_game_jacobian_matches_finite_differences() {
        let g = LinearGame::rock_paper_scissors();
        assert!(jacobian_error(&g, &dv(&[0.2, 0.5, 0.3])) <= 1e-5);
    }

    #[test]
    fn equilibrium_is_a_rest_point() {
        for game in [paper_logit_game(), paper_replicator_game()] {
            let z = DVector::zeros(game.internal_states());
            let r = game.eval(&z, game.xstar().as_vector()).unwrap();
            assert_eq!(r.z_dot.amax(), 0.0);
            assert_eq!(&r.payoff, game.pstar());
        }
    }

    #[test]
    fn logit_game_feedthrough_response() {
        let game = paper_logit_game();
        let x = game.xstar().as_vector() + game.basis().embed(&dv(&[1.0, 0.0]));
        let r = game.eval(&DVector::zeros(4), &x).unwrap();
        let dq = game.basis().project(&(r.payoff - game.pstar()));
        assert_relative_eq!(dq[0], 5.2020, epsilon = 1e-12);
        assert_relative_eq!(dq[1], -4.7980, epsilon = 1e-12);
    }

    #[test]
    fn replicator_game_output_map() {
        let game = paper_replicator_game();
        let r = game.eval(&dv(&[1.0, 1.0]), game.xstar().as_vector()).unwrap();
        let dq = game.basis().project(&(r.payoff - game.pstar()));
        assert_relative_eq!(dq[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(dq[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn paper_logit_game_matrices() {
        let game = paper_logit_game();
        let sys = game.internal();
        assert_eq!(sys.d()[(0, 0)], 5.2020);
        assert_eq!(sys.d()[(0, 1)], -4.7980);
        assert_relative_eq!(sys.d().row(0).sum(), 0.404, epsilon = 1e-12);
        assert_relative_eq!(sys.d().row(1).sum(), 0.404, epsilon = 1e-12);
        assert_eq!(sys.a()[(0, 1)], -0.8608);
        assert_eq!(sys.a()[(1, 1)], -1.0791);
        assert_eq!(sys.b()[(1, 0)], 10.0);
        assert_eq!(sys.c()[(0, 1)], 16.0);
        assert!(is_hurwitz(sys));
    }

    #[test]
    fn game_orientations() {
        let grid = FrequencyGrid::default();
        let rep = check_game_antipassive(&paper_replicator_game(), &grid).unwrap();
        assert!(rep.anti_passive && !rep.passive);

        let logit = check_game_antipassive(&paper_logit_game(), &grid).unwrap();
        assert!(logit.passive && !logit.anti_passive);
        assert!(logit.internal.conflict.is_none());

        let zero = HigherOrderGame::new(
            SimplexPoint::uniform(3),
            DVector::zeros(3),
            StateSpace::static_gain(DMatrix::zeros(2, 2)),
        )
        .unwrap();
        let both = check_game_antipassive(&zero, &grid).unwrap();
        assert!(both.passive && both.anti_passive);
    }

    #[test]
    fn game_json_round_trip() {
        let game = paper_logit_game();
        let text = serde_json::to_string(&game).unwrap();
        assert!(text.contains("\"Xstar\"") && text.contains("\"m\":3"));
        let back: HigherOrderGame = serde_json::from_str(&text).unwrap();
        assert_eq!(back, game);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        let bad = text.replace("\"m\":3", "\"m\":4");
        assert!(serde_json::from_str::<HigherOrderGame>(&bad).is_err());
    }

    #[test]
    fn internal_dimension_is_checked() {
        let sys = StateSpace::static_gain(DMatrix::zeros(3, 3));
        assert!(HigherOrderGame::new(SimplexPoint::uniform(3), DVector::zeros(3), sys).is_err());
    }
}
