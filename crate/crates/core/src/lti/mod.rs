//! Continuous-time LTI systems in state-space form.
//!
//! A [`StateSpace`] carries `(A, B, C, D)` for
//!
//! ```text
//! ẋ = A x + B u
//! y = C x + D u
//! ```
//!
//! Static gains are represented with zero states. Everything in this module
//! works on values: systems are never mutated after construction.

mod cayley;
mod grid;
mod hinf;
mod passivity;

pub use cayley::{cayley_g_to_s, cayley_s_to_r};
pub use grid::FrequencyGrid;
pub use hinf::{hinf_norm, HinfResult, DEFAULT_HINF_TOL};
pub use passivity::{is_delta_passive, is_passive, PassivityCertificate, Verdict, POSITIVE_REAL_TOL};

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Relative margin used to classify eigenvalues as strictly in the left half plane.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Finite-dimensional LTI system `(A, B, C, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

/// Loop sign for [`feedback_interconnect`]: the second system's output is
/// added to (`Positive`) or subtracted from (`Negative`) the exogenous input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopSign {
    Positive,
    Negative,
}

impl LoopSign {
    pub fn value(self) -> f64 {
        match self {
            LoopSign::Positive => 1.0,
            LoopSign::Negative => -1.0,
        }
    }
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "C has {} columns, expected {n}",
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        let all_finite = [&a, &b, &c, &d].iter().all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::InvalidArgument("system matrices must be finite".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// Memoryless gain `y = D u`.
    pub fn static_gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
        }
    }

    /// Convenience constructor from row-major slices.
    pub fn from_rows(a: &[&[f64]], b: &[&[f64]], c: &[&[f64]], d: &[&[f64]]) -> Result<Self> {
        let d = matrix_from_rows(d)?;
        let n = a.len();
        let a = if n == 0 { DMatrix::zeros(0, 0) } else { matrix_from_rows(a)? };
        let b = if n == 0 { DMatrix::zeros(0, d.ncols()) } else { matrix_from_rows(b)? };
        let c = if n == 0 { DMatrix::zeros(d.nrows(), 0) } else { matrix_from_rows(c)? };
        Self::new(a, b, c, d)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_square(&self) -> bool {
        self.inputs() == self.outputs()
    }

    pub(crate) fn require_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.inputs())
        } else {
            Err(Error::NotSquare {
                outputs: self.outputs(),
                inputs: self.inputs(),
            })
        }
    }

    /// The system with output negated, `-G(s)`.
    pub fn negated(&self) -> Self {
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c: -&self.c,
            d: -&self.d,
        }
    }

    /// Eigenvalues of `A`.
    pub fn poles(&self) -> Vec<C64> {
        eigenvalues(&self.a)
    }

    /// Frequency response `G(jω) = C (jωI - A)⁻¹ B + D`.
    pub fn eval_frequency(&self, omega: f64) -> Result<DMatrix<C64>> {
        self.eval_laplace(C64::new(0.0, omega))
            .map_err(|_| Error::SingularResolvent { omega })
    }

    /// Transfer matrix evaluated at an arbitrary complex point `s`.
    pub fn eval_laplace(&self, s: C64) -> Result<DMatrix<C64>> {
        let n = self.states();
        let d = to_complex(&self.d);
        if n == 0 {
            return Ok(d);
        }
        let mut resolvent = -to_complex(&self.a);
        for i in 0..n {
            resolvent[(i, i)] += s;
        }
        let scale = 1.0 + self.a.norm() + s.norm();
        let lu = resolvent.lu();
        let u = lu.u();
        let min_pivot = (0..n).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
        if min_pivot <= 1e-13 * scale {
            return Err(Error::SingularResolvent { omega: s.im });
        }
        let x = lu
            .solve(&to_complex(&self.b))
            .ok_or(Error::SingularResolvent { omega: s.im })?;
        Ok(to_complex(&self.c) * x + d)
    }

    /// Largest singular value of `G(jω)`.
    pub fn gain_at(&self, omega: f64) -> Result<f64> {
        Ok(sigma_max(&self.eval_frequency(omega)?))
    }
}

/// True iff every eigenvalue of `A` satisfies `Re λ < -ε·ρ(A)`, with
/// `ε =` [`STABILITY_MARGIN`]. Static systems are trivially stable.
pub fn is_hurwitz(sys: &StateSpace) -> bool {
    spectrum_is_hurwitz(&sys.poles())
}

pub(crate) fn spectrum_is_hurwitz(eigs: &[C64]) -> bool {
    let rho = eigs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    eigs.iter().all(|l| l.re < -STABILITY_MARGIN * rho)
}

/// Rightmost real part among eigenvalues of `A`, `-∞` for static systems.
pub fn spectral_abscissa(sys: &StateSpace) -> f64 {
    sys.poles().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Feedback loop `u₁ = r + sign·y₂`, `u₂ = y₁`; returns the map `r ↦ y₁`.
///
/// The closed-loop state is `[x₁; x₂]`, so eigenvalues of the returned `A`
/// are the closed-loop poles.
pub fn feedback_interconnect(sys1: &StateSpace, sys2: &StateSpace, sign: LoopSign) -> Result<StateSpace> {
    let (p1, m1) = (sys1.outputs(), sys1.inputs());
    if sys2.inputs() != p1 || sys2.outputs() != m1 {
        return Err(Error::DimensionMismatch(format!(
            "feedback of {p1}x{m1} plant needs {m1}x{p1} loop system, got {}x{}",
            sys2.outputs(),
            sys2.inputs()
        )));
    }
    let s = sign.value();
    let (n1, n2) = (sys1.states(), sys2.states());
    let loop_gain = DMatrix::identity(p1, p1) - s * &sys1.d * &sys2.d;
    let e = checked_inverse(&loop_gain)
        .ok_or_else(|| Error::IllPosed("I - sign·D₁D₂ is singular".into()))?;

    // y₁ = Cy x + Dy r
    let mut cy = DMatrix::zeros(p1, n1 + n2);
    cy.columns_mut(0, n1).copy_from(&(&e * &sys1.c));
    cy.columns_mut(n1, n2).copy_from(&(s * &e * &sys1.d * &sys2.c));
    let dy = &e * &sys1.d;

    // u₁ = Cu x + Du r
    let mut cu = s * &sys2.d * &cy;
    {
        let mut right = cu.columns_mut(n1, n2);
        right += s * &sys2.c;
    }
    let du = DMatrix::identity(m1, m1) + s * &sys2.d * &dy;

    let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
    a.view_mut((0, 0), (n1, n1)).copy_from(&sys1.a);
    a.view_mut((n1, n1), (n2, n2)).copy_from(&sys2.a);
    {
        let mut top = a.rows_mut(0, n1);
        top += &sys1.b * &cu;
    }
    {
        let mut bottom = a.rows_mut(n1, n2);
        bottom += &sys2.b * &cy;
    }
    let mut b = DMatrix::zeros(n1 + n2, m1);
    b.rows_mut(0, n1).copy_from(&(&sys1.b * &du));
    b.rows_mut(n1, n2).copy_from(&(&sys2.b * &dy));

    StateSpace::new(a, b, cy, dy)
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<C64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest singular value of a complex matrix (0 for empty matrices).
pub fn sigma_max(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Largest singular value of a real matrix (0 for empty matrices).
pub fn sigma_max_real(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

/// Inverse that refuses numerically singular matrices (reciprocal condition below 1e-13).
pub(crate) fn checked_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let sv = m.singular_values();
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == 0.0 || lo <= 1e-13 * hi {
        return None;
    }
    m.clone().try_inverse()
}

pub(crate) fn matrix_from_rows(rows: &[&[f64]]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct StateSpaceJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
}

impl Serialize for StateSpace {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        StateSpaceJson {
            a: crate::serde_ext::matrix_rows::to_rows(&self.a),
            b: crate::serde_ext::matrix_rows::to_rows(&self.b),
            c: crate::serde_ext::matrix_rows::to_rows(&self.c),
            d: crate::serde_ext::matrix_rows::to_rows(&self.d),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StateSpace {
    fn deserialize<De: Deserializer<'de>>(deserializer: De) -> std::result::Result<Self, De::Error> {
        use serde::de::Error as _;
        let raw = StateSpaceJson::deserialize(deserializer)?;
        // Empty row lists lose their column count; recover it from the other blocks.
        let d = crate::serde_ext::matrix_rows::from_rows(&raw.d, 0)
            .map_err(|e| De::Error::custom(format!("matrix D: {e}")))?;
        let n = raw.a.len();
        let a = crate::serde_ext::matrix_rows::from_rows(&raw.a, 0)
            .map_err(|e| De::Error::custom(format!("matrix A: {e}")))?;
        let b = crate::serde_ext::matrix_rows::from_rows(&raw.b, d.ncols())
            .map_err(|e| De::Error::custom(format!("matrix B: {e}")))?;
        let c = if n == 0 && raw.c.is_empty() {
            DMatrix::zeros(d.nrows(), 0)
        } else {
            crate::serde_ext::matrix_rows::from_rows(&raw.c, n)
                .map_err(|e| De::Error::custom(format!("matrix C: {e}")))?
        };
        StateSpace::new(a, b, c, d).map_err(De::Error::custom)
    }
}
