//! Bilinear (Cayley) maps between the passive cone and the unit H∞ ball.
//!
//! `S = (G - I)(G + I)⁻¹ = I - 2(G + I)⁻¹` and its inverse
//! `R = (I + Δ)(I - Δ)⁻¹ = 2(I - Δ)⁻¹ - I`. Both are realized through the
//! state-space inverse of `I ± G`, so the state dimension is preserved.

use nalgebra::DMatrix;

use super::{checked_inverse, StateSpace};
use crate::error::{Error, Result};

/// `S = (G - I)(G + I)⁻¹`.
pub fn cayley_g_to_s(g: &StateSpace) -> Result<StateSpace> {
    let m = g.require_square()?;
    let eye = DMatrix::identity(m, m);
    let f = checked_inverse(&(g.d() + &eye))
        .ok_or_else(|| Error::IllPosed("D + I is singular".into()))?;
    // (G + I)⁻¹ = (A - B F C, B F, -F C, F)
    let a = g.a() - g.b() * &f * g.c();
    let b = g.b() * &f;
    let c = 2.0 * &f * g.c();
    let d = eye - 2.0 * &f;
    StateSpace::new(a, b, c, d)
}

/// `R = (I + Δ)(I - Δ)⁻¹`.
pub fn cayley_s_to_r(delta: &StateSpace) -> Result<StateSpace> {
    let m = delta.require_square()?;
    let eye = DMatrix::identity(m, m);
    let e = checked_inverse(&(&eye - delta.d()))
        .ok_or_else(|| Error::IllPosed("I - D is singular".into()))?;
    // (I - Δ)⁻¹ = (A + B E C, B E, E C, E)
    let a = delta.a() + delta.b() * &e * delta.c();
    let b = delta.b() * &e;
    let c = 2.0 * &e * delta.c();
    let d = 2.0 * &e - eye;
    StateSpace::new(a, b, c, d)
}
