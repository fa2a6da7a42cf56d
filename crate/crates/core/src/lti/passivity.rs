//! Passivity certificates through two frequency-domain routes.
//!
//! A stable square LTI system is passive (positive real, equivalently the
//! KYP/positive-real LMI `[AᵀP+PA, PB-Cᵀ; BᵀP-C, -(D+Dᵀ)] ≤ 0` is feasible
//! with `P > 0`) iff `G(jω) + G(jω)* ⪰ 0` for all ω. That LMI is not solved
//! here. Instead the certificate combines
//!
//! 1. a sampled test of `λ_min(G(jω) + G(jω)*)` on a frequency grid, and
//! 2. the H∞ norm of the Cayley transform `S = (G - I)(G + I)⁻¹`, which is
//!    at most one exactly when `G` is passive.
//!
//! The two routes are pointwise equivalent, so a disagreement only happens
//! near the tolerance boundary or when the grid misses a narrow violation.
//! Both answers are reported.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::{bracket, golden_max, FrequencyGrid};
use super::{cayley_g_to_s, hinf_norm, is_hurwitz, StateSpace, C64, DEFAULT_HINF_TOL, STABILITY_MARGIN};
use crate::error::{Error, Result};

/// Absolute tolerance on `λ_min(G + G*)` and on `‖S‖∞ - 1`.
pub const POSITIVE_REAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Passive,
    NotPassive,
    /// Poles on the imaginary axis and no sampled violation: the frequency
    /// test alone cannot decide.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassivityCertificate {
    pub verdict: Verdict,
    /// Frequency of the most negative `λ_min(G + G*)` when that value is below tolerance.
    #[serde(with = "crate::serde_ext::extended_f64_opt")]
    pub witness_freq: Option<f64>,
    /// Smallest eigenvalue of `G(jω) + G(jω)*` seen over the refined grid.
    pub min_real_eig: f64,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub min_eig_freq: f64,
    /// `‖(G - I)(G + I)⁻¹‖∞`; `inf` when the transform is unstable, `None` when it is ill-posed
    /// or `G` itself is not stable.
    #[serde(with = "crate::serde_ext::extended_f64_opt")]
    pub cayley_norm: Option<f64>,
    #[serde(with = "crate::serde_ext::extended_f64_opt")]
    pub cayley_peak_freq: Option<f64>,
    pub hurwitz: bool,
    pub imaginary_axis_poles: bool,
    /// Set when the sampled and Cayley routes disagree.
    pub conflict: Option<String>,
}

impl PassivityCertificate {
    pub fn is_passive(&self) -> bool {
        self.verdict == Verdict::Passive
    }

    /// `1 - ‖S‖∞` when the Cayley norm is available.
    pub fn small_gain_margin(&self) -> Option<f64> {
        self.cayley_norm.map(|n| 1.0 - n)
    }
}

pub fn is_passive(sys: &StateSpace, grid: &FrequencyGrid) -> Result<PassivityCertificate> {
    sys.require_square()?;
    let poles = sys.poles();
    let rho = poles.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let band = STABILITY_MARGIN * rho.max(1.0);
    let hurwitz = is_hurwitz(sys);
    let unstable = poles.iter().any(|l| l.re > band);
    let marginal = !hurwitz && !unstable;

    let (cayley_norm, cayley_peak_freq) = if hurwitz || marginal {
        cayley_route(sys)?
    } else {
        (None, None)
    };

    let mut points: Vec<f64> = grid.points().to_vec();
    points.push(0.0);
    if let Some(w) = cayley_peak_freq.filter(|w| w.is_finite()) {
        points.push(w);
    }
    let sampled = FrequencyGrid::from_points(points);
    let (mut min_eig, mut min_freq) = (hermitian_min_eig(&feedthrough_sum(sys)), f64::INFINITY);
    let mut min_idx = None;
    for (i, &w) in sampled.points().iter().enumerate() {
        if let Some(v) = min_real_eig_at(sys, w) {
            if v < min_eig {
                min_eig = v;
                min_freq = w;
                min_idx = Some(i);
            }
        }
    }
    if let Some(i) = min_idx.filter(|_| min_freq > 0.0) {
        let (lo, hi) = bracket(sampled.points(), i);
        let (w, neg) = golden_max(|w| min_real_eig_at(sys, w).map(|v| -v), lo, hi, 120);
        if -neg < min_eig {
            min_eig = -neg;
            min_freq = w;
        }
    }

    let grid_ok = min_eig >= -POSITIVE_REAL_TOL;
    let witness_freq = (!grid_ok).then_some(min_freq);
    let mut conflict = None;
    let verdict = if hurwitz {
        match cayley_norm {
            Some(norm) => {
                let cayley_ok = norm <= 1.0 + POSITIVE_REAL_TOL;
                if cayley_ok != grid_ok {
                    conflict = Some(format!(
                        "sampled positive-real test says {} (λ_min = {min_eig:e} at ω = {min_freq}) \
                         but ‖S‖∞ = {norm}",
                        if grid_ok { "passive" } else { "not passive" }
                    ));
                }
                if grid_ok && cayley_ok {
                    Verdict::Passive
                } else {
                    Verdict::NotPassive
                }
            }
            None => {
                conflict = Some("Cayley transform ill-posed (D + I singular); sampled test only".into());
                if grid_ok {
                    Verdict::Passive
                } else {
                    Verdict::NotPassive
                }
            }
        }
    } else if marginal && grid_ok {
        Verdict::NotApplicable
    } else {
        Verdict::NotPassive
    };

    Ok(PassivityCertificate {
        verdict,
        witness_freq,
        min_real_eig: min_eig,
        min_eig_freq: min_freq,
        cayley_norm,
        cayley_peak_freq,
        hurwitz,
        imaginary_axis_poles: marginal,
        conflict,
    })
}

/// δ-passivity of an LTI map: the derivative system `u̇ ↦ ẏ` has the same
/// realization, hence the same certificate.
pub fn is_delta_passive(sys: &StateSpace, grid: &FrequencyGrid) -> Result<PassivityCertificate> {
    is_passive(sys, grid)
}

fn cayley_route(sys: &StateSpace) -> Result<(Option<f64>, Option<f64>)> {
    let s = match cayley_g_to_s(sys) {
        Ok(s) => s,
        Err(Error::IllPosed(_)) => return Ok((None, None)),
        Err(e) => return Err(e),
    };
    if !is_hurwitz(&s) {
        return Ok((Some(f64::INFINITY), None));
    }
    let h = hinf_norm(&s, DEFAULT_HINF_TOL)?;
    Ok((Some(h.norm), Some(h.peak_freq)))
}

fn min_real_eig_at(sys: &StateSpace, w: f64) -> Option<f64> {
    let g = sys.eval_frequency(w).ok()?;
    Some(hermitian_min_eig(&(&g + g.adjoint())))
}

fn feedthrough_sum(sys: &StateSpace) -> DMatrix<C64> {
    let d = sys.d().map(|v| C64::new(v, 0.0));
    &d + d.adjoint()
}

fn hermitian_min_eig(h: &DMatrix<C64>) -> f64 {
    if h.is_empty() {
        return f64::INFINITY;
    }
    h.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}
