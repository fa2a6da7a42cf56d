//! Passive destabilizers for stable non-passive plants.
//!
//! Given a Hurwitz square `G` that is not passive, the Cayley transform
//! `S = (G - I)(G + I)⁻¹` has `‖S‖∞ = σ₁ > 1`. At the peak frequency `ω₀`
//! with `S(jω₀) = U Σ V*`, the rank-one perturbation
//!
//! ```text
//! Δ(s) = -(1/σ₁) a(s) b(s)ᵀ,   a(jω₀) = v₁,  b(jω₀)ᵀ = u₁*
//! ```
//!
//! built from first-order all-pass factors has `‖Δ‖∞ = 1/σ₁ < 1` and makes
//! `I + S(jω₀)Δ(jω₀) = I - u₁u₁*` singular. Mapping back through
//! `R = (I + Δ)(I - Δ)⁻¹` gives a passive `R` with `det(I + R(jω₀)G(jω₀)) = 0`,
//! so the negative-feedback loop `[G, R]` has a pole at `jω₀`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{
    cayley_g_to_s, cayley_s_to_r, feedback_interconnect, hinf_norm, is_hurwitz, is_passive,
    spectrum_is_hurwitz, FrequencyGrid, HinfResult, LoopSign, PassivityCertificate, StateSpace, C64,
    DEFAULT_HINF_TOL, POSITIVE_REAL_TOL,
};

/// Phases closer than this to `-π` need a pole within `ω₀·5e-7` of the origin.
const NEAR_PI: f64 = 1e-6;
/// Entry phases within this distance of `0` or `π` are snapped onto the real axis.
const PHASE_SNAP: f64 = 1e-12;
/// Entries of the singular vectors below this magnitude contribute nothing.
const ZERO_ENTRY: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AllPassPole {
    /// Phase 0: the factor is the constant `+1`.
    Constant,
    /// Pole at `-β`, factor `(β - s)/(β + s)`.
    Finite(f64),
}

/// One scalar entry `±magnitude · (β - s)/(β + s)` of a rank-one all-pass bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllPassFactor {
    pub magnitude: f64,
    /// Entries with phase in `(0, π]` are realized as `-magnitude` times a factor of phase `φ - π`.
    pub negated: bool,
    /// Phase of the all-pass part at `ω₀`, in `(-π, 0]`.
    pub phase: f64,
    pub pole: AllPassPole,
}

impl AllPassFactor {
    pub fn zero() -> Self {
        Self {
            magnitude: 0.0,
            negated: false,
            phase: 0.0,
            pole: AllPassPole::Constant,
        }
    }

    pub fn signed_gain(&self) -> f64 {
        if self.negated {
            -self.magnitude
        } else {
            self.magnitude
        }
    }

    pub fn has_state(&self) -> bool {
        self.magnitude > 0.0 && matches!(self.pole, AllPassPole::Finite(_))
    }

    pub fn near_pi(&self) -> bool {
        self.has_state() && self.phase < -PI + NEAR_PI
    }

    pub fn response(&self, omega: f64) -> C64 {
        let unit = match self.pole {
            AllPassPole::Constant => C64::new(1.0, 0.0),
            AllPassPole::Finite(beta) => C64::new(beta, -omega) / C64::new(beta, omega),
        };
        unit * self.signed_gain()
    }
}

/// Pole `β` of the all-pass factor `(β - s)/(β + s)` whose phase at `ω₀` is `theta`.
///
/// `∠(β - jω₀)/(β + jω₀) = -2·atan(ω₀/β)`, so `β = ω₀ / tan(-θ/2)`.
pub fn phase_to_allpass(theta: f64, omega0: f64) -> Result<AllPassPole> {
    if !(omega0 > 0.0 && omega0.is_finite()) {
        return Err(Error::InvalidArgument(format!("ω₀ must be positive and finite, got {omega0}")));
    }
    if !(theta > -PI && theta <= 0.0) {
        return Err(Error::PhaseOutOfRange { theta });
    }
    if theta == 0.0 {
        return Ok(AllPassPole::Constant);
    }
    Ok(AllPassPole::Finite(omega0 / (-theta / 2.0).tan()))
}

/// Realize the complex number `entry` as the value at `ω₀` of a signed all-pass factor.
pub fn allpass_for_entry(entry: C64, omega0: f64) -> Result<AllPassFactor> {
    let magnitude = entry.norm();
    if magnitude < ZERO_ENTRY {
        return Ok(AllPassFactor::zero());
    }
    let mut phi = entry.im.atan2(entry.re);
    if phi.abs() < PHASE_SNAP {
        phi = 0.0;
    } else if PI - phi.abs() < PHASE_SNAP {
        phi = PI;
    }
    let (negated, phase) = if phi > 0.0 { (true, phi - PI) } else { (false, phi) };
    Ok(AllPassFactor {
        magnitude,
        negated,
        phase,
        pole: phase_to_allpass(phase, omega0)?,
    })
}

/// Dominant singular triple of `S(jω₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSvd {
    pub sigma1: f64,
    pub sigma2: Option<f64>,
    pub u1: DVector<C64>,
    pub v1: DVector<C64>,
    /// `σ₁` repeated within relative 1e-8; the first triple is used.
    pub degenerate: bool,
}

pub fn svd_at_peak(s: &StateSpace, omega0: f64) -> Result<PeakSvd> {
    if !omega0.is_finite() {
        return Err(Error::InvalidArgument("ω₀ must be finite".into()));
    }
    let resp = s.eval_frequency(omega0)?;
    if resp.is_empty() {
        return Err(Error::DimensionMismatch("empty frequency response".into()));
    }
    let svd = resp.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::IllPosed("SVD did not return singular vectors".into())),
    };
    let sv = &svd.singular_values;
    let idx = sv.iamax();
    let sigma1 = sv[idx];
    let sigma2 = sv
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != idx)
        .map(|(_, v)| *v)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    let mut u1: DVector<C64> = u.column(idx).into_owned();
    let mut v1: DVector<C64> = v_t.row(idx).adjoint();

    // Common rotation (leaves v₁u₁* unchanged): largest entry of v₁ real positive.
    let k = (0..v1.len()).max_by(|&i, &j| v1[i].norm().total_cmp(&v1[j].norm())).unwrap_or(0);
    if v1[k].norm() > 0.0 {
        let rot = v1[k].conj() / v1[k].norm();
        v1 *= rot;
        u1 *= rot;
    }
    let degenerate = sigma2.is_some_and(|s2| s2 >= sigma1 * (1.0 - 1e-8));
    Ok(PeakSvd {
        sigma1,
        sigma2,
        u1,
        v1,
        degenerate,
    })
}

/// Rank-one all-pass perturbation with `‖Δ‖∞ = 1/σ₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneDelta {
    pub sigma1: f64,
    pub omega0: f64,
    /// Factors realizing the entries of `u₁*`.
    pub row_factors: Vec<AllPassFactor>,
    /// Factors realizing the entries of `-v₁`.
    pub col_factors: Vec<AllPassFactor>,
    pub realization: StateSpace,
}

impl RankOneDelta {
    pub fn near_pi_count(&self) -> usize {
        self.row_factors.iter().chain(&self.col_factors).filter(|f| f.near_pi()).count()
    }
}

/// Build `Δ(s)` with `Δ(jω₀) = -(1/σ₁) v₁ u₁*`.
pub fn build_delta(sigma1: f64, omega0: f64, u1: &DVector<C64>, v1: &DVector<C64>) -> Result<RankOneDelta> {
    if sigma1.is_nan() || sigma1 <= 1.0 {
        return Err(Error::InvalidArgument(format!("σ₁ must exceed 1, got {sigma1}")));
    }
    if u1.len() != v1.len() {
        return Err(Error::DimensionMismatch("u₁ and v₁ differ in length".into()));
    }
    let m = u1.len();
    let row_factors = u1
        .iter()
        .map(|e| allpass_for_entry(e.conj(), omega0))
        .collect::<Result<Vec<_>>>()?;
    let col_factors = v1
        .iter()
        .map(|e| allpass_for_entry(-e, omega0))
        .collect::<Result<Vec<_>>>()?;

    let pole = |f: &AllPassFactor| match f.pole {
        AllPassPole::Finite(b) => b,
        AllPassPole::Constant => unreachable!("constant factors carry no state"),
    };
    let row_states: Vec<usize> = (0..m).filter(|&k| row_factors[k].has_state()).collect();
    let col_states: Vec<usize> = (0..m).filter(|&i| col_factors[i].has_state()).collect();
    let (nr, nc) = (row_states.len(), col_states.len());

    // Row bank: u ∈ ℝᵐ ↦ scalar r = Cr x + Dr u, ẋ = Ar x + Br u.
    let mut ar = DMatrix::zeros(nr, nr);
    let mut br = DMatrix::zeros(nr, m);
    let mut cr = DMatrix::zeros(1, nr);
    let mut dr = DMatrix::zeros(1, m);
    for (j, &k) in row_states.iter().enumerate() {
        let beta = pole(&row_factors[k]);
        ar[(j, j)] = -beta;
        br[(j, k)] = 1.0;
        cr[(0, j)] = 2.0 * beta * row_factors[k].signed_gain();
    }
    for (k, f) in row_factors.iter().enumerate() {
        dr[(0, k)] = if f.has_state() { -f.signed_gain() } else { f.signed_gain() };
    }

    // Column bank: scalar r' ↦ y ∈ ℝᵐ, y = Cc ξ + Dc r', ξ' = Ac ξ + Bc r'.
    let mut ac = DMatrix::zeros(nc, nc);
    let bc = DMatrix::from_element(nc, 1, 1.0);
    let mut cc = DMatrix::zeros(m, nc);
    let mut dc = DMatrix::zeros(m, 1);
    for (j, &i) in col_states.iter().enumerate() {
        let alpha = pole(&col_factors[i]);
        ac[(j, j)] = -alpha;
        cc[(i, j)] = 2.0 * alpha * col_factors[i].signed_gain();
    }
    for (i, f) in col_factors.iter().enumerate() {
        dc[(i, 0)] = if f.has_state() { -f.signed_gain() } else { f.signed_gain() };
    }

    // Cascade row bank -> 1/σ₁ -> column bank, column states first.
    let inv = 1.0 / sigma1;
    let n = nc + nr;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (nc, nc)).copy_from(&ac);
    a.view_mut((0, nc), (nc, nr)).copy_from(&(&bc * &cr * inv));
    a.view_mut((nc, nc), (nr, nr)).copy_from(&ar);
    let mut b = DMatrix::zeros(n, m);
    b.rows_mut(0, nc).copy_from(&(&bc * &dr * inv));
    b.rows_mut(nc, nr).copy_from(&br);
    let mut c = DMatrix::zeros(m, n);
    c.columns_mut(0, nc).copy_from(&cc);
    c.columns_mut(nc, nr).copy_from(&(&dc * &cr * inv));
    let d = &dc * &dr * inv;

    Ok(RankOneDelta {
        sigma1,
        omega0,
        row_factors,
        col_factors,
        realization: StateSpace::new(a, b, c, d)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub unstable: bool,
    /// `I + D_R D_G` is singular: the loop has no proper realization.
    pub ill_posed: bool,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub max_real_part: f64,
    /// Distance from the closed-loop spectrum to `{+jω₀, -jω₀}`.
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub distance_to_omega0: f64,
    /// Closed-loop eigenvalues as `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
}

/// Spectrum summary of a closed loop; `unstable` uses the same margin as [`is_hurwitz`].
pub fn verify_instability(closed: &StateSpace, omega0: f64) -> InstabilityReport {
    let mut eigs = closed.poles();
    eigs.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    let max_real_part = eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let distance_to_omega0 = eigs
        .iter()
        .map(|l| (l - C64::new(0.0, omega0)).norm().min((l - C64::new(0.0, -omega0)).norm()))
        .fold(f64::INFINITY, f64::min);
    InstabilityReport {
        unstable: !spectrum_is_hurwitz(&eigs),
        ill_posed: false,
        max_real_part,
        distance_to_omega0,
        eigenvalues: eigs.iter().map(|l| [l.re, l.im]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Rank-one all-pass Δ at the Cayley peak, mapped back to R.
    SmallGainDelta,
    /// The Cayley transform itself is unstable (`G + I` has a zero in the closed
    /// right half plane), so unit feedback `R = I` already destabilizes.
    UnitFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestabilizerReport {
    pub construction: Construction,
    pub sigma1: Option<f64>,
    pub omega0: f64,
    pub cayley_hinf: Option<HinfResult>,
    pub degenerate_peak: bool,
    pub near_pi_phases: usize,
    /// `|det(I + S(jω₀)Δ(jω₀))|`.
    pub det_residual_s_delta: Option<f64>,
    /// `|det(I + R(jω₀)G(jω₀))|`.
    pub det_residual_rg: f64,
    /// `1 - 1/σ₁`: distance of `Δ` from the unit ball boundary.
    pub small_gain_margin: Option<f64>,
    pub closed_loop: InstabilityReport,
    pub r_certificate: PassivityCertificate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Destabilizer {
    pub r: StateSpace,
    pub delta: Option<RankOneDelta>,
    /// `None` when the loop is algebraically ill-posed.
    pub closed_loop: Option<StateSpace>,
    pub report: DestabilizerReport,
}

impl InstabilityReport {
    fn ill_posed() -> Self {
        Self {
            unstable: true,
            ill_posed: true,
            max_real_part: f64::INFINITY,
            distance_to_omega0: 0.0,
            eigenvalues: Vec::new(),
        }
    }
}

/// Negative-feedback loop `[G, R]` and its spectrum. A singular algebraic loop
/// (possible when both feedthroughs are nonzero) counts as unstable.
pub fn close_loop(g: &StateSpace, r: &StateSpace, omega0: f64) -> Result<(Option<StateSpace>, InstabilityReport)> {
    match feedback_interconnect(g, r, LoopSign::Negative) {
        Ok(cl) => {
            let rep = verify_instability(&cl, omega0);
            Ok((Some(cl), rep))
        }
        Err(Error::IllPosed(_)) => Ok((None, InstabilityReport::ill_posed())),
        Err(e) => Err(e),
    }
}

pub fn construct_passive_destabilizer(g: &StateSpace) -> Result<Destabilizer> {
    construct_passive_destabilizer_on(g, &FrequencyGrid::default())
}

/// As [`construct_passive_destabilizer`], with `grid` used for the fallback
/// frequency search and the certificate of `R`.
pub fn construct_passive_destabilizer_on(g: &StateSpace, grid: &FrequencyGrid) -> Result<Destabilizer> {
    let m = g.require_square()?;
    if !is_hurwitz(g) {
        return Err(Error::NotStable);
    }
    let s = cayley_g_to_s(g)?;

    if !is_hurwitz(&s) {
        let r = StateSpace::static_gain(DMatrix::identity(m, m));
        let closed = feedback_interconnect(g, &r, LoopSign::Negative)?;
        let rightmost = closed
            .poles()
            .into_iter()
            .max_by(|x, y| x.re.total_cmp(&y.re))
            .ok_or_else(|| Error::IllPosed("closed loop has no states".into()))?;
        let omega0 = rightmost.im.abs();
        let det_residual_rg = det_residual_rg(g, &r, rightmost)?;
        return Ok(Destabilizer {
            report: DestabilizerReport {
                construction: Construction::UnitFeedback,
                sigma1: None,
                omega0,
                cayley_hinf: None,
                degenerate_peak: false,
                near_pi_phases: 0,
                det_residual_s_delta: None,
                det_residual_rg,
                small_gain_margin: None,
                closed_loop: verify_instability(&closed, omega0),
                r_certificate: is_passive(&r, grid)?,
            },
            r,
            delta: None,
            closed_loop: Some(closed),
        });
    }

    let hinf = hinf_norm(&s, DEFAULT_HINF_TOL)?;
    if hinf.norm <= 1.0 + POSITIVE_REAL_TOL {
        return Err(Error::AlreadyPassive { cayley_norm: hinf.norm });
    }
    let omega0 = select_omega0(&s, &hinf, grid)?;
    let peak = svd_at_peak(&s, omega0)?;
    let delta = build_delta(peak.sigma1, omega0, &peak.u1, &peak.v1)?;
    let r = cayley_s_to_r(&delta.realization)?;

    let s0 = s.eval_frequency(omega0)?;
    let d0 = delta.realization.eval_frequency(omega0)?;
    let det_s_delta = (DMatrix::<C64>::identity(m, m) + &s0 * &d0).determinant().norm();
    let det_rg = det_residual_rg(g, &r, C64::new(0.0, omega0))?;
    let (closed, closed_report) = close_loop(g, &r, omega0)?;

    Ok(Destabilizer {
        report: DestabilizerReport {
            construction: Construction::SmallGainDelta,
            sigma1: Some(peak.sigma1),
            omega0,
            cayley_hinf: Some(hinf),
            degenerate_peak: peak.degenerate,
            near_pi_phases: delta.near_pi_count(),
            det_residual_s_delta: Some(det_s_delta),
            det_residual_rg: det_rg,
            small_gain_margin: Some(1.0 - 1.0 / peak.sigma1),
            closed_loop: closed_report,
            r_certificate: is_passive(&r, grid)?,
        },
        r,
        delta: Some(delta),
        closed_loop: closed,
    })
}

fn det_residual_rg(g: &StateSpace, r: &StateSpace, s: C64) -> Result<f64> {
    let m = g.inputs();
    let gs = g.eval_laplace(s)?;
    let rs = r.eval_laplace(s)?;
    Ok((rs * gs + DMatrix::<C64>::identity(m, m)).determinant().norm())
}

/// The H∞ peak frequency when it is interior; otherwise the grid frequency
/// with the largest gain above one.
fn select_omega0(s: &StateSpace, hinf: &HinfResult, grid: &FrequencyGrid) -> Result<f64> {
    if hinf.peak_freq.is_finite() && hinf.peak_freq > 0.0 {
        return Ok(hinf.peak_freq);
    }
    if s.states() == 0 {
        return Ok(1.0);
    }
    grid.points()
        .iter()
        .filter_map(|&w| s.gain_at(w).ok().map(|g| (w, g)))
        .filter(|&(_, g)| g > 1.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(w, _)| w)
        .ok_or_else(|| Error::IllPosed("no interior frequency with ‖S(jω)‖ > 1".into()))
}
