//! Closed-loop simulation of evolutionary dynamics with games.
//!
//! The game output `P` drives the dynamic and the dynamic's strategy state `X`
//! drives the game (positive feedback). Alongside the state, the integrator
//! carries the work accumulators `∫xᵀp dt` and `∫p dt` so that storage
//! balances can be checked with the same quadrature as the trajectory.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    equilibrium_phat, linearize, logit1_field, logit2_field, reduce_dynamics, replicator2_field, replicator_field,
    replicator_storage, lossless_residual, DynamicsKind, LinearizationMode,
};
use crate::error::{Error, Result};
use crate::lti::{feedback_interconnect, LoopSign, StateSpace};
use crate::population::{
    paper_logit_game, paper_replicator_game, HigherOrderGame, LinearGame, PopulationGame, SimplexPoint,
    TangentBasis,
};

/// Any state component beyond this magnitude ends the run.
pub const BLOW_UP: f64 = 1e12;
/// Number of windows used by [`instability_metric`].
pub const WINDOWS: usize = 10;
/// Linear loops with an eigenvalue at or right of `-1e-6` are flagged unstable.
pub const CROSSCHECK_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedRk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step for `FixedRk4`, initial step for `AdaptiveRk45`.
    pub dt: f64,
    /// Mixed absolute/relative error target for `AdaptiveRk45`.
    pub tolerance: f64,
    pub t_end: f64,
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::FixedRk4,
            dt: 0.005,
            tolerance: 1e-9,
            t_end: 100.0,
            record_stride: 10,
        }
    }
}

impl IntegratorConfig {
    pub fn fixed(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("T must be positive, got {}", self.t_end)));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidArgument("record stride must be positive".into()));
        }
        if self.method == Method::AdaptiveRk45 && (self.tolerance.is_nan() || self.tolerance <= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Local accuracy scale used as the floor of the instability verdict.
    pub fn accuracy(&self) -> f64 {
        match self.method {
            Method::FixedRk4 => self.dt.powi(4),
            Method::AdaptiveRk45 => self.tolerance,
        }
    }
}

/// Game side of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Game {
    Static(LinearGame),
    HigherOrder(HigherOrderGame),
}

impl Game {
    pub fn strategies(&self) -> usize {
        match self {
            Game::Static(g) => g.strategies(),
            Game::HigherOrder(g) => g.strategies(),
        }
    }

    pub fn internal_states(&self) -> usize {
        match self {
            Game::Static(_) => 0,
            Game::HigherOrder(g) => g.internal_states(),
        }
    }

    /// `(ż, P)` at internal state `z` and strategies `x`.
    fn respond(&self, z: &DVector<f64>, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self {
            Game::Static(g) => (DVector::zeros(0), g.payoff(x)),
            Game::HigherOrder(g) => {
                let r = g.eval(z, x).expect("dimensions validated before integration");
                (r.z_dot, r.payoff)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub x: DVector<f64>,
    /// Auxiliary payoff; required for second-order dynamics, ignored otherwise.
    pub phat: Option<DVector<f64>>,
    pub z: DVector<f64>,
}

/// Recorded closed-loop samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scenario: String,
    pub dynamics: DynamicsKind,
    pub config: IntegratorConfig,
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    /// Empty vectors for first-order dynamics.
    pub phat: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub payoffs: Vec<DVector<f64>>,
    /// `∫₀ᵗ xᵀp dτ`.
    pub work: Vec<f64>,
    /// `∫₀ᵗ p dτ`.
    pub payoff_integral: Vec<DVector<f64>>,
    /// Time at which a component exceeded [`BLOW_UP`]; the run stops there.
    pub blow_up: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn strategies(&self) -> usize {
        self.x.first().map_or(0, |x| x.len())
    }

    pub fn max_simplex_drift(&self) -> f64 {
        self.x.iter().map(|x| (x.sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Packed layout `[x, p̂, z, W, Π]` of the integrated vector.
struct ClosedLoop<'a> {
    kind: DynamicsKind,
    game: &'a Game,
    m: usize,
    h: usize,
    k: usize,
}

impl ClosedLoop<'_> {
    fn len(&self) -> usize {
        2 * self.m + self.h + self.k + 1
    }

    fn x(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(0, self.m).into_owned()
    }
    fn phat(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.m, self.h).into_owned()
    }
    fn z(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.m + self.h, self.k).into_owned()
    }
    fn work(&self, y: &DVector<f64>) -> f64 {
        y[self.m + self.h + self.k]
    }
    fn payoff_integral(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.m + self.h + self.k + 1, self.m).into_owned()
    }

    fn pack(&self, init: &InitialState) -> DVector<f64> {
        let mut y = DVector::zeros(self.len());
        y.rows_mut(0, self.m).copy_from(&init.x);
        if let Some(p) = init.phat.as_ref().filter(|_| self.h > 0) {
            y.rows_mut(self.m, self.h).copy_from(p);
        }
        y.rows_mut(self.m + self.h, self.k).copy_from(&init.z);
        y
    }

    fn payoff(&self, y: &DVector<f64>) -> DVector<f64> {
        self.game.respond(&self.z(y), &self.x(y)).1
    }

    fn rhs(&self, y: &DVector<f64>) -> DVector<f64> {
        let (x, phat, z) = (self.x(y), self.phat(y), self.z(y));
        let (z_dot, p) = self.game.respond(&z, &x);
        let (x_dot, phat_dot) = match self.kind {
            DynamicsKind::Replicator1 => (replicator_field(&x, &p), DVector::zeros(0)),
            DynamicsKind::Logit1 => (logit1_field(&x, &p), DVector::zeros(0)),
            DynamicsKind::Replicator2 => replicator2_field(&x, &phat, &p),
            DynamicsKind::Logit2 => logit2_field(&x, &phat, &p),
        };
        let mut dy = DVector::zeros(self.len());
        let (m, h, k) = (self.m, self.h, self.k);
        dy.rows_mut(0, m).copy_from(&x_dot);
        dy.rows_mut(m, h).copy_from(&phat_dot);
        dy.rows_mut(m + h, k).copy_from(&z_dot);
        dy[m + h + k] = x.dot(&p);
        dy.rows_mut(m + h + k + 1, m).copy_from(&p);
        dy
    }

    fn record(&self, traj: &mut Trajectory, t: f64, y: &DVector<f64>) {
        traj.times.push(t);
        traj.x.push(self.x(y));
        traj.phat.push(self.phat(y));
        traj.z.push(self.z(y));
        traj.payoffs.push(self.payoff(y));
        traj.work.push(self.work(y));
        traj.payoff_integral.push(self.payoff_integral(y));
    }
}

fn rk4_step(f: &impl Fn(&DVector<f64>) -> DVector<f64>, y: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = f(y);
    let k2 = f(&(y + &k1 * (h / 2.0)));
    let k3 = f(&(y + &k2 * (h / 2.0)));
    let k4 = f(&(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One Dormand–Prince 5(4) step; returns the fifth-order solution and the error estimate.
fn dopri_step(f: &impl Fn(&DVector<f64>) -> DVector<f64>, y: &DVector<f64>, h: f64) -> (DVector<f64>, DVector<f64>) {
    const A: [&[f64]; 6] = [
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(f(y));
    for row in A {
        let mut stage = y.clone();
        for (j, &a) in row.iter().enumerate() {
            if a != 0.0 {
                stage.axpy(h * a, &k[j], 1.0);
            }
        }
        k.push(f(&stage));
    }
    // The last stage point is the fifth-order solution (first same as last).
    let mut y5 = y.clone();
    for (j, &b) in A[5].iter().enumerate() {
        y5.axpy(h * b, &k[j], 1.0);
    }
    let mut err = DVector::zeros(y.len());
    for j in 0..7 {
        let b5 = if j < 6 { A[5][j] } else { 0.0 };
        err.axpy(h * (b5 - B4[j]), &k[j], 1.0);
    }
    (y5, err)
}

fn blown_up(y: &DVector<f64>) -> bool {
    y.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP)
}

pub fn integrate(
    kind: DynamicsKind,
    game: &Game,
    init: &InitialState,
    cfg: &IntegratorConfig,
    scenario: &str,
) -> Result<Trajectory> {
    cfg.validate()?;
    let m = game.strategies();
    let k = game.internal_states();
    SimplexPoint::new(init.x.clone())?;
    if init.x.len() != m {
        return Err(Error::DimensionMismatch(format!("x₀ has {} entries, game has {m}", init.x.len())));
    }
    if init.z.len() != k {
        return Err(Error::DimensionMismatch(format!("z₀ has {} entries, game has {k} states", init.z.len())));
    }
    let h = if kind.is_second_order() { m } else { 0 };
    if h > 0 && init.phat.as_ref().is_none_or(|p| p.len() != m) {
        return Err(Error::DimensionMismatch(format!("second-order dynamics need p̂₀ with {m} entries")));
    }

    let lp = ClosedLoop { kind, game, m, h, k };
    let f = |y: &DVector<f64>| lp.rhs(y);
    let mut traj = Trajectory {
        scenario: scenario.to_string(),
        dynamics: kind,
        config: *cfg,
        times: Vec::new(),
        x: Vec::new(),
        phat: Vec::new(),
        z: Vec::new(),
        payoffs: Vec::new(),
        work: Vec::new(),
        payoff_integral: Vec::new(),
        blow_up: None,
    };
    let mut y = lp.pack(init);
    lp.record(&mut traj, 0.0, &y);

    match cfg.method {
        Method::FixedRk4 => {
            let steps = ((cfg.t_end / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
            for i in 0..steps {
                let t0 = i as f64 * cfg.dt;
                let t1 = ((i + 1) as f64 * cfg.dt).min(cfg.t_end);
                y = rk4_step(&f, &y, t1 - t0);
                if blown_up(&y) {
                    traj.blow_up = Some(t1);
                    break;
                }
                if (i + 1) % cfg.record_stride == 0 || i + 1 == steps {
                    lp.record(&mut traj, t1, &y);
                }
            }
        }
        Method::AdaptiveRk45 => {
            let tol = cfg.tolerance;
            let (mut t, mut step) = (0.0, cfg.dt.min(cfg.t_end));
            let mut accepted = 0usize;
            while t < cfg.t_end {
                let last = t + step >= cfg.t_end;
                let hh = if last { cfg.t_end - t } else { step };
                let (y_new, err) = dopri_step(&f, &y, hh);
                let norm = (err
                    .iter()
                    .zip(y.iter().zip(y_new.iter()))
                    .map(|(e, (a, b))| (e / (tol + tol * a.abs().max(b.abs()))).powi(2))
                    .sum::<f64>()
                    / y.len() as f64)
                    .sqrt();
                if norm.is_finite() && norm <= 1.0 {
                    t = if last { cfg.t_end } else { t + hh };
                    y = y_new;
                    accepted += 1;
                    if blown_up(&y) {
                        traj.blow_up = Some(t);
                        break;
                    }
                    if accepted.is_multiple_of(cfg.record_stride) || t >= cfg.t_end {
                        lp.record(&mut traj, t, &y);
                    }
                }
                let factor = if norm.is_finite() && norm > 0.0 { 0.9 * norm.powf(-0.2) } else { 0.2 };
                step = hh * factor.clamp(0.2, 5.0);
                if step < 1e-14 * (1.0 + t.abs()) {
                    return Err(Error::Integration {
                        t,
                        reason: "step size underflow".into(),
                    });
                }
            }
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convergence {
    Convergent,
    NonConvergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityMetric {
    pub window_rms: Vec<f64>,
    pub final_rms: f64,
    pub max_rms: f64,
    /// Deviations below `10 ×` this value count as converged.
    pub accuracy: f64,
    pub blow_up: bool,
    pub verdict: Convergence,
}

/// Split `deviation` into [`WINDOWS`] windows and compare the last window's
/// RMS with the largest one.
pub fn window_verdict(deviation: &[f64], accuracy: f64) -> Result<InstabilityMetric> {
    if deviation.len() < WINDOWS {
        return Err(Error::InvalidArgument(format!(
            "need at least {WINDOWS} samples, got {}",
            deviation.len()
        )));
    }
    let n = deviation.len();
    let window_rms: Vec<f64> = (0..WINDOWS)
        .map(|w| {
            let chunk = &deviation[w * n / WINDOWS..(w + 1) * n / WINDOWS];
            (chunk.iter().map(|d| d * d).sum::<f64>() / chunk.len() as f64).sqrt()
        })
        .collect();
    let final_rms = window_rms[WINDOWS - 1];
    let max_rms = window_rms.iter().copied().fold(0.0, f64::max);
    let verdict = if final_rms >= 0.5 * max_rms && final_rms >= 10.0 * accuracy {
        Convergence::NonConvergent
    } else {
        Convergence::Convergent
    };
    Ok(InstabilityMetric {
        window_rms,
        final_rms,
        max_rms,
        accuracy,
        blow_up: false,
        verdict,
    })
}

/// Equilibrium of the dynamic side of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x: Vec<f64>,
    /// Empty for first-order dynamics.
    pub phat: Vec<f64>,
}

/// Deviation `‖(x - x*, Nᵀ(p̂ - p̂*))‖` per sample. Only the tangent part of
/// `p̂` counts since both dynamics ignore uniform shifts of `p̂`.
pub fn instability_metric(traj: &Trajectory, eq: &Equilibrium) -> Result<InstabilityMetric> {
    let m = traj.strategies();
    if eq.x.len() != m {
        return Err(Error::DimensionMismatch("equilibrium has the wrong number of strategies".into()));
    }
    let basis = TangentBasis::new(m)?;
    let xs = DVector::from_column_slice(&eq.x);
    let ps = DVector::from_column_slice(&eq.phat);
    let deviation: Vec<f64> = (0..traj.len())
        .map(|i| {
            let dx = (&traj.x[i] - &xs).norm_squared();
            let dp = if ps.len() == traj.phat[i].len() && !ps.is_empty() {
                basis.project(&(&traj.phat[i] - &ps)).norm_squared()
            } else {
                0.0
            };
            (dx + dp).sqrt()
        })
        .collect();
    let mut metric = window_verdict(&deviation, traj.config.accuracy())?;
    if traj.blow_up.is_some() {
        metric.blow_up = true;
        metric.verdict = Convergence::NonConvergent;
    }
    Ok(metric)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCrosscheck {
    pub sign: LoopSign,
    /// `[re, im]`, sorted by decreasing real part.
    pub eigenvalues: Vec<[f64; 2]>,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub max_real_part: f64,
    pub unstable: bool,
    pub closed_loop: StateSpace,
}

/// Spectrum of the linear loop `[reduced dynamics, game internal]`.
pub fn linear_crosscheck(reduced: &StateSpace, internal: &StateSpace, sign: LoopSign) -> Result<LinearCrosscheck> {
    let closed = feedback_interconnect(reduced, internal, sign)?;
    let mut eigs = closed.poles();
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let max_real_part = eigs.first().map_or(f64::NEG_INFINITY, |l| l.re);
    Ok(LinearCrosscheck {
        sign,
        eigenvalues: eigs.iter().map(|l| [l.re, l.im]).collect(),
        max_real_part,
        unstable: max_real_part >= -CROSSCHECK_MARGIN,
        closed_loop: closed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    LogitCounterexample,
    ReplicatorCounterexample,
    RpsLossless,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Self::LogitCounterexample, Self::ReplicatorCounterexample, Self::RpsLossless];

    pub fn name(self) -> &'static str {
        match self {
            Self::LogitCounterexample => "logit_counterexample",
            Self::ReplicatorCounterexample => "replicator_counterexample",
            Self::RpsLossless => "rps_lossless",
        }
    }

    pub fn dynamics(self) -> DynamicsKind {
        match self {
            Self::LogitCounterexample => DynamicsKind::Logit2,
            Self::ReplicatorCounterexample => DynamicsKind::Replicator2,
            Self::RpsLossless => DynamicsKind::Replicator1,
        }
    }

    /// Game in the positive-feedback loop. The constructed logit game is
    /// passive, so the loop uses its negation.
    pub fn game(self) -> Game {
        match self {
            Self::LogitCounterexample => Game::HigherOrder(paper_logit_game().negated()),
            Self::ReplicatorCounterexample => Game::HigherOrder(paper_replicator_game()),
            Self::RpsLossless => Game::Static(LinearGame::rock_paper_scissors()),
        }
    }

    /// `x₀ = x* + 0.01·N e₁` for the counterexamples, a wide orbit for RPS.
    pub fn default_x0(self) -> DVector<f64> {
        match self {
            Self::RpsLossless => DVector::from_column_slice(&[0.6, 0.25, 0.15]),
            _ => {
                let basis = TangentBasis::new(3).expect("m = 3");
                SimplexPoint::uniform(3).into_vector() + basis.matrix().column(0) * 0.01
            }
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub dynamics: DynamicsKind,
    pub integrator: IntegratorConfig,
    pub x0: Vec<f64>,
    pub equilibrium: Equilibrium,
    pub samples: usize,
    #[serde(with = "crate::serde_ext::extended_f64_opt")]
    pub blow_up_time: Option<f64>,
    pub max_simplex_drift: f64,
    pub instability: InstabilityMetric,
    /// Linearized loop with the stated matrices (counterexamples only).
    pub linear_crosscheck: Option<LinearCrosscheck>,
    /// Linearized loop with the exact Jacobians of the simulated fields.
    pub linear_crosscheck_analytic: Option<LinearCrosscheck>,
    pub lossless_residual: Option<f64>,
    /// `max_t |V(x(t)) - V(x(0))|` for the RPS control run.
    pub storage_drift: Option<f64>,
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub trajectory: Trajectory,
    pub report: ScenarioReport,
}

pub fn scenario_initial_state(scenario: Scenario, x0: &DVector<f64>) -> Result<(InitialState, Equilibrium)> {
    let game = scenario.game();
    let xstar = SimplexPoint::uniform(game.strategies());
    let kind = scenario.dynamics();
    let phat = if kind.is_second_order() {
        Some(equilibrium_phat(kind, xstar.as_vector())?)
    } else {
        None
    };
    let init = InitialState {
        x: x0.clone(),
        phat: phat.clone(),
        z: DVector::zeros(game.internal_states()),
    };
    let eq = Equilibrium {
        x: xstar.as_vector().as_slice().to_vec(),
        phat: phat.map_or_else(Vec::new, |p| p.as_slice().to_vec()),
    };
    Ok((init, eq))
}

/// Linear loop of the reduced dynamics (in `mode`) with the scenario's game.
pub fn scenario_crosscheck(scenario: Scenario, mode: LinearizationMode) -> Result<Option<LinearCrosscheck>> {
    let Game::HigherOrder(game) = scenario.game() else {
        return Ok(None);
    };
    let lin = linearize(scenario.dynamics(), game.xstar(), mode)?;
    let reduced = reduce_dynamics(&lin, game.basis())?;
    Ok(Some(linear_crosscheck(&reduced, game.internal(), LoopSign::Positive)?))
}

pub fn run_scenario(scenario: Scenario, cfg: &IntegratorConfig, x0: Option<&DVector<f64>>) -> Result<ScenarioOutput> {
    let x0 = x0.cloned().unwrap_or_else(|| scenario.default_x0());
    let (init, eq) = scenario_initial_state(scenario, &x0)?;
    let game = scenario.game();
    let trajectory = integrate(scenario.dynamics(), &game, &init, cfg, scenario.name())?;
    let instability = instability_metric(&trajectory, &eq)?;

    let (lossless, storage_drift) = if scenario.dynamics() == DynamicsKind::Replicator1 {
        let xs = DVector::from_column_slice(&eq.x);
        let v0 = replicator_storage(&trajectory.x[0], &xs)?;
        let drift = trajectory
            .x
            .iter()
            .map(|x| replicator_storage(x, &xs).map(|v| (v - v0).abs()))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        (Some(lossless_residual(&trajectory, &xs)?), Some(drift))
    } else {
        (None, None)
    };

    let max_simplex_drift = trajectory.max_simplex_drift();
    let bounded = trajectory.blow_up.is_none()
        && max_simplex_drift <= 1e-6
        && trajectory.x.iter().all(|x| x.iter().all(|&v| v >= -1e-9));
    let report = ScenarioReport {
        scenario: scenario.name().to_string(),
        dynamics: scenario.dynamics(),
        integrator: *cfg,
        x0: x0.as_slice().to_vec(),
        equilibrium: eq,
        samples: trajectory.len(),
        blow_up_time: trajectory.blow_up,
        max_simplex_drift,
        instability,
        linear_crosscheck: scenario_crosscheck(scenario, LinearizationMode::PaperMatrices)?,
        linear_crosscheck_analytic: scenario_crosscheck(scenario, LinearizationMode::AnalyticJacobian)?,
        lossless_residual: lossless,
        storage_drift,
        bounded,
    };
    Ok(ScenarioOutput { trajectory, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    /// Real part of the dominant eigenvalue of the linearized loop.
    pub linear_rate: f64,
    /// Least-squares slope of `ln‖Lᴴy(t)‖`, with `L` the dominant left eigenspace.
    pub nonlinear_rate: f64,
    pub relative_error: f64,
    pub samples_used: usize,
}

/// Compare the nonlinear closed loop started `deviation` away from equilibrium
/// with the dominant eigenvalue of its exact linearization.
///
/// The reduced state `y = (Nᵀ(x - x*), Nᵀ(p̂ - p̂*), z)` is projected on the
/// left eigenspace of the dominant eigenvalue, which evolves as `e^{λt}` while
/// the loop stays linear. Samples with `‖y‖ > 1e-2` are excluded from the fit.
pub fn growth_rate_check(scenario: Scenario, deviation: f64, horizon: f64, dt: f64) -> Result<GrowthCheck> {
    let Some(cross) = scenario_crosscheck(scenario, LinearizationMode::AnalyticJacobian)? else {
        return Err(Error::InvalidArgument(format!("{} has no linear loop", scenario.name())));
    };
    let a = cross.closed_loop.a();
    let [re, im] = cross.eigenvalues[0];
    let lambda = nalgebra::Complex::new(re, im.abs());
    let shifted = a.map(|v| nalgebra::Complex::new(v, 0.0)) - DMatrix::identity(a.nrows(), a.ncols()) * lambda;
    let svd = shifted.adjoint().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::IllPosed("SVD failed".into()))?;
    let cutoff = 1e-8 * a.norm().max(1.0);
    let left: Vec<_> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .map(|i| v_t.row(i).adjoint())
        .collect();
    if left.is_empty() {
        return Err(Error::IllPosed("dominant left eigenspace not found".into()));
    }

    let basis = TangentBasis::new(3)?;
    let x0 = SimplexPoint::uniform(3).into_vector() + basis.matrix().column(0) * deviation;
    let (init, eq) = scenario_initial_state(scenario, &x0)?;
    let cfg = IntegratorConfig {
        record_stride: 1,
        ..IntegratorConfig::fixed(dt, horizon)
    };
    let traj = integrate(scenario.dynamics(), &scenario.game(), &init, &cfg, scenario.name())?;
    let xs = DVector::from_column_slice(&eq.x);
    let ps = DVector::from_column_slice(&eq.phat);

    let (mut st, mut sy, mut stt, mut sty, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for i in 0..traj.len() {
        let mut y = basis.project(&(&traj.x[i] - &xs)).as_slice().to_vec();
        y.extend_from_slice(basis.project(&(&traj.phat[i] - &ps)).as_slice());
        y.extend_from_slice(traj.z[i].as_slice());
        let y = DVector::from_vec(y).map(|v| nalgebra::Complex::new(v, 0.0));
        if y.norm() > 1e-2 {
            break;
        }
        let amp = left.iter().map(|l| l.dotc(&y).norm_sqr()).sum::<f64>().sqrt();
        let (t, ly) = (traj.times[i], amp.ln());
        st += t;
        sy += ly;
        stt += t * t;
        sty += t * ly;
        n += 1;
    }
    if n < 10 {
        return Err(Error::InvalidArgument("too few samples in the linear regime".into()));
    }
    let nf = n as f64;
    let nonlinear_rate = (nf * sty - st * sy) / (nf * stt - st * st);
    Ok(GrowthCheck {
        linear_rate: re,
        nonlinear_rate,
        relative_error: (nonlinear_rate - re).abs() / re.abs(),
        samples_used: n,
    })
}

/// Barycentric projection of a three-strategy state onto the plane.
pub fn simplex_projection(x: &DVector<f64>) -> Result<(f64, f64)> {
    if x.len() != 3 {
        return Err(Error::DimensionMismatch(format!("projection needs 3 strategies, got {}", x.len())));
    }
    Ok((x[1] + x[2] / 2.0, 3f64.sqrt() / 2.0 * x[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn zero_game() -> Game {
        Game::Static(LinearGame::new(DMatrix::zeros(3, 3)).unwrap())
    }

    #[test]
    fn zero_payoff_keeps_state() {
        let x0 = DVector::from_column_slice(&[0.2, 0.3, 0.5]);
        let init = InitialState {
            x: x0.clone(),
            phat: None,
            z: DVector::zeros(0),
        };
        let traj = integrate(DynamicsKind::Replicator1, &zero_game(), &init, &IntegratorConfig::fixed(0.01, 5.0), "zero").unwrap();
        assert!(traj.x.iter().all(|x| x == &x0));
        assert_eq!(traj.times.last().copied(), Some(5.0));
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rk4_is_fourth_order() {
        // logit1 with zero payoff: x(t) = u + (x₀ - u)e^{-t}
        let u = SimplexPoint::uniform(3).into_vector();
        let x0 = DVector::from_column_slice(&[0.7, 0.2, 0.1]);
        let init = InitialState {
            x: x0.clone(),
            phat: None,
            z: DVector::zeros(0),
        };
        let exact = &u + (&x0 - &u) * (-1.0f64).exp();
        let err = |dt: f64| {
            let t = integrate(DynamicsKind::Logit1, &zero_game(), &init, &IntegratorConfig::fixed(dt, 1.0), "exp").unwrap();
            (t.x.last().unwrap() - &exact).amax()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 15.0 && ratio < 17.0, "ratio {ratio}");
    }

    #[test]
    fn adaptive_matches_fixed() {
        let sc = Scenario::RpsLossless;
        let (init, _) = scenario_initial_state(sc, &sc.default_x0()).unwrap();
        let fixed = integrate(sc.dynamics(), &sc.game(), &init, &IntegratorConfig::fixed(0.001, 5.0), "a").unwrap();
        let cfg = IntegratorConfig {
            method: Method::AdaptiveRk45,
            tolerance: 1e-11,
            dt: 0.01,
            ..IntegratorConfig::fixed(0.01, 5.0)
        };
        let adaptive = integrate(sc.dynamics(), &sc.game(), &init, &cfg, "b").unwrap();
        assert_eq!(adaptive.times.last().copied(), Some(5.0));
        let diff = (fixed.x.last().unwrap() - adaptive.x.last().unwrap()).amax();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn blow_up_truncates() {
        // coordination-like unstable game on the internal state: ż = z, output ignored
        let internal = StateSpace::from_rows(&[&[5.0, 0.0], &[0.0, 5.0]], &[&[0.0, 0.0], &[0.0, 0.0]], &[&[0.0, 0.0], &[0.0, 0.0]], &[&[0.0, 0.0], &[0.0, 0.0]]).unwrap();
        let game = Game::HigherOrder(HigherOrderGame::new(SimplexPoint::uniform(3), DVector::zeros(3), internal).unwrap());
        let init = InitialState {
            x: SimplexPoint::uniform(3).into_vector(),
            phat: None,
            z: DVector::from_column_slice(&[1.0, 1.0]),
        };
        let traj = integrate(DynamicsKind::Replicator1, &game, &init, &IntegratorConfig::fixed(0.01, 100.0), "b").unwrap();
        let t = traj.blow_up.expect("should blow up");
        assert!(t > 5.0 && t < 6.0, "{t}");
        let m = instability_metric(
            &traj,
            &Equilibrium {
                x: vec![1.0 / 3.0; 3],
                phat: vec![],
            },
        )
        .unwrap();
        assert_eq!(m.verdict, Convergence::NonConvergent);
    }

    #[test]
    fn window_verdict_examples() {
        let ts: Vec<f64> = (0..2000).map(|i| i as f64 * 0.01).collect();
        let decay: Vec<f64> = ts.iter().map(|t| (-t).exp()).collect();
        assert_eq!(window_verdict(&decay, 1e-10).unwrap().verdict, Convergence::Convergent);
        let osc: Vec<f64> = ts.iter().map(|t| t.sin()).collect();
        assert_eq!(window_verdict(&osc, 1e-10).unwrap().verdict, Convergence::NonConvergent);
        let tiny: Vec<f64> = ts.iter().map(|t| 1e-12 * t.sin()).collect();
        assert_eq!(window_verdict(&tiny, 1e-10).unwrap().verdict, Convergence::Convergent);
        assert!(window_verdict(&[1.0; 5], 0.0).is_err());
    }

    #[test]
    fn crosscheck_examples() {
        let rep = scenario_crosscheck(Scenario::ReplicatorCounterexample, LinearizationMode::PaperMatrices)
            .unwrap()
            .unwrap();
        assert!(rep.unstable);
        assert_relative_eq!(rep.max_real_part, 0.2327856159383841, epsilon = 1e-10);

        let logit = scenario_crosscheck(Scenario::LogitCounterexample, LinearizationMode::PaperMatrices)
            .unwrap()
            .unwrap();
        assert!(logit.max_real_part >= -1e-6);

        let lin = linearize(DynamicsKind::Logit2, &SimplexPoint::uniform(3), LinearizationMode::PaperMatrices).unwrap();
        let reduced = reduce_dynamics(&lin, &TangentBasis::new(3).unwrap()).unwrap();
        let zero = StateSpace::static_gain(DMatrix::zeros(2, 2));
        let open = linear_crosscheck(&reduced, &zero, LoopSign::Positive).unwrap();
        assert!(open.eigenvalues.iter().all(|[re, im]| (re + 1.0).abs() < 1e-6 && im.abs() < 1e-6));
        assert!(!open.unstable);
    }

    #[test]
    fn scenario_names() {
        for sc in Scenario::ALL {
            assert_eq!(sc.name().parse::<Scenario>().unwrap(), sc);
        }
        assert!(matches!("nope".parse::<Scenario>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn projection_of_vertices() {
        let p = |v: [f64; 3]| simplex_projection(&DVector::from_column_slice(&v)).unwrap();
        assert_eq!(p([1.0, 0.0, 0.0]), (0.0, 0.0));
        assert_eq!(p([0.0, 1.0, 0.0]), (1.0, 0.0));
        let (u, v) = p([0.0, 0.0, 1.0]);
        assert_relative_eq!(u, 0.5);
        assert_relative_eq!(v, 3f64.sqrt() / 2.0);
    }

    #[test]
    fn trajectory_stays_on_simplex() {
        for sc in [Scenario::LogitCounterexample, Scenario::ReplicatorCounterexample] {
            let out = run_scenario(sc, &IntegratorConfig::fixed(0.005, 20.0), None).unwrap();
            assert!(out.report.max_simplex_drift <= 1e-6, "{:?}", sc);
        }
    }
}
