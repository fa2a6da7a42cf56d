use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use antipassive::destabilizer::{construct_passive_destabilizer_on, Construction, DestabilizerReport};
use antipassive::dynamics::{linearize as linearize_at, reduce_dynamics, DynamicsKind, LinearizationMode, LinearizedDynamics};
use antipassive::io::{read_json, to_json_string, write_json, write_scenario_bundle};
use antipassive::lti::{
    hinf_norm, is_delta_passive, is_hurwitz, is_passive, spectral_abscissa, FrequencyGrid, HinfResult,
    PassivityCertificate, StateSpace, DEFAULT_HINF_TOL,
};
use antipassive::population::{
    check_game_antipassive, check_stable_game, GameCertificate, HigherOrderGame, LinearGame, SimplexPoint,
    StableGameReport, TangentBasis,
};
use antipassive::serde_ext::{extended_f64, matrix_rows};
use antipassive::sim::{run_scenario, Convergence, IntegratorConfig, Scenario, ScenarioReport};
use antipassive::Error;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const GRID_ENV: &str = "ANTIPASSIVE_GRID_POINTS";
/// Lossless residual bound at the base step.
pub const LOSSLESS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The command ran but the verdict is negative.
    Negative,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Negative => 1,
        }
    }

    fn from_verdict(ok: bool) -> Self {
        if ok {
            Outcome::Success
        } else {
            Outcome::Negative
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// Error tied to a file argument.
    File(PathBuf, Error),
    /// A construction finished but failed its own post-conditions.
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => e.fmt(f),
            Failure::File(path, e) => write!(f, "{}: {e}", path.display()),
            Failure::Numeric(msg) => f.write_str(msg),
        }
    }
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Numeric(_) => 3,
            Failure::Core(e) | Failure::File(_, e) => match e {
                Error::AlreadyPassive { .. } => 1,
                Error::NotStable
                | Error::IllPosed(_)
                | Error::SingularResolvent { .. }
                | Error::Integration { .. }
                | Error::PhaseOutOfRange { .. } => 3,
                Error::DimensionMismatch(_)
                | Error::NotSquare { .. }
                | Error::ModeUnavailable(_)
                | Error::NonInteriorState { .. }
                | Error::UnknownScenario(_)
                | Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_) => 2,
            },
        }
    }
}

/// Grid size from the flag, then the environment, then the default.
pub fn grid(flag: Option<usize>) -> Result<FrequencyGrid, Failure> {
    let points = match flag {
        Some(n) => n,
        None => match std::env::var(GRID_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{GRID_ENV}={v} is not a positive integer")))?,
            Err(_) => FrequencyGrid::DEFAULT_POINTS,
        },
    };
    if points < 2 {
        return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {points}")).into());
    }
    Ok(FrequencyGrid::log_spaced(1e-3, 1e3, points))
}

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    read_json(path).map_err(|e| Failure::File(path.to_path_buf(), e))
}

fn emit<T: Serialize>(value: &T, json: bool, out: Option<&Path>) -> Result<(), Failure> {
    if let Some(path) = out {
        write_json(path, value).map_err(|e| Failure::File(path.to_path_buf(), e))?;
    }
    if json {
        print!("{}", to_json_string(value)?);
    }
    Ok(())
}

fn vector_arg(values: Option<Vec<f64>>) -> Option<DVector<f64>> {
    values.map(DVector::from_vec)
}

#[derive(Serialize)]
struct Analysis {
    states: usize,
    inputs: usize,
    outputs: usize,
    hurwitz: bool,
    #[serde(with = "extended_f64")]
    spectral_abscissa: f64,
    hinf: Option<HinfResult>,
    passivity: PassivityCertificate,
    delta_passivity: PassivityCertificate,
}

pub fn analyze(system: &Path, grid: &FrequencyGrid, json: bool, out: Option<&Path>) -> Result<Outcome, Failure> {
    let sys: StateSpace = load(system)?;
    let hurwitz = is_hurwitz(&sys);
    let analysis = Analysis {
        states: sys.states(),
        inputs: sys.inputs(),
        outputs: sys.outputs(),
        hurwitz,
        spectral_abscissa: spectral_abscissa(&sys),
        hinf: if hurwitz { Some(hinf_norm(&sys, DEFAULT_HINF_TOL)?) } else { None },
        passivity: is_passive(&sys, grid)?,
        delta_passivity: is_delta_passive(&sys, grid)?,
    };
    emit(&analysis, json, out)?;
    if !json {
        println!("verdict: {:?}", analysis.passivity.verdict);
        println!("delta-passivity: {:?}", analysis.delta_passivity.verdict);
        println!("min eig of G + G*: {:.6e}", analysis.passivity.min_real_eig);
        if let Some(h) = &analysis.hinf {
            println!("H-infinity norm: {:.10} at {:.6} rad/s", h.norm, h.peak_freq);
        }
    }
    if let Some(conflict) = &analysis.passivity.conflict {
        eprintln!("warning: {conflict}");
    }
    Ok(Outcome::from_verdict(analysis.passivity.is_passive()))
}

#[derive(Serialize)]
struct AlreadyPassive {
    verdict: &'static str,
    cayley_norm: f64,
}

pub fn destabilize(
    system: &Path,
    out: Option<&Path>,
    report_path: Option<&Path>,
    grid: &FrequencyGrid,
    json: bool,
) -> Result<Outcome, Failure> {
    let g: StateSpace = load(system)?;
    let built = match construct_passive_destabilizer_on(&g, grid) {
        Ok(d) => d,
        Err(Error::AlreadyPassive { cayley_norm }) => {
            let msg = AlreadyPassive {
                verdict: "already_passive",
                cayley_norm,
            };
            if json {
                print!("{}", to_json_string(&msg)?);
            } else {
                println!("verdict: AlreadyPassive (Cayley H-infinity norm {cayley_norm:.10})");
            }
            return Ok(Outcome::Negative);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = out {
        write_json(path, &built.r).map_err(|e| Failure::File(path.to_path_buf(), e))?;
    }
    let report: &DestabilizerReport = &built.report;
    emit(report, json, report_path)?;
    if !json {
        print_destabilizer(report);
    }
    if !report.r_certificate.is_passive() {
        return Err(Failure::Numeric(format!(
            "constructed R failed its passivity certificate ({:?})",
            report.r_certificate.verdict
        )));
    }
    if !report.closed_loop.unstable {
        return Err(Failure::Numeric(format!(
            "closed loop is asymptotically stable (max Re {:.3e})",
            report.closed_loop.max_real_part
        )));
    }
    Ok(Outcome::Success)
}

fn print_destabilizer(report: &DestabilizerReport) {
    let construction = match report.construction {
        Construction::SmallGainDelta => "small-gain perturbation",
        Construction::UnitFeedback => "unit feedback",
    };
    println!("construction: {construction}");
    println!("omega0: {:.10}", report.omega0);
    if let Some(s) = report.sigma1 {
        println!("sigma1: {s:.10}");
    }
    if let Some(r) = report.det_residual_s_delta {
        println!("|det(I + S Delta)| at j omega0: {r:.3e}");
    }
    println!("|det(I + R G)| at the critical point: {:.3e}", report.det_residual_rg);
    println!("R certificate: {:?}", report.r_certificate.verdict);
    let cl = &report.closed_loop;
    if cl.ill_posed {
        println!("closed loop: algebraic loop is singular");
    } else {
        println!(
            "closed loop: unstable = {}, max Re = {:.3e}, nearest pole to ±j omega0 at distance {:.3e}",
            cl.unstable, cl.max_real_part, cl.distance_to_omega0
        );
    }
}

#[derive(Deserialize)]
struct StaticGameFile {
    #[serde(with = "matrix_rows")]
    payoff_matrix: DMatrix<f64>,
    #[serde(default)]
    offset: Option<Vec<f64>>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GameCheck {
    Static {
        samples: usize,
        seed: u64,
        report: StableGameReport,
    },
    HigherOrder {
        frequency_points: usize,
        orientation: &'static str,
        certificate: GameCertificate,
    },
}

/// Uniform point followed by `count - 1` draws from the flat Dirichlet distribution.
pub fn simplex_samples(m: usize, count: usize, seed: u64) -> Vec<SimplexPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![SimplexPoint::uniform(m)];
    while out.len() < count {
        let e = DVector::from_fn(m, |_, _| -(1.0 - rng.gen::<f64>()).ln());
        let total = e.sum();
        if let Ok(p) = SimplexPoint::new(e / total) {
            out.push(p);
        }
    }
    out
}

pub fn check_game(path: &Path, samples: usize, seed: u64, json: bool, out: Option<&Path>) -> Result<Outcome, Failure> {
    if samples == 0 {
        return Err(Error::InvalidArgument("--samples must be positive".into()).into());
    }
    let raw: serde_json::Value = load(path)?;
    let (check, ok) = if raw.get("payoff_matrix").is_some() {
        let file: StaticGameFile = serde_json::from_value(raw).map_err(Error::from)?;
        let mut game = LinearGame::new(file.payoff_matrix)?;
        if let Some(offset) = file.offset {
            if offset.len() != game.offset.len() {
                return Err(Error::DimensionMismatch("offset length differs from the payoff matrix".into()).into());
            }
            game.offset = DVector::from_vec(offset);
        }
        let m = game.offset.len();
        if m < 2 {
            return Err(Error::InvalidArgument("a game needs at least 2 strategies".into()).into());
        }
        let report = check_stable_game(&game, &simplex_samples(m, samples, seed))?;
        let ok = report.stable;
        (GameCheck::Static { samples, seed, report }, ok)
    } else {
        let game: HigherOrderGame = serde_json::from_value(raw).map_err(Error::from)?;
        let grid = FrequencyGrid::log_spaced(1e-3, 1e3, samples.max(2));
        let certificate = check_game_antipassive(&game, &grid)?;
        let orientation = match (certificate.anti_passive, certificate.passive) {
            (true, true) => "both",
            (true, false) => "anti_passive",
            (false, true) => "passive",
            (false, false) => "neither",
        };
        let ok = orientation != "neither";
        (
            GameCheck::HigherOrder {
                frequency_points: grid.len(),
                orientation,
                certificate,
            },
            ok,
        )
    };
    emit(&check, json, out)?;
    if !json {
        match &check {
            GameCheck::Static { report, .. } => {
                println!("verdict: {}", if report.stable { "Stable" } else { "NotStable" });
                println!("max eigenvalue of sym(N^T DF N): {:.6e}", report.max_eigenvalue);
            }
            GameCheck::HigherOrder { orientation, certificate, .. } => {
                println!("orientation: {orientation}");
                println!("negated internal: {:?}", certificate.negated.verdict);
                println!("internal: {:?}", certificate.internal.verdict);
            }
        }
    }
    Ok(Outcome::from_verdict(ok))
}

pub fn linearize(dynamics: &str, m: usize, mode: &str, xstar: Option<Vec<f64>>, out: Option<&Path>) -> Result<Outcome, Failure> {
    let kind = DynamicsKind::from_str(dynamics)?;
    let mode = LinearizationMode::from_str(mode)?;
    if m < 2 {
        return Err(Error::InvalidArgument(format!("--m must be at least 2, got {m}")).into());
    }
    let point = match vector_arg(xstar) {
        Some(x) if x.len() != m => {
            return Err(Error::DimensionMismatch(format!("--xstar has {} entries, --m is {m}", x.len())).into())
        }
        Some(x) => SimplexPoint::new(x)?,
        None => SimplexPoint::uniform(m),
    };
    let lin = linearize_at(kind, &point, mode)?;
    write_or_print(&lin, out)?;
    Ok(Outcome::Success)
}

pub fn reduce(lin_path: &Path, out: Option<&Path>) -> Result<Outcome, Failure> {
    let lin: LinearizedDynamics = load(lin_path)?;
    let basis = TangentBasis::new(lin.strategies())?;
    let reduced = reduce_dynamics(&lin, &basis)?;
    write_or_print(&reduced, out)?;
    Ok(Outcome::Success)
}

fn write_or_print<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => write_json(path, value).map_err(|e| Failure::File(path.to_path_buf(), e))?,
        None => print!("{}", to_json_string(value)?),
    }
    Ok(())
}

fn print_scenario(report: &ScenarioReport) {
    let inst = &report.instability;
    println!("{}: {:?}", report.scenario, inst.verdict);
    println!(
        "  final-window RMS {:.4e}, max-window RMS {:.4e}, samples {}",
        inst.final_rms, inst.max_rms, report.samples
    );
    println!("  max simplex drift {:.3e}, bounded {}", report.max_simplex_drift, report.bounded);
    if let Some(t) = report.blow_up_time {
        println!("  blow-up at t = {t}");
    }
    if let Some(cross) = &report.linear_crosscheck {
        println!("  linearized loop max Re {:.10}", cross.max_real_part);
    }
    if let Some(r) = report.lossless_residual {
        println!("  lossless residual {r:.3e}");
    }
}

pub fn simulate(name: &str, out_dir: &Path, cfg: &IntegratorConfig, x0: Option<Vec<f64>>, json: bool) -> Result<Outcome, Failure> {
    let scenario = Scenario::from_str(name)?;
    let output = run_scenario(scenario, cfg, vector_arg(x0).as_ref())?;
    let paths = write_scenario_bundle(out_dir, &output)?;
    if json {
        print!("{}", to_json_string(&output.report)?);
    } else {
        print_scenario(&output.report);
        println!("  wrote {}", paths.report.display());
    }
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct ReproduceEntry {
    scenario: String,
    verdict: Convergence,
    bounded: bool,
    expected: &'static str,
    as_expected: bool,
    trajectory: PathBuf,
    simplex: PathBuf,
    report: PathBuf,
}

/// Counterexamples must not converge; the lossless control run must stay
/// bounded with its storage balance intact.
fn expectation(scenario: Scenario, report: &ScenarioReport) -> (&'static str, bool) {
    match scenario {
        Scenario::LogitCounterexample | Scenario::ReplicatorCounterexample => {
            ("non_convergent", report.instability.verdict == Convergence::NonConvergent)
        }
        Scenario::RpsLossless => (
            "bounded_lossless",
            report.bounded && report.lossless_residual.is_some_and(|r| r <= LOSSLESS_TOL),
        ),
    }
}

pub fn reproduce(names: &[String], out_dir: &Path, cfg: &IntegratorConfig, json: bool) -> Result<Outcome, Failure> {
    let scenarios: Vec<Scenario> = if names.is_empty() {
        Scenario::ALL.to_vec()
    } else {
        names.iter().map(|n| Scenario::from_str(n)).collect::<Result<_, _>>()?
    };
    let mut entries = Vec::new();
    for scenario in scenarios {
        let output = run_scenario(scenario, cfg, None)?;
        let paths = write_scenario_bundle(out_dir, &output)?;
        let (expected, as_expected) = expectation(scenario, &output.report);
        if !json {
            print_scenario(&output.report);
        }
        entries.push(ReproduceEntry {
            scenario: scenario.name().to_string(),
            verdict: output.report.instability.verdict,
            bounded: output.report.bounded,
            expected,
            as_expected,
            trajectory: paths.trajectory,
            simplex: paths.simplex,
            report: paths.report,
        });
    }
    let ok = entries.iter().all(|e| e.as_expected);
    emit(&entries, json, Some(&out_dir.join("summary.json")))?;
    Ok(Outcome::from_verdict(ok))
}

#[derive(Serialize)]
struct LosslessRun {
    dt: f64,
    lossless_residual: f64,
    storage_drift: f64,
    max_simplex_drift: f64,
}

#[derive(Serialize)]
struct LosslessCheck {
    t_end: f64,
    runs: Vec<LosslessRun>,
    /// First residual over last residual.
    reduction: f64,
    required_reduction: f64,
    tolerance: f64,
    pass: bool,
}

/// Residual of rock-paper-scissors under the first-order replicator at `dt`,
/// `dt/2`, ..., `dt/2^halvings`. Passes when the base residual is within
/// tolerance and the residual shrinks by at least `2^(halvings+1)` overall.
pub fn lossless_check(dt: f64, t_end: f64, halvings: u32, json: bool, out: Option<&Path>) -> Result<Outcome, Failure> {
    if halvings == 0 {
        return Err(Error::InvalidArgument("--halvings must be at least 1".into()).into());
    }
    let mut runs = Vec::new();
    for k in 0..=halvings {
        let step = dt / 2f64.powi(k as i32);
        let cfg = IntegratorConfig::fixed(step, t_end);
        cfg.validate()?;
        let report = run_scenario(Scenario::RpsLossless, &cfg, None)?.report;
        runs.push(LosslessRun {
            dt: step,
            lossless_residual: report.lossless_residual.expect("replicator1 scenario"),
            storage_drift: report.storage_drift.expect("replicator1 scenario"),
            max_simplex_drift: report.max_simplex_drift,
        });
    }
    let first = runs[0].lossless_residual;
    let last = runs[runs.len() - 1].lossless_residual;
    let reduction = first / last;
    let required_reduction = 2f64.powi(halvings as i32 + 1);
    let check = LosslessCheck {
        t_end,
        pass: first <= LOSSLESS_TOL && reduction >= required_reduction,
        runs,
        reduction,
        required_reduction,
        tolerance: LOSSLESS_TOL,
    };
    emit(&check, json, out)?;
    if !json {
        for run in &check.runs {
            println!("dt {:.6}: residual {:.3e}, storage drift {:.3e}", run.dt, run.lossless_residual, run.storage_drift);
        }
        println!(
            "reduction {:.2}x (required {:.0}x): {}",
            check.reduction,
            check.required_reduction,
            if check.pass { "pass" } else { "fail" }
        );
    }
    Ok(Outcome::from_verdict(check.pass))
}
