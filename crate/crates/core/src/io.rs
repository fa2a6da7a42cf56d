//! JSON and CSV artifacts.
//!
//! Every float is written with 17 significant digits (`{:.16e}`), so an
//! artifact read back and written again is byte-identical.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::sim::{simplex_projection, ScenarioOutput, Trajectory};
use crate::Result;

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty-printed JSON with fixed-precision floats.
struct FixedPrecision<'a>(PrettyFormatter<'a>);

macro_rules! forward {
    ($($name:ident),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.$name(w)
            }
        )*
    };
}

impl Formatter for FixedPrecision<'_> {
    forward!(begin_array, end_array, begin_object, end_object, end_array_value, begin_object_value, end_object_value);

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(sci(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedPrecision(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Column names `t, x_i, phat_i, z_i, p_i`; the `phat` block is absent for
/// first-order dynamics and the `z` block for static games.
pub fn trajectory_header(traj: &Trajectory) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    let block = |prefix: &'static str, n: usize| (1..=n).map(move |i| format!("{prefix}_{i}"));
    cols.extend(block("x", traj.strategies()));
    cols.extend(block("phat", traj.phat.first().map_or(0, |p| p.len())));
    cols.extend(block("z", traj.z.first().map_or(0, |z| z.len())));
    cols.extend(block("p", traj.payoffs.first().map_or(0, |p| p.len())));
    cols
}

pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj))?;
    for i in 0..traj.len() {
        let row = std::iter::once(traj.times[i])
            .chain(traj.x[i].iter().copied())
            .chain(traj.phat[i].iter().copied())
            .chain(traj.z[i].iter().copied())
            .chain(traj.payoffs[i].iter().copied())
            .map(sci);
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Barycentric projection `(u, v)` of each sample; three strategies only.
pub fn write_simplex_csv<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "u", "v"])?;
    for (t, x) in traj.times.iter().zip(&traj.x) {
        let (u, v) = simplex_projection(x)?;
        w.write_record([sci(*t), sci(u), sci(v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written by [`write_scenario_bundle`].
#[derive(Debug, Clone)]
pub struct BundlePaths {
    pub trajectory: PathBuf,
    pub simplex: PathBuf,
    pub report: PathBuf,
}

/// Write `<name>_trajectory.csv`, `<name>_simplex.csv` and `<name>_report.json`.
pub fn write_scenario_bundle(dir: &Path, output: &ScenarioOutput) -> Result<BundlePaths> {
    fs::create_dir_all(dir)?;
    let name = &output.report.scenario;
    let paths = BundlePaths {
        trajectory: dir.join(format!("{name}_trajectory.csv")),
        simplex: dir.join(format!("{name}_simplex.csv")),
        report: dir.join(format!("{name}_report.json")),
    };
    write_trajectory_csv(io::BufWriter::new(fs::File::create(&paths.trajectory)?), &output.trajectory)?;
    write_simplex_csv(io::BufWriter::new(fs::File::create(&paths.simplex)?), &output.trajectory)?;
    write_json(&paths.report, &output.report)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsKind;
    use crate::lti::StateSpace;
    use crate::sim::IntegratorConfig;
    use nalgebra::{dvector, DMatrix};

    #[test]
    fn floats_use_seventeen_digits_and_round_trip() {
        let sys = StateSpace::new(
            DMatrix::from_element(1, 1, -1.0 / 3.0),
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::from_element(1, 1, 1e-300),
            DMatrix::from_element(1, 1, -0.0),
        )
        .unwrap();
        let text = to_json_string(&sys).unwrap();
        assert!(text.contains("-3.3333333333333331e-1"), "{text}");
        assert!(text.contains("1.0000000000000001e-1"));
        let back: StateSpace = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sys);
        assert_eq!(to_json_string(&back).unwrap(), text);
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = Trajectory {
            scenario: "probe".into(),
            dynamics: DynamicsKind::Logit2,
            config: IntegratorConfig::default(),
            times: vec![0.0, 0.5],
            x: vec![dvector![0.5, 0.25, 0.25]; 2],
            phat: vec![dvector![0.0, 0.0, 0.0]; 2],
            z: vec![dvector![1.0, 2.0]; 2],
            payoffs: vec![dvector![0.0, 1.0, -1.0]; 2],
            work: vec![0.0; 2],
            payoff_integral: vec![dvector![0.0, 0.0, 0.0]; 2],
            blow_up: None,
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x_1,x_2,x_3,phat_1,phat_2,phat_3,z_1,z_2,p_1,p_2,p_3"
        );
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(row.len(), 12);
        assert_eq!(row[0], 0.5);

        let mut buf = Vec::new();
        write_simplex_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(last[1], 0.375);
        assert!((last[2] - 3f64.sqrt() / 8.0).abs() < 1e-16);
    }
}
