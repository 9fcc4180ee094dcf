//! Single-configuration subcommands.

use std::path::Path;

use photobio::basic_state::{iterate_basic_state, BasicState};
use photobio::config::RunConfig;
use photobio::stability::{critical_point, eigenmode_snapshots, trace_neutral_curve, Branch, CriticalResult, WavenumberProblem};
use photobio::{solve_basic_state, SuspensionParams};
use serde::Serialize;

use crate::format::{num, rounded_json, write_json, write_text, Csv};
use crate::svg::{Line, Plot, Stroke};
use crate::{CliError, Common};

/// Fractions of the period at which mode snapshots are taken.
pub const SNAPSHOT_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Horizontal samples per wavelength in mode snapshots.
const SNAPSHOT_X1_POINTS: usize = 41;

/// Reads a config file, dropping any `[sweep]` table.
pub fn load_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn config_from_table(mut table: toml::Table) -> Result<RunConfig, CliError> {
    table.remove("sweep");
    let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(RunConfig::from_toml(&text)?)
}

/// Config with command-line range overrides applied.
pub fn load_config(args: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = config_from_table(load_table(&args.config)?)?;
    apply_overrides(&mut cfg, args)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, args: &Common) -> Result<(), CliError> {
    if let Some(v) = args.a_min {
        cfg.stability.a_min = v;
    }
    if let Some(v) = args.a_max {
        cfg.stability.a_max = v;
    }
    if let Some(v) = args.a_points {
        cfg.stability.a_points = v;
    }
    cfg.stability.validate()?;
    Ok(())
}

/// Parameters echoed into every sidecar.
#[derive(Serialize)]
struct Provenance<'a> {
    config: &'a RunConfig,
    params: &'a SuspensionParams,
}

fn sidecar<T: Serialize>(path: &Path, cfg: &RunConfig, params: &SuspensionParams, command: &str, body: T) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Sidecar<'a, T> {
        command: &'a str,
        #[serde(flatten)]
        provenance: Provenance<'a>,
        #[serde(flatten)]
        body: T,
    }
    let value = Sidecar { command, provenance: Provenance { config: cfg, params }, body };
    write_json(path, &rounded_json(&value))
}

fn solved_state(cfg: &RunConfig) -> Result<(SuspensionParams, BasicState), CliError> {
    let params = cfg.params()?;
    let state = solve_basic_state(&params, &cfg.numerics)?;
    Ok((params, state))
}

pub fn basic_state(args: &Common) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let params = cfg.params()?;
    let state = iterate_basic_state(&params, &cfg.numerics)?;
    let mut csv = Csv::new(&["x3", "n_b", "G_b", "q_b", "T_b"]);
    for k in 0..state.mesh.len() {
        csv.row(&[
            num(state.mesh.nodes[k]),
            num(state.n_b[k]),
            num(state.radiation.g_total[k]),
            num(state.radiation.q_vertical[k]),
            num(state.t_b[k]),
        ]);
    }
    write_text(&args.out.join("basic_state.csv"), &csv.into_string())?;
    #[derive(Serialize)]
    struct Body {
        summary: photobio::basic_state::BasicStateSummary,
    }
    sidecar(&args.out.join("basic_state.json"), &cfg, &params, "basic-state", Body { summary: state.summary() })?;
    let profile = |values: &[f64], stroke, color| Line {
        points: values.iter().zip(&state.mesh.nodes).map(|(&v, &x)| (v, x)).collect(),
        stroke,
        color,
    };
    let plot = Plot {
        title: "Basic state: n_b (solid), G_b (dotted)".into(),
        x_label: "value".into(),
        y_label: "x3".into(),
        lines: vec![profile(&state.n_b, Stroke::Solid, "black"), profile(state.g_total(), Stroke::Dotted, "black")],
    };
    write_text(&args.out.join("basic_state.svg"), &plot.render())?;
    if !state.converged {
        return Err(CliError::Numerical(photobio::Error::NoConvergence {
            iterations: state.iterations_used,
            residual: state.residual,
        }));
    }
    Ok(())
}

/// Splits `(a, Ra, branch)` samples into runs of one branch type.
fn branch_lines(points: &[(f64, f64, Branch)]) -> Vec<Line> {
    let mut lines: Vec<Line> = Vec::new();
    let mut last: Option<Branch> = None;
    for &(a, ra, branch) in points {
        let stroke = match branch {
            Branch::Stationary => Stroke::Solid,
            Branch::Oscillatory => Stroke::Dotted,
        };
        match lines.last_mut() {
            Some(line) if last == Some(branch) => line.points.push((a, ra)),
            Some(line) => {
                // Share the junction point so the curve stays connected.
                let joint = *line.points.last().expect("non-empty line");
                lines.push(Line { points: vec![joint, (a, ra)], stroke, color: "black" });
            }
            None => lines.push(Line { points: vec![(a, ra)], stroke, color: "black" }),
        }
        last = Some(branch);
    }
    lines
}

pub fn neutral_curve(args: &Common) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let (params, state) = solved_state(&cfg)?;
    let st = cfg.stability;
    let curve = trace_neutral_curve(&state, st.a_min, st.a_max, st.a_points, &cfg.numerics)?;
    let mut csv = Csv::new(&["a", "ra", "branch", "im_gamma"]);
    let mut failures = Vec::new();
    let mut drawn = Vec::new();
    for s in &curve.samples {
        match &s.point {
            Ok(p) => {
                csv.row(&[num(s.a), num(p.ra), p.branch.as_str().into(), num(p.im_gamma)]);
                drawn.push((s.a, p.ra, p.branch));
            }
            Err(e) => {
                csv.row(&[num(s.a), String::new(), String::new(), String::new()]);
                failures.push(serde_json::json!({ "a": s.a, "error": e.to_string() }));
            }
        }
    }
    write_text(&args.out.join("neutral_curve.csv"), &csv.into_string())?;
    #[derive(Serialize)]
    struct Body<'a> {
        transitions: &'a [photobio::stability::BranchTransition],
        failures: Vec<serde_json::Value>,
    }
    let body = Body { transitions: &curve.transitions, failures };
    sidecar(&args.out.join("neutral_curve.json"), &cfg, &params, "neutral-curve", body)?;
    let plot = Plot {
        title: "Neutral curve: stationary (solid), oscillatory (dotted)".into(),
        x_label: "a".into(),
        y_label: "Ra".into(),
        lines: branch_lines(&drawn),
    };
    write_text(&args.out.join("neutral_curve.svg"), &plot.render())
}

fn critical_of(cfg: &RunConfig, state: &BasicState) -> Result<CriticalResult, CliError> {
    let st = cfg.stability;
    Ok(critical_point(state, st.a_min, st.a_max, st.a_points, &cfg.numerics)?.1)
}

pub fn critical(args: &Common) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let (params, state) = solved_state(&cfg)?;
    let result = critical_of(&cfg, &state)?;
    sidecar(&args.out.join("critical.json"), &cfg, &params, "critical", result)
}

pub fn mode_snapshots(args: &Common) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let (params, state) = solved_state(&cfg)?;
    let result = critical_of(&cfg, &state)?;
    if result.branch == Branch::Stationary {
        return Err(photobio::Error::Stationary.into());
    }
    let mode = WavenumberProblem::new(&state, result.a_c, &cfg.numerics)?.mode(result.ra_c)?;
    let snaps = eigenmode_snapshots(&mode, &state.mesh.nodes, &SNAPSHOT_FRACTIONS, SNAPSHOT_X1_POINTS)?;
    let mut csv = Csv::new(&["fraction", "time", "x1", "x3", "w", "n"]);
    for (fraction, snap) in SNAPSHOT_FRACTIONS.iter().zip(&snaps) {
        for (i3, x3) in snap.x3.iter().enumerate() {
            for (i1, x1) in snap.x1.iter().enumerate() {
                csv.row(&[num(*fraction), num(snap.time), num(*x1), num(*x3), num(snap.w[i3][i1]), num(snap.n[i3][i1])]);
            }
        }
    }
    write_text(&args.out.join("mode_snapshots.csv"), &csv.into_string())?;
    #[derive(Serialize)]
    struct Body {
        critical: CriticalResult,
        gamma_re: f64,
        gamma_im: f64,
        residual: f64,
        period: Option<f64>,
    }
    let body = Body {
        critical: result,
        gamma_re: mode.gamma.re,
        gamma_im: mode.gamma.im,
        residual: mode.residual,
        period: result.period,
    };
    sidecar(&args.out.join("mode_snapshots.json"), &cfg, &params, "mode-snapshots", body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_runs_share_junctions() {
        let pts = [
            (1.0, 5.0, Branch::Oscillatory),
            (2.0, 4.0, Branch::Oscillatory),
            (3.0, 4.5, Branch::Stationary),
            (4.0, 6.0, Branch::Stationary),
        ];
        let lines = branch_lines(&pts);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].stroke, Stroke::Dotted);
        assert_eq!(lines[1].points, vec![(2.0, 4.0), (3.0, 4.5), (4.0, 6.0)]);
    }

    #[test]
    fn sweep_table_is_ignored_by_single_runs() {
        let text = "[suspension]\nsc = 20.0\nus = 0.0\ntau_h = 0.5\nomega = 0.5\naniso_a = 0.0\nalpha_i_deg = 0.0\ni0 = 1.0\nupsilon = 0.4\n[sweep]\nmax_points = 3\n";
        let cfg = config_from_table(text.parse().unwrap()).unwrap();
        assert_eq!(cfg.suspension.us, 0.0);
    }
}
