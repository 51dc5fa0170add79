//! On-disk artifacts: CSV field slices and trajectories, the binary field
//! dump, JSON reports and the plotting stub.

use std::io::{self, Read, Write};
use std::path::Path;

use nhj_core::audit::{AuditReport, EVIDENCE_NOTE};
use nhj_core::dynamics::Trajectory;
use nhj_core::grid::{GridField, GridSpec};
use nhj_core::scenario::Scenario;
use serde::Serialize;

/// One time slice as CSV: `x1,..,xn,S`, row-major over the grid.
pub fn write_field_slice<W: Write>(field: &GridField, j: usize, out: W) -> csv::Result<()> {
    let spec = field.spec();
    let n = spec.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("S".into());
    w.write_record(&header)?;
    let mut idx = vec![0; n];
    let mut x = vec![0.0; n];
    for &s in field.slice(j) {
        spec.node_point(&idx, &mut x);
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.push(s.to_string());
        w.write_record(&row)?;
        spec.next_index(&mut idx);
    }
    w.flush()?;
    Ok(())
}

/// Trajectory CSV: `t,x1..xn,v1..vn,lambda1..lambdak,constraint_residual`.
/// Multiplier cells are empty when the trajectory carries none.
pub fn write_trajectory<W: Write>(traj: &Trajectory, scenario: &Scenario, out: W) -> csv::Result<()> {
    let (n, k) = (scenario.n(), scenario.k());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("v{i}")));
    header.extend((1..=k).map(|i| format!("lambda{i}")));
    header.push("constraint_residual".into());
    w.write_record(&header)?;
    let residuals = traj.constraint_residuals(scenario);
    for i in 0..traj.len() {
        let mut row = vec![traj.times[i].to_string()];
        row.extend(traj.states[i].iter().map(f64::to_string));
        row.extend(traj.velocities[i].iter().map(f64::to_string));
        match &traj.multipliers {
            Some(m) => row.extend(m[i].iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), k)),
        }
        row.push(residuals[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

const FIELD_MAGIC: &[u8; 8] = b"NHJFIELD";
const FIELD_VERSION: u32 = 1;

/// Little-endian dump of a whole field: header with the grid description and
/// scenario name, then every slice in time order.
pub fn write_field<W: Write>(field: &GridField, mut out: W) -> io::Result<()> {
    let spec = field.spec();
    out.write_all(FIELD_MAGIC)?;
    out.write_all(&FIELD_VERSION.to_le_bytes())?;
    out.write_all(&(spec.dim() as u32).to_le_bytes())?;
    out.write_all(&(spec.steps() as u64).to_le_bytes())?;
    for a in 0..spec.dim() {
        out.write_all(&(spec.cells()[a] as u64).to_le_bytes())?;
        out.write_all(&[spec.periodic()[a] as u8])?;
        out.write_all(&spec.lower()[a].to_le_bytes())?;
        out.write_all(&spec.upper()[a].to_le_bytes())?;
    }
    let [t0, t1] = spec.window();
    out.write_all(&t0.to_le_bytes())?;
    out.write_all(&t1.to_le_bytes())?;
    let name = field.scenario_name().as_bytes();
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name)?;
    out.write_all(&(field.values().len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_field<R: Read>(mut r: R) -> io::Result<GridField> {
    if &read_array::<8, _>(&mut r)? != FIELD_MAGIC {
        return Err(invalid("not a field dump"));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != FIELD_VERSION {
        return Err(invalid(format!("unsupported field dump version {version}")));
    }
    let n = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if n == 0 || n > nhj_core::grid::MAX_GRID_DIM {
        return Err(invalid(format!("bad dimension {n}")));
    }
    let steps = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let (mut cells, mut periodic, mut lo, mut hi) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        cells.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
        periodic.push(read_array::<1, _>(&mut r)?[0] != 0);
        lo.push(f64::from_le_bytes(read_array(&mut r)?));
        hi.push(f64::from_le_bytes(read_array(&mut r)?));
    }
    let t0 = f64::from_le_bytes(read_array(&mut r)?);
    let t1 = f64::from_le_bytes(read_array(&mut r)?);
    let spec = GridSpec::from_parts(&lo, &hi, &periodic, &cells, steps, [t0, t1])
        .map_err(|e| invalid(e.to_string()))?;
    let name_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| invalid("scenario name is not UTF-8"))?;
    let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
    if count != (steps + 1) * spec.node_count() {
        return Err(invalid(format!(
            "{count} values do not fill {} slices of {} nodes",
            steps + 1,
            spec.node_count()
        )));
    }
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")))
        .collect();
    Ok(GridField::from_values(spec, name, values))
}

pub fn save_field(field: &GridField, path: &Path) -> io::Result<()> {
    write_field(field, io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_field(path: &Path) -> io::Result<GridField> {
    read_field(io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct GridSummary {
    pub cells: Vec<usize>,
    pub time_steps: usize,
    pub spacing: Vec<f64>,
    pub dt: f64,
}

impl GridSummary {
    pub fn of(spec: &GridSpec) -> Self {
        Self {
            cells: spec.cells().to_vec(),
            time_steps: spec.steps(),
            spacing: spec.spacing().to_vec(),
            dt: spec.dt(),
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ResidualReport {
    pub scenario: String,
    pub grid: GridSummary,
    pub residual_max: f64,
    pub residual_mean: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ComparisonReport {
    pub scenario: String,
    pub grid: GridSummary,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub trajectory_steps: usize,
    pub boundary_margin: f64,
    /// Largest coordinate gap between the two trajectories.
    pub sup_norm_gap: f64,
    pub max_constraint_residual_hj: f64,
    pub max_constraint_residual_dalembert: f64,
    /// Largest gap between the multiplier recovered from the value function
    /// and the eliminated one along the flow; absent without constraints.
    pub max_lambda_disagreement: Option<f64>,
    pub energy_drift_dalembert: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConvergenceLevel {
    pub grid: GridSummary,
    pub residual_max: f64,
    pub residual_mean: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConvergenceReport {
    pub scenario: String,
    pub levels: Vec<ConvergenceLevel>,
    /// `log2` of the ratio of successive maximum residuals.
    pub order_max: f64,
    pub order_mean: f64,
}

#[derive(Serialize)]
struct AuditJson<'a> {
    scenario: &'a str,
    note: &'a str,
    x0: &'a [f64],
    seed: u64,
    amplitude: f64,
    passed: bool,
    flags: FlagsJson,
    tolerances: TolerancesJson,
    action_of_candidate: f64,
    gamma_reference: f64,
    reference_gap: f64,
    max_gamma_deviation: f64,
    max_lagrange_functional: f64,
    min_action_gap: f64,
    perturbation_actions: &'a [f64],
    gamma_values: &'a [f64],
    lagrange_functional_values: &'a [f64],
}

#[derive(Serialize)]
struct FlagsJson {
    minimality: bool,
    gamma_constancy: bool,
    lagrange_vanishing: bool,
}

#[derive(Serialize)]
struct TolerancesJson {
    slack_abs: f64,
    slack_rel: f64,
    gamma: f64,
    lagrange: f64,
}

/// The audit report as JSON.
///
/// Keys: `scenario`, `note`, `x0`, `seed`, `amplitude`, `passed`, `flags`
/// (`minimality`, `gamma_constancy`, `lagrange_vanishing`), `tolerances`
/// (`slack_abs`, `slack_rel`, `gamma`, `lagrange`), the scalar summaries
/// `action_of_candidate`, `gamma_reference`, `reference_gap`,
/// `max_gamma_deviation`, `max_lagrange_functional`, `min_action_gap`, and
/// the raw lists `perturbation_actions`, `gamma_values`,
/// `lagrange_functional_values`.
pub fn audit_json(report: &AuditReport) -> serde_json::Result<String> {
    let t = &report.tolerances;
    let f = &report.flags;
    serde_json::to_string_pretty(&AuditJson {
        scenario: &report.scenario,
        note: EVIDENCE_NOTE,
        x0: &report.x0,
        seed: report.seed,
        amplitude: report.amplitude,
        passed: report.passed(),
        flags: FlagsJson {
            minimality: f.minimality,
            gamma_constancy: f.gamma_constancy,
            lagrange_vanishing: f.lagrange_vanishing,
        },
        tolerances: TolerancesJson {
            slack_abs: t.slack_abs,
            slack_rel: t.slack_rel,
            gamma: t.gamma,
            lagrange: t.lagrange,
        },
        action_of_candidate: report.action_of_candidate,
        gamma_reference: report.gamma_reference,
        reference_gap: report.reference_gap(),
        max_gamma_deviation: report.max_gamma_deviation(),
        max_lagrange_functional: report.max_lagrange(),
        min_action_gap: report.action_gaps().into_iter().fold(f64::INFINITY, f64::min),
        perturbation_actions: &report.perturbation_actions,
        gamma_values: &report.gamma_values,
        lagrange_functional_values: &report.lagrange_functional_values,
    })
}

/// Plain-text summary of an audit for the terminal.
pub fn audit_table(report: &AuditReport) -> String {
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    let t = &report.tolerances;
    let gaps = report.action_gaps();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let mut s = String::new();
    s.push_str(&format!("audit of {} from x0 = {:?}\n", report.scenario, report.x0));
    s.push_str(&format!("  ({EVIDENCE_NOTE})\n"));
    s.push_str(&format!(
        "  {:<22} {:>14} {:>12}  {}\n",
        "check", "value", "tolerance", "result"
    ));
    s.push_str(&format!(
        "  {:<22} {:>14.6e} {:>12.1e}  {}\n",
        "min action gap",
        min_gap,
        -t.slack_abs,
        mark(report.flags.minimality)
    ));
    s.push_str(&format!(
        "  {:<22} {:>14.6e} {:>12.1e}  {}\n",
        "max |gamma - ref|",
        report.max_gamma_deviation(),
        t.gamma * (1.0 + report.gamma_reference.abs()),
        mark(report.flags.gamma_constancy)
    ));
    s.push_str(&format!(
        "  {:<22} {:>14.6e} {:>12.1e}  {}\n",
        "max |lagrange|",
        report.max_lagrange(),
        t.lagrange,
        mark(report.flags.lagrange_vanishing)
    ));
    s.push_str(&format!(
        "  action {:.9}  reference {:.9}  ({} perturbations, {} gamma paths)\n",
        report.action_of_candidate,
        report.gamma_reference,
        report.perturbation_actions.len(),
        report.gamma_values.len()
    ));
    s.push_str(&format!(
        "  overall: {}\n",
        if report.passed() { "PASS" } else { "FAIL" }
    ));
    s
}

/// Matplotlib script that plots whatever CSV artifacts sit next to it.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
# Plots the CSV files written next to this script.
import csv
import glob
import os
import sys

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def read(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    cols = {h: [float(r[i]) if r[i] else float("nan") for r in body] for i, h in enumerate(header)}
    return header, cols


def plot_trajectories(ax):
    for path in sorted(glob.glob(os.path.join(here, "trajectory_*.csv"))):
        header, cols = read(path)
        label = os.path.basename(path)[len("trajectory_"):-4]
        if "x2" in cols:
            ax.plot(cols["x1"], cols["x2"], label=label)
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
        else:
            ax.plot(cols["t"], cols["x1"], label=label)
            ax.set_xlabel("t")
            ax.set_ylabel("x1")
    ax.legend()


def plot_fields(fig):
    paths = sorted(glob.glob(os.path.join(here, "field_*.csv")))
    for k, path in enumerate(paths):
        header, cols = read(path)
        ax = fig.add_subplot(1, len(paths) + 1, k + 2)
        if "x2" in cols:
            sc = ax.scatter(cols["x1"], cols["x2"], c=cols["S"], s=4)
            fig.colorbar(sc, ax=ax)
        else:
            ax.plot(cols["x1"], cols["S"])
        ax.set_title(os.path.basename(path))


fig = plt.figure(figsize=(12, 4))
plot_trajectories(fig.add_subplot(1, 3, 1))
plot_fields(fig)
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "plot.png")
fig.savefig(out, dpi=120)
"#;
