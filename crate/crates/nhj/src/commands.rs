//! The four pipelines behind the command line.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nhj_core::audit::{minimality_report_with, AuditOptions, AuditReport};
use nhj_core::dynamics::{
    eliminated_multiplier, initial_velocity, integrate_dalembert, integrate_hj_flow,
    multiplier_from_s, Trajectory, DEFAULT_STEPS,
};
use nhj_core::grid::{GridField, GridSpec};
use nhj_core::hj::{pde_residual, solve_terminal_value};
use nhj_core::scenario::{Builtin, Scenario};

use crate::config::{ConfigError, RunConfig};
use crate::formats::{
    audit_json, audit_table, load_field, save_field, write_field_slice, write_trajectory,
    ComparisonReport, ConvergenceLevel, ConvergenceReport, GridSummary, ResidualReport,
    PLOT_SCRIPT,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_INADMISSIBLE: i32 = 4;
pub const EXIT_AUDIT_FAILED: i32 = 5;

/// Trajectories closer than this fraction of an axis width to a
/// non-periodic boundary trigger a warning.
pub const BOUNDARY_WARNING: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numeric(nhj_core::Error),
    #[error(transparent)]
    Inadmissible(nhj_core::Error),
    #[error("audit failed: {0}")]
    AuditFailed(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) | CliError::Io { .. } => EXIT_NUMERIC,
            CliError::Inadmissible(_) => EXIT_INADMISSIBLE,
            CliError::AuditFailed(_) => EXIT_AUDIT_FAILED,
        }
    }
}

impl From<nhj_core::Error> for CliError {
    fn from(e: nhj_core::Error) -> Self {
        use nhj_core::Error::*;
        match e {
            InadmissibleLaunch { .. } => CliError::Inadmissible(e),
            InvalidParam { .. } | UnknownScenario(_) | InvalidGrid(_) | DimensionMismatch(_) => {
                CliError::Config(ConfigError::Scenario(e))
            }
            _ => CliError::Numeric(e),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub x0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub grid: Option<Vec<usize>>,
    pub steps: Option<usize>,
    pub trajectory_steps: Option<usize>,
    pub perturbations: Option<usize>,
    pub amplitude: Option<f64>,
    pub seed: Option<u64>,
    pub slack: Option<f64>,
    /// Use a saved field instead of solving.
    pub field: Option<PathBuf>,
    /// Also write the whole solved field.
    pub save_field: bool,
}

/// Everything a pipeline needs, fully resolved.
#[derive(Clone, Debug)]
pub struct Settings {
    pub builtin: Builtin,
    pub scenario: Scenario,
    pub cells: Vec<usize>,
    pub time_steps: usize,
    pub trajectory_steps: usize,
    pub x0: Vec<f64>,
    pub v0: Option<Vec<f64>>,
    pub perturbations: usize,
    pub amplitude: f64,
    pub seed: u64,
    pub slack: f64,
    pub out: PathBuf,
    pub field: Option<PathBuf>,
    pub save_field: bool,
}

impl Settings {
    pub fn resolve(config: &RunConfig, overrides: &Overrides, out: &Path) -> Result<Self, CliError> {
        let builtin = config.builtin()?;
        let scenario = config.build_scenario()?;
        let n = scenario.n();
        let (default_cells, default_steps) = builtin.default_resolution();
        let mut cells = overrides
            .grid
            .clone()
            .or_else(|| config.grid.cells.clone())
            .unwrap_or(default_cells);
        if cells.len() == 1 && n > 1 {
            cells = vec![cells[0]; n];
        }
        if cells.len() != n {
            return Err(ConfigError::Invalid(format!(
                "grid has {} cell counts, scenario has n = {n}",
                cells.len()
            ))
            .into());
        }
        let time_steps = overrides
            .steps
            .or(config.grid.time_steps)
            .unwrap_or(default_steps);
        let trajectory_steps = overrides
            .trajectory_steps
            .or(config.time.trajectory_steps)
            .unwrap_or(DEFAULT_STEPS);
        let x0 = overrides
            .x0
            .clone()
            .or_else(|| config.x0.clone())
            .unwrap_or_else(|| scenario.domain().iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect());
        if x0.len() != n {
            return Err(ConfigError::Invalid(format!(
                "x0 has {} coordinates, scenario has n = {n}",
                x0.len()
            ))
            .into());
        }
        scenario
            .check_in_domain(&x0)
            .map_err(|e| CliError::Config(ConfigError::Scenario(e)))?;
        let v0 = overrides.v0.clone().or_else(|| config.v0.clone());
        if let Some(v) = &v0 {
            if v.len() != n {
                return Err(ConfigError::Invalid(format!(
                    "v0 has {} components, scenario has n = {n}",
                    v.len()
                ))
                .into());
            }
        }
        let amplitude = overrides.amplitude.or(config.audit.amplitude).unwrap_or(0.1);
        let slack = overrides.slack.or(config.audit.slack).unwrap_or(1e-6);
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(ConfigError::Invalid(format!("amplitude must be non-negative, got {amplitude}")).into());
        }
        if !(slack.is_finite() && slack >= 0.0) {
            return Err(ConfigError::Invalid(format!("slack must be non-negative, got {slack}")).into());
        }
        Ok(Self {
            builtin,
            scenario,
            cells,
            time_steps,
            trajectory_steps,
            x0,
            v0,
            perturbations: overrides
                .perturbations
                .or(config.audit.perturbations)
                .unwrap_or(100),
            amplitude,
            seed: overrides.seed.or(config.audit.seed).unwrap_or(0),
            slack,
            out: out.to_path_buf(),
            field: overrides.field.clone(),
            save_field: overrides.save_field,
        })
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        Ok(GridSpec::new(&self.scenario, &self.cells, self.time_steps)?)
    }

    fn output(&self, name: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        Ok(self.out.join(name))
    }

    /// Loads the saved field when one was given, otherwise solves.
    pub fn field(&self) -> Result<GridField, CliError> {
        match &self.field {
            Some(path) => {
                let field = load_field(path).map_err(|e| {
                    CliError::Config(ConfigError::Invalid(format!(
                        "cannot load field {}: {e}",
                        path.display()
                    )))
                })?;
                let spec = field.spec();
                let expected = self.grid_spec()?;
                if field.scenario_name() != self.scenario.name() || spec != &expected {
                    return Err(ConfigError::Invalid(format!(
                        "field {} was solved for `{}` on cells {:?} x {} steps, config asks for `{}` on {:?} x {}",
                        path.display(),
                        field.scenario_name(),
                        spec.cells(),
                        spec.steps(),
                        self.scenario.name(),
                        self.cells,
                        self.time_steps
                    ))
                    .into());
                }
                Ok(field)
            }
            None => Ok(solve_terminal_value(&self.scenario, &self.grid_spec()?)?),
        }
    }
}

fn write_json(path: &Path, json: &str) -> Result<(), CliError> {
    std::fs::write(path, format!("{json}\n")).map_err(io_err(path))
}

fn write_plot_script(settings: &Settings) -> Result<PathBuf, CliError> {
    let path = settings.output("plot.py")?;
    std::fs::write(&path, PLOT_SCRIPT).map_err(io_err(&path))?;
    Ok(path)
}

fn write_slice(settings: &Settings, field: &GridField, j: usize, name: &str) -> Result<PathBuf, CliError> {
    let path = settings.output(name)?;
    let file = File::create(&path).map_err(io_err(&path))?;
    write_field_slice(field, j, BufWriter::new(file)).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    Ok(path)
}

fn write_traj(settings: &Settings, traj: &Trajectory, name: &str) -> Result<PathBuf, CliError> {
    let path = settings.output(name)?;
    let file = File::create(&path).map_err(io_err(&path))?;
    write_trajectory(traj, &settings.scenario, BufWriter::new(file)).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    Ok(path)
}

/// Result of a pipeline: files written and a one-paragraph summary.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

/// Solves the terminal-value problem and writes the first and last slices
/// plus residual statistics.
pub fn solve(settings: &Settings) -> Result<Outcome, CliError> {
    let field = solve_terminal_value(&settings.scenario, &settings.grid_spec()?)?;
    let residual = pde_residual(&field, &settings.scenario)?;
    let spec = field.spec();
    let mut artifacts = vec![
        write_slice(settings, &field, 0, "field_t0.csv")?,
        write_slice(settings, &field, spec.steps(), "field_t1.csv")?,
    ];
    let report = ResidualReport {
        scenario: settings.scenario.name().into(),
        grid: GridSummary::of(spec),
        residual_max: residual.max,
        residual_mean: residual.mean,
        samples: residual.samples,
    };
    let path = settings.output("residual.json")?;
    write_json(&path, &serde_json::to_string_pretty(&report).expect("plain data serializes"))?;
    artifacts.push(path);
    if settings.save_field {
        let path = settings.output("field.bin")?;
        save_field(&field, &path).map_err(io_err(&path))?;
        artifacts.push(path);
    }
    artifacts.push(write_plot_script(settings)?);
    Ok(Outcome {
        artifacts,
        summary: format!(
            "solved {} on {:?} x {} steps: residual max {:.3e}, mean {:.3e}",
            settings.scenario.name(),
            spec.cells(),
            spec.steps(),
            residual.max,
            residual.mean
        ),
    })
}

/// Attaches the multiplier recovered from the value function to every
/// sample of a flow; returns the largest disagreement with the eliminated
/// multiplier.
pub fn attach_value_multipliers(
    traj: &mut Trajectory,
    field: &GridField,
    scenario: &Scenario,
) -> Result<Option<f64>, CliError> {
    if scenario.k() == 0 {
        return Ok(None);
    }
    let mut worst = 0.0f64;
    let mut all = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let (t, x, v) = (traj.times[i], &traj.states[i], &traj.velocities[i]);
        let from_s = multiplier_from_s(field, scenario, x, t)?;
        let eliminated = eliminated_multiplier(scenario, x, v)?;
        for (a, b) in from_s.iter().zip(&eliminated) {
            worst = worst.max((a - b).abs());
        }
        all.push(from_s);
    }
    traj.multipliers = Some(all);
    Ok(Some(worst))
}

/// Integrates the value-function flow and the d'Alembert equations from the
/// same launch and compares them.
pub fn simulate(settings: &Settings) -> Result<Outcome, CliError> {
    let scenario = &settings.scenario;
    let field = settings.field()?;
    let margin = scenario.boundary_margin(&settings.x0);
    if margin < BOUNDARY_WARNING {
        eprintln!(
            "warning: x0 lies {:.1}% of the domain width from a boundary; one-sided stencils dominate there",
            100.0 * margin
        );
    }
    let v0 = match &settings.v0 {
        Some(v) => v.clone(),
        None => initial_velocity(&field, scenario, &settings.x0)?,
    };
    let dalembert = integrate_dalembert(scenario, &settings.x0, &v0, settings.trajectory_steps)?;
    let mut hj = integrate_hj_flow(&field, scenario, &settings.x0, settings.trajectory_steps)?;
    let lambda_gap = attach_value_multipliers(&mut hj, &field, scenario)?;
    let report = ComparisonReport {
        scenario: scenario.name().into(),
        grid: GridSummary::of(field.spec()),
        x0: settings.x0.clone(),
        v0,
        trajectory_steps: settings.trajectory_steps,
        boundary_margin: margin,
        sup_norm_gap: hj.sup_distance(&dalembert)?,
        max_constraint_residual_hj: hj.max_constraint_residual(scenario),
        max_constraint_residual_dalembert: dalembert.max_constraint_residual(scenario),
        max_lambda_disagreement: lambda_gap,
        energy_drift_dalembert: dalembert.energy_drift(scenario),
    };
    let mut artifacts = vec![
        write_traj(settings, &hj, "trajectory_hj.csv")?,
        write_traj(settings, &dalembert, "trajectory_dalembert.csv")?,
    ];
    let path = settings.output("comparison.json")?;
    write_json(&path, &serde_json::to_string_pretty(&report).expect("plain data serializes"))?;
    artifacts.push(path);
    artifacts.push(write_plot_script(settings)?);
    Ok(Outcome {
        artifacts,
        summary: format!(
            "simulated {}: sup-norm gap {:.3e}, max |Omega v| {:.3e}, max lambda gap {}, energy drift {:.3e}",
            scenario.name(),
            report.sup_norm_gap,
            report.max_constraint_residual_hj,
            report
                .max_lambda_disagreement
                .map_or("n/a".to_string(), |g| format!("{g:.3e}")),
            report.energy_drift_dalembert
        ),
    })
}

pub fn audit_options(settings: &Settings) -> AuditOptions {
    AuditOptions {
        steps: settings.trajectory_steps,
        slack_abs: settings.slack,
        slack_rel: settings.slack,
        ..AuditOptions::default()
    }
}

/// Runs the minimality audit against `field` and writes `audit.json`.
pub fn audit_field(settings: &Settings, field: &GridField) -> Result<(AuditReport, Outcome), CliError> {
    let report = minimality_report_with(
        field,
        &settings.scenario,
        &settings.x0,
        settings.perturbations,
        settings.amplitude,
        settings.seed,
        &audit_options(settings),
    )?;
    let path = settings.output("audit.json")?;
    write_json(&path, &audit_json(&report).expect("plain data serializes"))?;
    let summary = audit_table(&report);
    Ok((
        report,
        Outcome {
            artifacts: vec![path],
            summary,
        },
    ))
}

/// Audit pipeline; a failed check is reported as [`CliError::AuditFailed`]
/// after the report has been written.
pub fn audit(settings: &Settings) -> Result<Outcome, CliError> {
    let field = settings.field()?;
    let (report, outcome) = audit_field(settings, &field)?;
    if report.passed() {
        Ok(outcome)
    } else {
        print!("{}", outcome.summary);
        Err(CliError::AuditFailed(format!(
            "{:?}; report written to {}",
            report.flags,
            outcome.artifacts[0].display()
        )))
    }
}

/// Solves at the configured resolution and once refined in space and time,
/// and reports the observed order of the residual.
pub fn convergence(settings: &Settings) -> Result<Outcome, CliError> {
    let coarse = settings.grid_spec()?;
    let fine = coarse.refined();
    let mut levels = Vec::new();
    for spec in [&coarse, &fine] {
        let field = solve_terminal_value(&settings.scenario, spec)?;
        let r = pde_residual(&field, &settings.scenario)?;
        levels.push(ConvergenceLevel {
            grid: GridSummary::of(spec),
            residual_max: r.max,
            residual_mean: r.mean,
        });
    }
    let order = |a: f64, b: f64| (a / b).log2();
    let report = ConvergenceReport {
        scenario: settings.scenario.name().into(),
        order_max: order(levels[0].residual_max, levels[1].residual_max),
        order_mean: order(levels[0].residual_mean, levels[1].residual_mean),
        levels,
    };
    let path = settings.output("convergence.json")?;
    write_json(&path, &serde_json::to_string_pretty(&report).expect("plain data serializes"))?;
    Ok(Outcome {
        artifacts: vec![path],
        summary: format!(
            "{}: residual max {:.3e} -> {:.3e}, observed order {:.2}",
            report.scenario, report.levels[0].residual_max, report.levels[1].residual_max, report.order_max
        ),
    })
}
