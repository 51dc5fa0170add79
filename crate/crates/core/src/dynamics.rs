//! Trajectories: the flow of the projected value-function gradient, the
//! d'Alembert equations with eliminated multipliers, and multiplier recovery
//! from the value function.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::geometry::GramFactor;
use crate::grid::GridField;
use crate::hj::hamiltonian;
use crate::linalg::{dot, mat_tr_vec, mat_vec, norm};
use crate::ode::{uniform_times, Rk4};
use crate::scenario::Scenario;

/// Largest `|Ω(x₀) v₀|` accepted as an admissible launch.
pub const LAUNCH_TOLERANCE: f64 = 1e-8;
/// Default number of integration steps for flows on default grids.
pub const DEFAULT_STEPS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrajectorySource {
    HjFlow,
    Dalembert,
    Perturbation,
}

impl TrajectorySource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::HjFlow => "hj_flow",
            Self::Dalembert => "dalembert",
            Self::Perturbation => "perturbation",
        }
    }
}

impl fmt::Display for TrajectorySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub multipliers: Option<Vec<Vec<f64>>>,
    pub source: TrajectorySource,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn start(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn end(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    /// `|Ω(x)ẋ|` at every sample.
    pub fn constraint_residuals(&self, scenario: &Scenario) -> Vec<f64> {
        let constraints = scenario.constraints();
        let k = constraints.k();
        let mut omega = vec![0.0; k * scenario.n()];
        let mut r = vec![0.0; k];
        self.states
            .iter()
            .zip(&self.velocities)
            .map(|(x, v)| {
                if k == 0 {
                    return 0.0;
                }
                constraints.omega_into(x, &mut omega);
                mat_vec(&omega, k, scenario.n(), v, &mut r);
                norm(&r)
            })
            .collect()
    }

    pub fn max_constraint_residual(&self, scenario: &Scenario) -> f64 {
        self.constraint_residuals(scenario)
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Largest `|E(t) - E(t₀)|` with `E = ½m|v|² + V`.
    pub fn energy_drift(&self, scenario: &Scenario) -> f64 {
        let e0 = scenario.energy(&self.states[0], &self.velocities[0]);
        self.states
            .iter()
            .zip(&self.velocities)
            .map(|(x, v)| (scenario.energy(x, v) - e0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest coordinate difference to a trajectory on the same time grid.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        if self.times.len() != other.times.len()
            || self
                .times
                .iter()
                .zip(&other.times)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(Error::BadSampling(
                "trajectories are sampled at different times".into(),
            ));
        }
        let mut d = 0.0f64;
        for (a, b) in self.states.iter().zip(&other.states) {
            for (x, y) in a.iter().zip(b) {
                d = d.max((x - y).abs());
            }
        }
        Ok(d)
    }
}

/// `σ(x)∇S(t, x)/m` with `∇S` from the grid and `σ` exact at `x`.
fn hj_velocity(field: &GridField, scenario: &Scenario, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
    let (_, grad) = field.sample(t, x)?;
    let factor = scenario.constraints().factor_at(x)?;
    factor.project_kernel(&grad, out);
    let m = scenario.mass();
    for o in out.iter_mut() {
        *o /= m;
    }
    Ok(())
}

fn check_field(field: &GridField, scenario: &Scenario) -> Result<()> {
    if field.spec().dim() != scenario.n() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} axes, scenario `{}` has n = {}",
            field.spec().dim(),
            scenario.name(),
            scenario.n()
        )));
    }
    Ok(())
}

fn check_point(scenario: &Scenario, x: &[f64]) -> Result<()> {
    scenario.check_in_domain(x)
}

/// `v₀ = σ(x₀)∇S(t₀, x₀)/m`.
pub fn initial_velocity(field: &GridField, scenario: &Scenario, x0: &[f64]) -> Result<Vec<f64>> {
    check_field(field, scenario)?;
    check_point(scenario, x0)?;
    let mut v = vec![0.0; scenario.n()];
    hj_velocity(field, scenario, scenario.time_window()[0], x0, &mut v)?;
    Ok(v)
}

/// Integrates `ẋ = σ(x)∇S(t, x)/m` from `x₀` with RK4.
///
/// Recorded velocities are re-evaluated at each stored state, so `Ω(x)ẋ`
/// vanishes to round-off whatever the interpolation error of `∇S`.
pub fn integrate_hj_flow(
    field: &GridField,
    scenario: &Scenario,
    x0: &[f64],
    steps: usize,
) -> Result<Trajectory> {
    check_field(field, scenario)?;
    check_point(scenario, x0)?;
    check_steps(steps)?;
    let n = scenario.n();
    let [t0, t1] = scenario.time_window();
    let times = uniform_times(t0, t1, steps);
    let mut states = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut v = vec![0.0; n];
    let mut rk = Rk4::new(n);
    let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| hj_velocity(field, scenario, t, y, out);
    for i in 0..=steps {
        hj_velocity(field, scenario, times[i], &x, &mut v)?;
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::BlowUp {
                time_index: i,
                time: times[i],
                max_gradient: f64::INFINITY,
                bound: crate::hj::GRADIENT_BOUND,
            });
        }
        states.push(x.clone());
        velocities.push(v.clone());
        if i < steps {
            rk.step(&mut rhs, times[i], &mut x, times[i + 1] - times[i])?;
            scenario.check_in_domain(&x)?;
        }
    }
    Ok(Trajectory {
        times,
        states,
        velocities,
        multipliers: None,
        source: TrajectorySource::HjFlow,
    })
}

fn check_steps(steps: usize) -> Result<()> {
    if steps < 2 {
        return Err(Error::InvalidParam {
            name: "steps".into(),
            reason: format!("need at least 2 steps, got {steps}"),
        });
    }
    Ok(())
}

/// `λ = (ΩΩᵀ)⁻¹(Ω∇V - m (D_vΩ) v)`: the multiplier that keeps
/// `Ω(x)ẋ = 0` satisfied under `m ẍ = -∇V + Ωᵀλ`. Empty when `k = 0`.
pub fn eliminated_multiplier(scenario: &Scenario, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let n = scenario.n();
    if x.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "multiplier needs two {n}-vectors, got {} and {}",
            x.len(),
            v.len()
        )));
    }
    let factor = scenario.constraints().factor_at(x)?;
    let mut lambda = vec![0.0; factor.k()];
    eliminated_into(scenario, &factor, x, v, &mut lambda);
    Ok(lambda)
}

fn eliminated_into(scenario: &Scenario, factor: &GramFactor, x: &[f64], v: &[f64], lambda: &mut [f64]) {
    let (k, n) = (factor.k(), factor.n());
    if k == 0 {
        return;
    }
    let grad_v = scenario.potential_gradient(x);
    mat_vec(factor.omega(), k, n, &grad_v, lambda);
    let d_omega = scenario.constraints().omega_dir_deriv(x, v);
    let m = scenario.mass();
    for (r, l) in lambda.iter_mut().enumerate() {
        *l -= m * dot(d_omega.row(r), v);
    }
    factor.solve_gram(lambda);
}

/// Integrates `m ẍ = -∇V + Ωᵀλ` with `λ` eliminated at every stage.
pub fn integrate_dalembert(
    scenario: &Scenario,
    x0: &[f64],
    v0: &[f64],
    steps: usize,
) -> Result<Trajectory> {
    check_steps(steps)?;
    let n = scenario.n();
    let k = scenario.k();
    if x0.len() != n || v0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "launch needs two {n}-vectors, got {} and {}",
            x0.len(),
            v0.len()
        )));
    }
    let launch = norm(&scenario.omega(x0).mul_vec(v0));
    if !(launch <= LAUNCH_TOLERANCE) {
        return Err(Error::InadmissibleLaunch {
            residual: launch,
            tolerance: LAUNCH_TOLERANCE,
        });
    }
    let m = scenario.mass();
    let mut lambda = vec![0.0; k];
    let mut force = vec![0.0; n];
    let mut rhs = |_t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        let (x, v) = (&y[..n], &y[n..]);
        let factor = scenario.constraints().factor_at(x)?;
        eliminated_into(scenario, &factor, x, v, &mut lambda);
        mat_tr_vec(factor.omega(), k, n, &lambda, &mut force);
        let grad_v = scenario.potential_gradient(x);
        for i in 0..n {
            out[i] = v[i];
            out[n + i] = (force[i] - grad_v[i]) / m;
        }
        Ok(())
    };

    let [t0, t1] = scenario.time_window();
    let times = uniform_times(t0, t1, steps);
    let mut y = [x0, v0].concat();
    let mut states = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    let mut multipliers = Vec::with_capacity(steps + 1);
    let mut rk = Rk4::new(2 * n);
    for i in 0..=steps {
        states.push(y[..n].to_vec());
        velocities.push(y[n..].to_vec());
        multipliers.push(eliminated_multiplier(scenario, &y[..n], &y[n..])?);
        if i < steps {
            rk.step(&mut rhs, times[i], &mut y, times[i + 1] - times[i])?;
            if y.iter().any(|c| !c.is_finite()) {
                return Err(Error::StepFailure {
                    step: i + 1,
                    time: times[i + 1],
                });
            }
        }
    }
    Ok(Trajectory {
        times,
        states,
        velocities,
        multipliers: if k > 0 { Some(multipliers) } else { None },
        source: TrajectorySource::Dalembert,
    })
}

/// `λ = -(ΩΩᵀ)⁻¹Ω ∇(∂S/∂t)` with `∂S/∂t = -H(y, ∇S(t, y))`; the outer
/// gradient is a central difference of step `h_i` of the sampled Hamiltonian.
pub fn multiplier_from_s(field: &GridField, scenario: &Scenario, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_field(field, scenario)?;
    if scenario.k() == 0 {
        return Err(Error::NoConstraints);
    }
    check_point(scenario, x)?;
    let n = scenario.n();
    let spacing = field.spec().spacing();
    let mut grad_h = vec![0.0; n];
    let mut y = x.to_vec();
    for i in 0..n {
        let h = spacing[i];
        y[i] = x[i] + h;
        let up = sampled_hamiltonian(field, scenario, t, &y)?;
        y[i] = x[i] - h;
        let down = sampled_hamiltonian(field, scenario, t, &y)?;
        y[i] = x[i];
        grad_h[i] = (up - down) / (2.0 * h);
    }
    let factor = scenario.constraints().factor_at(x)?;
    let mut lambda = vec![0.0; factor.k()];
    factor.multiplier(&grad_h, &mut lambda);
    Ok(lambda)
}

fn sampled_hamiltonian(field: &GridField, scenario: &Scenario, t: f64, x: &[f64]) -> Result<f64> {
    let (_, grad) = field.sample(t, x)?;
    hamiltonian(x, &grad, scenario)
}

/// Relative time step and grid fraction of the substantial-derivative
/// differences.
const TIME_PROBE: f64 = 1e-4;
const SPACE_PROBE: f64 = 0.25;

/// `σ∇S/m` from the spline interpolant, whose derivatives are continuous
/// across cells.
fn smooth_velocity(field: &GridField, scenario: &Scenario, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
    let sample = field.smooth(t, x)?;
    let factor = scenario.constraints().factor_at(x)?;
    factor.project_kernel(&sample.gradient, out);
    let m = scenario.mass();
    for o in out.iter_mut() {
        *o /= m;
    }
    Ok(())
}

/// `[∂_t + v·∇]v - (-∇V + Ωᵀλ)/m` for `v = σ∇S/m`, with `λ` from
/// [`multiplier_from_s`] (absent when `k = 0`).
///
/// The velocity comes from the spline interpolant; a piecewise-linear one
/// would make differences smaller than a cell first order. Within `δt` of
/// either end of the window the time difference is one-sided.
pub fn acceleration_check(field: &GridField, scenario: &Scenario, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_field(field, scenario)?;
    check_point(scenario, x)?;
    let n = scenario.n();
    let [t0, t1] = scenario.time_window();
    if !(t >= t0 && t <= t1) {
        return Err(Error::TimeOutOfRange { time: t, t0, t1 });
    }
    let dt = (t1 - t0) * TIME_PROBE;
    let mut v = vec![0.0; n];
    smooth_velocity(field, scenario, t, x, &mut v)?;
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut accel = vec![0.0; n];
    if t - dt < t0 || t + dt > t1 {
        let step = if t - dt < t0 { dt } else { -dt };
        smooth_velocity(field, scenario, t + step, x, &mut plus)?;
        smooth_velocity(field, scenario, t + 2.0 * step, x, &mut minus)?;
        for i in 0..n {
            accel[i] = (-3.0 * v[i] + 4.0 * plus[i] - minus[i]) / (2.0 * step);
        }
    } else {
        smooth_velocity(field, scenario, t + dt, x, &mut plus)?;
        smooth_velocity(field, scenario, t - dt, x, &mut minus)?;
        for i in 0..n {
            accel[i] = (plus[i] - minus[i]) / (2.0 * dt);
        }
    }

    let spacing = field.spec().spacing();
    let mut y = x.to_vec();
    for j in 0..n {
        let eps = SPACE_PROBE * spacing[j];
        y[j] = x[j] + eps;
        smooth_velocity(field, scenario, t, &y, &mut plus)?;
        y[j] = x[j] - eps;
        smooth_velocity(field, scenario, t, &y, &mut minus)?;
        y[j] = x[j];
        for i in 0..n {
            accel[i] += v[j] * (plus[i] - minus[i]) / (2.0 * eps);
        }
    }

    let m = scenario.mass();
    let grad_v = scenario.potential_gradient(x);
    let mut force = vec![0.0; n];
    if scenario.k() > 0 {
        let lambda = multiplier_from_s(field, scenario, x, t)?;
        let omega = scenario.omega(x);
        force = omega.tr_mul_vec(&lambda);
    }
    for i in 0..n {
        accel[i] -= (force[i] - grad_v[i]) / m;
    }
    Ok(accel)
}
