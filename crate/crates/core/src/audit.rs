//! Action functional, Lagrange functionals and the sampled minimality audit.
//!
//! Sign convention: with `J(x) = ∫ L dt - S₁(x(t₁))` and `S` solving the
//! terminal-value problem, every admissible path from `x₀` has
//! `J ≥ -S(t₀, x₀)`, with equality along the value-function flow. The Γ
//! functional is therefore constant at `-S(t₀, x₀)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{integrate_hj_flow, Trajectory, TrajectorySource};
use crate::error::{Error, Result};
use crate::geometry::kernel_basis;
use crate::grid::GridField;
use crate::linalg::{dot, mat_vec, Matrix};
use crate::ode::Rk4;
use crate::quadrature::{check_sampling, simpson};
use crate::scenario::Scenario;

/// Sine modes in every random perturbation.
pub const FOURIER_MODES: usize = 5;
/// Attempts per sample before a perturbation leaving the domain is an error.
pub const MAX_RETRIES: usize = 10;

/// `J(x) = ∫ ½m|ẋ|² - V(x) dt - S₁(x(t₁))` by Simpson's rule on the samples.
pub fn action(traj: &Trajectory, scenario: &Scenario) -> Result<f64> {
    check_sampling(&traj.times)?;
    let integrand: Vec<f64> = traj
        .states
        .iter()
        .zip(&traj.velocities)
        .map(|(x, v)| scenario.lagrangian(x, v))
        .collect();
    Ok(simpson(&traj.times, &integrand)? - scenario.terminal_cost(traj.end()))
}

/// A differentiable function `F(t, x)` with its partial derivatives.
pub trait ValueFunction {
    /// Returns `(F, ∂F/∂t)` and writes `∇F` into `grad`.
    fn evaluate(&self, t: f64, x: &[f64], grad: &mut [f64]) -> Result<(f64, f64)>;
}

impl ValueFunction for GridField {
    fn evaluate(&self, t: f64, x: &[f64], grad: &mut [f64]) -> Result<(f64, f64)> {
        let s = self.smooth(t, x)?;
        grad.copy_from_slice(&s.gradient);
        Ok((s.value, s.time_derivative))
    }
}

/// A closure `(t, x, grad) -> (F, F_t)` used as a value function.
pub struct AnalyticValue<F>(pub F);

impl<F> ValueFunction for AnalyticValue<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> (f64, f64),
{
    fn evaluate(&self, t: f64, x: &[f64], grad: &mut [f64]) -> Result<(f64, f64)> {
        Ok((self.0)(t, x, grad))
    }
}

/// A multiplier field `g(t, x)`; it may use the gradient of the paired `F`.
pub trait MultiplierField {
    fn evaluate(&self, t: f64, x: &[f64], grad_f: &[f64], scenario: &Scenario) -> Result<Vec<f64>>;
}

/// `μ = (ΩΩᵀ)⁻¹Ω∇F`.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradientMultiplier;

impl MultiplierField for GradientMultiplier {
    fn evaluate(&self, _t: f64, x: &[f64], grad_f: &[f64], scenario: &Scenario) -> Result<Vec<f64>> {
        let factor = scenario.constraints().factor_at(x)?;
        let mut mu = vec![0.0; factor.k()];
        factor.multiplier(grad_f, &mut mu);
        Ok(mu)
    }
}

impl<G> MultiplierField for G
where
    G: Fn(f64, &[f64]) -> Vec<f64>,
{
    fn evaluate(&self, t: f64, x: &[f64], _grad_f: &[f64], _scenario: &Scenario) -> Result<Vec<f64>> {
        Ok(self(t, x))
    }
}

/// `Ω(x) v`, empty when `k = 0`.
fn constraint_image(scenario: &Scenario, x: &[f64], v: &[f64]) -> Vec<f64> {
    let k = scenario.k();
    let mut out = vec![0.0; k];
    if k > 0 {
        let omega = scenario.omega(x);
        mat_vec(omega.as_slice(), k, scenario.n(), v, &mut out);
    }
    out
}

/// `F(t₁, x(t₁)) - F(t₀, x(t₀)) + ∫ -∂F/∂t - v·∇F + gᵀΩv dt` with the
/// path's recorded velocities as `v`.
pub fn lagrange_functional_with(
    path: &Trajectory,
    value: &dyn ValueFunction,
    multiplier: &dyn MultiplierField,
    scenario: &Scenario,
) -> Result<f64> {
    check_sampling(&path.times)?;
    let n = scenario.n();
    let mut grad = vec![0.0; n];
    let mut integrand = Vec::with_capacity(path.len());
    let mut ends = (0.0, 0.0);
    let last = path.len() - 1;
    for (i, ((&t, x), v)) in path.times.iter().zip(&path.states).zip(&path.velocities).enumerate() {
        let (f, f_t) = value.evaluate(t, x, &mut grad)?;
        let mut g = -f_t - dot(v, &grad);
        if scenario.k() > 0 {
            let mu = multiplier.evaluate(t, x, &grad, scenario)?;
            g += dot(&mu, &constraint_image(scenario, x, v));
        }
        integrand.push(g);
        if i == 0 {
            ends.0 = f;
        }
        if i == last {
            ends.1 = f;
        }
    }
    Ok(ends.1 - ends.0 + simpson(&path.times, &integrand)?)
}

/// Lagrange functional with `F = S` (smooth interpolant of the grid) and
/// `g = (ΩΩᵀ)⁻¹Ω∇S`.
pub fn lagrange_functional(path: &Trajectory, field: &GridField, scenario: &Scenario) -> Result<f64> {
    lagrange_functional_with(path, field, &GradientMultiplier, scenario)
}

/// `J + Λ` evaluated along `path` with the pointwise minimising velocity
/// `v* = (∇F - Ωᵀg)/m` in place of the path's own velocity.
pub fn gamma_functional_with(
    path: &Trajectory,
    value: &dyn ValueFunction,
    multiplier: &dyn MultiplierField,
    scenario: &Scenario,
) -> Result<f64> {
    check_sampling(&path.times)?;
    let n = scenario.n();
    let m = scenario.mass();
    let mut grad = vec![0.0; n];
    let mut v_star = vec![0.0; n];
    let mut integrand = Vec::with_capacity(path.len());
    let mut ends = (0.0, 0.0);
    let last = path.len() - 1;
    for (i, (&t, x)) in path.times.iter().zip(&path.states).enumerate() {
        let (f, f_t) = value.evaluate(t, x, &mut grad)?;
        v_star.copy_from_slice(&grad);
        let mut g = 0.0;
        if scenario.k() > 0 {
            let mu = multiplier.evaluate(t, x, &grad, scenario)?;
            let omega = scenario.omega(x);
            let push = omega.tr_mul_vec(&mu);
            for j in 0..n {
                v_star[j] -= push[j];
            }
            for c in v_star.iter_mut() {
                *c /= m;
            }
            g += dot(&mu, &constraint_image(scenario, x, &v_star));
        } else {
            for c in v_star.iter_mut() {
                *c /= m;
            }
        }
        g += scenario.lagrangian(x, &v_star) - f_t - dot(&v_star, &grad);
        integrand.push(g);
        if i == 0 {
            ends.0 = f;
        }
        if i == last {
            ends.1 = f;
        }
    }
    Ok(ends.1 - ends.0 + simpson(&path.times, &integrand)? - scenario.terminal_cost(path.end()))
}

pub fn gamma_functional(path: &Trajectory, field: &GridField, scenario: &Scenario) -> Result<f64> {
    gamma_functional_with(path, field, &GradientMultiplier, scenario)
}

/// The constant value of Γ: `-S(t₀, x₀)`.
pub fn gamma_reference(field: &GridField, scenario: &Scenario, x0: &[f64]) -> Result<f64> {
    Ok(-field.smooth(scenario.time_window()[0], x0)?.value)
}

fn check_amplitude(amplitude: f64) -> Result<()> {
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(Error::InvalidParam {
            name: "amplitude".into(),
            reason: format!("must be finite and non-negative, got {amplitude}"),
        });
    }
    Ok(())
}

/// `Σ_j c_j sin(jπs)` and its derivative in `s`.
fn fourier(coeffs: &[f64], s: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut slope = 0.0;
    for (j, c) in coeffs.iter().enumerate() {
        let w = (j + 1) as f64 * PI;
        let (sin, cos) = libm::sincos(w * s);
        value += c * sin;
        slope += c * w * cos;
    }
    (value, slope)
}

fn draw_coefficients(rng: &mut ChaCha8Rng, rows: usize, amplitude: f64) -> Vec<f64> {
    (0..rows * FOURIER_MODES)
        .map(|_| {
            if amplitude > 0.0 {
                rng.gen_range(-amplitude..=amplitude)
            } else {
                0.0
            }
        })
        .collect()
}

/// Orthonormal kernel frames along the base path, each obtained by projecting
/// the previous frame onto the new kernel, so the frame turns continuously.
fn transported_frames(base: &Trajectory, scenario: &Scenario) -> Result<Vec<Matrix>> {
    let n = scenario.n();
    let r = n - scenario.k();
    let mut frames: Vec<Matrix> = Vec::with_capacity(base.len());
    for x in &base.states {
        let factor = scenario.constraints().factor_at(x)?;
        let frame = match frames.last() {
            None => {
                if scenario.k() == 0 {
                    Matrix::identity(n)
                } else {
                    kernel_basis(&scenario.omega(x))?
                }
            }
            Some(prev) => {
                let mut frame = Matrix::zeros(n, r);
                let mut col = vec![0.0; n];
                for c in 0..r {
                    factor.project_kernel(&prev.column(c), &mut col);
                    for q in 0..c {
                        let earlier = frame.column(q);
                        let d = dot(&col, &earlier);
                        for (a, b) in col.iter_mut().zip(&earlier) {
                            *a -= d * b;
                        }
                    }
                    let len = libm::sqrt(dot(&col, &col));
                    if !(len > 1e-8) {
                        return Err(Error::BadSampling(
                            "kernel frame collapsed between samples; refine the base path".into(),
                        ));
                    }
                    for i in 0..n {
                        frame[(i, c)] = col[i] / len;
                    }
                }
                frame
            }
        };
        frames.push(frame);
    }
    Ok(frames)
}

/// Randomly perturbed admissible paths from the start of `base`.
///
/// Each sample moves with `ẋ = σ(x)[v(t) + B(t)δu(t)]`, where `v` is the base
/// velocity, `B` a continuously transported orthonormal frame of the kernel
/// along the base path and `δu` a sum of [`FOURIER_MODES`] sine modes with
/// coefficients uniform in `[-amplitude, amplitude]`. The modes vanish at
/// `t₀`; the end point is free. Applying `σ` at the current point keeps every
/// sample admissible to round-off.
pub fn admissible_perturbations(
    base: &Trajectory,
    scenario: &Scenario,
    count: usize,
    amplitude: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    check_sampling(&base.times)?;
    check_amplitude(amplitude)?;
    if amplitude == 0.0 {
        let mut copy = base.clone();
        copy.source = TrajectorySource::Perturbation;
        copy.multipliers = None;
        return Ok(vec![copy; count]);
    }
    let n = scenario.n();
    let r = n - scenario.k();
    let frames = transported_frames(base, scenario)?;
    let t0 = base.times[0];
    let span = base.times[base.len() - 1] - t0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut last_err = None;
        let mut accepted = None;
        for _ in 0..MAX_RETRIES {
            let coeffs = draw_coefficients(&mut rng, r, amplitude);
            match perturbed_path(base, scenario, &frames, &coeffs, t0, span) {
                Ok(p) => {
                    accepted = Some(p);
                    break;
                }
                Err(e @ Error::OutOfDomain { .. }) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        match accepted {
            Some(p) => out.push(p),
            None => return Err(last_err.expect("at least one attempt was made")),
        }
    }
    Ok(out)
}

fn perturbed_path(
    base: &Trajectory,
    scenario: &Scenario,
    frames: &[Matrix],
    coeffs: &[f64],
    t0: f64,
    span: f64,
) -> Result<Trajectory> {
    let n = scenario.n();
    let r = frames[0].cols();
    // Commanded velocity v(t) + B(t)δu(t), linear in time between samples.
    let commanded = |i: usize, t: f64, out: &mut [f64]| {
        let (ta, tb) = (base.times[i], base.times[i + 1]);
        let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let s = (t - t0) / span;
        for a in 0..n {
            out[a] = (1.0 - w) * base.velocities[i][a] + w * base.velocities[i + 1][a];
        }
        for c in 0..r {
            let (du, _) = fourier(&coeffs[c * FOURIER_MODES..(c + 1) * FOURIER_MODES], s);
            for a in 0..n {
                let b = (1.0 - w) * frames[i][(a, c)] + w * frames[i + 1][(a, c)];
                out[a] += b * du;
            }
        }
    };
    let velocity = |i: usize, t: f64, x: &[f64], out: &mut [f64]| -> Result<()> {
        let mut raw = [0.0; 8];
        let mut raw_heap;
        let raw: &mut [f64] = if n <= 8 {
            &mut raw[..n]
        } else {
            raw_heap = vec![0.0; n];
            &mut raw_heap
        };
        commanded(i, t, raw);
        scenario.constraints().factor_at(x)?.project_kernel(raw, out);
        Ok(())
    };

    let mut x = base.states[0].clone();
    let mut v = vec![0.0; n];
    let mut states = Vec::with_capacity(base.len());
    let mut velocities = Vec::with_capacity(base.len());
    let mut rk = Rk4::new(n);
    let last = base.len() - 1;
    for i in 0..=last {
        let seg = i.min(last - 1);
        velocity(seg, base.times[i], &x, &mut v)?;
        states.push(x.clone());
        velocities.push(v.clone());
        if i < last {
            let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| velocity(i, t, y, out);
            rk.step(&mut rhs, base.times[i], &mut x, base.times[i + 1] - base.times[i])?;
            scenario.check_in_domain(&x)?;
        }
    }
    Ok(Trajectory {
        times: base.times.clone(),
        states,
        velocities,
        multipliers: None,
        source: TrajectorySource::Perturbation,
    })
}

/// Fourier-perturbed straight lines `x₀ + w(t - t₀) + Σ c_j sin(jπs)`, with
/// `w = velocity + δw`; `δw` and every `c_j` are uniform in
/// `[-amplitude, amplitude]` per coordinate. No constraint is imposed.
pub fn random_paths(
    scenario: &Scenario,
    x0: &[f64],
    velocity: &[f64],
    times: &[f64],
    count: usize,
    amplitude: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    check_sampling(times)?;
    check_amplitude(amplitude)?;
    let n = scenario.n();
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut last_err = None;
        let mut accepted = None;
        'attempt: for _ in 0..MAX_RETRIES {
            let drift: Vec<f64> = (0..n)
                .map(|a| {
                    velocity[a]
                        + if amplitude > 0.0 {
                            rng.gen_range(-amplitude..=amplitude)
                        } else {
                            0.0
                        }
                })
                .collect();
            let coeffs = draw_coefficients(&mut rng, n, amplitude);
            let mut states = Vec::with_capacity(times.len());
            let mut velocities = Vec::with_capacity(times.len());
            for &t in times {
                let s = (t - t0) / span;
                let mut x = vec![0.0; n];
                let mut v = vec![0.0; n];
                for a in 0..n {
                    let (f, df) = fourier(&coeffs[a * FOURIER_MODES..(a + 1) * FOURIER_MODES], s);
                    x[a] = x0[a] + drift[a] * (t - t0) + f;
                    v[a] = drift[a] + df / span;
                }
                if let Err(e) = scenario.check_in_domain(&x) {
                    last_err = Some(e);
                    continue 'attempt;
                }
                states.push(x);
                velocities.push(v);
            }
            accepted = Some(Trajectory {
                times: times.to_vec(),
                states,
                velocities,
                multipliers: None,
                source: TrajectorySource::Perturbation,
            });
            break;
        }
        match accepted {
            Some(p) => out.push(p),
            None => return Err(last_err.expect("at least one attempt was made")),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditOptions {
    /// Integration steps of the candidate path and of every comparison path.
    pub steps: usize,
    pub slack_abs: f64,
    pub slack_rel: f64,
    /// Γ may deviate from its reference by this times `1 + |reference|`.
    pub gamma_tolerance: f64,
    /// Bound on `|Λ|` over admissible pairs.
    pub lagrange_tolerance: f64,
    /// Number of unconstrained random paths for the Γ check.
    pub gamma_paths: usize,
    pub gamma_amplitude: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            steps: crate::dynamics::DEFAULT_STEPS,
            slack_abs: 1e-6,
            slack_rel: 1e-6,
            gamma_tolerance: 1e-3,
            lagrange_tolerance: 1e-6,
            gamma_paths: 50,
            gamma_amplitude: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditTolerances {
    pub slack_abs: f64,
    pub slack_rel: f64,
    pub gamma: f64,
    pub lagrange: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditFlags {
    /// The candidate's action does not exceed any comparison action by more
    /// than the slack.
    pub minimality: bool,
    pub gamma_constancy: bool,
    pub lagrange_vanishing: bool,
}

impl AuditFlags {
    pub fn all(&self) -> bool {
        self.minimality && self.gamma_constancy && self.lagrange_vanishing
    }
}

/// Outcome of a sampled minimality audit. The comparison class is finite, so
/// a pass is evidence of minimality, not a proof.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub scenario: String,
    pub x0: Vec<f64>,
    pub seed: u64,
    pub amplitude: f64,
    pub action_of_candidate: f64,
    pub perturbation_actions: Vec<f64>,
    pub gamma_values: Vec<f64>,
    pub gamma_reference: f64,
    pub lagrange_functional_values: Vec<f64>,
    pub tolerances: AuditTolerances,
    pub flags: AuditFlags,
}

pub const EVIDENCE_NOTE: &str =
    "sampled comparison class: a pass is evidence of minimality, not a proof";

impl AuditReport {
    /// Recomputes the pass flags from the stored values and tolerances.
    pub fn evaluate(&self) -> AuditFlags {
        let tol = &self.tolerances;
        let a = self.action_of_candidate;
        let minimality = a.is_finite()
            && self
                .perturbation_actions
                .iter()
                .all(|&p| a <= p + tol.slack_abs + tol.slack_rel * p.abs());
        let gamma_bound = tol.gamma * (1.0 + self.gamma_reference.abs());
        let gamma_constancy = self
            .gamma_values
            .iter()
            .all(|g| (g - self.gamma_reference).abs() <= gamma_bound);
        let lagrange_vanishing = self
            .lagrange_functional_values
            .iter()
            .all(|l| l.abs() <= tol.lagrange);
        AuditFlags {
            minimality,
            gamma_constancy,
            lagrange_vanishing,
        }
    }

    pub fn passed(&self) -> bool {
        self.flags.all()
    }

    /// `action(perturbed) - action(candidate)` per comparison path.
    pub fn action_gaps(&self) -> Vec<f64> {
        self.perturbation_actions
            .iter()
            .map(|p| p - self.action_of_candidate)
            .collect()
    }

    /// `|action(candidate) - Γ reference|`.
    pub fn reference_gap(&self) -> f64 {
        (self.action_of_candidate - self.gamma_reference).abs()
    }

    pub fn max_gamma_deviation(&self) -> f64 {
        self.gamma_values
            .iter()
            .map(|g| (g - self.gamma_reference).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_lagrange(&self) -> f64 {
        self.lagrange_functional_values
            .iter()
            .map(|l| l.abs())
            .fold(0.0, f64::max)
    }
}

pub fn minimality_report(
    field: &GridField,
    scenario: &Scenario,
    x0: &[f64],
    count: usize,
    amplitude: f64,
    seed: u64,
) -> Result<AuditReport> {
    minimality_report_with(field, scenario, x0, count, amplitude, seed, &AuditOptions::default())
}

/// Integrates the value-function flow from `x₀` and compares it against
/// `count` admissible perturbations; Γ is additionally checked on unconstrained
/// random paths and Λ on every admissible pair.
pub fn minimality_report_with(
    field: &GridField,
    scenario: &Scenario,
    x0: &[f64],
    count: usize,
    amplitude: f64,
    seed: u64,
    options: &AuditOptions,
) -> Result<AuditReport> {
    let candidate = integrate_hj_flow(field, scenario, x0, options.steps)?;
    let action_of_candidate = action(&candidate, scenario)?;
    let perturbations = admissible_perturbations(&candidate, scenario, count, amplitude, seed)?;
    let perturbation_actions = perturbations
        .iter()
        .map(|p| action(p, scenario))
        .collect::<Result<Vec<_>>>()?;

    let gamma_ref = gamma_reference(field, scenario, x0)?;
    let free_paths = random_paths(
        scenario,
        x0,
        &candidate.velocities[0],
        &candidate.times,
        options.gamma_paths,
        options.gamma_amplitude,
        seed ^ 0x5eed_9a11_a5ce_u64,
    )?;
    let mut gamma_values = Vec::with_capacity(free_paths.len() + 1);
    gamma_values.push(gamma_functional(&candidate, field, scenario)?);
    for p in &free_paths {
        gamma_values.push(gamma_functional(p, field, scenario)?);
    }

    let mut lagrange_functional_values = Vec::with_capacity(perturbations.len() + 1);
    lagrange_functional_values.push(lagrange_functional(&candidate, field, scenario)?);
    for p in &perturbations {
        lagrange_functional_values.push(lagrange_functional(p, field, scenario)?);
    }

    let mut report = AuditReport {
        scenario: scenario.name().into(),
        x0: x0.to_vec(),
        seed,
        amplitude,
        action_of_candidate,
        perturbation_actions,
        gamma_values,
        gamma_reference: gamma_ref,
        lagrange_functional_values,
        tolerances: AuditTolerances {
            slack_abs: options.slack_abs,
            slack_rel: options.slack_rel,
            gamma: options.gamma_tolerance,
            lagrange: options.lagrange_tolerance,
        },
        flags: AuditFlags {
            minimality: false,
            gamma_constancy: false,
            lagrange_vanishing: false,
        },
    };
    report.flags = report.evaluate();
    Ok(report)
}
