//! Backward solution of the projected Hamilton–Jacobi equation
//!
//! ```text
//! S_t + (1/2m) ∇S·σ(x)∇S + V(x) = 0,    S(t₁, x) = S₁(x)
//! ```
//!
//! on a uniform grid, plus its residual and a method-of-characteristics
//! cross-check that needs no grid at all.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{node_gradient, GridField, GridSpec};
use crate::linalg::dot;
use crate::ode::Rk4;
use crate::scenario::Scenario;

/// Default bound on `max |∇S|` before the solve is declared blown up.
pub const GRADIENT_BOUND: f64 = 1e6;
/// `Δt·max|σ∇S|/m` may not exceed this fraction of the smallest spacing.
pub const COURANT_FRACTION: f64 = 0.5;
/// Substeps allowed inside one time step before giving up.
pub const MAX_SUBSTEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub gradient_bound: f64,
    pub courant_fraction: f64,
    /// When the characteristic speed grows during the sweep, a time step is
    /// split into this many substeps at most.
    pub max_substeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gradient_bound: GRADIENT_BOUND,
            courant_fraction: COURANT_FRACTION,
            max_substeps: MAX_SUBSTEPS,
        }
    }
}

/// `H(x, p) = (1/2m) p·σ(x)p + V(x)`.
pub fn hamiltonian(x: &[f64], p: &[f64], scenario: &Scenario) -> Result<f64> {
    let n = scenario.n();
    if x.len() != n || p.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "hamiltonian needs two {n}-vectors, got {} and {}",
            x.len(),
            p.len()
        )));
    }
    let factor = scenario.constraints().factor_at(x)?;
    Ok(factor.kernel_quadratic_form(p) / (2.0 * scenario.mass()) + scenario.potential(x))
}

/// Per-node data that does not change during the sweep.
struct NodeGeometry {
    n: usize,
    k: usize,
    /// `L⁻¹Ω` per node, `k x n` each.
    whitened: Vec<f64>,
    potential: Vec<f64>,
}

impl NodeGeometry {
    fn new(scenario: &Scenario, spec: &GridSpec, constrained: bool) -> Result<Self> {
        check_spec(scenario, spec)?;
        let n = spec.dim();
        let k = if constrained { scenario.k() } else { 0 };
        let count = spec.node_count();
        let mut whitened = Vec::with_capacity(count * k * n);
        let mut potential = Vec::with_capacity(count);
        let mut idx = vec![0; n];
        let mut x = vec![0.0; n];
        for _ in 0..count {
            spec.node_point(&idx, &mut x);
            potential.push(scenario.potential(&x));
            if k > 0 {
                let factor = scenario.constraints().factor_at(&x)?;
                whitened.extend_from_slice(&factor.whitened_omega());
            }
            spec.next_index(&mut idx);
        }
        Ok(Self {
            n,
            k,
            whitened,
            potential,
        })
    }

    /// `p·σp` at a node.
    #[inline]
    fn kernel_form(&self, flat: usize, p: &[f64]) -> f64 {
        let pp = dot(p, p);
        if self.k == 0 {
            return pp;
        }
        let w = &self.whitened[flat * self.k * self.n..(flat + 1) * self.k * self.n];
        let mut removed = 0.0;
        for row in w.chunks_exact(self.n) {
            let c = dot(row, p);
            removed += c * c;
        }
        (pp - removed).max(0.0)
    }
}

fn check_spec(scenario: &Scenario, spec: &GridSpec) -> Result<()> {
    if spec.dim() != scenario.n() {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} axes, scenario `{}` has n = {}",
            spec.dim(),
            scenario.name(),
            scenario.n()
        )));
    }
    Ok(())
}

/// Largest gradient norm and largest projected gradient norm of a sweep;
/// infinite when anything was not finite.
#[derive(Clone, Copy, Debug)]
struct SweepMaxima {
    gradient: f64,
    projected: f64,
}

impl SweepMaxima {
    const ZERO: Self = Self {
        gradient: 0.0,
        projected: 0.0,
    };

    fn merge(self, other: Self) -> Self {
        Self {
            gradient: self.gradient.max(other.gradient),
            projected: self.projected.max(other.projected),
        }
    }
}

const CHUNK: usize = 4096;

/// Writes `H(x, ∇S)` at every node of `slice` into `out`.
fn hamiltonian_sweep(
    spec: &GridSpec,
    geom: &NodeGeometry,
    mass: f64,
    slice: &[f64],
    out: &mut [f64],
) -> SweepMaxima {
    let chunk_body = |chunk_index: usize, out: &mut [f64]| -> SweepMaxima {
        let n = geom.n;
        let start = chunk_index * CHUNK;
        let mut idx = [0usize; crate::grid::MAX_GRID_DIM];
        spec.unravel(start, &mut idx[..n]);
        let mut g = [0.0; crate::grid::MAX_GRID_DIM];
        let mut maxima = SweepMaxima::ZERO;
        for (offset, h) in out.iter_mut().enumerate() {
            let flat = start + offset;
            node_gradient(spec, slice, flat, &idx[..n], &mut g[..n]);
            let gg = dot(&g[..n], &g[..n]);
            let form = geom.kernel_form(flat, &g[..n]);
            *h = form / (2.0 * mass) + geom.potential[flat];
            if gg.is_finite() && h.is_finite() {
                maxima.gradient = maxima.gradient.max(gg);
                maxima.projected = maxima.projected.max(form);
            } else {
                maxima.gradient = f64::INFINITY;
                maxima.projected = f64::INFINITY;
            }
            spec.next_index(&mut idx[..n]);
        }
        maxima
    };

    #[cfg(feature = "parallel")]
    let maxima = {
        use rayon::prelude::*;
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(c, o)| chunk_body(c, o))
            .reduce(|| SweepMaxima::ZERO, SweepMaxima::merge)
    };
    #[cfg(not(feature = "parallel"))]
    let maxima = out
        .chunks_mut(CHUNK)
        .enumerate()
        .map(|(c, o)| chunk_body(c, o))
        .fold(SweepMaxima::ZERO, SweepMaxima::merge);

    SweepMaxima {
        gradient: libm::sqrt(maxima.gradient),
        projected: libm::sqrt(maxima.projected),
    }
}

/// Solves the projected equation backward from `S₁` with RK4 in time and
/// second-order differences in space.
pub fn solve_terminal_value(scenario: &Scenario, spec: &GridSpec) -> Result<GridField> {
    solve_with(scenario, spec, &SolverOptions::default(), true)
}

pub fn solve_terminal_value_with(
    scenario: &Scenario,
    spec: &GridSpec,
    options: &SolverOptions,
) -> Result<GridField> {
    solve_with(scenario, spec, options, true)
}

/// The classical equation `S_t + |∇S|²/2m + V = 0`, ignoring any constraint.
pub fn solve_classical(scenario: &Scenario, spec: &GridSpec) -> Result<GridField> {
    solve_with(scenario, spec, &SolverOptions::default(), false)
}

fn solve_with(
    scenario: &Scenario,
    spec: &GridSpec,
    options: &SolverOptions,
    constrained: bool,
) -> Result<GridField> {
    let geom = NodeGeometry::new(scenario, spec, constrained)?;
    let nodes = spec.node_count();
    let steps = spec.steps();
    let mass = scenario.mass();
    let dt = spec.dt();
    let limit = options.courant_fraction * spec.min_spacing();

    let mut values = vec![0.0; (steps + 1) * nodes];
    {
        let terminal = &mut values[steps * nodes..];
        let mut idx = vec![0; spec.dim()];
        let mut x = vec![0.0; spec.dim()];
        for s in terminal.iter_mut() {
            spec.node_point(&idx, &mut x);
            *s = scenario.terminal_cost(&x);
            spec.next_index(&mut idx);
        }
    }

    let mut cur = values[steps * nodes..].to_vec();
    let mut tmp = vec![0.0; nodes];
    let mut k1 = vec![0.0; nodes];
    let mut k2 = vec![0.0; nodes];
    let mut k3 = vec![0.0; nodes];
    let mut k4 = vec![0.0; nodes];

    for j in (1..=steps).rev() {
        let mut remaining = dt;
        let mut substeps = 0usize;
        while remaining > 0.0 {
            let elapsed = dt - remaining;
            let time = spec.time(j) - elapsed;
            let maxima = hamiltonian_sweep(spec, &geom, mass, &cur, &mut k1);
            if !(maxima.gradient <= options.gradient_bound) {
                return Err(Error::BlowUp {
                    time_index: if substeps == 0 { j } else { j - 1 },
                    time,
                    max_gradient: maxima.gradient,
                    bound: options.gradient_bound,
                });
            }
            let allowed = if maxima.projected > 0.0 {
                limit * mass / maxima.projected
            } else {
                f64::INFINITY
            };
            let h = if remaining <= allowed {
                remaining
            } else if j == steps && substeps == 0 {
                // The step size is wrong for the data itself.
                return Err(Error::StabilityViolation {
                    time_index: j,
                    time,
                    courant: dt * maxima.projected / mass,
                    limit,
                });
            } else {
                allowed
            };
            substeps += 1;
            if substeps > options.max_substeps {
                return Err(Error::BlowUp {
                    time_index: j - 1,
                    time,
                    max_gradient: maxima.gradient,
                    bound: options.gradient_bound,
                });
            }

            // dS/dτ = H with τ = t₁ - t, so a backward step adds h·H.
            for i in 0..nodes {
                tmp[i] = cur[i] + 0.5 * h * k1[i];
            }
            hamiltonian_sweep(spec, &geom, mass, &tmp, &mut k2);
            for i in 0..nodes {
                tmp[i] = cur[i] + 0.5 * h * k2[i];
            }
            hamiltonian_sweep(spec, &geom, mass, &tmp, &mut k3);
            for i in 0..nodes {
                tmp[i] = cur[i] + h * k3[i];
            }
            hamiltonian_sweep(spec, &geom, mass, &tmp, &mut k4);
            for i in 0..nodes {
                cur[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            remaining = if h == remaining { 0.0 } else { remaining - h };
        }
        values[(j - 1) * nodes..j * nodes].copy_from_slice(&cur);
    }

    let maxima = hamiltonian_sweep(spec, &geom, mass, &cur, &mut k1);
    if !(maxima.gradient <= options.gradient_bound) {
        return Err(Error::BlowUp {
            time_index: 0,
            time: spec.time(0),
            max_gradient: maxima.gradient,
            bound: options.gradient_bound,
        });
    }
    Ok(GridField::from_values(spec.clone(), scenario.name(), values))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
    pub samples: usize,
}

/// `|D_t S + H(x, ∇S)|` over interior times and nodes off the non-periodic
/// boundary, with central differences in time.
pub fn pde_residual(field: &GridField, scenario: &Scenario) -> Result<ResidualStats> {
    let spec = field.spec();
    if spec.steps() < 2 {
        return Err(Error::InvalidGrid(
            "the residual needs at least 2 time steps".into(),
        ));
    }
    let geom = NodeGeometry::new(scenario, spec, true)?;
    let n = spec.dim();
    let mass = scenario.mass();
    let dt = spec.dt();
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut samples = 0usize;
    let mut idx = vec![0; n];
    let mut g = vec![0.0; n];
    for j in 1..spec.steps() {
        let (before, here, after) = (field.slice(j - 1), field.slice(j), field.slice(j + 1));
        idx.fill(0);
        for flat in 0..spec.node_count() {
            if !spec.on_boundary(&idx) {
                node_gradient(spec, here, flat, &idx, &mut g);
                let h = geom.kernel_form(flat, &g) / (2.0 * mass) + geom.potential[flat];
                let r = ((after[flat] - before[flat]) / (2.0 * dt) + h).abs();
                max = if r.is_nan() { f64::INFINITY } else { max.max(r) };
                sum += r;
                samples += 1;
            }
            spec.next_index(&mut idx);
        }
    }
    Ok(ResidualStats {
        max,
        mean: if samples > 0 { sum / samples as f64 } else { 0.0 },
        samples,
    })
}

/// A characteristic curve of the equation, ordered by increasing time.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub momenta: Vec<Vec<f64>>,
    /// Value `S(t, x(t))` transported along the curve.
    pub values: Vec<f64>,
}

impl CharacteristicPath {
    /// Largest `|H(t) - H(t₁)|` along the path.
    pub fn hamiltonian_drift(&self, scenario: &Scenario) -> Result<f64> {
        let last = self.times.len() - 1;
        let end = hamiltonian(&self.states[last], &self.momenta[last], scenario)?;
        let mut drift = 0.0f64;
        for (x, p) in self.states.iter().zip(&self.momenta) {
            drift = drift.max((hamiltonian(x, p, scenario)? - end).abs());
        }
        Ok(drift)
    }
}

/// Integrates `ẋ = σp/m`, `ṗ = -∂H/∂x`, `ż = p·ẋ - H` backward from
/// `(t₁, x_end, p_end)` with `z(t₁) = S₁(x_end)`.
///
/// With `μ = (ΩΩᵀ)⁻¹Ωp`, differentiating the projector gives
/// `∂ᵢ(p·σp) = -2 μᵀ(∂ᵢΩ)σp`, so no derivative of `σ` is ever formed.
pub fn characteristic_flow(
    x_end: &[f64],
    p_end: &[f64],
    scenario: &Scenario,
    steps: usize,
) -> Result<CharacteristicPath> {
    let n = scenario.n();
    let k = scenario.k();
    if x_end.len() != n || p_end.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "characteristic needs two {n}-vectors, got {} and {}",
            x_end.len(),
            p_end.len()
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidParam {
            name: "steps".into(),
            reason: "must be positive".into(),
        });
    }
    let mass = scenario.mass();
    let constraints = scenario.constraints();
    let mut sp = vec![0.0; n];
    let mut mu = vec![0.0; k];
    let mut grad_v = vec![0.0; n];
    let mut unit = vec![0.0; n];
    let mut rhs = |_t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        let (x, p) = (&y[..n], &y[n..2 * n]);
        let factor = constraints.factor_at(x)?;
        factor.project_kernel(p, &mut sp);
        factor.multiplier(p, &mut mu);
        scenario.potential_gradient_into(x, &mut grad_v);
        for i in 0..n {
            out[i] = sp[i] / mass;
        }
        for i in 0..n {
            let mut bend = 0.0;
            if k > 0 {
                unit.fill(0.0);
                unit[i] = 1.0;
                let d_omega = constraints.omega_dir_deriv(x, &unit);
                for r in 0..k {
                    bend += mu[r] * dot(d_omega.row(r), &sp);
                }
            }
            out[n + i] = bend / mass - grad_v[i];
        }
        let form = dot(p, &sp);
        out[2 * n] = form / mass - (form / (2.0 * mass) + scenario.potential(x));
        Ok(())
    };

    let [t0, t1] = scenario.time_window();
    let h = -(t1 - t0) / steps as f64;
    let mut y = Vec::with_capacity(2 * n + 1);
    y.extend_from_slice(x_end);
    y.extend_from_slice(p_end);
    y.push(scenario.terminal_cost(x_end));

    let mut path = CharacteristicPath {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        momenta: Vec::with_capacity(steps + 1),
        values: Vec::with_capacity(steps + 1),
    };
    let record = |t: f64, y: &[f64], path: &mut CharacteristicPath| {
        path.times.push(t);
        path.states.push(y[..n].to_vec());
        path.momenta.push(y[n..2 * n].to_vec());
        path.values.push(y[2 * n]);
    };
    record(t1, &y, &mut path);
    let mut rk = Rk4::new(2 * n + 1);
    for step in 1..=steps {
        let t = t1 + (step - 1) as f64 * h;
        rk.step(&mut rhs, t, &mut y, h)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure {
                step,
                time: t + h,
            });
        }
        let t_next = if step == steps { t0 } else { t1 + step as f64 * h };
        record(t_next, &y, &mut path);
    }
    path.times.reverse();
    path.states.reverse();
    path.momenta.reverse();
    path.values.reverse();
    Ok(path)
}
