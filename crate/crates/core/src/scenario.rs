//! Problem instances: Lagrangian `L = ½ m v·v - V(x)`, Pfaffian constraints,
//! terminal cost `S₁`, spatial domain and time window.
//!
//! Kinetic energy is isotropic with a single scalar mass. Systems with
//! distinct inertias must be rescaled into isotropic coordinates before they
//! are encoded here.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;
use core::fmt;

use crate::error::{Error, Result};
use crate::geometry::{ConstraintSpec, Pfaffian};
use crate::linalg::{dot, Matrix};

/// A differentiable scalar map on configuration space.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

/// `c·x + q |x|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticField {
    pub linear: Vec<f64>,
    pub quadratic: f64,
}

impl ScalarField for QuadraticField {
    fn value(&self, x: &[f64]) -> f64 {
        dot(&self.linear, x) + self.quadratic * dot(x, x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = self.linear[i] + 2.0 * self.quadratic * x[i];
        }
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A scalar field assembled from a value closure and a gradient closure.
pub struct FnField {
    value: Box<ValueFn>,
    gradient: Box<GradientFn>,
}

impl FnField {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }
}

impl ScalarField for FnField {
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
}

/// A constraint matrix that does not depend on the configuration.
#[derive(Clone, Debug)]
pub struct ConstantConstraint {
    omega: Matrix,
}

impl ConstantConstraint {
    pub fn new(omega: Matrix) -> Self {
        Self { omega }
    }
}

impl Pfaffian for ConstantConstraint {
    fn dim(&self) -> usize {
        self.omega.cols()
    }

    fn count(&self) -> usize {
        self.omega.rows()
    }

    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.omega.as_slice());
    }

    fn dir_deriv(&self, _x: &[f64], _d: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
}

/// No-slip knife edge (unicycle) in the plane: configuration `(x₁, x₂, θ)`,
/// constraint `sin θ ẋ₁ - cos θ ẋ₂ = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct KnifeEdgeConstraint;

impl Pfaffian for KnifeEdgeConstraint {
    fn dim(&self) -> usize {
        3
    }

    fn count(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (s, c) = libm::sincos(x[2]);
        out[0] = s;
        out[1] = -c;
        out[2] = 0.0;
    }

    fn dir_deriv(&self, x: &[f64], d: &[f64], out: &mut [f64]) -> bool {
        let (s, c) = libm::sincos(x[2]);
        out[0] = c * d[2];
        out[1] = s * d[2];
        out[2] = 0.0;
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    FreeParticle,
    Harmonic1d,
    RailGravity,
    KnifeEdge,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [
        Builtin::FreeParticle,
        Builtin::Harmonic1d,
        Builtin::RailGravity,
        Builtin::KnifeEdge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::FreeParticle => "free_particle",
            Builtin::Harmonic1d => "harmonic_1d",
            Builtin::RailGravity => "rail_gravity",
            Builtin::KnifeEdge => "knife_edge",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| Error::UnknownScenario(name.to_string()))
    }

    /// Parameter keys this built-in understands.
    pub fn accepted_params(self) -> &'static [&'static str] {
        match self {
            Builtin::FreeParticle => &["n", "mass", "p", "q", "domain", "time_window"],
            Builtin::Harmonic1d => &["mass", "omega_osc", "a1", "b1", "domain", "time_window"],
            Builtin::RailGravity => &["mass", "g", "p1", "domain", "time_window"],
            Builtin::KnifeEdge => &["mass", "p", "g", "domain", "time_window"],
        }
    }

    /// Grid cells per axis and time steps used when nothing else is asked for.
    pub fn default_resolution(self) -> (Vec<usize>, usize) {
        match self {
            Builtin::FreeParticle => (vec![32], 64),
            Builtin::Harmonic1d => (vec![128], 512),
            Builtin::RailGravity => (vec![32, 32], 64),
            Builtin::KnifeEdge => (vec![48, 48, 48], 400),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Overrides for a built-in scenario. `None` means "use the default".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioParams {
    /// Dimension (free particle only).
    pub n: Option<usize>,
    pub mass: Option<f64>,
    /// Linear terminal-cost coefficients.
    pub p: Option<Vec<f64>>,
    /// Quadratic terminal-cost coefficient (free particle).
    pub q: Option<f64>,
    pub omega_osc: Option<f64>,
    pub a1: Option<f64>,
    pub b1: Option<f64>,
    /// Gravitational acceleration (rail, or incline for the knife edge).
    pub g: Option<f64>,
    pub p1: Option<f64>,
    pub domain: Option<Vec<[f64; 2]>>,
    pub time_window: Option<[f64; 2]>,
}

impl ScenarioParams {
    fn present_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut add = |flag: bool, key| {
            if flag {
                keys.push(key)
            }
        };
        add(self.n.is_some(), "n");
        add(self.mass.is_some(), "mass");
        add(self.p.is_some(), "p");
        add(self.q.is_some(), "q");
        add(self.omega_osc.is_some(), "omega_osc");
        add(self.a1.is_some(), "a1");
        add(self.b1.is_some(), "b1");
        add(self.g.is_some(), "g");
        add(self.p1.is_some(), "p1");
        add(self.domain.is_some(), "domain");
        add(self.time_window.is_some(), "time_window");
        keys
    }
}

/// A fully specified problem. Immutable once built.
#[derive(Clone)]
pub struct Scenario {
    name: String,
    origin: Option<(Builtin, ScenarioParams)>,
    mass: f64,
    potential: Arc<dyn ScalarField>,
    terminal_cost: Arc<dyn ScalarField>,
    constraints: ConstraintSpec,
    domain: Vec<[f64; 2]>,
    periodic: Vec<bool>,
    time_window: [f64; 2],
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("origin", &self.origin)
            .field("mass", &self.mass)
            .field("constraints", &self.constraints)
            .field("domain", &self.domain)
            .field("periodic", &self.periodic)
            .field("time_window", &self.time_window)
            .finish()
    }
}

fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name: name.to_string(),
        reason: reason.into(),
    }
}

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(name, "must be finite"))
    }
}

impl Scenario {
    /// Builds a custom scenario; all fields are validated.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        mass: f64,
        potential: Arc<dyn ScalarField>,
        terminal_cost: Arc<dyn ScalarField>,
        constraints: ConstraintSpec,
        domain: Vec<[f64; 2]>,
        periodic: Vec<bool>,
        time_window: [f64; 2],
    ) -> Result<Self> {
        let n = constraints.n();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(invalid("mass", format!("must be positive and finite, got {mass}")));
        }
        if domain.len() != n || periodic.len() != n {
            return Err(invalid(
                "domain",
                format!("expected {n} intervals, got {}", domain.len()),
            ));
        }
        for (i, [lo, hi]) in domain.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid("domain", format!("axis {i}: [{lo}, {hi}] is not an interval")));
            }
        }
        let [t0, t1] = time_window;
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(invalid("time_window", format!("[{t0}, {t1}] needs t0 < t1")));
        }
        Ok(Self {
            name: name.into(),
            origin: None,
            mass,
            potential,
            terminal_cost,
            constraints,
            domain,
            periodic,
            time_window,
        })
    }

    /// One of the built-in problems with `params` overriding its defaults.
    pub fn builtin(kind: Builtin, params: &ScenarioParams) -> Result<Self> {
        for key in params.present_keys() {
            if !kind.accepted_params().contains(&key) {
                return Err(invalid(key, format!("not a parameter of {kind}")));
            }
        }
        let mass = check_finite("mass", params.mass.unwrap_or(1.0))?;
        if mass <= 0.0 {
            return Err(invalid("mass", format!("must be positive, got {mass}")));
        }
        let time_window = params.time_window.unwrap_or([0.0, 1.0]);

        let mut resolved = ScenarioParams {
            mass: Some(mass),
            time_window: Some(time_window),
            ..ScenarioParams::default()
        };

        let (potential, terminal, constraints, default_domain, periodic) = match kind {
            Builtin::FreeParticle => {
                let n = params.n.unwrap_or(2);
                if n == 0 {
                    return Err(invalid("n", "dimension must be at least 1"));
                }
                let p = match &params.p {
                    Some(p) => p.clone(),
                    None => {
                        let mut p = vec![0.0; n];
                        p[0] = 1.0;
                        p
                    }
                };
                check_len("p", &p, n)?;
                let q = check_finite("q", params.q.unwrap_or(0.0))?;
                resolved.n = Some(n);
                resolved.p = Some(p.clone());
                resolved.q = Some(q);
                (
                    QuadraticField {
                        linear: vec![0.0; n],
                        quadratic: 0.0,
                    },
                    QuadraticField {
                        linear: p,
                        quadratic: q,
                    },
                    ConstraintSpec::unconstrained(n),
                    vec![[-2.0, 2.0]; n],
                    vec![false; n],
                )
            }
            Builtin::Harmonic1d => {
                let w = check_finite("omega_osc", params.omega_osc.unwrap_or(1.0))?;
                if w < 0.0 {
                    return Err(invalid("omega_osc", "must be non-negative"));
                }
                let a1 = check_finite("a1", params.a1.unwrap_or(0.0))?;
                let b1 = check_finite("b1", params.b1.unwrap_or(0.0))?;
                resolved.omega_osc = Some(w);
                resolved.a1 = Some(a1);
                resolved.b1 = Some(b1);
                (
                    QuadraticField {
                        linear: vec![0.0],
                        quadratic: 0.5 * mass * w * w,
                    },
                    QuadraticField {
                        linear: vec![b1],
                        quadratic: a1,
                    },
                    ConstraintSpec::unconstrained(1),
                    vec![[-2.0, 2.0]],
                    vec![false],
                )
            }
            Builtin::RailGravity => {
                let g = check_finite("g", params.g.unwrap_or(1.0))?;
                let p1 = check_finite("p1", params.p1.unwrap_or(1.0))?;
                resolved.g = Some(g);
                resolved.p1 = Some(p1);
                (
                    QuadraticField {
                        linear: vec![0.0, mass * g],
                        quadratic: 0.0,
                    },
                    QuadraticField {
                        linear: vec![p1, 0.0],
                        quadratic: 0.0,
                    },
                    ConstraintSpec::new(ConstantConstraint::new(Matrix::from_row_slice(
                        1,
                        2,
                        &[0.0, 1.0],
                    ))),
                    vec![[-2.0, 2.0]; 2],
                    vec![false; 2],
                )
            }
            Builtin::KnifeEdge => {
                let p = params.p.clone().unwrap_or_else(|| vec![1.0, 0.0, 0.0]);
                check_len("p", &p, 3)?;
                if p[2] != 0.0 {
                    return Err(invalid(
                        "p",
                        "the heading axis is periodic, so the terminal cost cannot be linear in it (p[2] must be 0)",
                    ));
                }
                let g = check_finite("g", params.g.unwrap_or(0.0))?;
                resolved.p = Some(p.clone());
                resolved.g = Some(g);
                (
                    QuadraticField {
                        linear: vec![mass * g, 0.0, 0.0],
                        quadratic: 0.0,
                    },
                    QuadraticField {
                        linear: p,
                        quadratic: 0.0,
                    },
                    ConstraintSpec::new(KnifeEdgeConstraint),
                    vec![[-2.0, 2.0], [-2.0, 2.0], [0.0, TAU]],
                    vec![false, false, true],
                )
            }
        };

        let domain = params.domain.clone().unwrap_or(default_domain.clone());
        if kind == Builtin::KnifeEdge && domain.len() == 3 && domain[2] != [0.0, TAU] {
            return Err(invalid("domain", "the heading axis must span [0, 2π]"));
        }
        resolved.domain = Some(domain.clone());

        let mut s = Self::new(
            kind.name(),
            mass,
            Arc::new(potential),
            Arc::new(terminal),
            constraints,
            domain,
            periodic,
            time_window,
        )?;
        s.origin = Some((kind, resolved));
        Ok(s)
    }

    pub fn builtin_by_name(name: &str, params: &ScenarioParams) -> Result<Self> {
        Self::builtin(Builtin::from_name(name)?, params)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The built-in this scenario came from, with every parameter resolved.
    pub fn origin(&self) -> Option<(Builtin, &ScenarioParams)> {
        self.origin.as_ref().map(|(b, p)| (*b, p))
    }

    pub fn n(&self) -> usize {
        self.constraints.n()
    }

    pub fn k(&self) -> usize {
        self.constraints.k()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        self.potential.value(x)
    }

    pub fn potential_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        self.potential.gradient(x, &mut g);
        g
    }

    pub fn potential_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.potential.gradient(x, out);
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.terminal_cost.value(x)
    }

    pub fn terminal_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        self.terminal_cost.gradient(x, &mut g);
        g
    }

    pub fn constraints(&self) -> &ConstraintSpec {
        &self.constraints
    }

    pub fn omega(&self, x: &[f64]) -> Matrix {
        self.constraints.omega(x)
    }

    pub fn domain(&self) -> &[[f64; 2]] {
        &self.domain
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn time_window(&self) -> [f64; 2] {
        self.time_window
    }

    /// Lagrangian `½ m |v|² - V(x)`.
    pub fn lagrangian(&self, x: &[f64], v: &[f64]) -> f64 {
        0.5 * self.mass * dot(v, v) - self.potential(x)
    }

    /// Total energy `½ m |v|² + V(x)`.
    pub fn energy(&self, x: &[f64], v: &[f64]) -> f64 {
        0.5 * self.mass * dot(v, v) + self.potential(x)
    }

    /// Whether `x` lies in the domain along every non-periodic axis.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.check_in_domain(x).is_ok()
    }

    pub fn check_in_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, scenario has n = {}",
                x.len(),
                self.n()
            )));
        }
        for (axis, (&xi, (&[lo, hi], &per))) in
            x.iter().zip(self.domain.iter().zip(&self.periodic)).enumerate()
        {
            if !xi.is_finite() || (!per && (xi < lo || xi > hi)) {
                return Err(Error::OutOfDomain {
                    axis,
                    coordinate: xi,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    /// Smallest distance from `x` to a non-periodic boundary, as a fraction
    /// of that axis' width.
    pub fn boundary_margin(&self, x: &[f64]) -> f64 {
        let mut margin = f64::INFINITY;
        for (i, &[lo, hi]) in self.domain.iter().enumerate() {
            if self.periodic[i] {
                continue;
            }
            let w = hi - lo;
            margin = margin.min((x[i] - lo) / w).min((hi - x[i]) / w);
        }
        margin
    }
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(invalid(name, format!("expected {n} entries, got {}", v.len())));
    }
    for &x in v {
        check_finite(name, x)?;
    }
    Ok(())
}
