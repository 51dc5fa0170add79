//! Reference solutions written independently of the crate's solvers.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use nhj_core::geometry::{ConstraintSpec, Pfaffian};
use nhj_core::linalg::Matrix;
use nhj_core::scenario::{Builtin, FnField, Scenario, ScenarioParams};

pub fn builtin(kind: Builtin) -> Scenario {
    Scenario::builtin(kind, &ScenarioParams::default()).unwrap()
}

pub fn harmonic(a1: f64) -> Scenario {
    Scenario::builtin(
        Builtin::Harmonic1d,
        &ScenarioParams {
            a1: Some(a1),
            ..Default::default()
        },
    )
    .unwrap()
}

/// Coefficients `(a, b, c)` of `S = a x² + b x + c` at time-to-go `tau` for
/// the oscillator, from `a' = 2a²/m + mω²/2`, `b' = 2ab/m`, `c' = b²/2m`
/// integrated by a fine fixed-step RK4 written here.
pub fn riccati(tau: f64, mass: f64, omega: f64, a1: f64, b1: f64) -> (f64, f64, f64) {
    let rhs = |y: [f64; 3]| {
        [
            2.0 * y[0] * y[0] / mass + 0.5 * mass * omega * omega,
            2.0 * y[0] * y[1] / mass,
            y[1] * y[1] / (2.0 * mass),
        ]
    };
    let steps = 20_000;
    let h = tau / steps as f64;
    let mut y = [a1, b1, 0.0];
    let axpy = |y: [f64; 3], k: [f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
    for _ in 0..steps {
        let k1 = rhs(y);
        let k2 = rhs(axpy(y, k1, h / 2.0));
        let k3 = rhs(axpy(y, k2, h / 2.0));
        let k4 = rhs(axpy(y, k3, h));
        for i in 0..3 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (y[0], y[1], y[2])
}

/// Free particle in one dimension with terminal cost `amp sin x`.
pub fn sine_particle(amp: f64) -> Scenario {
    Scenario::new(
        "sine_terminal",
        1.0,
        Arc::new(FnField::new(|_: &[f64]| 0.0, |_: &[f64], g: &mut [f64]| g[0] = 0.0)),
        Arc::new(FnField::new(
            move |x: &[f64]| amp * x[0].sin(),
            move |x: &[f64], g: &mut [f64]| g[0] = amp * x[0].cos(),
        )),
        ConstraintSpec::unconstrained(1),
        vec![[-2.0, 2.0]],
        vec![false],
        [0.0, 1.0],
    )
    .unwrap()
}

/// Exact value for [`sine_particle`] with unit mass: the characteristic
/// through `x` starts at `y = x + tau f'(y)` and
/// `S = f(y) - tau f'(y)² / 2`.
pub fn sine_exact(tau: f64, x: f64, amp: f64) -> f64 {
    let mut y = x;
    for _ in 0..100 {
        let r = y - x - tau * amp * y.cos();
        y -= r / (1.0 + tau * amp * y.sin());
    }
    let slope = amp * y.cos();
    amp * y.sin() - 0.5 * tau * slope * slope
}

/// Knife edge launched at speed `u` along its heading and turning at rate
/// `w`: position on a circle of radius `u / w`.
pub fn unicycle_circle(x0: [f64; 3], u: f64, w: f64, t: f64) -> [f64; 3] {
    let th = x0[2] + w * t;
    [
        x0[0] + u / w * (th.sin() - x0[2].sin()),
        x0[1] - u / w * (th.cos() - x0[2].cos()),
        th,
    ]
}

/// Row-space projector from a singular value decomposition.
pub fn svd_projector(omega: &Matrix) -> DMatrix<f64> {
    let (k, n) = (omega.rows(), omega.cols());
    if k == 0 {
        return DMatrix::zeros(n, n);
    }
    let m = DMatrix::from_row_slice(k, n, omega.as_slice());
    let svd = m.svd(false, true);
    let vt = svd.v_t.unwrap();
    let top = svd.singular_values[0];
    let mut p = DMatrix::zeros(n, n);
    for (r, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-12 * top {
            let row = vt.row(r);
            p += row.transpose() * row;
        }
    }
    p
}

pub fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Two non-integrable constraints in four dimensions,
/// `ẋ₃ = x₂ ẋ₁`, `ẋ₄ = cos(x₁) ẋ₂ + x₃ ẋ₁`.
#[derive(Clone, Copy, Debug)]
pub struct TwoConstraints;

impl Pfaffian for TwoConstraints {
    fn dim(&self) -> usize {
        4
    }

    fn count(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[x[1], 0.0, -1.0, 0.0, x[2], x[0].cos(), 0.0, -1.0]);
    }

    fn dir_deriv(&self, x: &[f64], d: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&[d[1], 0.0, 0.0, 0.0, d[2], -x[0].sin() * d[0], 0.0, 0.0]);
        true
    }
}

/// `TwoConstraints` without its closed-form derivative.
#[derive(Clone, Copy, Debug)]
pub struct TwoConstraintsNoDerivative;

impl Pfaffian for TwoConstraintsNoDerivative {
    fn dim(&self) -> usize {
        4
    }

    fn count(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        TwoConstraints.eval(x, out)
    }
}

/// A point drawn uniformly from the scenario's domain with `u ∈ [0,1]ⁿ`.
pub fn domain_point(s: &Scenario, u: &[f64]) -> Vec<f64> {
    s.domain()
        .iter()
        .zip(u)
        .map(|([lo, hi], u)| lo + (hi - lo) * u)
        .collect()
}
