//! Solver output against independent reference solutions. Values marked
//! "frozen" were produced by the closed forms in the comments and pasted in.

mod common;

use std::f64::consts::{FRAC_PI_4, PI};

use approx::assert_relative_eq;
use common::*;
use nhj_core::dynamics::{
    acceleration_check, eliminated_multiplier, initial_velocity, integrate_dalembert,
    integrate_hj_flow, multiplier_from_s,
};
use nhj_core::geometry::{projector_pi, projector_sigma, ConstraintSpec};
use nhj_core::grid::GridSpec;
use nhj_core::hj::{characteristic_flow, pde_residual, solve_terminal_value};
use nhj_core::scenario::{Builtin, Scenario, ScenarioParams};
use nhj_core::Error;

fn max_error_on_grid(field: &nhj_core::grid::GridField, exact: impl Fn(f64, &[f64]) -> f64) -> f64 {
    let spec = field.spec();
    let mut idx = vec![0; spec.dim()];
    let mut x = vec![0.0; spec.dim()];
    let mut worst = 0.0f64;
    for j in 0..=spec.steps() {
        let slice = field.slice(j);
        for (flat, s) in slice.iter().enumerate() {
            spec.unravel(flat, &mut idx);
            spec.node_point(&idx, &mut x);
            worst = worst.max((s - exact(spec.time(j), &x)).abs());
        }
    }
    worst
}

#[test]
fn riccati_oracle_matches_closed_form() {
    // frozen: a = (mω/2) tan(ωτ + φ), b = b₁ cos φ / cos(ωτ + φ),
    // c = b₁² cos²φ (tan(ωτ + φ) - tan φ) / 2mω, φ = atan(2a₁/mω), τ = 1.
    let (a, b, c) = riccati(1.0, 1.0, 1.0, 0.1, 0.3);
    assert_relative_eq!(a, 1.276224124216637, max_relative = 1e-12);
    assert_relative_eq!(b, 0.8064340341445432, max_relative = 1e-12);
    assert_relative_eq!(c, 0.10178862613413202, max_relative = 1e-12);
}

#[test]
fn harmonic_field_matches_riccati() {
    let s = Scenario::builtin(
        Builtin::Harmonic1d,
        &ScenarioParams {
            a1: Some(0.1),
            b1: Some(0.3),
            ..Default::default()
        },
    )
    .unwrap();
    let spec = GridSpec::new(&s, &[128], 512).unwrap();
    let field = solve_terminal_value(&s, &spec).unwrap();
    let coefficients: Vec<_> = (0..=512).map(|j| riccati(1.0 - spec.time(j), 1.0, 1.0, 0.1, 0.3)).collect();
    let err = max_error_on_grid(&field, |t, x| {
        let (a, b, c) = coefficients[(t * 512.0).round() as usize];
        a * x[0] * x[0] + b * x[0] + c
    });
    assert!(err <= 5e-5, "max error {err:e}");
    // frozen: a x² + b x + c at x = 0.5, τ = 1
    let (value, _) = field.sample(0.0, &[0.5]).unwrap();
    assert!((value - 0.8240616742605628).abs() <= 5e-5, "{value}");
}

#[test]
fn smooth_nonquadratic_field_converges_at_second_order() {
    // The oscillator's value is quadratic in x, which central differences
    // reproduce exactly; a sine terminal cost exercises the spatial error.
    // Nodes with |x| ≤ 1 depend only on data inside the grid.
    let amp = 0.5;
    let s = sine_particle(amp);
    let mut errors = Vec::new();
    for n in [32usize, 64, 128] {
        let spec = GridSpec::new(&s, &[n], 1024).unwrap();
        let field = solve_terminal_value(&s, &spec).unwrap();
        let mut worst = 0.0f64;
        for (i, v) in field.slice(0).iter().enumerate() {
            let x = spec.coordinate(0, i);
            if x.abs() <= 1.0 {
                worst = worst.max((v - sine_exact(1.0, x, amp)).abs());
            }
        }
        errors.push(worst);
    }
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.8, "errors {errors:?}");
    }
}

#[test]
fn rail_field_matches_closed_form() {
    let s = builtin(Builtin::RailGravity);
    let spec = GridSpec::new(&s, &[32, 32], 64).unwrap();
    let field = solve_terminal_value(&s, &spec).unwrap();
    let err = max_error_on_grid(&field, |t, x| x[0] + (1.0 - t) * 0.5 + (1.0 - t) * x[1]);
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn plane_wave_is_reproduced() {
    let s = Scenario::builtin(
        Builtin::FreeParticle,
        &ScenarioParams {
            p: Some(vec![0.7, -0.4]),
            ..Default::default()
        },
    )
    .unwrap();
    let spec = GridSpec::new(&s, &[24, 24], 48).unwrap();
    let field = solve_terminal_value(&s, &spec).unwrap();
    let err = max_error_on_grid(&field, |t, x| 0.7 * x[0] - 0.4 * x[1] + (1.0 - t) * 0.5 * 0.65);
    assert!(err <= 1e-10, "{err:e}");
}

#[test]
fn projectors_match_svd() {
    let specs = [
        builtin(Builtin::RailGravity).constraints().clone(),
        builtin(Builtin::KnifeEdge).constraints().clone(),
        ConstraintSpec::new(TwoConstraints),
    ];
    for spec in &specs {
        for i in 0..50 {
            let x: Vec<f64> = (0..spec.n()).map(|j| ((i * 7 + j * 3) as f64 * 0.37).sin() * 1.5).collect();
            let omega = spec.omega(&x);
            let pi = to_dmatrix(&projector_pi(&omega).unwrap());
            let reference = svd_projector(&omega);
            assert!((&pi - &reference).amax() <= 1e-12, "{pi} vs {reference}");
            let sigma = to_dmatrix(&projector_sigma(&omega).unwrap());
            let n = spec.n();
            assert!((sigma + reference - nalgebra::DMatrix::<f64>::identity(n, n)).amax() <= 1e-12);
        }
    }
}

#[test]
fn finite_difference_derivative_matches_closed_form() {
    let specs = [builtin(Builtin::KnifeEdge).constraints().clone(), ConstraintSpec::new(TwoConstraints)];
    for spec in &specs {
        for i in 0..100 {
            let x: Vec<f64> = (0..spec.n()).map(|j| ((i * 5 + j) as f64 * 0.61).cos() * 2.0).collect();
            let d: Vec<f64> = (0..spec.n()).map(|j| ((i * 3 + j * 11) as f64 * 0.29).sin()).collect();
            let exact = spec.omega_dir_deriv(&x, &d);
            let fd = spec.omega_dir_deriv_fd(&x, &d);
            let scale = exact.max_abs().max(1e-12);
            assert!(exact.sub(&fd).max_abs() <= 1e-6 * scale, "{exact:?} vs {fd:?}");
        }
    }
    // Without a closed form the fallback is used.
    let spec = ConstraintSpec::new(TwoConstraintsNoDerivative);
    let x = [0.3, -0.2, 0.5, 1.0];
    let d = [1.0, 0.5, -0.25, 2.0];
    let exact = ConstraintSpec::new(TwoConstraints).omega_dir_deriv(&x, &d);
    assert!(spec.omega_dir_deriv(&x, &d).sub(&exact).max_abs() <= 1e-8);
}

#[test]
fn potential_gradients_match_finite_differences() {
    for kind in Builtin::ALL {
        let s = Scenario::builtin(
            kind,
            &ScenarioParams {
                g: matches!(kind, Builtin::RailGravity | Builtin::KnifeEdge).then_some(0.8),
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..20 {
            let u: Vec<f64> = (0..s.n()).map(|j| 0.1 + 0.8 * (((i * 13 + j * 7) as f64) * 0.17).sin().abs()).collect();
            let x = domain_point(&s, &u);
            let (pg, tg) = (s.potential_gradient(&x), s.terminal_gradient(&x));
            for a in 0..s.n() {
                let h = 1e-5;
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[a] += h;
                xm[a] -= h;
                let fd_v = (s.potential(&xp) - s.potential(&xm)) / (2.0 * h);
                let fd_t = (s.terminal_cost(&xp) - s.terminal_cost(&xm)) / (2.0 * h);
                assert!((fd_v - pg[a]).abs() <= 1e-6 * (1.0 + pg[a].abs()));
                assert!((fd_t - tg[a]).abs() <= 1e-6 * (1.0 + tg[a].abs()));
            }
        }
    }
}

#[test]
fn periodic_axes_are_periodic() {
    let s = builtin(Builtin::KnifeEdge);
    for i in 0..20 {
        let a = -1.5 + 0.15 * i as f64;
        let lo = [a, -a, 0.0];
        let hi = [a, -a, 2.0 * PI];
        assert!((s.potential(&lo) - s.potential(&hi)).abs() <= 1e-12);
        assert!((s.terminal_cost(&lo) - s.terminal_cost(&hi)).abs() <= 1e-12);
        assert!(s.omega(&lo).sub(&s.omega(&hi)).max_abs() <= 1e-12);
        // Unit row norm, so ΩΩᵀ = 1.
        let row = s.omega(&[a, a, 0.37 * i as f64]);
        let norm: f64 = row.as_slice().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() <= 1e-15);
    }
}

#[test]
fn knife_residual_shrinks_under_refinement() {
    let s = builtin(Builtin::KnifeEdge);
    let coarse = solve_terminal_value(&s, &GridSpec::new(&s, &[32, 32, 32], 20).unwrap()).unwrap();
    let fine = solve_terminal_value(&s, &GridSpec::new(&s, &[64, 64, 64], 40).unwrap()).unwrap();
    let (a, b) = (pde_residual(&coarse, &s).unwrap(), pde_residual(&fine, &s).unwrap());
    assert!(a.max / b.max >= 3.0, "{a:?} {b:?}");
}

#[test]
fn harmonic_residual_order() {
    let s = harmonic(0.1);
    let coarse = solve_terminal_value(&s, &GridSpec::new(&s, &[64], 256).unwrap()).unwrap();
    let fine = solve_terminal_value(&s, &GridSpec::new(&s, &[128], 512).unwrap()).unwrap();
    let (a, b) = (pde_residual(&coarse, &s).unwrap(), pde_residual(&fine, &s).unwrap());
    assert!((a.max / b.max).log2() >= 1.8, "{a:?} {b:?}");
}

#[test]
fn focusing_terminal_cost_blows_up() {
    // a(τ) = (mω/2) tan(ωτ + atan(2a₁/mω)) diverges at τ* ≈ 0.0997 for a₁ = 5.
    let s = harmonic(5.0);
    let spec = GridSpec::new(&s, &[64], 1000).unwrap();
    match solve_terminal_value(&s, &spec) {
        Err(Error::BlowUp { time, time_index, .. }) => {
            assert!(time_index > 0 && time_index < 1000);
            let tau = 1.0 - time;
            let tau_star = (PI / 2.0 - 10f64.atan()) / 1.0;
            assert!(tau > 0.0 && tau <= tau_star + 0.01, "blow-up at τ = {tau}");
        }
        other => panic!("expected BlowUp, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn characteristic_value_matches_grid() {
    let s = builtin(Builtin::KnifeEdge);
    let spec = GridSpec::new(&s, &[32, 32, 32], 200).unwrap();
    let field = solve_terminal_value(&s, &spec).unwrap();
    for x_end in [[0.3, -0.2, 1.0], [-0.4, 0.5, 2.5], [0.1, 0.1, 5.0]] {
        let p_end = s.terminal_gradient(&x_end);
        let path = characteristic_flow(&x_end, &p_end, &s, 1000).unwrap();
        assert!(path.hamiltonian_drift(&s).unwrap() <= 1e-8);
        let (value, _) = field.sample(0.0, &path.states[0]).unwrap();
        assert!((value - path.values[0]).abs() <= 5e-3, "{value} vs {}", path.values[0]);
    }
    let h = harmonic(0.1);
    let path = characteristic_flow(&[0.8], &h.terminal_gradient(&[0.8]), &h, 1000).unwrap();
    let (a, b, c) = riccati(1.0, 1.0, 1.0, 0.1, 0.0);
    let x = path.states[0][0];
    assert!((path.values[0] - (a * x * x + b * x + c)).abs() <= 1e-9);
    assert!(path.hamiltonian_drift(&h).unwrap() <= 1e-8);
}

#[test]
fn dalembert_reproduces_unicycle_circle() {
    let s = builtin(Builtin::KnifeEdge);
    let x0 = [0.0, 0.0, FRAC_PI_4];
    let (u, w) = (1.0, 1.0);
    let v0 = [u * x0[2].cos(), u * x0[2].sin(), w];
    let traj = integrate_dalembert(&s, &x0, &v0, 400).unwrap();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let exact = unicycle_circle(x0, u, w, *t);
        for a in 0..3 {
            assert!((x[a] - exact[a]).abs() <= 1e-6);
        }
    }
    // frozen: closed form at t = 1
    let end = traj.end();
    assert!((end[0] - 0.2699544827129282).abs() <= 1e-6);
    assert!((end[1] - 0.9200651963458437).abs() <= 1e-6);
    for l in traj.multipliers.as_ref().unwrap() {
        assert!((l[0] + u * w).abs() <= 1e-8);
    }
    assert!(traj.energy_drift(&s) <= 1e-6);
}

#[test]
fn dalembert_without_constraints_is_newton() {
    let s = harmonic(0.0);
    let traj = integrate_dalembert(&s, &[0.5], &[0.2], 400).unwrap();
    assert!(traj.multipliers.is_none());
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let exact = 0.5 * t.cos() + 0.2 * t.sin();
        assert!((x[0] - exact).abs() <= 1e-9);
    }
}

#[test]
fn rail_multiplier_is_the_weight() {
    let s = Scenario::builtin(
        Builtin::RailGravity,
        &ScenarioParams {
            mass: Some(2.0),
            g: Some(9.81),
            ..Default::default()
        },
    )
    .unwrap();
    let spec = GridSpec::new(&s, &[32, 32], 64).unwrap();
    let field = solve_terminal_value(&s, &spec).unwrap();
    let flow = integrate_hj_flow(&field, &s, &[-0.5, 0.3], 200).unwrap();
    for i in 0..flow.len() {
        let from_s = multiplier_from_s(&field, &s, &flow.states[i], flow.times[i]).unwrap();
        let eliminated = eliminated_multiplier(&s, &flow.states[i], &flow.velocities[i]).unwrap();
        assert!((from_s[0] - 2.0 * 9.81).abs() <= 1e-8, "{from_s:?}");
        assert!((eliminated[0] - 2.0 * 9.81).abs() <= 1e-8);
    }
}

#[test]
fn acceleration_field_is_newtonian() {
    let h = harmonic(0.1);
    let field = solve_terminal_value(&h, &GridSpec::new(&h, &[128], 512).unwrap()).unwrap();
    for x in [-1.5, -0.8, 0.0, 0.5, 1.5] {
        for t in [0.0, 0.3, 0.7, 1.0] {
            let r = acceleration_check(&field, &h, &[x], t).unwrap();
            assert!(r[0].abs() <= 5e-4, "{r:?}");
        }
    }
    let rail = builtin(Builtin::RailGravity);
    let field = solve_terminal_value(&rail, &GridSpec::new(&rail, &[32, 32], 64).unwrap()).unwrap();
    let r = acceleration_check(&field, &rail, &[-0.5, 0.3], 0.4).unwrap();
    assert!(r.iter().all(|v| v.abs() <= 1e-6), "{r:?}");
}

#[test]
fn flows_are_admissible_at_every_resolution() {
    let s = builtin(Builtin::KnifeEdge);
    for n in [12usize, 24] {
        let field = solve_terminal_value(&s, &GridSpec::new(&s, &[n, n, n], 10 * n).unwrap()).unwrap();
        for x0 in [[0.0, 0.0, FRAC_PI_4], [0.3, -0.2, 1.0], [-0.5, 0.4, 4.0]] {
            let flow = integrate_hj_flow(&field, &s, &x0, 200).unwrap();
            assert!(flow.max_constraint_residual(&s) <= 1e-10);
            let v0 = initial_velocity(&field, &s, &x0).unwrap();
            assert_eq!(v0, flow.velocities[0]);
        }
    }
}

#[test]
fn knife_flow_turns_where_dalembert_cannot() {
    // Ω has no θ column and V ignores θ, so d'Alembert keeps θ̇ constant.
    // The value-function flow sets θ̇ = ∂S/∂θ / m, which varies along a
    // generic path: the two motions separate whatever the resolution.
    let s = builtin(Builtin::KnifeEdge);
    let field = solve_terminal_value(&s, &GridSpec::new(&s, &[24, 24, 24], 200).unwrap()).unwrap();
    let x0 = [0.0, 0.0, FRAC_PI_4];
    let flow = integrate_hj_flow(&field, &s, &x0, 200).unwrap();
    let reference = integrate_dalembert(&s, &x0, &flow.velocities[0], 200).unwrap();
    let spread = |t: &nhj_core::dynamics::Trajectory| {
        let rates: Vec<f64> = t.velocities.iter().map(|v| v[2]).collect();
        rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - rates.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    assert!(spread(&reference) <= 1e-12);
    assert!(spread(&flow) >= 0.1, "turn rate spread {}", spread(&flow));

    // At the symmetric launch the heading never changes and the two agree.
    let x0 = [0.0, 0.0, PI];
    let flow = integrate_hj_flow(&field, &s, &x0, 200).unwrap();
    assert!(spread(&flow) <= 1e-12);
    let reference = integrate_dalembert(&s, &x0, &flow.velocities[0], 200).unwrap();
    assert!(flow.sup_distance(&reference).unwrap() <= 1e-12);
}
