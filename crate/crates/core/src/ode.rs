//! Classical fourth-order Runge–Kutta stepping for small autonomous or
//! time-dependent systems.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;

/// Reusable stage buffers for one system size.
#[derive(Clone, Debug)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `y` from `t` to `t + h` (`h` may be negative).
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &mut [f64], h: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        f(t, y, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// `steps + 1` equally spaced times from `t0` to `t1`, with both ends exact.
pub fn uniform_times(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let dt = (t1 - t0) / steps as f64;
    (0..=steps)
        .map(|i| if i == steps { t1 } else { t0 + i as f64 * dt })
        .collect()
}
