//! Uniform space-time grids, finite-difference gradients and interpolation.
//!
//! Node layout: non-periodic axes carry `N + 1` nodes including both ends,
//! periodic axes carry `N` nodes covering `[lo, hi)`. Nodes are stored
//! row-major with axis 0 slowest; a [`GridField`] stores `M + 1` such slices,
//! slice `j` belonging to `t_j = t₀ + j Δt`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Smallest accepted cell count per axis.
pub const MIN_CELLS: usize = 8;
/// Largest spatial dimension the grid solver accepts.
pub const MAX_GRID_DIM: usize = 3;

/// Relative slack when deciding whether a coordinate lies inside the domain.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    cells: Vec<usize>,
    steps: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    periodic: Vec<bool>,
    window: [f64; 2],
    nodes: Vec<usize>,
    strides: Vec<usize>,
    spacing: Vec<f64>,
}

impl GridSpec {
    /// Grid over the scenario's domain and time window.
    pub fn new(scenario: &Scenario, cells: &[usize], steps: usize) -> Result<Self> {
        let lo = scenario.domain().iter().map(|d| d[0]).collect::<Vec<_>>();
        let hi = scenario.domain().iter().map(|d| d[1]).collect::<Vec<_>>();
        Self::from_parts(
            &lo,
            &hi,
            scenario.periodic(),
            cells,
            steps,
            scenario.time_window(),
        )
    }

    pub fn from_parts(
        lo: &[f64],
        hi: &[f64],
        periodic: &[bool],
        cells: &[usize],
        steps: usize,
        window: [f64; 2],
    ) -> Result<Self> {
        let n = cells.len();
        if n == 0 || n > MAX_GRID_DIM {
            return Err(Error::InvalidGrid(format!(
                "grids support 1 to {MAX_GRID_DIM} dimensions, got {n}"
            )));
        }
        if lo.len() != n || hi.len() != n || periodic.len() != n {
            return Err(Error::InvalidGrid(format!(
                "{n} cell counts for a {}-dimensional domain",
                lo.len()
            )));
        }
        if let Some(&c) = cells.iter().find(|&&c| c < MIN_CELLS) {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least {MIN_CELLS} cells, got {c}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one time step is required".into()));
        }
        let nodes: Vec<usize> = cells
            .iter()
            .zip(periodic)
            .map(|(&c, &p)| if p { c } else { c + 1 })
            .collect();
        let mut strides = vec![1; n];
        for a in (0..n.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * nodes[a + 1];
        }
        let spacing = (0..n).map(|a| (hi[a] - lo[a]) / cells[a] as f64).collect();
        Ok(Self {
            cells: cells.to_vec(),
            steps,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            periodic: periodic.to_vec(),
            window,
            nodes,
            strides,
            spacing,
        })
    }

    /// Same domain with every cell count and the step count doubled.
    pub fn refined(&self) -> Self {
        let cells: Vec<usize> = self.cells.iter().map(|c| 2 * c).collect();
        Self::from_parts(
            &self.lo,
            &self.hi,
            &self.periodic,
            &cells,
            2 * self.steps,
            self.window,
        )
        .expect("refining a valid grid stays valid")
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn lower(&self) -> &[f64] {
        &self.lo
    }

    pub fn upper(&self) -> &[f64] {
        &self.hi
    }

    pub fn window(&self) -> [f64; 2] {
        self.window
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dt(&self) -> f64 {
        (self.window[1] - self.window[0]) / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.window[1]
        } else {
            self.window[0] + j as f64 * self.dt()
        }
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + i as f64 * self.spacing[axis]
    }

    pub fn unravel(&self, mut flat: usize, idx: &mut [usize]) {
        for a in 0..self.dim() {
            idx[a] = flat / self.strides[a];
            flat %= self.strides[a];
        }
    }

    pub fn node_point(&self, idx: &[usize], x: &mut [f64]) {
        for a in 0..self.dim() {
            x[a] = self.coordinate(a, idx[a]);
        }
    }

    /// Whether the node lies on a non-periodic boundary.
    pub fn on_boundary(&self, idx: &[usize]) -> bool {
        (0..self.dim()).any(|a| !self.periodic[a] && (idx[a] == 0 || idx[a] + 1 == self.nodes[a]))
    }

    /// Advances a multi-index in storage order.
    pub fn next_index(&self, idx: &mut [usize]) {
        for a in (0..self.dim()).rev() {
            idx[a] += 1;
            if idx[a] < self.nodes[a] {
                return;
            }
            idx[a] = 0;
        }
    }

    /// Fractional index of `x` along `axis`, wrapped on periodic axes.
    fn axis_position(&self, axis: usize, x: f64) -> Result<f64> {
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        let h = self.spacing[axis];
        if !x.is_finite() {
            return Err(Error::OutOfDomain {
                axis,
                coordinate: x,
                lo,
                hi,
            });
        }
        let u = (x - lo) / h;
        if self.periodic[axis] {
            let n = self.cells[axis] as f64;
            let mut r = u - n * libm::floor(u / n);
            if r >= n {
                r -= n;
            }
            Ok(r)
        } else {
            let slack = DOMAIN_SLACK * (hi - lo).max(1.0);
            if x < lo - slack || x > hi + slack {
                return Err(Error::OutOfDomain {
                    axis,
                    coordinate: x,
                    lo,
                    hi,
                });
            }
            Ok(u.clamp(0.0, self.cells[axis] as f64))
        }
    }

    fn time_position(&self, t: f64) -> Result<f64> {
        let [t0, t1] = self.window;
        let slack = DOMAIN_SLACK * (t1 - t0).max(1.0);
        if !(t >= t0 - slack && t <= t1 + slack) {
            return Err(Error::TimeOutOfRange { time: t, t0, t1 });
        }
        Ok(((t - t0) / self.dt()).clamp(0.0, self.steps as f64))
    }
}

/// Second-order derivative of `slice` along `axis` at node `idx`: central on
/// the interior and on periodic axes, one-sided at non-periodic ends.
#[inline]
pub fn axis_derivative(spec: &GridSpec, slice: &[f64], flat: usize, idx: &[usize], axis: usize) -> f64 {
    let s = spec.strides[axis];
    let c = spec.nodes[axis];
    let i = idx[axis];
    let h = spec.spacing[axis];
    if spec.periodic[axis] {
        let up = if i + 1 == c { flat + s - c * s } else { flat + s };
        let down = if i == 0 { flat + (c - 1) * s } else { flat - s };
        (slice[up] - slice[down]) / (2.0 * h)
    } else if i == 0 {
        (-3.0 * slice[flat] + 4.0 * slice[flat + s] - slice[flat + 2 * s]) / (2.0 * h)
    } else if i + 1 == c {
        (3.0 * slice[flat] - 4.0 * slice[flat - s] + slice[flat - 2 * s]) / (2.0 * h)
    } else {
        (slice[flat + s] - slice[flat - s]) / (2.0 * h)
    }
}

/// Finite-difference gradient at one node.
#[inline]
pub fn node_gradient(spec: &GridSpec, slice: &[f64], flat: usize, idx: &[usize], out: &mut [f64]) {
    for a in 0..spec.dim() {
        out[a] = axis_derivative(spec, slice, flat, idx, a);
    }
}

/// Finite-difference gradient of a whole slice; node-major, `n` entries per
/// node.
pub fn grid_gradient(slice: &[f64], spec: &GridSpec) -> Vec<f64> {
    let n = spec.dim();
    let mut out = vec![0.0; spec.node_count() * n];
    let mut idx = vec![0; n];
    for flat in 0..spec.node_count() {
        node_gradient(spec, slice, flat, &idx, &mut out[flat * n..(flat + 1) * n]);
        spec.next_index(&mut idx);
    }
    out
}

/// The value function `S(t_j, x)` on every node of a grid.
#[derive(Clone, Debug)]
pub struct GridField {
    spec: GridSpec,
    scenario: String,
    values: Vec<f64>,
}

/// Value, time derivative and gradient of the smooth interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothSample {
    pub value: f64,
    pub time_derivative: f64,
    pub gradient: Vec<f64>,
}

impl GridField {
    /// Panics if `values` does not hold `M + 1` slices.
    pub fn from_values(spec: GridSpec, scenario: impl Into<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (spec.steps() + 1) * spec.node_count());
        Self {
            spec,
            scenario: scenario.into(),
            values,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn scenario_name(&self) -> &str {
        &self.scenario
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let m = self.spec.node_count();
        &self.values[j * m..(j + 1) * m]
    }

    pub fn slice_mut(&mut self, j: usize) -> &mut [f64] {
        let m = self.spec.node_count();
        &mut self.values[j * m..(j + 1) * m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `S` and `∇S` at `(t, x)`: multilinear in space of the nodal values and
    /// of the nodal finite-difference gradients, linear in time.
    pub fn sample(&self, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let spec = &self.spec;
        let n = spec.dim();
        check_dim(n, x)?;
        let s = spec.time_position(t)?;
        let j = (libm::floor(s) as usize).min(spec.steps - 1);
        let wt = s - j as f64;

        let mut base = [0usize; MAX_GRID_DIM];
        let mut frac = [0.0; MAX_GRID_DIM];
        for a in 0..n {
            let u = spec.axis_position(a, x[a])?;
            let i = (libm::floor(u) as usize).min(spec.cells[a] - 1);
            base[a] = i;
            frac[a] = u - i as f64;
        }

        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        let mut g = [0.0; MAX_GRID_DIM];
        let mut idx = [0usize; MAX_GRID_DIM];
        for (slice_j, w_time) in [(j, 1.0 - wt), (j + 1, wt)] {
            if w_time == 0.0 {
                continue;
            }
            let slice = self.slice(slice_j);
            for corner in 0..(1usize << n) {
                let mut w = w_time;
                let mut flat = 0;
                for a in 0..n {
                    let up = (corner >> a) & 1 == 1;
                    let mut i = base[a] + up as usize;
                    if i == spec.nodes[a] {
                        i = 0;
                    }
                    idx[a] = i;
                    flat += i * spec.strides[a];
                    w *= if up { frac[a] } else { 1.0 - frac[a] };
                }
                if w == 0.0 {
                    continue;
                }
                value += w * slice[flat];
                node_gradient(spec, slice, flat, &idx[..n], &mut g[..n]);
                for a in 0..n {
                    grad[a] += w * g[a];
                }
            }
        }
        Ok((value, grad))
    }

    /// A C² interpolant of the field (cubic B-spline quasi-interpolation in
    /// space and time, exact on cubics) with its exact derivatives.
    ///
    /// Unlike [`GridField::sample`], value, time derivative and gradient here
    /// all belong to one differentiable function, so the chain rule holds
    /// along any path.
    pub fn smooth(&self, t: f64, x: &[f64]) -> Result<SmoothSample> {
        let spec = &self.spec;
        let n = spec.dim();
        check_dim(n, x)?;
        if spec.steps < 3 {
            return Err(Error::InvalidGrid(
                "smooth interpolation needs at least 3 time steps".into(),
            ));
        }
        let time_taps = spline_taps(spec.time_position(t)?, spec.steps + 1, false);
        let mut axis_taps = [Taps::default(), Taps::default(), Taps::default()];
        for a in 0..n {
            axis_taps[a] = spline_taps(spec.axis_position(a, x[a])?, spec.nodes[a], spec.periodic[a]);
        }

        // Tensor product of the spatial taps: flat offset, weight and the
        // weight with one factor differentiated.
        let mut combos: Vec<(usize, f64, [f64; MAX_GRID_DIM])> = Vec::with_capacity(216);
        let mut cursor = [0usize; MAX_GRID_DIM];
        'outer: loop {
            let mut flat = 0;
            let mut w = 1.0;
            for a in 0..n {
                let t = &axis_taps[a];
                flat += t.idx[cursor[a]] * spec.strides[a];
                w *= t.w[cursor[a]];
            }
            let mut dw = [0.0; MAX_GRID_DIM];
            for (d, dwd) in dw.iter_mut().enumerate().take(n) {
                let mut p = 1.0;
                for a in 0..n {
                    let t = &axis_taps[a];
                    p *= if a == d {
                        t.dw[cursor[a]] / spec.spacing[a]
                    } else {
                        t.w[cursor[a]]
                    };
                }
                *dwd = p;
            }
            combos.push((flat, w, dw));
            for a in (0..n).rev() {
                cursor[a] += 1;
                if cursor[a] < axis_taps[a].len {
                    continue 'outer;
                }
                cursor[a] = 0;
            }
            break;
        }

        let dt = spec.dt();
        let m = spec.node_count();
        let mut value = 0.0;
        let mut time_derivative = 0.0;
        let mut gradient = vec![0.0; n];
        for r in 0..time_taps.len {
            let off = time_taps.idx[r] * m;
            let (wt, dwt) = (time_taps.w[r], time_taps.dw[r] / dt);
            let slice = &self.values[off..off + m];
            let mut v = 0.0;
            let mut g = [0.0; MAX_GRID_DIM];
            for (flat, w, dw) in &combos {
                let s = slice[*flat];
                v += w * s;
                for a in 0..n {
                    g[a] += dw[a] * s;
                }
            }
            value += wt * v;
            time_derivative += dwt * v;
            for a in 0..n {
                gradient[a] += wt * g[a];
            }
        }
        Ok(SmoothSample {
            value,
            time_derivative,
            gradient,
        })
    }
}

fn check_dim(n: usize, x: &[f64]) -> Result<()> {
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "point has {} coordinates, grid has {n} axes",
            x.len()
        )));
    }
    Ok(())
}

/// Node weights of the 1-D quasi-interpolant at one position.
#[derive(Clone, Copy, Debug, Default)]
struct Taps {
    idx: [usize; 8],
    w: [f64; 8],
    dw: [f64; 8],
    len: usize,
}

impl Taps {
    fn add(&mut self, node: usize, w: f64, dw: f64) {
        for r in 0..self.len {
            if self.idx[r] == node {
                self.w[r] += w;
                self.dw[r] += dw;
                return;
            }
        }
        self.idx[self.len] = node;
        self.w[self.len] = w;
        self.dw[self.len] = dw;
        self.len += 1;
    }
}

/// Cubic B-spline with coefficients `c_j = (-S_{j-1} + 8 S_j - S_{j+1}) / 6`,
/// which reproduces cubic data exactly. Missing nodes beyond a non-periodic
/// end are filled by cubic extrapolation from the four nearest nodes.
fn spline_taps(u: f64, count: usize, periodic: bool) -> Taps {
    let (i, w) = if periodic {
        let i = (libm::floor(u) as usize).min(count - 1);
        (i as isize, u - i as f64)
    } else {
        let i = (libm::floor(u) as usize).min(count - 2);
        (i as isize, u - i as f64)
    };
    let w2 = w * w;
    let w3 = w2 * w;
    let om = 1.0 - w;
    let b = [
        om * om * om / 6.0,
        (3.0 * w3 - 6.0 * w2 + 4.0) / 6.0,
        (-3.0 * w3 + 3.0 * w2 + 3.0 * w + 1.0) / 6.0,
        w3 / 6.0,
    ];
    let db = [
        -0.5 * om * om,
        0.5 * (3.0 * w2 - 4.0 * w),
        0.5 * (-3.0 * w2 + 2.0 * w + 1.0),
        0.5 * w2,
    ];
    const PREFILTER: [(isize, f64); 3] = [(-1, -1.0 / 6.0), (0, 8.0 / 6.0), (1, -1.0 / 6.0)];

    let mut taps = Taps::default();
    let c = count as isize;
    for r in 0..4 {
        let j = i - 1 + r as isize;
        for (off, pw) in PREFILTER {
            let node = j + off;
            let (wv, dv) = (b[r] * pw, db[r] * pw);
            if periodic {
                taps.add(node.rem_euclid(c) as usize, wv, dv);
            } else if (0..c).contains(&node) {
                taps.add(node as usize, wv, dv);
            } else {
                // Cubic continuation past the ends.
                let (coef, from_low): ([f64; 4], bool) = match node {
                    -1 => ([4.0, -6.0, 4.0, -1.0], true),
                    -2 => ([10.0, -20.0, 15.0, -4.0], true),
                    _ if node == c => ([4.0, -6.0, 4.0, -1.0], false),
                    _ => ([10.0, -20.0, 15.0, -4.0], false),
                };
                for (q, cq) in coef.iter().enumerate() {
                    let real = if from_low { q } else { count - 1 - q };
                    taps.add(real, wv * cq, dv * cq);
                }
            }
        }
    }
    taps
}
