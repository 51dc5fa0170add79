//! Pfaffian constraint matrices and the orthogonal projectors they induce.
//!
//! For a constraint `Ω(x) ẋ = 0` with `Ω(x)` of full row rank `k`, the
//! projector onto the range of `Ωᵀ` is `π = Ωᵀ (Ω Ωᵀ)⁻¹ Ω` and the projector
//! onto `ker Ω` is `σ = I - π`. The Gram matrix `Ω Ωᵀ` is never inverted
//! explicitly; every solve goes through its Cholesky factor.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_in_place, cholesky_solve_in_place, dot, mat_tr_vec, mat_vec, spd_condition_number,
    Matrix, GRAM_CONDITION_BOUND,
};

/// Columns of `σ` shorter than this after orthogonalisation are dropped when
/// building a kernel basis.
pub const KERNEL_COLUMN_TOLERANCE: f64 = 1e-10;

/// A smooth map `x ↦ Ω(x)` from configurations to `k x n` matrices.
pub trait Pfaffian: Send + Sync {
    /// Configuration dimension `n`.
    fn dim(&self) -> usize;

    /// Number of constraints `k`.
    fn count(&self) -> usize;

    /// Writes `Ω(x)` row-major into `out` (length `k * n`).
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Writes the directional derivative `DΩ(x)[d]` into `out` and returns
    /// `true`, or returns `false` when no closed form is available.
    fn dir_deriv(&self, _x: &[f64], _d: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// The constraint part of a scenario. `k = 0` is the unconstrained case.
#[derive(Clone)]
pub struct ConstraintSpec {
    n: usize,
    field: Option<Arc<dyn Pfaffian>>,
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("n", &self.n)
            .field("k", &self.k())
            .finish()
    }
}

impl ConstraintSpec {
    pub fn unconstrained(n: usize) -> Self {
        Self { n, field: None }
    }

    /// Panics unless `k < n`.
    pub fn new<P: Pfaffian + 'static>(pfaffian: P) -> Self {
        Self::from_arc(Arc::new(pfaffian))
    }

    pub fn from_arc(pfaffian: Arc<dyn Pfaffian>) -> Self {
        let n = pfaffian.dim();
        let k = pfaffian.count();
        assert!(k < n, "a Pfaffian system needs k < n (got k = {k}, n = {n})");
        if k == 0 {
            return Self::unconstrained(n);
        }
        Self {
            n,
            field: Some(pfaffian),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.field.as_ref().map_or(0, |f| f.count())
    }

    pub fn omega_into(&self, x: &[f64], out: &mut [f64]) {
        if let Some(f) = &self.field {
            f.eval(x, out);
        }
    }

    pub fn omega(&self, x: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.k(), self.n);
        self.omega_into(x, m.as_mut_slice());
        m
    }

    /// `DΩ(x)[d]`, analytic when the constraint provides it and by central
    /// differences otherwise.
    pub fn omega_dir_deriv(&self, x: &[f64], d: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.k(), self.n);
        if let Some(f) = &self.field {
            if f.dir_deriv(x, d, m.as_mut_slice()) {
                return m;
            }
        }
        self.omega_dir_deriv_fd(x, d)
    }

    /// Central-difference directional derivative with step
    /// `h = 1e-6 * max(1, |x|∞)` taken along `d / |d|∞`.
    pub fn omega_dir_deriv_fd(&self, x: &[f64], d: &[f64]) -> Matrix {
        let k = self.k();
        let n = self.n;
        let mut out = Matrix::zeros(k, n);
        let Some(f) = &self.field else {
            return out;
        };
        let dscale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dscale == 0.0 {
            return out;
        }
        let xscale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let h = 1e-6 * xscale;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for i in 0..n {
            xp[i] += h * d[i] / dscale;
            xm[i] -= h * d[i] / dscale;
        }
        let mut plus = vec![0.0; k * n];
        let mut minus = vec![0.0; k * n];
        f.eval(&xp, &mut plus);
        f.eval(&xm, &mut minus);
        for (o, (p, m)) in out.as_mut_slice().iter_mut().zip(plus.iter().zip(&minus)) {
            *o = (p - m) / (2.0 * h) * dscale;
        }
        out
    }

    pub fn factor_at(&self, x: &[f64]) -> Result<GramFactor> {
        let omega = self.omega(x);
        GramFactor::new(omega.as_slice(), self.k(), self.n)
    }

    pub fn projectors_at(&self, x: &[f64]) -> Result<ProjectorPair> {
        ProjectorPair::new(&self.omega(x))
    }
}

/// `Ω` together with the Cholesky factor of `Ω Ωᵀ`: everything needed to
/// apply `π`, `σ` or extract the multiplier `(Ω Ωᵀ)⁻¹ Ω v` repeatedly.
#[derive(Clone, Debug)]
pub struct GramFactor {
    k: usize,
    n: usize,
    omega: Vec<f64>,
    chol: Vec<f64>,
}

impl GramFactor {
    pub fn new(omega: &[f64], k: usize, n: usize) -> Result<Self> {
        if omega.len() != k * n {
            return Err(Error::DimensionMismatch(alloc::format!(
                "constraint matrix has {} entries, expected {k} x {n}",
                omega.len()
            )));
        }
        let mut gram = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let g = dot(&omega[i * n..(i + 1) * n], &omega[j * n..(j + 1) * n]);
                gram[i * k + j] = g;
                gram[j * k + i] = g;
            }
        }
        if k > 0 {
            let condition = spd_condition_number(&gram, k);
            if condition > GRAM_CONDITION_BOUND || !condition.is_finite() {
                return Err(Error::SingularGram {
                    condition,
                    bound: GRAM_CONDITION_BOUND,
                });
            }
            cholesky_in_place(&mut gram, k)?;
        }
        Ok(Self {
            k,
            n,
            omega: omega.to_vec(),
            chol: gram,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// Solves `(Ω Ωᵀ) y = rhs` in place.
    pub fn solve_gram(&self, rhs: &mut [f64]) {
        if self.k > 0 {
            cholesky_solve_in_place(&self.chol, self.k, rhs);
        }
    }

    /// `μ = (Ω Ωᵀ)⁻¹ Ω v`.
    pub fn multiplier(&self, v: &[f64], mu: &mut [f64]) {
        mat_vec(&self.omega, self.k, self.n, v, mu);
        self.solve_gram(mu);
    }

    /// `out = σ v = v - Ωᵀ (Ω Ωᵀ)⁻¹ Ω v`.
    pub fn project_kernel(&self, v: &[f64], out: &mut [f64]) {
        out[..self.n].copy_from_slice(&v[..self.n]);
        if self.k == 0 {
            return;
        }
        let mut mu = [0.0; 8];
        let mut mu_heap;
        let mu: &mut [f64] = if self.k <= 8 {
            &mut mu[..self.k]
        } else {
            mu_heap = vec![0.0; self.k];
            &mut mu_heap
        };
        self.multiplier(v, mu);
        let mut back = [0.0; 8];
        let mut back_heap;
        let back: &mut [f64] = if self.n <= 8 {
            &mut back[..self.n]
        } else {
            back_heap = vec![0.0; self.n];
            &mut back_heap
        };
        mat_tr_vec(&self.omega, self.k, self.n, mu, back);
        for (o, b) in out.iter_mut().zip(back.iter()) {
            *o -= b;
        }
    }

    /// `W = L⁻¹ Ω` with `Ω Ωᵀ = L Lᵀ`, so that `p·σp = |p|² - |W p|²` and
    /// `σ p = p - Wᵀ W p`. Row-major `k x n`.
    pub fn whitened_omega(&self) -> Vec<f64> {
        let (k, n) = (self.k, self.n);
        let mut w = self.omega.clone();
        for i in 0..k {
            for l in 0..i {
                let c = self.chol[i * k + l];
                for j in 0..n {
                    w[i * n + j] -= c * w[l * n + j];
                }
            }
            let d = self.chol[i * k + i];
            for j in 0..n {
                w[i * n + j] /= d;
            }
        }
        w
    }

    /// `p · σ p = |p|² - (Ω p)ᵀ (Ω Ωᵀ)⁻¹ (Ω p)`.
    pub fn kernel_quadratic_form(&self, p: &[f64]) -> f64 {
        let pp = dot(p, p);
        if self.k == 0 {
            return pp;
        }
        let mut op = [0.0; 8];
        let mut op_heap;
        let op: &mut [f64] = if self.k <= 8 {
            &mut op[..self.k]
        } else {
            op_heap = vec![0.0; self.k];
            &mut op_heap
        };
        mat_vec(&self.omega, self.k, self.n, p, op);
        let mut mu = [0.0; 8];
        let mut mu_heap;
        let mu: &mut [f64] = if self.k <= 8 {
            &mut mu[..self.k]
        } else {
            mu_heap = vec![0.0; self.k];
            &mut mu_heap
        };
        mu.copy_from_slice(op);
        self.solve_gram(mu);
        // Clamp: p·σp is a squared length and may come out as -1e-17.
        (pp - dot(op, mu)).max(0.0)
    }
}

/// `π(x)`, `σ(x)` and an orthonormal basis of `ker Ω(x)` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorPair {
    pub pi: Matrix,
    pub sigma: Matrix,
    pub kernel_basis: Matrix,
}

impl ProjectorPair {
    pub fn new(omega: &Matrix) -> Result<Self> {
        let sigma = projector_sigma(omega)?;
        let pi = Matrix::identity(omega.cols()).sub(&sigma);
        let kernel_basis = orthonormal_kernel(&sigma, omega.cols() - omega.rows());
        Ok(Self {
            pi,
            sigma,
            kernel_basis,
        })
    }
}

/// `π = Ωᵀ (Ω Ωᵀ)⁻¹ Ω`, the orthogonal projector onto `Range Ωᵀ`. A matrix
/// with zero rows yields the zero projector.
pub fn projector_pi(omega: &Matrix) -> Result<Matrix> {
    let (k, n) = (omega.rows(), omega.cols());
    let factor = GramFactor::new(omega.as_slice(), k, n)?;
    let mut pi = Matrix::zeros(n, n);
    if k == 0 {
        return Ok(pi);
    }
    let mut e = vec![0.0; n];
    let mut mu = vec![0.0; k];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        factor.multiplier(&e, &mut mu);
        mat_tr_vec(omega.as_slice(), k, n, &mu, &mut col);
        for i in 0..n {
            pi[(i, j)] = col[i];
        }
    }
    // Round-off leaves asymmetries of order 1e-17; remove them.
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (pi[(i, j)] + pi[(j, i)]);
            pi[(i, j)] = s;
            pi[(j, i)] = s;
        }
    }
    Ok(pi)
}

/// `σ = I - π`, the orthogonal projector onto `ker Ω` (the identity when
/// `k = 0`).
pub fn projector_sigma(omega: &Matrix) -> Result<Matrix> {
    let pi = projector_pi(omega)?;
    Ok(Matrix::identity(omega.cols()).sub(&pi))
}

/// Orthonormal basis of `ker Ω` as the columns of an `n x (n - k)` matrix.
///
/// Built by modified Gram-Schmidt over the columns of `σ` in index order,
/// skipping columns whose remainder is shorter than
/// [`KERNEL_COLUMN_TOLERANCE`]. Every accepted column is projected by `σ` a
/// second time so cancellation in `σ` itself cannot leak into the basis.
pub fn kernel_basis(omega: &Matrix) -> Result<Matrix> {
    let sigma = projector_sigma(omega)?;
    Ok(orthonormal_kernel(&sigma, omega.cols() - omega.rows()))
}

fn orthonormal_kernel(sigma: &Matrix, dim: usize) -> Matrix {
    let n = sigma.rows();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for j in 0..n {
        if basis.len() == dim {
            break;
        }
        let mut v = sigma.column(j);
        if !orthogonalize(&mut v, &basis) {
            continue;
        }
        let polished = sigma.mul_vec(&v);
        v = polished;
        if !orthogonalize(&mut v, &basis) {
            continue;
        }
        basis.push(v);
    }
    let mut out = Matrix::zeros(n, basis.len());
    for (c, v) in basis.iter().enumerate() {
        for i in 0..n {
            out[(i, c)] = v[i];
        }
    }
    out
}

/// Removes the components of `v` along `basis` and normalises it; returns
/// `false` if what remains is below the kernel tolerance.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> bool {
    for b in basis {
        let c = dot(v, b);
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi -= c * bi;
        }
    }
    let len = libm::sqrt(dot(v, v));
    if len < KERNEL_COLUMN_TOLERANCE {
        return false;
    }
    for vi in v.iter_mut() {
        *vi /= len;
    }
    true
}

/// `Ω v`; zero exactly when `v` is an admissible velocity at this point.
pub fn constraint_residual(omega: &Matrix, v: &[f64]) -> Vec<f64> {
    omega.mul_vec(v)
}
