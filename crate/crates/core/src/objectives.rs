//! Smooth, level-bounded test costs.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("matrix must be square with size matching the vector ({rows}x{cols} vs {len})")]
    Shape {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("dimension must be at least {min}, got {got}")]
    Dimension { min: usize, got: usize },
    #[error("inverse gradient needs a strictly convex, supercoercive objective")]
    NotInvertible,
    #[error(
        "inverse gradient did not converge in {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// Structural properties of an objective used to gate certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConvexityFlags {
    pub convex: bool,
    pub strictly_convex: bool,
    pub supercoercive: bool,
}

/// A twice-differentiable cost `f: ℝⁿ → ℝ`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `∇²f(x)·v`.
    fn hess_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    fn flags(&self) -> ConvexityFlags;

    fn f_star(&self) -> Option<f64> {
        None
    }

    fn minimizer(&self) -> Option<DVector<f64>> {
        None
    }

    /// Strong convexity modulus, if the objective is strongly convex.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    /// Global Lipschitz constant of `∇f`, if known.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    /// Closed-form `∇f*(z)`, when one exists.
    fn grad_conjugate_closed(&self, _z: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    fn name(&self) -> &str;
}

impl fmt::Debug for dyn Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Objective({}, dim={})", self.name(), self.dim())
    }
}

/// `f(x) = ½xᵀAx − bᵀx` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
    a_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    minimizer: DVector<f64>,
    f_star: f64,
    lambda_min: f64,
    lambda_max: f64,
}

pub fn make_quadratic(a: DMatrix<f64>, b: DVector<f64>) -> Result<Quadratic, ObjectiveError> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() || b.is_empty() {
        return Err(ObjectiveError::Shape {
            rows: a.nrows(),
            cols: a.ncols(),
            len: b.len(),
        });
    }
    let scale = a.amax().max(1.0);
    let asym = (&a - a.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(ObjectiveError::NotSymmetric(asym));
    }
    let eig = a.clone().symmetric_eigen();
    let lambda_min = eig.eigenvalues.min();
    let lambda_max = eig.eigenvalues.max();
    if !(lambda_min >= 1e-12) {
        return Err(ObjectiveError::NotPositiveDefinite(lambda_min));
    }
    let a_chol = a
        .clone()
        .cholesky()
        .ok_or(ObjectiveError::NotPositiveDefinite(lambda_min))?;
    let minimizer = a_chol.solve(&b);
    let f_star = -0.5 * b.dot(&minimizer);
    Ok(Quadratic {
        a,
        b,
        a_chol,
        minimizer,
        f_star,
        lambda_min,
        lambda_max,
    })
}

impl Quadratic {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.b
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) - self.b.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    fn hess_vec(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.a * v
    }

    fn flags(&self) -> ConvexityFlags {
        ConvexityFlags {
            convex: true,
            strictly_convex: true,
            supercoercive: true,
        }
    }

    fn f_star(&self) -> Option<f64> {
        Some(self.f_star)
    }

    fn minimizer(&self) -> Option<DVector<f64>> {
        Some(self.minimizer.clone())
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.lambda_min)
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.lambda_max)
    }

    fn grad_conjugate_closed(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.a_chol.solve(&(z + &self.b)))
    }

    fn name(&self) -> &str {
        "quadratic"
    }
}

/// `f(x) = ‖x‖⁴`: strictly convex and supercoercive, not strongly convex.
#[derive(Debug, Clone, Copy)]
pub struct Quartic {
    dim: usize,
}

pub fn make_quartic(dim: usize) -> Result<Quartic, ObjectiveError> {
    if dim == 0 {
        return Err(ObjectiveError::Dimension { min: 1, got: 0 });
    }
    Ok(Quartic { dim })
}

impl Objective for Quartic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let n2 = x.norm_squared();
        n2 * n2
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x * (4.0 * x.norm_squared())
    }

    fn hess_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v * (4.0 * x.norm_squared()) + x * (8.0 * x.dot(v))
    }

    fn flags(&self) -> ConvexityFlags {
        ConvexityFlags {
            convex: true,
            strictly_convex: true,
            supercoercive: true,
        }
    }

    fn f_star(&self) -> Option<f64> {
        Some(0.0)
    }

    fn minimizer(&self) -> Option<DVector<f64>> {
        Some(DVector::zeros(self.dim))
    }

    fn name(&self) -> &str {
        "quartic"
    }
}

/// Chained Rosenbrock `Σ (1−xᵢ)² + 100(xᵢ₊₁ − xᵢ²)²`.
#[derive(Debug, Clone, Copy)]
pub struct Rosenbrock {
    dim: usize,
}

pub fn make_rosenbrock(dim: usize) -> Result<Rosenbrock, ObjectiveError> {
    if dim < 2 {
        return Err(ObjectiveError::Dimension { min: 2, got: dim });
    }
    Ok(Rosenbrock { dim })
}

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim - 1)
            .map(|i| {
                let a = 1.0 - x[i];
                let b = x[i + 1] - x[i] * x[i];
                a * a + 100.0 * b * b
            })
            .sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for i in 0..self.dim - 1 {
            let b = x[i + 1] - x[i] * x[i];
            g[i] += -2.0 * (1.0 - x[i]) - 400.0 * x[i] * b;
            g[i + 1] += 200.0 * b;
        }
        g
    }

    fn hess_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for i in 0..self.dim - 1 {
            let hii = 2.0 - 400.0 * x[i + 1] + 1200.0 * x[i] * x[i];
            let hij = -400.0 * x[i];
            out[i] += hii * v[i] + hij * v[i + 1];
            out[i + 1] += hij * v[i] + 200.0 * v[i + 1];
        }
        out
    }

    fn flags(&self) -> ConvexityFlags {
        ConvexityFlags::default()
    }

    fn f_star(&self) -> Option<f64> {
        Some(0.0)
    }

    fn minimizer(&self) -> Option<DVector<f64>> {
        Some(DVector::from_element(self.dim, 1.0))
    }

    fn name(&self) -> &str {
        "rosenbrock"
    }
}

/// Dense Hessian assembled from `n` Hessian-vector products.
fn dense_hessian(o: &dyn Objective, x: &DVector<f64>) -> DMatrix<f64> {
    let n = o.dim();
    let mut h = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        h.set_column(j, &o.hess_vec(x, &e));
        e[j] = 0.0;
    }
    h
}

pub const GRAD_FSTAR_MAX_ITER: usize = 100;

/// `∇f*(z)`: the unique `x` with `∇f(x) = z`.
///
/// Uses the closed form when the objective has one; otherwise damped Newton
/// on `x ↦ ∇f(x) − z` starting from `x = z`, halving the step until the
/// residual norm decreases.
pub fn grad_fstar(
    o: &dyn Objective,
    z: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>, ObjectiveError> {
    let flags = o.flags();
    if !(flags.strictly_convex && flags.supercoercive) {
        return Err(ObjectiveError::NotInvertible);
    }
    if !(tol > 0.0) {
        return Err(ObjectiveError::BadTolerance(tol));
    }
    if let Some(x) = o.grad_conjugate_closed(z) {
        return Ok(x);
    }

    let mut x = z.clone();
    let mut residual = o.gradient(&x) - z;
    let mut rnorm = residual.norm();
    for _ in 0..GRAD_FSTAR_MAX_ITER {
        if rnorm <= tol {
            return Ok(x);
        }
        let h = dense_hessian(o, &x);
        let dir = match h.clone().cholesky() {
            Some(ch) => ch.solve(&residual),
            None => {
                // Singular Hessian (e.g. ‖x‖⁴ at the origin): regularize.
                let shift = 1e-8 * (1.0 + h.amax());
                let hs = h + DMatrix::identity(x.len(), x.len()) * shift;
                match hs.cholesky() {
                    Some(ch) => ch.solve(&residual),
                    None => residual.clone(),
                }
            }
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &x - &dir * step;
            let r_trial = o.gradient(&trial) - z;
            let n_trial = r_trial.norm();
            if n_trial < rnorm {
                x = trial;
                residual = r_trial;
                rnorm = n_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if rnorm <= tol {
        Ok(x)
    } else {
        Err(ObjectiveError::NoConvergence {
            iterations: GRAD_FSTAR_MAX_ITER,
            residual: rnorm,
        })
    }
}
