//! Benchmark objectives with exact gradients, tight Lipschitz constants,
//! minimal-norm minimizers and the Tikhonov regularization path.
//!
//! Every objective is a smooth convex `f` with an `L`-Lipschitz gradient. For
//! `eps > 0` the regularized function `f_eps(x) = f(x) + (eps/2)·|x|²` has a
//! unique minimizer `xbar(eps)`; as `eps → 0` this path converges to the
//! minimal-norm element of `argmin f`, which is the point the solver is
//! designed to reach.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Column vector of f64, the point type used throughout the crate.
pub type Vector = DVector<f64>;

/// Budget for the iterative Tikhonov fallback solver.
pub const TIKHONOV_MAX_ITER: u64 = 1_000_000;
/// Gradient-norm tolerance for the iterative Tikhonov fallback solver.
pub const TIKHONOV_GRAD_TOL: f64 = 1e-12;
/// Relative singular-value cutoff for the pseudoinverse solve.
const PINV_CUTOFF_REL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("objective is unbounded below: rhs not in range of the matrix (residual {residual:.3e})")]
    UnboundedBelow { residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("regularization parameter must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error(
        "tikhonov inner solver did not reach |grad| <= {tol:.1e} within {budget} iterations (final |grad| = {grad_norm:.3e})"
    )]
    OracleFailure { tol: f64, budget: u64, grad_norm: f64 },
}

/// The minimal-norm minimizer `x* = argmin{ |x| : x in argmin f }` and `min f`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormOracle {
    pub x_star: Vector,
    pub min_value: f64,
}

/// The unique minimizer of `f + (eps/2)|·|²`, satisfying `grad f(x) + eps·x = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovPoint {
    pub eps: f64,
    pub point: Vector,
}

type ValueFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Vector) -> Vector + Send + Sync;

enum Form {
    /// f(x, y) = (a·x + b·y)², evaluated in rank-one form.
    RankOneSquare { a: f64, b: f64 },
    /// f(x) = ½|x − u|².
    Shifted { center: Vector },
    /// f(x) = ½ xᵀAx − bᵀx with A symmetric PSD.
    Quadratic { mat: DMatrix<f64>, rhs: Vector },
    /// Arbitrary smooth convex function supplied as closures.
    Custom { value: Arc<ValueFn>, gradient: Arc<GradFn> },
}

impl Clone for Form {
    fn clone(&self) -> Self {
        match self {
            Form::RankOneSquare { a, b } => Form::RankOneSquare { a: *a, b: *b },
            Form::Shifted { center } => Form::Shifted { center: center.clone() },
            Form::Quadratic { mat, rhs } => {
                Form::Quadratic { mat: mat.clone(), rhs: rhs.clone() }
            }
            Form::Custom { value, gradient } => {
                Form::Custom { value: Arc::clone(value), gradient: Arc::clone(gradient) }
            }
        }
    }
}

/// A smooth convex objective. Immutable after construction; all evaluations are
/// pure and safe to call from multiple threads.
#[derive(Clone)]
pub struct Objective {
    name: String,
    dim: usize,
    form: Form,
    lipschitz: f64,
    lipschitz_paper: Option<f64>,
    oracle: Option<MinNormOracle>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Objective {
    /// The 2-D benchmark `f(x, y) = (a·x + b·y)²`.
    ///
    /// The Hessian is the rank-one matrix `2·(a,b)(a,b)ᵀ`, so the tight
    /// gradient Lipschitz constant is `2(a² + b²)`; the looser closed-form
    /// constant `2√2·√((a²+b²)·max(a²,b²))` is kept separately as
    /// `lipschitz_paper` for reporting. The minimal-norm minimizer is the
    /// origin.
    pub fn paper_quadratic(a: f64, b: f64) -> Result<Objective, ProblemError> {
        if a == 0.0 || b == 0.0 || !a.is_finite() || !b.is_finite() {
            return Err(ProblemError::InvalidProblem(format!(
                "coefficients of (a·x + b·y)^2 must be nonzero and finite, got a={a}, b={b}"
            )));
        }
        let sq = a * a + b * b;
        Ok(Objective {
            name: format!("paper_quadratic(a={a}, b={b})"),
            dim: 2,
            form: Form::RankOneSquare { a, b },
            lipschitz: 2.0 * sq,
            lipschitz_paper: Some(
                2.0 * 2.0_f64.sqrt() * (sq * a.abs().max(b.abs()).powi(2)).sqrt(),
            ),
            oracle: Some(MinNormOracle { x_star: Vector::zeros(2), min_value: 0.0 }),
        })
    }

    /// `f(x) = ½|x − u|²`, the simplest fixture with a unique minimizer.
    pub fn shifted_quadratic(center: Vector) -> Objective {
        let dim = center.len();
        Objective {
            name: format!("shifted_quadratic(dim={dim})"),
            dim,
            form: Form::Shifted { center: center.clone() },
            lipschitz: 1.0,
            lipschitz_paper: None,
            oracle: Some(MinNormOracle { x_star: center, min_value: 0.0 }),
        }
    }

    /// `f(x) = ½ xᵀAx − bᵀx` with `A` symmetric positive semidefinite and `b`
    /// in the range of `A`. The minimal-norm minimizer is the pseudoinverse
    /// solution of `Ax = b`; `b` outside `range(A)` makes `f` unbounded below.
    pub fn psd_quadratic(mat: DMatrix<f64>, rhs: Vector) -> Result<Objective, ProblemError> {
        let dim = rhs.len();
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(ProblemError::DimensionMismatch { expected: dim, got: mat.nrows() });
        }
        let scale = mat.amax().max(1.0);
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-10 * scale {
                    return Err(ProblemError::InvalidProblem(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eigen = SymmetricEigen::new(mat.clone());
        let lambda_max = eigen.eigenvalues.max();
        if !(lambda_max > 0.0) {
            return Err(ProblemError::InvalidProblem(
                "matrix must have a positive largest eigenvalue".into(),
            ));
        }
        if eigen.eigenvalues.min() < -1e-10 * lambda_max {
            return Err(ProblemError::InvalidProblem(format!(
                "matrix is not positive semidefinite (min eigenvalue {})",
                eigen.eigenvalues.min()
            )));
        }
        // Pseudoinverse solve with a relative cutoff deciding range membership.
        let cutoff = PINV_CUTOFF_REL * lambda_max;
        let mut x_star = Vector::zeros(dim);
        for (i, &lambda) in eigen.eigenvalues.iter().enumerate() {
            if lambda > cutoff {
                let u = eigen.eigenvectors.column(i);
                x_star += u * (u.dot(&rhs) / lambda);
            }
        }
        let residual = (&mat * &x_star - &rhs).norm();
        if residual > 1e-8 * rhs.norm().max(1.0) {
            return Err(ProblemError::UnboundedBelow { residual });
        }
        let min_value = 0.5 * x_star.dot(&(&mat * &x_star)) - rhs.dot(&x_star);
        Ok(Objective {
            name: format!("psd_quadratic(dim={dim})"),
            dim,
            form: Form::Quadratic { mat, rhs },
            lipschitz: lambda_max,
            lipschitz_paper: None,
            oracle: Some(MinNormOracle { x_star, min_value }),
        })
    }

    /// Objective defined by closures, for problems without a closed form.
    /// `tikhonov_point` falls back to the iterative inner solver.
    pub fn custom(
        name: impl Into<String>,
        dim: usize,
        value: Arc<ValueFn>,
        gradient: Arc<GradFn>,
        lipschitz: f64,
        oracle: Option<MinNormOracle>,
    ) -> Objective {
        Objective {
            name: name.into(),
            dim,
            form: Form::Custom { value, gradient },
            lipschitz,
            lipschitz_paper: None,
            oracle,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Tight bound on the gradient Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// The looser closed-form constant quoted for the (a·x+b·y)² benchmark,
    /// kept for reporting only.
    pub fn lipschitz_paper(&self) -> Option<f64> {
        self.lipschitz_paper
    }

    pub fn min_norm(&self) -> Option<&MinNormOracle> {
        self.oracle.as_ref()
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match &self.form {
            Form::RankOneSquare { a, b } => {
                let t = a * x[0] + b * x[1];
                t * t
            }
            Form::Shifted { center } => 0.5 * (x - center).norm_squared(),
            Form::Quadratic { mat, rhs } => 0.5 * x.dot(&(mat * x)) - rhs.dot(x),
            Form::Custom { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match &self.form {
            Form::RankOneSquare { a, b } => {
                let t = a * x[0] + b * x[1];
                Vector::from_vec(vec![2.0 * a * t, 2.0 * b * t])
            }
            Form::Shifted { center } => x - center,
            Form::Quadratic { mat, rhs } => mat * x - rhs,
            Form::Custom { gradient, .. } => gradient(x),
        }
    }

    /// Value of the regularized function `f(x) + (eps/2)|x|²`.
    pub fn reg_value(&self, eps: f64, x: &Vector) -> f64 {
        self.value(x) + 0.5 * eps * x.norm_squared()
    }

    /// Gradient of the regularized function, `grad f(x) + eps·x`.
    pub fn reg_gradient(&self, eps: f64, x: &Vector) -> Vector {
        self.gradient(x) + x * eps
    }

    /// The unique minimizer of `f + (eps/2)|·|²`. Quadratic families use a
    /// closed-form linear solve; anything else runs the iterative fallback.
    pub fn tikhonov_point(&self, eps: f64) -> Result<TikhonovPoint, ProblemError> {
        if !(eps > 0.0) {
            return Err(ProblemError::NonPositiveEps(eps));
        }
        let point = match &self.form {
            // (2vvᵀ + eps·I) x = 0 has only the trivial solution: the path is
            // constant at the origin.
            Form::RankOneSquare { .. } => Vector::zeros(2),
            Form::Shifted { center } => center / (1.0 + eps),
            Form::Quadratic { mat, rhs } => {
                let mut reg = mat.clone();
                for i in 0..self.dim {
                    reg[(i, i)] += eps;
                }
                match nalgebra::Cholesky::new(reg) {
                    Some(chol) => chol.solve(rhs),
                    None => return self.tikhonov_point_iterative(eps),
                }
            }
            Form::Custom { .. } => return self.tikhonov_point_iterative(eps),
        };
        Ok(TikhonovPoint { eps, point })
    }

    /// Fixed-step gradient descent on the eps-strongly convex regularized
    /// function, step `1/(L+eps)`, until `|grad| <= 1e-12`. Converges linearly;
    /// exceeding the budget is reported as an oracle failure.
    pub fn tikhonov_point_iterative(&self, eps: f64) -> Result<TikhonovPoint, ProblemError> {
        if !(eps > 0.0) {
            return Err(ProblemError::NonPositiveEps(eps));
        }
        let step = 1.0 / (self.lipschitz + eps);
        let mut x = Vector::zeros(self.dim);
        let mut grad_norm = f64::INFINITY;
        for _ in 0..TIKHONOV_MAX_ITER {
            let g = self.reg_gradient(eps, &x);
            grad_norm = g.norm();
            if grad_norm <= TIKHONOV_GRAD_TOL {
                return Ok(TikhonovPoint { eps, point: x });
            }
            x -= g * step;
        }
        Err(ProblemError::OracleFailure {
            tol: TIKHONOV_GRAD_TOL,
            budget: TIKHONOV_MAX_ITER,
            grad_norm,
        })
    }
}
