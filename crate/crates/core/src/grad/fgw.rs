//! Fused Gromov–Wasserstein solver.
//!
//! The objective over couplings `T` with uniform marginals `p`, `q` is
//!
//! ```text
//! f(T) = lambda * <M, T> + (1 - lambda) * sum |C1[i,k] - C2[j,l]|^2 T[i,j] T[k,l]
//! ```
//!
//! With square loss the structure term equals `<constC - 2 C1 T C2, T>` where
//! `constC[i,j] = (C1^2 p)[i] + (C2^2 q)[j]`, which makes every evaluation a
//! pair of matrix products.
//!
//! The solver runs entropic mirror descent from the independent coupling
//! (each step a log-domain Sinkhorn projection of the linearized cost), then
//! polishes the result with conditional-gradient steps whose linear oracle is
//! an exact transport solve and whose step size is the closed-form minimizer
//! of the quadratic along the search direction.

use super::graph::PatchGraph;
use super::transport::{exact_uniform_transport, sinkhorn_log};
use super::{GradError, GradParams};
use crate::matrix::Dense;
use crate::scalar::dot;
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct GradOutcome<T> {
    /// Objective at the returned coupling, clamped at zero.
    pub value: T,
    pub coupling: Dense<T>,
    pub outer_iters: usize,
    pub polish_iters: usize,
    /// Entropic phase stopped on `max_outer_iters` rather than on `tol`.
    pub iteration_limit: bool,
}

struct Problem<T> {
    lambda: T,
    feature_cost: Dense<T>,
    c1: Dense<T>,
    c2: Dense<T>,
    const_c: Dense<T>,
    p: Vec<T>,
    q: Vec<T>,
}

impl<T: Scalar> Problem<T> {
    fn new(a: &PatchGraph<T>, b: &PatchGraph<T>, lambda: T) -> Self {
        let feature_cost = Dense::from_fn(a.patch_count(), b.patch_count(), |i, j| {
            T::one() - dot(a.features.row(i), b.features.row(j))
        });
        let sq = |c: &Dense<T>, w: &[T]| -> Vec<T> {
            (0..c.rows())
                .map(|i| c.row(i).iter().zip(w).map(|(&v, &wk)| v * v * wk).sum())
                .collect()
        };
        let u = sq(&a.intra_cost, &a.weights);
        let v = sq(&b.intra_cost, &b.weights);
        let const_c = Dense::from_fn(u.len(), v.len(), |i, j| u[i] + v[j]);
        Self {
            lambda,
            feature_cost,
            c1: a.intra_cost.clone(),
            c2: b.intra_cost.clone(),
            const_c,
            p: a.weights.clone(),
            q: b.weights.clone(),
        }
    }

    fn structure_lin(&self, t: &Dense<T>) -> Dense<T> {
        self.c1.matmul(t).matmul(&self.c2)
    }

    /// `lambda * M + 2 (1 - lambda) (constC - 2 C1 T C2)`
    fn gradient(&self, t: &Dense<T>) -> Dense<T> {
        let two = T::of(2.0);
        let s = self.structure_lin(t);
        let w = two * (T::one() - self.lambda);
        Dense::from_fn(t.rows(), t.cols(), |i, j| {
            self.lambda * self.feature_cost[(i, j)] + w * (self.const_c[(i, j)] - two * s[(i, j)])
        })
    }

    fn objective(&self, t: &Dense<T>) -> T {
        let s = self.structure_lin(t);
        let structure = self.const_c.inner(t) - T::of(2.0) * s.inner(t);
        self.lambda * self.feature_cost.inner(t) + (T::one() - self.lambda) * structure
    }
}

/// Fused Gromov–Wasserstein objective of `coupling` between two graphs.
pub fn fgw_objective<T: Scalar>(
    a: &PatchGraph<T>,
    b: &PatchGraph<T>,
    lambda: T,
    coupling: &Dense<T>,
) -> T {
    Problem::new(a, b, lambda).objective(coupling)
}

/// GRAD distance between two patch graphs.
///
/// The pair is put into a canonical orientation before solving, so
/// `grad_distance(a, b)` and `grad_distance(b, a)` run the same schedule and
/// agree exactly. The returned coupling is in the caller's orientation.
pub fn grad_distance<T: Scalar>(
    a: &PatchGraph<T>,
    b: &PatchGraph<T>,
    params: &GradParams,
) -> Result<GradOutcome<T>, GradError> {
    params.validate()?;
    if a.dim() != b.dim() {
        return Err(GradError::DimensionMismatch(a.dim(), b.dim()));
    }
    let key = |g: &PatchGraph<T>| (g.patch_count(), g.content_key(), g.design_id.clone());
    if key(b) < key(a) {
        let mut out = solve(b, a, params)?;
        out.coupling = out.coupling.transpose();
        return Ok(out);
    }
    solve(a, b, params)
}

fn solve<T: Scalar>(
    a: &PatchGraph<T>,
    b: &PatchGraph<T>,
    params: &GradParams,
) -> Result<GradOutcome<T>, GradError> {
    let (n, m) = (a.patch_count(), b.patch_count());

    if n == m && a.features == b.features {
        // identical graphs: the identity coupling attains the global minimum 0
        let w = T::one() / T::of(n as f64);
        let coupling = Dense::from_fn(n, n, |i, j| if i == j { w } else { T::zero() });
        return Ok(GradOutcome {
            value: T::zero(),
            coupling,
            outer_iters: 0,
            polish_iters: 0,
            iteration_limit: false,
        });
    }

    let lambda = T::of(params.lambda);
    let problem = Problem::new(a, b, lambda);
    let eps = T::of(params.epsilon);
    let tol = T::of(params.tol);

    let mut t = Dense::from_fn(n, m, |i, j| problem.p[i] * problem.q[j]);
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); m];
    let mut outer_iters = 0;
    let mut converged = params.max_outer_iters == 0;
    for _ in 0..params.max_outer_iters {
        outer_iters += 1;
        let cost = problem.gradient(&t);
        if !cost.is_finite() {
            return Err(GradError::SolverDiverged("non-finite linearized cost"));
        }
        let (next, _) = sinkhorn_log(
            &cost,
            &problem.p,
            &problem.q,
            eps,
            params.max_sinkhorn_iters,
            tol,
            &mut f,
            &mut g,
        );
        if !next.is_finite() {
            return Err(GradError::SolverDiverged(
                "non-finite coupling in entropic phase",
            ));
        }
        let change = next.max_abs_diff(&t);
        t = next;
        if change < tol {
            converged = true;
            break;
        }
    }

    let mut polish_iters = 0;
    for _ in 0..params.max_polish_iters {
        let grad = problem.gradient(&t);
        let vertex = exact_uniform_transport(&grad);
        let dir = Dense::from_fn(n, m, |i, j| vertex[(i, j)] - t[(i, j)]);
        let slope = grad.inner(&dir);
        if -slope <= tol {
            break;
        }
        polish_iters += 1;
        // f(t + s dir) = f(t) + s * slope + s^2 * curv
        let curv = -T::of(2.0) * (T::one() - lambda) * problem.structure_lin(&dir).inner(&dir);
        let step = if curv > T::zero() {
            (-slope / (T::of(2.0) * curv)).max(T::zero()).min(T::one())
        } else if curv + slope < T::zero() {
            T::one()
        } else {
            T::zero()
        };
        if step <= T::zero() {
            break;
        }
        t = Dense::from_fn(n, m, |i, j| t[(i, j)] + step * dir[(i, j)]);
    }

    let value = problem.objective(&t);
    if !value.is_finite() {
        return Err(GradError::SolverDiverged("non-finite objective"));
    }
    Ok(GradOutcome {
        value: value.max(T::zero()),
        coupling: t,
        outer_iters,
        polish_iters,
        iteration_limit: !converged,
    })
}
