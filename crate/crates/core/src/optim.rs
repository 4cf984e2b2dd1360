//! Levenberg–Marquardt over a product of manifold charts.
//!
//! A problem supplies a residual, an optional Jacobian with respect to its
//! tangent chart, and a retraction. Steps solve the damped normal equations
//! `(JᵀJ + λ·diag(JᵀJ)) δ = −Jᵀr`; a step is accepted only if the cost
//! `|r|²` decreases, otherwise the damping grows and the solve is retried.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Central-difference step used when a problem has no analytic Jacobian.
pub const FD_STEP: f64 = 1e-6;

/// Damping beyond which a point is declared stationary.
const MAX_DAMPING: f64 = 1e20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmConfigError {
    #[error("max_iterations must be at least 1")]
    NoIterations,
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("{0} must be greater than 1")]
    FactorTooSmall(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    max_iterations: usize,
    initial_damping: f64,
    damping_up: f64,
    damping_down: f64,
    cost_tolerance: f64,
    step_tolerance: f64,
}

impl LmConfig {
    pub fn new(
        max_iterations: usize,
        initial_damping: f64,
        damping_up: f64,
        damping_down: f64,
        cost_tolerance: f64,
        step_tolerance: f64,
    ) -> Result<Self, LmConfigError> {
        if max_iterations == 0 {
            return Err(LmConfigError::NoIterations);
        }
        for (name, v) in [
            ("initial_damping", initial_damping),
            ("cost_tolerance", cost_tolerance),
            ("step_tolerance", step_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LmConfigError::NonPositive(name));
            }
        }
        for (name, v) in [("damping_up", damping_up), ("damping_down", damping_down)] {
            if !(v > 1.0 && v.is_finite()) {
                return Err(LmConfigError::FactorTooSmall(name));
            }
        }
        Ok(Self {
            max_iterations,
            initial_damping,
            damping_up,
            damping_down,
            cost_tolerance,
            step_tolerance,
        })
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn with_max_iterations(self, max_iterations: usize) -> Result<Self, LmConfigError> {
        Self::new(
            max_iterations,
            self.initial_damping,
            self.damping_up,
            self.damping_down,
            self.cost_tolerance,
            self.step_tolerance,
        )
    }
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            cost_tolerance: 1e-14,
            step_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminationReason {
    CostTol,
    StepTol,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmStatus {
    pub converged: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub reason: TerminationReason,
}

/// A nonlinear least-squares problem on a manifold.
pub trait LeastSquaresProblem {
    type Point: Clone;

    /// Dimension of the tangent chart.
    fn tangent_dim(&self) -> usize;

    fn residual(&self, x: &Self::Point) -> DVector<f64>;

    fn retract(&self, x: &Self::Point, delta: &DVector<f64>) -> Self::Point;

    /// Jacobian of the residual with respect to the tangent chart at `x`.
    /// `None` selects central finite differences.
    fn jacobian(&self, _x: &Self::Point) -> Option<DMatrix<f64>> {
        None
    }
}

/// Central-difference Jacobian of `problem.residual` in the tangent chart.
pub fn numeric_jacobian<P: LeastSquaresProblem>(problem: &P, x: &P::Point, step: f64) -> DMatrix<f64> {
    let n = problem.tangent_dim();
    let r0 = problem.residual(x);
    let mut jac = DMatrix::zeros(r0.len(), n);
    let mut delta = DVector::zeros(n);
    for j in 0..n {
        delta[j] = step;
        let plus = problem.residual(&problem.retract(x, &delta));
        delta[j] = -step;
        let minus = problem.residual(&problem.retract(x, &delta));
        delta[j] = 0.0;
        jac.set_column(j, &((plus - minus) / (2.0 * step)));
    }
    jac
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn lm_minimize<P: LeastSquaresProblem>(problem: &P, x0: P::Point, cfg: &LmConfig) -> (P::Point, LmStatus) {
    let n = problem.tangent_dim();
    let mut x = x0;
    let mut r = problem.residual(&x);
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let status = |converged, iterations, final_cost, reason| LmStatus {
        converged,
        iterations,
        initial_cost,
        final_cost,
        reason,
    };
    if !cost.is_finite() {
        return (x, status(false, 0, cost, TerminationReason::NumericalFailure));
    }
    if cost == 0.0 {
        return (x, status(true, 0, cost, TerminationReason::CostTol));
    }

    let mut lambda = cfg.initial_damping;
    for iter in 1..=cfg.max_iterations {
        let jac = problem
            .jacobian(&x)
            .unwrap_or_else(|| numeric_jacobian(problem, &x, FD_STEP));
        if jac.iter().any(|v| !v.is_finite()) {
            return (x, status(false, iter, cost, TerminationReason::NumericalFailure));
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        if max_diag == 0.0 {
            return (x, status(true, iter, cost, TerminationReason::StepTol));
        }
        // Marquardt scaling with a floor so flat directions stay solvable.
        let floor = max_diag * 1e-12;

        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= cfg.damping_up;
                if lambda > MAX_DAMPING {
                    return (x, status(true, iter, cost, TerminationReason::StepTol));
                }
                continue;
            };
            let delta = -chol.solve(&grad);
            if delta.norm() <= cfg.step_tolerance {
                return (x, status(true, iter, cost, TerminationReason::StepTol));
            }
            let candidate = problem.retract(&x, &delta);
            let r_new = problem.residual(&candidate);
            if !all_finite(&r_new) {
                return (x, status(false, iter, cost, TerminationReason::NumericalFailure));
            }
            let new_cost = r_new.norm_squared();
            if new_cost < cost {
                let decrease = cost - new_cost;
                x = candidate;
                r = r_new;
                let previous = cost;
                cost = new_cost;
                lambda = (lambda / cfg.damping_down).max(1e-15);
                if decrease <= cfg.cost_tolerance * previous || cost == 0.0 {
                    return (x, status(true, iter, cost, TerminationReason::CostTol));
                }
                break;
            }
            lambda *= cfg.damping_up;
            if lambda > MAX_DAMPING {
                return (x, status(true, iter, cost, TerminationReason::StepTol));
            }
        }
    }
    let iterations = cfg.max_iterations;
    (x, status(false, iterations, cost, TerminationReason::MaxIter))
}

/// Least-squares problem over `R^n` built from closures.
pub struct EuclideanProblem<R, J = fn(&DVector<f64>) -> DMatrix<f64>>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    dim: usize,
    residual: R,
    jacobian: Option<J>,
}

impl<R> EuclideanProblem<R>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
{
    pub fn new(dim: usize, residual: R) -> Self {
        Self { dim, residual, jacobian: None }
    }
}

impl<R, J> EuclideanProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    pub fn with_jacobian(dim: usize, residual: R, jacobian: J) -> Self {
        Self { dim, residual, jacobian: Some(jacobian) }
    }
}

impl<R, J> LeastSquaresProblem for EuclideanProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    type Point = DVector<f64>;

    fn tangent_dim(&self) -> usize {
        self.dim
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.residual)(x)
    }

    fn retract(&self, x: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        x + delta
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;
    use std::cell::RefCell;

    fn rosenbrock(x: &DVector<f64>) -> DVector<f64> {
        dvector![1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])]
    }

    fn rosenbrock_jac(x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * x[0], 10.0])
    }

    #[test]
    fn linear_residual_converges_immediately() {
        let p = EuclideanProblem::new(1, |x: &DVector<f64>| dvector![x[0] - 3.0]);
        let cfg = LmConfig::default().with_max_iterations(2).unwrap();
        let (x, st) = lm_minimize(&p, dvector![0.0], &cfg);
        assert!((x[0] - 3.0).abs() < 1e-6, "{x:?}");
        assert!(st.iterations <= 2, "{st:?}");
        let (x, st) = lm_minimize(&p, dvector![0.0], &LmConfig::default());
        assert!((x[0] - 3.0).abs() < 1e-12);
        assert!(st.converged);
    }

    #[test]
    fn rosenbrock_reaches_its_minimum() {
        let cfg = LmConfig::default().with_max_iterations(200).unwrap();
        let p = EuclideanProblem::with_jacobian(2, rosenbrock, rosenbrock_jac);
        let (x, st) = lm_minimize(&p, dvector![-1.2, 1.0], &cfg);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?} {st:?}");
        assert!(st.converged);
    }

    #[test]
    fn finite_difference_path_agrees_with_analytic() {
        let cfg = LmConfig::default().with_max_iterations(200).unwrap();
        let analytic = EuclideanProblem::with_jacobian(2, rosenbrock, rosenbrock_jac);
        let numeric = EuclideanProblem::new(2, rosenbrock);
        let (xa, _) = lm_minimize(&analytic, dvector![-1.2, 1.0], &cfg);
        let (xn, _) = lm_minimize(&numeric, dvector![-1.2, 1.0], &cfg);
        assert!((xa - xn).norm() < 1e-5);
    }

    #[test]
    fn zero_iterations_rejected() {
        assert_eq!(
            LmConfig::new(0, 1e-3, 10.0, 10.0, 1e-12, 1e-12),
            Err(LmConfigError::NoIterations)
        );
        assert!(LmConfig::new(10, 1e-3, 1.0, 10.0, 1e-12, 1e-12).is_err());
        assert!(LmConfig::new(10, -1.0, 10.0, 10.0, 1e-12, 1e-12).is_err());
    }

    #[test]
    fn non_finite_residual_reports_failure() {
        let p = EuclideanProblem::new(1, |x: &DVector<f64>| {
            if x[0] > 0.5 {
                dvector![f64::NAN]
            } else {
                dvector![x[0] - 3.0]
            }
        });
        let (x, st) = lm_minimize(&p, dvector![0.0], &LmConfig::default());
        assert_eq!(st.reason, TerminationReason::NumericalFailure);
        assert!(!st.converged);
        assert_eq!(x[0], 0.0);

        let bad = EuclideanProblem::new(1, |_: &DVector<f64>| dvector![f64::INFINITY]);
        let (_, st) = lm_minimize(&bad, dvector![0.0], &LmConfig::default());
        assert_eq!(st.reason, TerminationReason::NumericalFailure);
        assert_eq!(st.iterations, 0);
    }

    #[test]
    fn max_iterations_is_reported() {
        let cfg = LmConfig::default().with_max_iterations(2).unwrap();
        let p = EuclideanProblem::with_jacobian(2, rosenbrock, rosenbrock_jac);
        let (_, st) = lm_minimize(&p, dvector![-1.2, 1.0], &cfg);
        assert_eq!(st.reason, TerminationReason::MaxIter);
        assert!(!st.converged);
    }

    proptest! {
        #[test]
        fn accepted_costs_never_increase(a in -3.0f64..3.0, b in -3.0f64..3.0, iters in 1usize..40) {
            // Record the cost at every accepted point by re-running with growing budgets.
            let log = RefCell::new(Vec::new());
            let p = EuclideanProblem::with_jacobian(2, rosenbrock, rosenbrock_jac);
            for k in 1..=iters {
                let cfg = LmConfig::default().with_max_iterations(k).unwrap();
                let (_, st) = lm_minimize(&p, dvector![a, b], &cfg);
                prop_assert!(st.final_cost <= st.initial_cost);
                log.borrow_mut().push(st.final_cost);
            }
            let costs = log.into_inner();
            for w in costs.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
