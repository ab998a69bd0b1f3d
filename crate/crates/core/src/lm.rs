//! Damped least-squares minimization (Levenberg-Marquardt).
//!
//! The solver works on an abstract state so rotation parameters can live on
//! their manifold: the problem supplies residuals, a Jacobian with respect
//! to a local increment, and a retraction that applies an increment to the
//! state. Damping starts at 1e-4, multiplies by 10 on a rejected step and
//! divides by 10 on an accepted one; iteration stops when the relative cost
//! change of an accepted step drops below 1e-12 or the iteration cap is hit.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors raised by the minimizer.
#[derive(Debug, Error)]
pub enum LmError {
    /// The damped normal equations could not be solved even with large
    /// damping, which indicates a structurally singular Jacobian.
    #[error("normal equations are singular")]
    SingularNormalEquations,
}

/// Solver options.
#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    /// Initial damping factor.
    pub initial_damping: f64,
    /// Maximum number of accepted iterations.
    pub max_iterations: usize,
    /// Relative cost-change threshold declaring convergence.
    pub relative_cost_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_damping: 1e-4,
            max_iterations: 100,
            relative_cost_tolerance: 1e-12,
        }
    }
}

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct LmReport {
    /// Accepted iterations performed.
    pub iterations: usize,
    /// Whether the relative cost tolerance was reached.
    pub converged: bool,
    /// Cost at the initial state (sum of squared residuals).
    pub initial_cost: f64,
    /// Cost at the final state.
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// A nonlinear least-squares problem over a manifold-valued state.
pub trait LeastSquaresProblem {
    /// State the solver walks over.
    type State: Clone;

    /// Dimension of the local increment.
    fn dimension(&self) -> usize;

    /// Residual vector at a state.
    fn residuals(&self, state: &Self::State) -> DVector<f64>;

    /// Jacobian of the residuals with respect to the local increment,
    /// evaluated at the given state.
    fn jacobian(&self, state: &Self::State) -> DMatrix<f64>;

    /// Applies a local increment to the state.
    fn retract(&self, state: &Self::State, step: &DVector<f64>) -> Self::State;
}

/// Bound on consecutive damping escalations within one iteration.
const MAX_STEP_ATTEMPTS: usize = 60;

/// Minimizes the sum of squared residuals starting from `initial`.
pub fn minimize<P: LeastSquaresProblem>(
    problem: &P,
    initial: P::State,
    options: &LmOptions,
) -> Result<(P::State, LmReport), LmError> {
    let mut state = initial;
    let mut residuals = problem.residuals(&state);
    let mut cost = residuals.norm_squared();
    let initial_cost = cost;
    let mut cost_history = vec![cost];
    let mut damping = options.initial_damping;
    let mut iterations = 0;
    let mut converged = false;

    'outer: while iterations < options.max_iterations {
        let jacobian = problem.jacobian(&state);
        let jtj = jacobian.transpose() * &jacobian;
        let gradient = jacobian.transpose() * &residuals;
        let diag = jtj.diagonal();
        let diag_floor = diag.amax().max(1e-32) * 1e-12;

        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_STEP_ATTEMPTS {
                break 'outer;
            }
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += damping * diag[i].max(diag_floor);
            }
            let step = match damped.cholesky() {
                Some(chol) => chol.solve(&(-&gradient)),
                None => {
                    damping *= 10.0;
                    if damping > 1e40 {
                        return Err(LmError::SingularNormalEquations);
                    }
                    continue;
                }
            };
            let candidate = problem.retract(&state, &step);
            let candidate_residuals = problem.residuals(&candidate);
            let candidate_cost = candidate_residuals.norm_squared();
            if candidate_cost <= cost {
                let relative_change = if cost > 0.0 {
                    (cost - candidate_cost) / cost
                } else {
                    0.0
                };
                state = candidate;
                residuals = candidate_residuals;
                cost = candidate_cost;
                cost_history.push(cost);
                iterations += 1;
                damping = (damping / 10.0).max(1e-32);
                if relative_change < options.relative_cost_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            damping *= 10.0;
            if damping > 1e40 {
                // No descent direction improves the cost; treat the current
                // state as the solution rather than erroring out.
                break 'outer;
            }
        }
    }

    Ok((
        state,
        LmReport {
            iterations,
            converged,
            initial_cost,
            final_cost: cost,
            cost_history,
        },
    ))
}
