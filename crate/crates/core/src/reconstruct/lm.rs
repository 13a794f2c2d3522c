//! Levenberg-Marquardt for small dense least-squares problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A least-squares objective `|r(x)|² + penalty(x)`.
pub trait Problem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Non-differentiable extra cost; it takes part in step acceptance only.
    fn penalty(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            max_iterations: 200,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-12,
            initial_lambda: 1e-3,
        }
    }
}

const MAX_LAMBDA: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    pub cost: f64,
    /// Number of Jacobian evaluations.
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the start and after every accepted step.
    pub cost_log: Vec<f64>,
}

fn total_cost<P: Problem + ?Sized>(problem: &P, x: &DVector<f64>) -> (DVector<f64>, f64) {
    let r = problem.residuals(x);
    let c = r.norm_squared() + problem.penalty(x);
    (r, c)
}

/// Minimizes from `init`. Damping is Marquardt-scaled: `(JᵀJ + λ·diag(JᵀJ))`,
/// with zero diagonal entries replaced by one.
pub fn levenberg_marquardt<P: Problem + ?Sized>(
    problem: &P,
    init: DVector<f64>,
    settings: &LmSettings,
) -> LmOutcome {
    let mut x = init;
    let (mut r, mut cost) = total_cost(problem, &x);
    let mut lambda = settings.initial_lambda;
    let mut log = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < settings.max_iterations {
        iterations += 1;
        let j = problem.jacobian(&x);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                let d = jtj[(k, k)];
                a[(k, k)] += lambda * if d > 0.0 { d } else { 1.0 };
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                if lambda > MAX_LAMBDA {
                    converged = true;
                    break 'outer;
                }
                continue;
            };
            let step = -chol.solve(&g);
            if step.norm() < settings.step_tolerance {
                converged = true;
                break 'outer;
            }
            let candidate = &x + &step;
            let (r_new, cost_new) = total_cost(problem, &candidate);
            if cost_new < cost {
                let drop = cost - cost_new;
                x = candidate;
                r = r_new;
                cost = cost_new;
                log.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                if drop < settings.cost_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_LAMBDA {
                converged = true;
                break 'outer;
            }
        }
    }
    LmOutcome { params: x, cost, iterations, converged, cost_log: log }
}

/// Central-difference Jacobian of `residuals`.
pub fn numeric_jacobian<F>(x: &DVector<f64>, h: f64, residuals: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = residuals(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut probe = x.clone();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = residuals(&probe);
        probe[k] = x[k] - h;
        let minus = residuals(&probe);
        probe[k] = x[k];
        jac.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    jac
}
