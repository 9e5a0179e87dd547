//! Small dense Levenberg–Marquardt solver for curve fitting.
//!
//! Minimises `Σ (model(p, x_i) - y_i)^2` with Marquardt's diagonal scaling.
//! A step is only accepted when it lowers the cost, so the returned
//! parameters are never worse than the starting point.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// A parametric curve with an analytic gradient in its parameters.
pub trait CurveModel {
    fn n_params(&self) -> usize;
    fn value(&self, p: &[f64], x: f64) -> f64;
    fn gradient(&self, p: &[f64], x: f64, out: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which the fit counts as converged.
    pub ftol: f64,
    /// Relative parameter step below which the fit counts as converged.
    pub xtol: f64,
    /// Gradient infinity norm (scaled by the cost) for convergence.
    pub gtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-12,
            gtol: 1e-14,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `sqrt(Σ r_i^2)`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Diagonal of `s^2 (J^T J)^{-1}` at the solution, when invertible.
    pub covariance_diagonal: Option<Vec<f64>>,
}

fn cost<M: CurveModel>(model: &M, p: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| (model.value(p, x) - y).powi(2))
        .sum()
}

fn normal_equations<M: CurveModel>(
    model: &M,
    p: &[f64],
    xs: &[f64],
    ys: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let n = model.n_params();
    let mut jtj = DMatrix::zeros(n, n);
    let mut jtr = DVector::zeros(n);
    let mut grad = vec![0.0; n];
    for (&x, &y) in xs.iter().zip(ys) {
        model.gradient(p, x, &mut grad);
        let r = model.value(p, x) - y;
        for a in 0..n {
            jtr[a] += grad[a] * r;
            for b in 0..=a {
                jtj[(a, b)] += grad[a] * grad[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            jtj[(b, a)] = jtj[(a, b)];
        }
    }
    (jtj, jtr)
}

fn solve_damped(jtj: &DMatrix<f64>, jtr: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = jtj.nrows();
    let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let mut a = jtj.clone();
    for i in 0..n {
        a[(i, i)] += lambda * jtj[(i, i)].max(1e-12 * max_diag);
    }
    let rhs = -jtr;
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(&rhs));
    }
    a.lu().solve(&rhs)
}

/// Runs Levenberg–Marquardt from `start`.
pub fn levenberg_marquardt<M: CurveModel>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    start: &[f64],
    opts: &LmOptions,
) -> LmOutcome {
    let n = model.n_params();
    let mut p = start.to_vec();
    let mut current = cost(model, &p, xs, ys);
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    if !current.is_finite() {
        return LmOutcome {
            params: p,
            residual_norm: f64::INFINITY,
            iterations: 0,
            converged: false,
            covariance_diagonal: None,
        };
    }
    while iterations < opts.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(model, &p, xs, ys);
        let gmax = jtr.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if gmax <= opts.gtol * current.max(1e-300) || current == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let Some(step) = solve_damped(&jtj, &jtr, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
            let trial_cost = cost(model, &trial, xs, ys);
            if trial_cost.is_finite() && trial_cost < current {
                let step_norm = step.norm();
                let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rel_drop = (current - trial_cost) / current;
                p = trial;
                current = trial_cost;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if rel_drop < opts.ftol || step_norm < opts.xtol * (p_norm + opts.xtol) {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step at any damping: a (local) minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let covariance_diagonal = covariance(model, &p, xs, ys, current, n);
    LmOutcome {
        params: p,
        residual_norm: current.sqrt(),
        iterations,
        converged,
        covariance_diagonal,
    }
}

fn covariance<M: CurveModel>(
    model: &M,
    p: &[f64],
    xs: &[f64],
    ys: &[f64],
    cost: f64,
    n: usize,
) -> Option<Vec<f64>> {
    if xs.len() <= n {
        return None;
    }
    let (jtj, _) = normal_equations(model, p, xs, ys);
    let inv = jtj.try_inverse()?;
    let s2 = cost / (xs.len() - n) as f64;
    let diag: Vec<f64> = (0..n).map(|i| inv[(i, i)] * s2).collect();
    diag.iter().all(|d| d.is_finite() && *d >= 0.0).then_some(diag)
}

/// Linear least squares `min |A c - y|` via SVD; `None` if the solve fails.
pub fn linear_least_squares(design: &DMatrix<f64>, ys: &[f64]) -> Option<Vec<f64>> {
    let y = DVector::from_column_slice(ys);
    let svd = design.clone().svd(true, true);
    let sol = svd.solve(&y, 1e-12).ok()?;
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}

/// Summary of a nonlinear fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub parameters: Vec<(String, f64)>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub covariance_diagonal: Option<Vec<f64>>,
    /// Human-readable notes, always populated when `converged` is false.
    pub diagnostics: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line;
    impl CurveModel for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn value(&self, p: &[f64], x: f64) -> f64 {
            p[0] + p[1] * x
        }
        fn gradient(&self, _p: &[f64], x: f64, out: &mut [f64]) {
            out[0] = 1.0;
            out[1] = x;
        }
    }

    struct Decay;
    impl CurveModel for Decay {
        fn n_params(&self) -> usize {
            2
        }
        fn value(&self, p: &[f64], x: f64) -> f64 {
            p[0] * (-x * p[1]).exp()
        }
        fn gradient(&self, p: &[f64], x: f64, out: &mut [f64]) {
            let e = (-x * p[1]).exp();
            out[0] = e;
            out[1] = -p[0] * x * e;
        }
    }

    #[test]
    fn fits_a_line_exactly() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let out = levenberg_marquardt(&Line, &xs, &ys, &[0.0, 0.0], &LmOptions::default());
        assert!(out.converged);
        assert!((out.params[0] - 2.0).abs() < 1e-9);
        assert!((out.params[1] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn fits_an_exponential() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-0.7 * x).exp()).collect();
        let out = levenberg_marquardt(&Decay, &xs, &ys, &[1.0, 0.1], &LmOptions::default());
        assert!((out.params[0] - 3.0).abs() < 1e-8);
        assert!((out.params[1] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn never_returns_uphill() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 3.0).sin()).collect();
        let start = [1.0, 0.3];
        let start_cost = cost(&Decay, &start, &xs, &ys).sqrt();
        let out = levenberg_marquardt(&Decay, &xs, &ys, &start, &LmOptions::default());
        assert!(out.residual_norm <= start_cost);
    }
}
