//! Limited-memory BFGS ascent with a backtracking (Armijo) line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsSettings {
    pub max_iterations: usize,
    /// Stop once the gradient's infinity norm is at most this.
    pub tolerance: f64,
    /// Number of correction pairs kept.
    pub history: usize,
    pub max_line_search: usize,
    /// Sufficient-increase constant.
    pub armijo: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            max_iterations: 100,
            tolerance: 1e-4,
            history: 10,
            max_line_search: 40,
            armijo: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step satisfied the sufficient-increase condition; usually means the
    /// objective is flat to machine precision.
    LineSearchStalled,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchStalled => "line_search_stalled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOutcome {
    pub termination: Termination,
    pub objective: f64,
    pub grad_norm: f64,
    pub history: Vec<IterationLog>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximizes `f`, which returns the value and gradient at a point.
/// Non-finite values during the line search shrink the step; a start point
/// with a non-finite value or a search that never finds a finite value is an
/// error.
pub fn maximize<F>(mut f: F, x0: Vec<f64>, settings: &LbfgsSettings) -> Result<(Vec<f64>, LbfgsOutcome)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x)?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Optimization {
            iteration: 0,
            message: format!("objective is not finite at the starting point ({value})"),
        });
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut history = Vec::new();
    let done = |termination, value, grad: &[f64], history| LbfgsOutcome {
        termination,
        objective: value,
        grad_norm: inf_norm(grad),
        history,
    };
    if inf_norm(&grad) <= settings.tolerance {
        return Ok((x, done(Termination::Converged, value, &grad, history)));
    }
    for iteration in 1..=settings.max_iterations {
        // Ascent direction from the two-loop recursion on the gradient.
        let mut d = grad.clone();
        let mut coeffs = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            coeffs.push(a);
        }
        let scale = match pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        for di in d.iter_mut() {
            *di *= scale;
        }
        for ((s, y, rho), a) in pairs.iter().zip(coeffs.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&grad, &d);
        if slope <= 0.0 || !slope.is_finite() {
            pairs.clear();
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            d = grad.iter().map(|g| g / norm).collect();
            slope = dot(&grad, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..settings.max_line_search {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            match f(&trial) {
                Ok((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => {
                    saw_finite = true;
                    if v >= value + settings.armijo * step * slope {
                        accepted = Some((trial, v, g));
                        break;
                    }
                }
                Ok(_) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some((x_new, v_new, g_new)) = accepted else {
            if !saw_finite {
                return Err(Error::Optimization {
                    iteration,
                    message: "line search never produced a finite objective".into(),
                });
            }
            log::info!("iteration {iteration}: line search stalled at objective {value}");
            return Ok((x, done(Termination::LineSearchStalled, value, &grad, history)));
        };

        // Curvature pair for the ascent problem, stored as for minimizing -f.
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == settings.history.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        value = v_new;
        grad = g_new;
        let entry = IterationLog {
            iteration,
            objective: value,
            grad_norm: inf_norm(&grad),
            step,
        };
        log::info!(
            "iter {} objective {:.10e} grad_norm {:.4e} step {:.3e}",
            entry.iteration,
            entry.objective,
            entry.grad_norm,
            entry.step
        );
        history.push(entry);
        if entry.grad_norm <= settings.tolerance {
            return Ok((x, done(Termination::Converged, value, &grad, history)));
        }
    }
    Ok((x, done(Termination::MaxIterations, value, &grad, history)))
}
