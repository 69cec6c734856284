//! Monotone descent with backtracking.
//!
//! A step of fixed size is tried first; while it raises the loss the step is
//! halved. Accepted steps therefore never increase the loss, which keeps the
//! recorded trace non-increasing. On unconstrained problems the direction can
//! be preconditioned with a limited-memory quasi-Newton estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentConfig {
    pub step: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub max_halvings: usize,
    /// Curvature pairs kept for L-BFGS directions; 0 gives plain gradient
    /// descent. Ignored under the sphere constraint.
    pub memory: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            step: 0.1,
            max_steps: 2000,
            grad_tol: 1e-5,
            max_halvings: 40,
            memory: 8,
        }
    }
}

pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;
    fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Feasible set for the iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Free,
    /// `x` is a concatenation of blocks of this length, each kept at unit norm.
    UnitBlocks(usize),
}

impl Constraint {
    fn project(self, x: &mut [f64]) {
        if let Constraint::UnitBlocks(d) = self {
            for block in x.chunks_exact_mut(d) {
                let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    block.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
    }

    /// Norm of the gradient component that moves within the feasible set.
    fn stationarity(self, x: &[f64], g: &[f64]) -> f64 {
        match self {
            Constraint::Free => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Constraint::UnitBlocks(d) => x
                .chunks_exact(d)
                .zip(g.chunks_exact(d))
                .map(|(xb, gb)| {
                    let radial: f64 = xb.iter().zip(gb).map(|(a, b)| a * b).sum();
                    xb.iter()
                        .zip(gb)
                        .map(|(a, b)| {
                            let t = b - radial * a;
                            t * t
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOutcome {
    pub x: Vec<f64>,
    pub loss: f64,
    /// Loss at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub steps: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

pub fn minimize<O: Objective>(
    objective: &mut O,
    x0: Vec<f64>,
    constraint: Constraint,
    config: &DescentConfig,
) -> Result<DescentOutcome> {
    let mut x = x0;
    constraint.project(&mut x);
    let (mut loss, mut grad) = objective.value_and_gradient(&x);
    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!("non-finite loss {loss} at start")));
    }
    let mut trace = vec![loss];
    let mut steps = 0;
    let mut converged = false;
    let mut grad_norm = constraint.stationarity(&x, &grad);
    let mut candidate = vec![0.0; x.len()];
    let memory = match constraint {
        Constraint::Free => config.memory,
        Constraint::UnitBlocks(_) => 0,
    };
    let mut history = History::new(memory);
    // Gradient steps resume near the last accepted size instead of halving
    // down from the configured step every time.
    let mut last_eta = config.step;
    while steps < config.max_steps {
        if grad_norm < config.grad_tol {
            converged = true;
            break;
        }
        let (direction, mut eta, quasi_newton) = match history.direction(&grad) {
            Some(d) => (d, 1.0, true),
            None => (grad.iter().map(|g| -g).collect(), (2.0 * last_eta).min(config.step), false),
        };
        let mut accepted = None;
        for attempt in 0..=config.max_halvings {
            for ((c, xi), di) in candidate.iter_mut().zip(&x).zip(&direction) {
                *c = xi + eta * di;
            }
            constraint.project(&mut candidate);
            // The full step is usually accepted, so its gradient is computed
            // along with the loss; shorter steps probe the loss alone.
            if attempt == 0 {
                let (l, g) = objective.value_and_gradient(&candidate);
                if l.is_finite() && l <= loss {
                    accepted = Some((l, g));
                    break;
                }
            } else {
                let l = objective.value(&candidate);
                if l.is_finite() && l <= loss {
                    accepted = Some(objective.value_and_gradient(&candidate));
                    break;
                }
            }
            eta *= 0.5;
        }
        if !quasi_newton && accepted.is_some() {
            last_eta = eta;
        }
        let Some((l, g)) = accepted else {
            // No descent at any tried step size: numerically stationary.
            converged = true;
            break;
        };
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite loss after step {steps}")));
        }
        history.push(&candidate, &x, &g, &grad);
        std::mem::swap(&mut x, &mut candidate);
        loss = l;
        grad = g;
        grad_norm = constraint.stationarity(&x, &grad);
        trace.push(loss);
        steps += 1;
    }
    if !converged && grad_norm < config.grad_tol {
        converged = true;
    }
    Ok(DescentOutcome {
        x,
        loss,
        trace,
        steps,
        grad_norm,
        converged,
    })
}

/// Recent (s, y) pairs for the two-loop recursion.
struct History {
    cap: usize,
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl History {
    fn new(cap: usize) -> Self {
        History {
            cap,
            pairs: std::collections::VecDeque::with_capacity(cap),
        }
    }

    fn push(&mut self, x_new: &[f64], x: &[f64], g_new: &[f64], g: &[f64]) {
        if self.cap == 0 {
            return;
        }
        let s: Vec<f64> = x_new.iter().zip(x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy <= 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// −H·g, or `None` while there is no curvature information or the
    /// estimate fails to point downhill.
    fn direction(&self, grad: &[f64]) -> Option<Vec<f64>> {
        let (s_last, y_last, _) = self.pairs.back()?;
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = dot(s_last, y_last) / dot(y_last, y_last);
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        (dot(&q, grad) < 0.0 && q.iter().all(|v| v.is_finite())).then_some(q)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value(&mut self, x: &[f64]) -> f64 {
            x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum()
        }
        fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
            let g = x.iter().zip(&self.center).map(|(a, c)| 2.0 * (a - c)).collect();
            (self.value(x), g)
        }
    }

    #[test]
    fn finds_quadratic_minimum() {
        let mut q = Quadratic {
            center: vec![1.0, -2.0],
        };
        let out = minimize(&mut q, vec![0.0, 0.0], Constraint::Free, &DescentConfig::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] + 2.0).abs() < 1e-5);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn huge_step_is_backtracked() {
        let mut q = Quadratic { center: vec![3.0] };
        let cfg = DescentConfig {
            step: 100.0,
            ..DescentConfig::default()
        };
        let out = minimize(&mut q, vec![0.0], Constraint::Free, &cfg).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((out.x[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn plain_gradient_still_converges() {
        let mut q = Quadratic {
            center: vec![0.5, 1.5, -1.0],
        };
        let cfg = DescentConfig {
            memory: 0,
            ..DescentConfig::default()
        };
        let out = minimize(&mut q, vec![0.0; 3], Constraint::Free, &cfg).unwrap();
        assert!(out.converged);
        assert!((out.x[2] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn sphere_minimum_is_closest_unit_vector() {
        // Minimizing ‖x − c‖² on the sphere lands on c/‖c‖.
        let mut q = Quadratic {
            center: vec![3.0, 4.0],
        };
        let out = minimize(
            &mut q,
            vec![1.0, 0.0],
            Constraint::UnitBlocks(2),
            &DescentConfig::default(),
        )
        .unwrap();
        assert!((out.x[0] - 0.6).abs() < 1e-5 && (out.x[1] - 0.8).abs() < 1e-5);
        let n = (out.x[0].powi(2) + out.x[1].powi(2)).sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
