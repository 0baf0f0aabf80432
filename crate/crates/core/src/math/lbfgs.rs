//! Limited-memory BFGS with a backtracking (Armijo) line search, for the
//! small full-batch problems used to fit linear experts.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsSettings {
    pub max_iters: usize,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            grad_tol: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and writes the gradient.
pub fn lbfgs<F>(mut f: F, x0: Vec<f64>, settings: &LbfgsSettings) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for iter in 0..settings.max_iters {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < settings.grad_tol {
            return LbfgsOutcome {
                x,
                value,
                grad_norm: gnorm,
                iterations: iter,
                converged: true,
            };
        }

        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / gnorm.max(1.0),
        };
        for qi in &mut q {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // Not a descent direction: restart from steepest descent.
            history.clear();
            dir = g.iter().map(|v| -v / gnorm.max(1.0)).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let v = f(&x_new, &mut g_new);
            if v.is_finite() && v <= value + 1e-4 * step * slope {
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return LbfgsOutcome {
                x,
                value,
                grad_norm: gnorm,
                iterations: iter,
                converged: false,
            };
        }

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
    }
    let grad_norm = dot(&g, &g).sqrt();
    LbfgsOutcome {
        x,
        value,
        grad_norm,
        iterations: settings.max_iters,
        converged: grad_norm < settings.grad_tol,
    }
}
