//! Sequential minimal optimization for the box-constrained dual
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
//! s.t. 0 <= a_i <= C_i,  sum_i a_i y_i = 0
//! ```
//!
//! Each step picks the maximal KKT-violating pair and solves the
//! two-variable subproblem analytically, which keeps the equality
//! constraint intact.

use super::kernel::{KernelRows, KernelSpec};
use crate::dataio::Label;

/// Floor for a non-positive curvature along the update direction.
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_passes: usize,
    /// Record the dual objective after every accepted step (O(N) each).
    pub trace: bool,
}

/// Final solver state: multipliers, gradient of the minimization form
/// `G = Q a - e`, bias, and convergence diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub alphas: Vec<f64>,
    pub gradient: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// `max_{I_up} -y G - min_{I_low} -y G` at exit.
    pub violation: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

impl SolverState {
    /// Dual objective `sum a - 1/2 a'Qa`, read off the gradient.
    pub fn objective(&self) -> f64 {
        -0.5 * self.alphas.iter().zip(&self.gradient).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
    }
}

#[inline]
fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

#[inline]
fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Solves the dual for labels `y` and per-sample upper bounds `cost`.
pub fn solve(x: &[Vec<f64>], y: &[Label], cost: &[f64], kernel: KernelSpec, opts: SolverOptions) -> SolverState {
    let mut q = KernelRows::new(x, kernel);
    solve_with(&mut q, y, cost, opts)
}

/// Same as [`solve`] over a precomputed row-major `n x n` Gram matrix.
pub(crate) fn solve_gram(gram: &[f64], y: &[Label], cost: &[f64], opts: SolverOptions) -> SolverState {
    let mut q = KernelRows::precomputed(gram, y.len());
    solve_with(&mut q, y, cost, opts)
}

pub(crate) fn solve_with(q: &mut KernelRows<'_>, y: &[Label], cost: &[f64], opts: SolverOptions) -> SolverState {
    let n = y.len();
    let ys: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut trace = Vec::new();

    let (violation, converged) = loop {
        // maximal violating pair
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        for t in 0..n {
            let v = -ys[t] * grad[t];
            if in_up(ys[t], alpha[t], cost[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(ys[t], alpha[t], cost[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        let gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < opts.tol {
            break (gap.max(0.0), true);
        }
        if iterations >= opts.max_passes {
            break (gap, false);
        }
        iterations += 1;

        q.ensure(i, j);
        q.ensure(j, i);
        let (ci, cj) = (cost[i], cost[j]);
        let kij = q.row(i)[j];
        // curvature along the pair direction is |phi_i - phi_j|^2 either way
        let quad = (q.diag(i) + q.diag(j) - 2.0 * kij).max(TAU);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_ai, old_aj);

        if ys[i] != ys[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;

        // G_k += Q_ki da_i + Q_kj da_j with Q_kl = y_k y_l K_kl
        let di = (ai - old_ai) * ys[i];
        let dj = (aj - old_aj) * ys[j];
        let (ri, rj) = (q.row(i), q.row(j));
        for k in 0..n {
            grad[k] += ys[k] * (ri[k] * di + rj[k] * dj);
        }

        if opts.trace {
            trace.push(-0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>());
        }
    };

    let bias = -threshold(&ys, &alpha, &grad, cost);
    SolverState {
        alphas: alpha,
        gradient: grad,
        bias,
        iterations,
        violation,
        converged,
        objective_trace: trace,
    }
}

/// The offset `r` with decision value `sum a_j y_j K_j(x) - r`: the mean of
/// `y G` over free multipliers, or the middle of the feasible interval when
/// every multiplier sits at a bound.
fn threshold(ys: &[f64], alpha: &[f64], grad: &[f64], cost: &[f64]) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..ys.len() {
        let yg = ys[t] * grad[t];
        if alpha[t] >= cost[t] {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}
