//! Independent oracles and instance generators shared by the integration
//! tests. Nothing here calls into the solver or split-search code it checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triage::dataio::Label;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sign(l: Label) -> f64 {
    match l {
        Label::Positive => 1.0,
        Label::Negative => -1.0,
    }
}

/// Random labels with both classes present.
pub fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Label> {
    loop {
        let y: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.5) { Label::Positive } else { Label::Negative })
            .collect();
        if y.contains(&Label::Positive) && y.contains(&Label::Negative) {
            return y;
        }
    }
}

// ---------------------------------------------------------------------------
// SVM dual

#[derive(Clone, Copy, Debug)]
pub enum Kern {
    Linear,
    Rbf(f64),
}

pub fn kern(k: Kern, a: &[f64], b: &[f64]) -> f64 {
    match k {
        Kern::Linear => a.iter().zip(b).map(|(u, v)| u * v).sum(),
        Kern::Rbf(g) => (-g * a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>()).exp(),
    }
}

/// `Q_ij = y_i y_j K(x_i, x_j)`.
pub fn q_matrix(x: &[Vec<f64>], y: &[Label], k: Kern) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|i| (0..x.len()).map(|j| sign(y[i]) * sign(y[j]) * kern(k, &x[i], &x[j])).collect())
        .collect()
}

pub fn dual_value(q: &[Vec<f64>], a: &[f64]) -> f64 {
    let mut quad = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            quad += a[i] * a[j] * q[i][j];
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Maximum of the dual over the feasible grid `alpha_i in {0, C/200, ..., C}`
/// for the first `N - 1` multipliers, the last one solved from
/// `sum alpha_i y_i = 0` and kept only when it lies in `[0, C]`.
pub fn grid_dual_max(x: &[Vec<f64>], y: &[Label], c: f64, k: Kern) -> f64 {
    const STEPS: usize = 200;
    let n = x.len();
    let q = q_matrix(x, y, k);
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; n - 1];
    let mut a = vec![0.0; n];
    loop {
        let mut balance = 0.0;
        for i in 0..n - 1 {
            a[i] = c * idx[i] as f64 / STEPS as f64;
            balance += a[i] * sign(y[i]);
        }
        let last = -sign(y[n - 1]) * balance;
        if last >= -1e-12 && last <= c + 1e-12 {
            a[n - 1] = last.clamp(0.0, c);
            best = best.max(dual_value(&q, &a));
        }
        // odometer
        let mut p = 0;
        loop {
            if p == n - 1 {
                return best;
            }
            idx[p] += 1;
            if idx[p] <= STEPS {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

/// Solves `m x = rhs` by Gaussian elimination with partial pivoting;
/// `None` when a pivot vanishes.
fn solve_linear(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Some(x)
}

/// Exact dual maximum by enumerating every assignment of the multipliers to
/// {at 0, at C, free} and solving the stationarity system on the free set.
pub fn exact_dual_max(x: &[Vec<f64>], y: &[Label], c: f64, k: Kern) -> f64 {
    let n = x.len();
    let q = q_matrix(x, y, k);
    let ys: Vec<f64> = y.iter().map(|&l| sign(l)).collect();
    let mut best = f64::NEG_INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut v = code;
        for s in state.iter_mut() {
            *s = (v % 3) as u8;
            v /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut a: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if free.is_empty() {
            let bal: f64 = a.iter().zip(&ys).map(|(a, y)| a * y).sum();
            if bal.abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            let mut mat = vec![vec![0.0; m + 1]; m + 1];
            let mut rhs = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    mat[r][cc] = q[i][j];
                }
                mat[r][m] = -ys[i];
                mat[m][r] = ys[i];
                rhs[r] = 1.0 - (0..n).filter(|&j| state[j] == 1).map(|j| q[i][j] * c).sum::<f64>();
            }
            rhs[m] = -(0..n).filter(|&j| state[j] == 1).map(|j| ys[j] * c).sum::<f64>();
            let Some(sol) = solve_linear(mat, rhs) else { continue };
            if sol[..m].iter().any(|&v| v < -1e-9 || v > c + 1e-9) {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                a[i] = sol[r].clamp(0.0, c);
            }
        }
        best = best.max(dual_value(&q, &a));
    }
    best
}

/// Largest per-sample KKT violation of `(alphas, bias)`: `a = 0` needs
/// `y f >= 1`, free needs `y f = 1`, `a = C` needs `y f <= 1`.
pub fn kkt_violation(x: &[Vec<f64>], y: &[Label], alphas: &[f64], bias: f64, c: &[f64], k: Kern) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let f: f64 = (0..x.len()).map(|j| alphas[j] * sign(y[j]) * kern(k, &x[j], &x[i])).sum::<f64>() + bias;
        let m = sign(y[i]) * f;
        let v = if alphas[i] <= 1e-12 {
            (1.0 - m).max(0.0)
        } else if alphas[i] >= c[i] - 1e-12 {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

// ---------------------------------------------------------------------------
// CART

/// Non-negative rational `num / den`.
#[derive(Clone, Copy, Debug)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Self {
        let g = gcd(num, den).max(1);
        Ratio { num: num / g, den: den / g }
    }

    pub fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    pub fn cmp(self, o: Ratio) -> std::cmp::Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }
}

impl PartialEq for Ratio {
    fn eq(&self, o: &Ratio) -> bool {
        self.cmp(*o) == std::cmp::Ordering::Equal
    }
}

/// Purity score `(p^2 + n^2) / (p + n)` of a pool. With unit weights the
/// Gini impurity summed over leaves (each weighted by its share of the
/// samples) is `1 - (1/N) sum_leaves purity`, so a tree minimizes the
/// training objective exactly when it maximizes total purity.
pub fn purity(p: u128, n: u128) -> Ratio {
    Ratio::new(p * p + n * n, p + n)
}

/// Leaf class counts `(positives, negatives)` of the greedy tree grown by
/// brute force: at each node every feature and every midpoint between
/// consecutive distinct values is scored exactly; the first best candidate
/// (lowest feature, then lowest threshold) wins if it strictly improves on
/// the unsplit pool.
pub fn greedy_leaves(x: &[Vec<f64>], y: &[Label], rows: &[usize], depth_left: usize) -> Vec<(u128, u128)> {
    let count = |rs: &[usize]| {
        let p = rs.iter().filter(|&&i| y[i] == Label::Positive).count() as u128;
        (p, rs.len() as u128 - p)
    };
    let (p, n) = count(rows);
    if depth_left == 0 || rows.len() < 2 || p == 0 || n == 0 {
        return vec![(p, n)];
    }
    let parent = purity(p, n);
    let mut best: Option<(Ratio, Vec<usize>, Vec<usize>)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= w[0]);
            let (lp, ln) = count(&left);
            let (rp, rn) = count(&right);
            let score = purity(lp, ln).add(purity(rp, rn));
            if best.as_ref().is_none_or(|b| score.cmp(b.0) == std::cmp::Ordering::Greater) {
                best = Some((score, left, right));
            }
        }
    }
    match best {
        Some((score, left, right)) if score.cmp(parent) == std::cmp::Ordering::Greater => {
            let mut leaves = greedy_leaves(x, y, &left, depth_left - 1);
            leaves.extend(greedy_leaves(x, y, &right, depth_left - 1));
            leaves
        }
        _ => vec![(p, n)],
    }
}

pub fn total_purity(leaves: &[(u128, u128)]) -> Ratio {
    leaves
        .iter()
        .filter(|(p, n)| p + n > 0)
        .fold(Ratio::new(0, 1), |acc, &(p, n)| acc.add(purity(p, n)))
}
