use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Kernel function. `Rbf` is `exp(-gamma * |a - b|^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            KernelSpec::Rbf { gamma } => Err(Error::InvalidHyperparameter(format!(
                "RBF gamma must be positive and finite, got {gamma}"
            ))),
        }
    }

    /// Kernel value without the dimension check.
    #[inline]
    pub(crate) fn apply(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }

    /// Kernel value from the pair statistic returned by [`pair_stat`]: the
    /// dot product for `Linear`, the squared distance for `Rbf`. Bit-identical
    /// to [`apply`](Self::apply).
    #[inline]
    pub(crate) fn from_stat(&self, stat: f64) -> f64 {
        match *self {
            KernelSpec::Linear => stat,
            KernelSpec::Rbf { gamma } => (-gamma * stat).exp(),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dot product (`rbf == false`) or squared distance between two rows.
#[inline]
pub(crate) fn pair_stat(a: &[f64], b: &[f64], rbf: bool) -> f64 {
    if rbf {
        sq_dist(a, b)
    } else {
        dot(a, b)
    }
}

/// Row-major matrix of dot products (`rbf == false`) or squared distances.
pub(crate) fn pair_stats(x: &[Vec<f64>], rbf: bool) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = pair_stat(&x[i], &x[j], rbf);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}

/// Full Gram matrix from [`pair_stats`] output.
pub(crate) fn gram_from_stats(stats: &[f64], kernel: &KernelSpec) -> Vec<f64> {
    stats.iter().map(|&s| kernel.from_stat(s)).collect()
}

pub fn kernel_eval(k: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(k.apply(a, b))
}

/// Above this many samples the Gram matrix is no longer held in full and
/// rows are cached with least-recently-used eviction.
pub const FULL_GRAM_LIMIT: usize = 4096;

const ROW_CACHE_BYTES: usize = 256 << 20;

/// Lazily computed kernel rows over a training set.
pub(crate) struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    /// Precomputed row-major Gram matrix; when present no rows are cached.
    gram: Option<&'a [f64]>,
    kernel: KernelSpec,
    rows: Vec<Option<Box<[f64]>>>,
    diag: Vec<f64>,
    capacity: usize,
    resident: usize,
    last_used: Vec<u64>,
    clock: u64,
}

impl<'a> KernelRows<'a> {
    pub(crate) fn new(x: &'a [Vec<f64>], kernel: KernelSpec) -> Self {
        let n = x.len();
        let capacity = if n <= FULL_GRAM_LIMIT {
            n
        } else {
            (ROW_CACHE_BYTES / (8 * n)).max(2)
        };
        KernelRows {
            x,
            gram: None,
            kernel,
            rows: vec![None; n],
            diag: x.iter().map(|r| kernel.apply(r, r)).collect(),
            capacity,
            resident: 0,
            last_used: vec![0; n],
            clock: 0,
        }
    }

    /// Wraps an `n x n` Gram matrix computed elsewhere.
    pub(crate) fn precomputed(gram: &'a [f64], n: usize) -> Self {
        assert_eq!(gram.len(), n * n, "Gram matrix must be n x n");
        KernelRows {
            x: &[],
            gram: Some(gram),
            kernel: KernelSpec::Linear,
            rows: Vec::new(),
            diag: (0..n).map(|i| gram[i * n + i]).collect(),
            capacity: n,
            resident: n,
            last_used: Vec::new(),
            clock: 0,
        }
    }

    #[inline]
    pub(crate) fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Makes row `i` resident, evicting the stalest row (other than `keep`)
    /// when the cache is full.
    pub(crate) fn ensure(&mut self, i: usize, keep: usize) {
        if self.gram.is_some() {
            return;
        }
        self.clock += 1;
        self.last_used[i] = self.clock;
        if self.rows[i].is_some() {
            return;
        }
        if self.resident >= self.capacity {
            let victim = (0..self.rows.len())
                .filter(|&k| k != keep && k != i && self.rows[k].is_some())
                .min_by_key(|&k| self.last_used[k])
                .expect("cache holds at least one evictable row");
            self.rows[victim] = None;
            self.resident -= 1;
        }
        let xi = &self.x[i];
        let row: Box<[f64]> = self.x.iter().map(|xj| self.kernel.apply(xi, xj)).collect();
        self.rows[i] = Some(row);
        self.resident += 1;
    }

    /// Row `i`; call [`ensure`](Self::ensure) first.
    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        if let Some(g) = self.gram {
            let n = self.diag.len();
            return &g[i * n..(i + 1) * n];
        }
        self.rows[i].as_deref().expect("row made resident")
    }
}
