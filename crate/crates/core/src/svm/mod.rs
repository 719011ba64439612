//! Soft-margin support vector machines trained in the dual.
//!
//! Both kernels share one SMO solver over the L1-loss dual with per-sample
//! box bounds `C_i = C * class_weight(y_i)`. A fitted model keeps only the
//! support vectors (`alpha_i > SUPPORT_EPS`) and their signed coefficients
//! `alpha_i y_i`; the decision value is
//!
//! ```text
//! f(x) = sum_i alpha_i y_i K(x_i, x) + b
//! ```
//!
//! and `f(x) >= 0` predicts the positive class. For the linear kernel the
//! explicit weight vector `w = sum_i alpha_i y_i x_i` is kept as well.

mod kernel;
mod smo;

use serde::{Deserialize, Serialize};

pub use kernel::{kernel_eval, KernelSpec, FULL_GRAM_LIMIT};
pub use smo::{solve, SolverOptions, SolverState};
pub(crate) use kernel::{gram_from_stats, pair_stat, pair_stats};
pub(crate) use smo::solve_gram;

use crate::dataio::{require_both_classes, ClassWeights, Label};
use crate::error::{check_dim, Error, Result};

/// Multipliers at or below this are dropped from the fitted model.
pub const SUPPORT_EPS: f64 = 1e-8;

pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_PASSES: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmHyperparams {
    pub c: f64,
    pub kernel: KernelSpec,
    pub class_weights: ClassWeights,
    pub tol: f64,
    pub max_passes: usize,
}

impl SvmHyperparams {
    /// `C` and kernel with unit class weights and the default stopping rule.
    pub fn new(c: f64, kernel: KernelSpec) -> Self {
        SvmHyperparams {
            c,
            kernel,
            class_weights: ClassWeights::UNIT,
            tol: DEFAULT_TOL,
            max_passes: DEFAULT_MAX_PASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidHyperparameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidHyperparameter("max_passes must be >= 1".into()));
        }
        self.kernel.validate()?;
        self.class_weights.validate()
    }

    /// Upper bound of each sample's multiplier.
    pub fn costs(&self, y: &[Label]) -> Vec<f64> {
        y.iter().map(|&l| self.c * self.class_weights.get(l)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_vector: Option<Vec<f64>>,
    pub n_features: usize,
    pub hyperparams: SvmHyperparams,
    pub converged: bool,
    /// Maximal KKT violation when the solver stopped.
    pub kkt_violation: f64,
    pub iterations: usize,
    #[serde(default)]
    pub schema_digest: String,
}

/// Trains on fully observed, standardized rows.
///
/// Running out of `max_passes` is not an error: the model comes back with
/// `converged == false` and the remaining violation in `kkt_violation`.
pub fn fit_svm(x: &[Vec<f64>], y: &[Label], hp: &SvmHyperparams) -> Result<SvmModel> {
    let state = fit_state(x, y, hp, false)?;
    Ok(model_from_state(x, y, hp, &state))
}

/// Runs the solver and returns its full state (every multiplier, gradient
/// and optionally the objective after each step).
pub fn fit_state(x: &[Vec<f64>], y: &[Label], hp: &SvmHyperparams, trace: bool) -> Result<SolverState> {
    hp.validate()?;
    check_dim(x.len(), y.len())?;
    require_both_classes(y)?;
    let d = x[0].len();
    for row in x {
        check_dim(d, row.len())?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidHyperparameter("training values must be finite".into()));
        }
    }
    let opts = SolverOptions {
        tol: hp.tol,
        max_passes: hp.max_passes,
        trace,
    };
    Ok(solve(x, y, &hp.costs(y), hp.kernel, opts))
}

pub(crate) fn model_from_state(x: &[Vec<f64>], y: &[Label], hp: &SvmHyperparams, state: &SolverState) -> SvmModel {
    let d = x[0].len();
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for ((row, &label), &a) in x.iter().zip(y).zip(&state.alphas) {
        if a > SUPPORT_EPS {
            support_vectors.push(row.clone());
            dual_coefs.push(a * label.sign());
        }
    }
    let weight_vector = matches!(hp.kernel, KernelSpec::Linear).then(|| {
        let mut w = vec![0.0; d];
        for (sv, coef) in support_vectors.iter().zip(&dual_coefs) {
            for (wj, v) in w.iter_mut().zip(sv) {
                *wj += coef * v;
            }
        }
        w
    });
    SvmModel {
        kernel: hp.kernel,
        support_vectors,
        dual_coefs,
        bias: state.bias,
        weight_vector,
        n_features: d,
        hyperparams: hp.clone(),
        converged: state.converged,
        kkt_violation: state.violation,
        iterations: state.iterations,
        schema_digest: String::new(),
    }
}

impl SvmModel {
    /// Decision value via the kernel expansion over support vectors.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.n_features, x.len())?;
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * self.kernel.apply(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// Label and decision value; a zero score is positive.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        let score = self.decision_value(x)?;
        Ok((Label::from_score(score), score))
    }

    /// `w . x + b`; only defined for the linear kernel.
    pub fn primal_decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.n_features, x.len())?;
        let w = self
            .weight_vector
            .as_ref()
            .ok_or_else(|| Error::Unsupported("primal weights exist only for the linear kernel".into()))?;
        Ok(w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias)
    }

    /// Dual objective of the retained multipliers.
    pub fn dual_objective(&self) -> f64 {
        let sum_alpha: f64 = self.dual_coefs.iter().map(|c| c.abs()).sum();
        let mut quad = 0.0;
        for (i, si) in self.support_vectors.iter().enumerate() {
            for (j, sj) in self.support_vectors.iter().enumerate() {
                quad += self.dual_coefs[i] * self.dual_coefs[j] * self.kernel.apply(si, sj);
            }
        }
        sum_alpha - 0.5 * quad
    }

    /// Width `2 / |w|` of the margin strip (linear kernel only).
    pub fn margin_width(&self) -> Result<f64> {
        let w = self
            .weight_vector
            .as_ref()
            .ok_or_else(|| Error::Unsupported("margin width needs the linear kernel".into()))?;
        Ok(2.0 / w.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let d = self.n_features;
        if self.support_vectors.len() != self.dual_coefs.len() {
            return Err(Error::BundleDimension(format!(
                "{} support vectors but {} coefficients",
                self.support_vectors.len(),
                self.dual_coefs.len()
            )));
        }
        for sv in &self.support_vectors {
            if sv.len() != d {
                return Err(Error::BundleDimension(format!(
                    "support vector of length {} in a {d}-feature model",
                    sv.len()
                )));
            }
        }
        match (&self.kernel, &self.weight_vector) {
            (KernelSpec::Linear, Some(w)) if w.len() != d => {
                return Err(Error::BundleDimension(format!(
                    "{}-weight linear SVM in a {d}-feature model",
                    w.len()
                )))
            }
            (KernelSpec::Linear, None) => {
                return Err(Error::InvalidBundle("linear SVM without a weight vector".into()))
            }
            (KernelSpec::Rbf { .. }, Some(_)) => {
                return Err(Error::InvalidBundle("RBF SVM must not carry a weight vector".into()))
            }
            _ => {}
        }
        let finite = self.bias.is_finite()
            && self.dual_coefs.iter().all(|c| c.is_finite())
            && self.support_vectors.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidBundle("non-finite SVM parameter".into()));
        }
        Ok(())
    }
}

pub fn predict_svm(model: &SvmModel, x: &[f64]) -> Result<(Label, f64)> {
    model.predict(x)
}

/// `sum a - 1/2 sum_ij a_i a_j y_i y_j K_ij` for arbitrary multipliers.
pub fn dual_objective(alphas: &[f64], x: &[Vec<f64>], y: &[Label], kernel: &KernelSpec) -> Result<f64> {
    check_dim(x.len(), alphas.len())?;
    check_dim(x.len(), y.len())?;
    let mut quad = 0.0;
    for i in 0..x.len() {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..x.len() {
            quad += alphas[i] * alphas[j] * y[i].sign() * y[j].sign() * kernel.apply(&x[i], &x[j]);
        }
    }
    Ok(alphas.iter().sum::<f64>() - 0.5 * quad)
}

/// Largest per-sample KKT violation of a model on its training set, using
/// the multipliers `alphas` and bounds `costs`:
/// `a = 0 => y f >= 1`, `0 < a < C => y f = 1`, `a = C => y f <= 1`.
pub fn kkt_violation(model: &SvmModel, x: &[Vec<f64>], y: &[Label], alphas: &[f64], costs: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let m = y[i].sign() * model.decision_value(&x[i])?;
        let v = if alphas[i] <= 0.0 {
            (1.0 - m).max(0.0)
        } else if alphas[i] >= costs[i] {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// `|w_j|` scaled to sum to 1. Only the linear kernel has per-feature
/// weights.
pub fn svm_importance(model: &SvmModel) -> Result<Vec<f64>> {
    let w = match (&model.kernel, &model.weight_vector) {
        (KernelSpec::Linear, Some(w)) => w,
        (KernelSpec::Linear, None) => return Err(Error::InvalidBundle("linear SVM without weights".into())),
        (KernelSpec::Rbf { .. }, _) => {
            return Err(Error::Unsupported(
                "feature importance is only defined for linear-kernel SVMs".into(),
            ))
        }
    };
    let total: f64 = w.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return Ok(vec![0.0; w.len()]);
    }
    Ok(w.iter().map(|v| v.abs() / total).collect())
}
