use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassNames, Dataset, FeatureSchema, Label};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Covariance {
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
    /// Full symmetric positive semi-definite matrix.
    Full(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub count: usize,
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

/// Two Gaussian classes plus uniformly scattered missing cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub positive: ClassDistribution,
    pub negative: ClassDistribution,
    pub missing_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Unit-variance classes whose means differ by `separation` in every
    /// dimension (positive at `+separation/2`, negative at `-separation/2`).
    pub fn separated(
        d: usize,
        n_positive: usize,
        n_negative: usize,
        separation: f64,
        missing_rate: f64,
        seed: u64,
    ) -> Self {
        let class = |count, offset: f64| ClassDistribution {
            count,
            mean: vec![offset; d],
            covariance: Covariance::Diagonal(vec![1.0; d]),
        };
        SyntheticSpec {
            positive: class(n_positive, separation / 2.0),
            negative: class(n_negative, -separation / 2.0),
            missing_rate,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.positive.mean.len()
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = cov`. Semi-definite matrices are
/// accepted: a (numerically) zero pivot zeroes the rest of its column.
fn cholesky(cov: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = cov.len();
    if cov.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidCovariance("matrix is not square".into()));
    }
    let scale = cov.iter().enumerate().map(|(i, r)| r[i].abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-10 * scale;
    for i in 0..d {
        for j in 0..i {
            if (cov[i][j] - cov[j][i]).abs() > tol {
                return Err(Error::InvalidCovariance(format!("not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut l = vec![vec![0.0; d]; d];
    for j in 0..d {
        let pivot = cov[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if pivot < -tol {
            return Err(Error::InvalidCovariance("matrix is not positive semi-definite".into()));
        }
        if pivot <= tol {
            // rank-deficient direction; the remaining entries must vanish too
            for i in j + 1..d {
                let off = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if off.abs() > 1e-8 * scale {
                    return Err(Error::InvalidCovariance("matrix is not positive semi-definite".into()));
                }
            }
            continue;
        }
        let diag = pivot.sqrt();
        l[j][j] = diag;
        for i in j + 1..d {
            let off = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = off / diag;
        }
    }
    Ok(l)
}

enum Factor {
    Diagonal(Vec<f64>),
    Lower(Vec<Vec<f64>>),
}

fn factor(dist: &ClassDistribution, d: usize) -> Result<Factor> {
    if dist.mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: dist.mean.len(),
        });
    }
    match &dist.covariance {
        Covariance::Diagonal(var) => {
            if var.len() != d {
                return Err(Error::InvalidCovariance(format!("{} variances for {d} dimensions", var.len())));
            }
            if var.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidCovariance("variances must be finite and non-negative".into()));
            }
            Ok(Factor::Diagonal(var.iter().map(|v| v.sqrt()).collect()))
        }
        Covariance::Full(m) => {
            if m.len() != d {
                return Err(Error::InvalidCovariance(format!("{}x? matrix for {d} dimensions", m.len())));
            }
            cholesky(m).map(Factor::Lower)
        }
    }
}

/// Draws a labelled dataset: positives first, then negatives. The same spec
/// always yields the same bits. Features use the blood-panel names when the
/// dimension matches (13, or 15 with age and gender), generic names otherwise.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let d = spec.dim();
    if spec.positive.count == 0 || spec.negative.count == 0 {
        return Err(Error::InvalidHyperparameter("each class needs at least one sample".into()));
    }
    if !(0.0..1.0).contains(&spec.missing_rate) {
        return Err(Error::InvalidHyperparameter(format!(
            "missing rate {} outside [0, 1)",
            spec.missing_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(spec.positive.count + spec.negative.count);
    let mut labels = Vec::with_capacity(values.capacity());
    for (label, dist) in [(Label::Positive, &spec.positive), (Label::Negative, &spec.negative)] {
        let f = factor(dist, d)?;
        for _ in 0..dist.count {
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let row: Vec<f64> = match &f {
                Factor::Diagonal(sd) => (0..d).map(|j| dist.mean[j] + sd[j] * z[j]).collect(),
                Factor::Lower(l) => (0..d)
                    .map(|i| dist.mean[i] + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>())
                    .collect(),
            };
            values.push(row.into_iter().map(Some).collect::<Vec<_>>());
            labels.push(label);
        }
    }
    if spec.missing_rate > 0.0 {
        for row in &mut values {
            for cell in row.iter_mut() {
                if rng.random_bool(spec.missing_rate) {
                    *cell = None;
                }
            }
        }
    }
    let schema = match d {
        13 => FeatureSchema::blood_panel(false),
        15 => FeatureSchema::blood_panel(true),
        _ => FeatureSchema::generic(d),
    };
    Dataset::new(schema, values, labels, ClassNames::new("covid", "non-covid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bits() {
        let spec = SyntheticSpec::separated(4, 10, 7, 2.0, 0.2, 7);
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_missing_rate_means_no_missing() {
        let d = gen_synthetic(&SyntheticSpec::separated(13, 20, 20, 6.0, 0.0, 1)).unwrap();
        assert_eq!(d.missing_count(), 0);
        assert_eq!(d.schema().features[7].name, "CRP");
    }

    #[test]
    fn missing_rate_is_roughly_honoured() {
        let d = gen_synthetic(&SyntheticSpec::separated(10, 500, 500, 0.0, 0.1, 3)).unwrap();
        let rate = d.missing_count() as f64 / 10_000.0;
        assert!((rate - 0.1).abs() < 0.01, "{rate}");
    }

    #[test]
    fn class_means_follow_the_spec() {
        let d = gen_synthetic(&SyntheticSpec::separated(3, 2000, 2000, 6.0, 0.0, 11)).unwrap();
        let (pos, neg) = d.class_means();
        for j in 0..3 {
            assert!((pos[j] - 3.0).abs() < 0.1);
            assert!((neg[j] + 3.0).abs() < 0.1);
        }
    }

    #[test]
    fn full_covariance_is_factored() {
        let cov = vec![vec![4.0, 2.0], vec![2.0, 2.0]];
        let l = cholesky(&cov).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..2).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - cov[i][j]).abs() < 1e-12);
            }
        }
        // rank one is fine
        assert!(cholesky(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_ok());
    }

    #[test]
    fn invalid_covariances_are_rejected() {
        assert!(matches!(
            cholesky(&[vec![1.0, 2.0], vec![2.0, 1.0]]),
            Err(Error::InvalidCovariance(_))
        ));
        assert!(cholesky(&[vec![1.0, 0.5], vec![0.0, 1.0]]).is_err());
        let mut spec = SyntheticSpec::separated(2, 3, 3, 1.0, 0.0, 0);
        spec.negative.covariance = Covariance::Diagonal(vec![1.0, -1.0]);
        assert!(matches!(gen_synthetic(&spec), Err(Error::InvalidCovariance(_))));
    }
}
