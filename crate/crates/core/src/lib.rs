//! Classical machine learning for blood-test triage.
//!
//! The crate covers the whole experimental pipeline for a binary
//! classification task over routine laboratory measurements:
//!
//! - [`dataio`]: schemas, CSV ingestion, sparsity filtering, imputation,
//!   standardization and a synthetic cohort generator;
//! - [`cart`] and [`forest`]: Gini-impurity decision trees and random
//!   forests;
//! - [`svm`]: linear and RBF soft-margin SVMs solved in the dual by SMO;
//! - [`eval`]: leave-one-out cross-validation, metrics, class weighting,
//!   two-round grid search and refit;
//! - [`modelstore`]: the versioned JSON model bundle used for deployment.
//!
//! ```
//! use triage::dataio::{gen_synthetic, SyntheticSpec};
//! use triage::eval::{loocv, Hyperparams, TrainSpec};
//!
//! let data = gen_synthetic(&SyntheticSpec::separated(4, 20, 12, 4.0, 0.0, 7)).unwrap();
//! let cv = loocv(&data, &TrainSpec::new(Hyperparams::tree(2))).unwrap();
//! assert_eq!(cv.folds.len(), 32);
//! assert!(cv.metrics.balanced_accuracy > 0.8);
//! ```

pub mod cart;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod forest;
pub mod modelstore;
pub mod svm;

pub use error::{Error, Result};
