//! The desk-scale experiment: two 13-dimensional Gaussian classes whose
//! means differ by 3 standard deviations per feature, 10% of cells missing,
//! run through filtering, the two-round LOOCV grid search and refit for an
//! RBF SVM and a random forest.
//!
//! ```text
//! cargo run --release -p triage --example desk_experiment
//! ```

use std::time::Instant;

use triage::dataio::{filter_features, filter_subjects, gen_synthetic, SyntheticSpec};
use triage::eval::{grid_search, refit, Family, GridSpec, SearchOptions};

fn main() -> triage::Result<()> {
    let raw = gen_synthetic(&SyntheticSpec::separated(13, 210, 90, 3.0, 0.10, 2020))?;
    let (kept_features, _) = filter_features(&raw, raw.labels())?;
    let (data, _) = filter_subjects(&kept_features)?;
    println!(
        "{} subjects x {} features after filtering ({} x {} raw)",
        data.n_samples(),
        data.n_features(),
        raw.n_samples(),
        raw.n_features()
    );
    for family in [Family::SvmRbf, Family::Forest] {
        let start = Instant::now();
        let options = SearchOptions { seed: 7, ..Default::default() };
        let out = grid_search(&data, &GridSpec::coarse(family), &options)?;
        let bundle = refit(&data, &out.best, "desk")?;
        let m = out.best_cv.metrics;
        println!(
            "{family:<10} {:<40} balanced {:.4} sens {:.4} spec {:.4}  ({} evaluations, {:.1?}, {} bundle features)",
            out.best.hyperparams.to_string(),
            m.balanced_accuracy,
            m.sensitivity,
            m.specificity,
            out.trace.len(),
            start.elapsed(),
            bundle.n_features()
        );
    }
    Ok(())
}
