//! Regenerates `fixtures/portal_parity.json`: twenty (bundle, input,
//! expected score) cases shared with the browser portal's test suite.
//!
//! ```text
//! cargo run -p triage --example portal_fixture -- fixtures/portal_parity.json
//! ```
//!
//! Each case names a bundle by its index in `bundles`. Inputs are raw
//! (unstandardized) values in schema order; `null` is a blank form box,
//! filled from the bundle's imputation means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use triage::dataio::{gen_synthetic, ClassDistribution, Covariance, SyntheticSpec};
use triage::eval::{refit, Hyperparams, TrainSpec};
use triage::forest::MaxFeatures;
use triage::modelstore::encode_bundle;

fn main() -> triage::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fixtures/portal_parity.json".into());
    let configs = [
        Hyperparams::linear_svm(1.0),
        Hyperparams::rbf_svm(45.0, 0.0047),
        Hyperparams::tree(4),
        Hyperparams::forest(20, MaxFeatures::Sqrt, 5, 3),
        Hyperparams::rbf_svm(2.0, 0.5),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut bundles = Vec::new();
    let mut cases = Vec::new();
    for (k, hp) in configs.into_iter().enumerate() {
        // a 15-feature blood panel (13 tests + age + gender) on realistic scales
        let d = 15;
        let mean = |shift: f64| -> Vec<f64> { (0..d).map(|j| 10.0 * (j as f64 + 1.0) + shift).collect() };
        let cov = Covariance::Diagonal((0..d).map(|j| (1.0 + j as f64 / 3.0).powi(2)).collect());
        let spec = SyntheticSpec {
            positive: ClassDistribution { count: 40, mean: mean(2.0), covariance: cov.clone() },
            negative: ClassDistribution { count: 30, mean: mean(-2.0), covariance: cov },
            missing_rate: 0.05,
            seed: 100 + k as u64,
        };
        let data = gen_synthetic(&spec)?;
        let bundle = refit(&data, &TrainSpec::new(hp), "parity")?;
        bundles.push(serde_json::from_slice::<Value>(&encode_bundle(&bundle)?)?);
        for case in 0..4 {
            let input: Vec<Option<f64>> = (0..d)
                .map(|j| {
                    if case == 3 && j % 4 == 0 || rng.random_bool(0.1) {
                        None
                    } else {
                        let v = 10.0 * (j as f64 + 1.0) + rng.random_range(-6.0..6.0);
                        Some((v * 100.0).round() / 100.0)
                    }
                })
                .collect();
            let (label, score) = bundle.predict_row(&input)?;
            cases.push(json!({
                "name": format!("{}-{}", bundle.metadata.family, case),
                "bundle": k,
                "input": input,
                "expected_label": label,
                "expected_score": score,
            }));
        }
    }
    let doc = json!({ "tolerance": 1e-6, "bundles": bundles, "cases": cases });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(&out, text).map_err(|e| triage::Error::Io { path: out.clone().into(), source: e })?;
    println!("wrote {} cases to {out}", cases.len());
    Ok(())
}
