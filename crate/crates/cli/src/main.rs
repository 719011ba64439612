//! `triage`: command-line front end for the blood-test triage toolkit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use triage::dataio::{
    apply_hscrp_rule, filter_features, filter_subjects, gen_synthetic, load_csv_with_extras, load_feature_rows,
    parse_optional_column, write_csv, ClassNames, DataSidecar, Dataset, SyntheticSpec,
};
use triage::eval::{grid_search, refit, Family, GridSpec, Hyperparams, SearchOptions, TrainSpec, Weighting};
use triage::forest::MaxFeatures;
use triage::modelstore::{load_bundle, save_bundle};
use triage::Error;

#[derive(Parser)]
#[command(name = "triage", version, about = "Blood-test triage: LOOCV grid search, refit, model bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class Gaussian dataset (CSV + schema sidecar).
    Synth(SynthArgs),
    /// Apply the hsCRP substitution and the sparsity filters.
    Preprocess(PreprocessArgs),
    /// Run LOOCV grid search for one classifier family.
    Cv(CvArgs),
    /// Refit one configuration on all rows and write a model bundle.
    Train(TrainArgs),
    /// Predict labels and scores for the rows of a CSV.
    Predict(PredictArgs),
    /// Rank features by importance (linear SVM or decision tree bundles).
    Importance(ImportanceArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar JSON [default: <data>.schema.json].
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl DataArgs {
    fn sidecar_path(&self) -> PathBuf {
        self.schema.clone().unwrap_or_else(|| default_sidecar(&self.data))
    }

    fn load(&self, extras: &[&str]) -> Result<(Dataset, DataSidecar, std::collections::BTreeMap<String, Vec<String>>), Error> {
        let sidecar = DataSidecar::load(self.sidecar_path())?;
        let (data, extra) = load_csv_with_extras(&self.data, &sidecar, extras)?;
        Ok((data, sidecar, extra))
    }
}

fn default_sidecar(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".schema.json");
    PathBuf::from(s)
}

#[derive(Args)]
struct SynthArgs {
    /// Number of features.
    #[arg(long)]
    dim: usize,
    /// Positive-class sample count.
    #[arg(long)]
    positive: usize,
    /// Negative-class sample count.
    #[arg(long)]
    negative: usize,
    /// Distance between the class means in every dimension, in standard deviations.
    #[arg(long)]
    separation: f64,
    /// Probability that a cell is blanked.
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
    #[arg(long)]
    seed: u64,
    /// Output CSV; the schema sidecar goes to <out>.schema.json.
    #[arg(long)]
    out: PathBuf,
    /// Name of the label column.
    #[arg(long, default_value = "label")]
    label_column: String,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Extra CSV column holding high-sensitivity CRP readings; they replace
    /// the CRP feature wherever present.
    #[arg(long)]
    hscrp_column: Option<String>,
    /// Schema feature receiving the hsCRP readings.
    #[arg(long, default_value = "CRP")]
    crp_feature: String,
    /// Extra CSV column defining the groups of the feature filter
    /// [default: the class label].
    #[arg(long)]
    group_column: Option<String>,
    /// Output CSV; the schema sidecar goes to <out>.schema.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Balanced,
    None,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Balanced => Weighting::Balanced,
            WeightingArg::None => Weighting::Fixed,
        }
    }
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_max_features(s: &str) -> Result<MaxFeatures, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_exp_range(s: &str) -> Result<(i32, i32), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI, e.g. -10:10")?;
    let lo: i32 = lo.trim().parse().map_err(|_| format!("bad exponent '{lo}'"))?;
    let hi: i32 = hi.trim().parse().map_err(|_| format!("bad exponent '{hi}'"))?;
    if lo > hi {
        return Err(format!("empty range {lo}:{hi}"));
    }
    Ok((lo, hi))
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Classifier family: svm-linear, svm-rbf, tree or forest.
    #[arg(long, value_parser = parse_family)]
    family: Family,
    /// Class weighting of every fit.
    #[arg(long, value_enum, default_value = "balanced")]
    weighting: WeightingArg,
    /// Forest seed, shared by every fold and grid point.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Power-of-two exponent range of the coarse C (and gamma) grid.
    #[arg(long, value_parser = parse_exp_range, default_value = "-10:10", allow_hyphen_values = true)]
    exp_range: (i32, i32),
    /// Skip the refinement round.
    #[arg(long)]
    coarse_only: bool,
    /// Write the search trace (one JSON object per grid point) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the best configuration's fold predictions (JSON lines) here.
    #[arg(long)]
    folds: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_family)]
    family: Family,
    /// SVM cost.
    #[arg(long)]
    c: Option<f64>,
    /// RBF kernel width.
    #[arg(long)]
    gamma: Option<f64>,
    /// Tree or forest depth limit.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Forest size.
    #[arg(long)]
    n_tree: Option<usize>,
    /// Features offered per forest node: all, sqrt or log2.
    #[arg(long, value_parser = parse_max_features)]
    max_features: Option<MaxFeatures>,
    /// Forest seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "balanced")]
    weighting: WeightingArg,
    /// Task name recorded in the bundle.
    #[arg(long, default_value = "primary")]
    task: String,
    /// Training timestamp (Unix seconds) to record [default: now].
    #[arg(long)]
    timestamp: Option<u64>,
    /// Output bundle JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Model bundle JSON.
    #[arg(long)]
    bundle: PathBuf,
    /// CSV with one column per bundle feature (blank = missing); other columns are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Write predictions here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("TRIAGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // ignore failure: the pool may only be configured once
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Exit status per error category; 2 is left to argument parsing.
fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "io" => 3,
        "ingestion" => 4,
        "data" => 5,
        "config" => 6,
        "training" => 7,
        "unsupported" => 8,
        _ => 9,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Cv(a) => cv(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Importance(a) => importance(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_dataset(data: &Dataset, label_column: &str, out: &Path) -> Result<(), Error> {
    write_csv(data, label_column, create(out)?)?;
    DataSidecar {
        schema: data.schema().clone(),
        label_column: label_column.to_string(),
        class_names: data.class_names().clone(),
    }
    .save(default_sidecar(out))
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let spec = SyntheticSpec::separated(a.dim, a.positive, a.negative, a.separation, a.missing_rate, a.seed);
    let data = gen_synthetic(&spec)?;
    write_dataset(&data, &a.label_column, &a.out)?;
    println!(
        "wrote {} rows x {} features to {} ({} missing cells)",
        data.n_samples(),
        data.n_features(),
        a.out.display(),
        data.missing_count()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<(), Error> {
    let extras: Vec<&str> = a.hscrp_column.iter().chain(&a.group_column).map(String::as_str).collect();
    let (mut data, sidecar, extra) = a.data.load(&extras)?;
    if let Some(col) = &a.hscrp_column {
        let crp = data
            .schema()
            .index_of(&a.crp_feature)
            .ok_or_else(|| Error::Schema(format!("no feature named '{}'", a.crp_feature)))?;
        let cells = extra.get(col).ok_or_else(|| Error::Schema(format!("no column named '{col}'")))?;
        let hs = parse_optional_column(col, cells)?;
        data = apply_hscrp_rule(&data, crp, Some(&hs))?;
    }
    let (filtered, kept_features) = match &a.group_column {
        Some(col) => {
            let groups = extra.get(col).ok_or_else(|| Error::Schema(format!("no column named '{col}'")))?;
            filter_features(&data, groups)?
        }
        None => filter_features(&data, data.labels())?,
    };
    for (j, f) in data.schema().features.iter().enumerate() {
        if !kept_features.contains(&j) {
            println!("dropped feature {j} {}", f.name);
        }
    }
    let (filtered, kept_rows) = filter_subjects(&filtered)?;
    for i in 0..data.n_samples() {
        if !kept_rows.contains(&i) {
            println!("dropped subject {i}");
        }
    }
    write_dataset(&filtered, &sidecar.label_column, &a.out)?;
    println!(
        "kept {} of {} subjects and {} of {} features",
        filtered.n_samples(),
        data.n_samples(),
        filtered.n_features(),
        data.n_features()
    );
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn cv(a: CvArgs) -> Result<(), Error> {
    let (data, _, _) = a.data.load(&[])?;
    let (lo, hi) = a.exp_range;
    let range: Vec<f64> = (lo..=hi).map(|k| 2f64.powi(k)).collect();
    let grid = match (GridSpec::coarse(a.family), a.family) {
        (GridSpec::Svm { .. }, Family::SvmLinear) => GridSpec::Svm { c: range, gamma: None },
        (GridSpec::Svm { .. }, _) => GridSpec::Svm {
            c: range.clone(),
            gamma: Some(range),
        },
        (g, _) => g,
    };
    let options = SearchOptions {
        weighting: a.weighting.into(),
        seed: a.seed,
        refine: !a.coarse_only,
        ..Default::default()
    };
    let out = grid_search(&data, &grid, &options)?;
    if let Some(path) = &a.trace {
        write_text(path, &out.trace.to_json_lines())?;
    }
    if let Some(path) = &a.folds {
        write_text(path, &out.best_cv.to_json_lines())?;
    }
    let m = out.best_cv.metrics;
    println!("family\tconfiguration\tbalanced_accuracy\tsensitivity\tspecificity\tprecision");
    println!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        a.family,
        out.best.hyperparams,
        pct(m.balanced_accuracy),
        pct(m.sensitivity),
        pct(m.specificity),
        m.precision.map_or_else(|| "n/a".to_string(), pct)
    );
    Ok(())
}

fn need<T>(v: Option<T>, flag: &str, family: Family) -> Result<T, Error> {
    v.ok_or_else(|| Error::InvalidHyperparameter(format!("--{flag} is required for {family}")))
}

fn reject(present: bool, flag: &str, family: Family) -> Result<(), Error> {
    if present {
        return Err(Error::InvalidHyperparameter(format!("--{flag} does not apply to {family}")));
    }
    Ok(())
}

fn train_hyperparams(a: &TrainArgs) -> Result<Hyperparams, Error> {
    let f = a.family;
    let svm = matches!(f, Family::SvmLinear | Family::SvmRbf);
    reject(!svm && a.c.is_some(), "c", f)?;
    reject(f != Family::SvmRbf && a.gamma.is_some(), "gamma", f)?;
    reject(svm && a.max_depth.is_some(), "max-depth", f)?;
    reject(f != Family::Forest && a.n_tree.is_some(), "n-tree", f)?;
    reject(f != Family::Forest && a.max_features.is_some(), "max-features", f)?;
    reject(f != Family::Forest && a.seed.is_some(), "seed", f)?;
    let hp = match f {
        Family::SvmLinear => Hyperparams::linear_svm(need(a.c, "c", f)?),
        Family::SvmRbf => Hyperparams::rbf_svm(need(a.c, "c", f)?, need(a.gamma, "gamma", f)?),
        Family::Tree => Hyperparams::tree(need(a.max_depth, "max-depth", f)?),
        Family::Forest => Hyperparams::forest(
            need(a.n_tree, "n-tree", f)?,
            need(a.max_features, "max-features", f)?,
            need(a.max_depth, "max-depth", f)?,
            need(a.seed, "seed", f)?,
        ),
    };
    hp.validate()?;
    Ok(hp)
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let hp = train_hyperparams(&a)?;
    let (data, _, _) = a.data.load(&[])?;
    let spec = TrainSpec::new(hp).with_weighting(a.weighting.into());
    let mut bundle = refit(&data, &spec, &a.task)?;
    bundle.metadata.trained_at = Some(a.timestamp.unwrap_or_else(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }));
    save_bundle(&bundle, &a.out)?;
    println!("wrote {} bundle ({}) to {}", a.family, spec.hyperparams, a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<(), Error> {
    let bundle = load_bundle(&a.bundle)?;
    let rows = load_feature_rows(&a.input, &bundle.schema)?;
    let names: &ClassNames = &bundle.metadata.class_names;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let io = |e: std::io::Error| Error::Io {
        path: a.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>")),
        source: e,
    };
    writeln!(out, "row,label,score").map_err(io)?;
    for (i, row) in rows.iter().enumerate() {
        let (label, score) = bundle.predict_row(row)?;
        writeln!(out, "{i},{},{score}", names.name(label)).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn importance(a: ImportanceArgs) -> Result<(), Error> {
    let bundle = load_bundle(&a.bundle)?;
    let entries = bundle.importance()?;
    match a.format {
        Format::Json => {
            for e in &entries {
                println!("{}", serde_json::to_string(e)?);
            }
        }
        Format::Table => {
            let names = &bundle.metadata.class_names;
            println!("id\tfeature\tscore\trank\tchange in {} w.r.t. {}", names.positive, names.negative);
            for e in &entries {
                println!("{}\t{}\t{:.3}\t{}\t{}", e.index + 1, e.feature, e.score, e.rank, e.direction);
            }
            let total: f64 = entries.iter().map(|e| e.score).sum();
            println!("total\t\t{total:.3}");
        }
    }
    Ok(())
}
