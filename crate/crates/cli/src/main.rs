use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcfcp::conformal::{calibrate_baseline, predict_classification, predict_regression, CalibrationInput, SearchOptions};
use gcfcp::datagen::{
    calibration_records, classification_datasets, fit_linear, read_classification_csv, read_regression_csv,
    synth_classification, to_datasets, training_set, write_classification_csv, write_regression_csv,
    ClassificationRecord, DataError, RegressionRecord, SynthConfig,
};
use gcfcp::federation::{client_build_messages, encode_messages, run_protocol};
use gcfcp::harness::{
    bench_speedup, parse_calibrators, run_experiment, BenchConfig, DataSource, ExperimentConfig, ExperimentError,
};
use gcfcp::qr::QrError;
use gcfcp::{ClientDataset64, ConformalError, Covariate, FederationError, GroupError, GroupFamily64, Threshold};

#[derive(Parser)]
#[command(name = "gcfcp", version, about = "Group-conditional federated conformal prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic calibration dataset as CSV.
    Synth(SynthArgs),
    /// Build every client's digest messages from a dataset.
    Calibrate(CalibrateArgs),
    /// Prediction set for a single test point.
    Predict(PredictArgs),
    /// Monte Carlo coverage experiment.
    Experiment(ExperimentArgs),
    /// Per-prediction speedup of the coreset over raw scores.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// Group family as JSON, or a path to a JSON file.
    #[arg(long)]
    groups: Option<String>,
    /// `uniform` or a JSON array of client weights.
    #[arg(long, default_value = "uniform")]
    mixture: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Calibration points per client, comma separated.
    #[arg(long, default_value = "1000,333,333,333")]
    clients: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Emit softmax-style classification scores with this many classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Regression or classification CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 250.0)]
    delta: f64,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    input: PathBuf,
    /// Test covariate (regression).
    #[arg(long, conflicts_with = "label")]
    x: Option<f64>,
    /// Model prediction f(x); centers the interval.
    #[arg(long, requires = "x")]
    prediction: Option<f64>,
    /// Predicted label of the test point (classification).
    #[arg(long)]
    label: Option<i64>,
    /// Candidate scores `score_0,score_1,...` (classification).
    #[arg(long, requires = "label")]
    scores: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 250.0)]
    delta: f64,
    #[arg(long, default_value = "gcfcp_coreset")]
    calibrators: String,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 250.0)]
    delta: f64,
    #[arg(long, default_value = "1000,333,333,333")]
    clients: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 200)]
    test_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(
        long,
        default_value = "centralized_cp,fcp_marginal,condcp_centralized,gcfcp_centralized,gcfcp_coreset"
    )]
    calibrators: String,
    /// Synthetic classification with this many classes instead of regression.
    #[arg(long, conflicts_with = "input")]
    classes: Option<usize>,
    /// Classification scores CSV; test points are held out per trial.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Run trials on one thread.
    #[arg(long)]
    serial: bool,
    #[command(flatten)]
    common: Common,
    /// Coverage CSV; timing and miscoverage CSVs are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "2000,1000,1000,1000")]
    clients: String,
    /// Compressions to compare, comma separated.
    #[arg(long, default_value = "250,25")]
    delta: String,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 20)]
    test_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    groups: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl fmt::Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let code = if matches!(e, DataError::Ingest { .. }) { 4 } else { 2 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::DegenerateGroup { .. } => Self {
                code: 3,
                message: e.to_string(),
            },
            ExperimentError::Data(d) => d.into(),
            other => Self::config(other),
        }
    }
}

impl From<ConformalError> for Failure {
    fn from(e: ConformalError) -> Self {
        let code = if matches!(e, ConformalError::Qr(QrError::DegenerateGroup { .. })) { 3 } else { 2 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<FederationError> for Failure {
    fn from(e: FederationError) -> Self {
        Self::config(e)
    }
}

impl From<GroupError> for Failure {
    fn from(e: GroupError) -> Self {
        Self::config(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| Failure::config(format!("bad {what} entry {s:?}"))))
        .collect()
}

fn parse_family(groups: Option<&str>) -> Result<Option<GroupFamily64>> {
    let Some(text) = groups else { return Ok(None) };
    let json = if text.trim_start().starts_with('{') {
        text.to_string()
    } else {
        fs::read_to_string(text).map_err(|e| Failure::config(format!("{text}: {e}")))?
    };
    Ok(Some(GroupFamily64::from_json(&json)?))
}

fn interval_family() -> GroupFamily64 {
    GroupFamily64::intervals(&[(0.0, 2.0), (1.0, 3.0), (2.0, 4.0), (3.0, 5.0)]).expect("valid intervals")
}

fn parse_mixture(text: &str, clients: usize) -> Result<Vec<f64>> {
    if text == "uniform" {
        return Ok(vec![1.0 / clients as f64; clients]);
    }
    let pi: Vec<f64> = serde_json::from_str(text).map_err(|e| Failure::config(format!("--mixture: {e}")))?;
    if pi.len() != clients {
        return Err(Failure::config(format!("--mixture has {} weights for {clients} clients", pi.len())));
    }
    Ok(pi)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::config(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::config(format!("stdout: {e}"))),
    }
}

/// Rows grouped by client id, in increasing id order.
fn by_client<R: Clone>(rows: &[R], id: impl Fn(&R) -> u32) -> Vec<Vec<R>> {
    let mut map: BTreeMap<u32, Vec<R>> = BTreeMap::new();
    for r in rows {
        map.entry(id(r)).or_default().push(r.clone());
    }
    map.into_values().collect()
}

enum Loaded {
    Regression(Vec<Vec<RegressionRecord>>),
    Classification(Vec<Vec<ClassificationRecord>>),
}

impl Loaded {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        if text.starts_with("client_id,predicted_label") {
            let rows = read_classification_csv(text.as_bytes())?;
            Ok(Loaded::Classification(by_client(&rows, |r| r.client_id)))
        } else {
            let rows = read_regression_csv(text.as_bytes())?;
            Ok(Loaded::Regression(by_client(&rows, |r| r.client_id)))
        }
    }

    fn clients(&self) -> usize {
        match self {
            Loaded::Regression(r) => r.len(),
            Loaded::Classification(c) => c.len(),
        }
    }

    fn datasets(&self, pi: &[f64]) -> Result<Vec<ClientDataset64>> {
        Ok(match self {
            Loaded::Regression(r) => to_datasets(r, pi)?,
            Loaded::Classification(c) => classification_datasets(c, pi)?,
        })
    }

    /// The given family, or the default interval family for regression.
    fn family(&self, given: Option<GroupFamily64>) -> Result<GroupFamily64> {
        match (given, self) {
            (Some(f), _) => Ok(f),
            (None, Loaded::Regression(_)) => Ok(interval_family()),
            (None, Loaded::Classification(_)) => Err(Failure::config("classification data needs --groups")),
        }
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let sizes: Vec<usize> = parse_list("--clients", &args.clients)?;
    let mut buf = Vec::new();
    match args.classes {
        Some(classes) => {
            if classes < 2 {
                return Err(Failure::config("--classes must be at least 2"));
            }
            let recs = synth_classification(&sizes, classes, args.seed, args.trial).concat();
            write_classification_csv(&mut buf, &recs)?;
        }
        None => {
            let config = SynthConfig::with_sizes(sizes, args.seed)?;
            let model = fit_linear(&training_set(&config))?;
            write_regression_csv(&mut buf, &calibration_records(&config, &model, args.trial).concat())?;
        }
    }
    write_output(args.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let data = Loaded::read(&args.input)?;
    let family = data.family(parse_family(args.common.groups.as_deref())?)?;
    let pi = parse_mixture(&args.common.mixture, data.clients())?;
    let datasets = data.datasets(&pi)?;
    let run = run_protocol(&datasets, &family, args.delta)?;
    let mut messages = Vec::new();
    for d in &datasets {
        messages.extend(client_build_messages(d, &family, args.delta)?);
    }
    eprintln!(
        "{} messages, {} bytes, {} coreset entries over {} atoms",
        run.messages,
        run.bytes,
        run.coreset.len(),
        run.coreset.atoms().len()
    );
    write_output(args.out.as_deref(), &encode_messages(&messages))
}

fn predict(args: PredictArgs) -> Result<()> {
    let data = Loaded::read(&args.input)?;
    let family = data.family(parse_family(args.common.groups.as_deref())?)?;
    let pi = parse_mixture(&args.common.mixture, data.clients())?;
    let datasets = data.datasets(&pi)?;
    let x = match (args.x, args.label) {
        (Some(x), None) => Covariate::scalar(x),
        (None, Some(l)) => Covariate::label(l),
        _ => return Err(Failure::config("give exactly one of --x and --label")),
    };
    let classification = matches!(data, Loaded::Classification(_));
    let options = SearchOptions {
        tol: args.tol,
        bracket: classification.then_some((-0.01, 1.01)),
    };
    let input = CalibrationInput {
        family: &family,
        clients: &datasets,
        alpha: args.alpha,
        delta: args.delta,
    };
    for spec in parse_calibrators(&args.calibrators)? {
        let calibrator = calibrate_baseline(spec.kind, &CalibrationInput { delta: spec.delta.unwrap_or(args.delta), ..input })?;
        let threshold = calibrator.threshold(&x, &options, None)?.threshold;
        let (value, status) = match threshold {
            Threshold::Value(v) => (Some(v), "value"),
            Threshold::Full(v) => (Some(v), "full"),
            Threshold::Empty => (None, "empty"),
        };
        let mut line = serde_json::json!({
            "calibrator": spec.label(),
            "threshold": value,
            "status": status,
        });
        if let (Some(s), Some(center)) = (value, args.prediction) {
            if let gcfcp::PredictionSet::Interval { center, radius } = predict_regression(center, s)? {
                line["interval"] = serde_json::json!([center - radius, center + radius]);
            }
        }
        if let Some(scores) = &args.scores {
            let scores: Vec<f64> = parse_list("--scores", scores)?;
            let cands: Vec<(i64, f64)> = scores.into_iter().enumerate().map(|(l, s)| (l as i64, s)).collect();
            let labels: Vec<i64> = match value {
                Some(s) => match predict_classification(&cands, s) {
                    gcfcp::PredictionSet::LabelSet(set) => set.into_iter().collect(),
                    _ => Vec::new(),
                },
                None => Vec::new(),
            };
            line["labels"] = serde_json::json!(labels);
        }
        println!("{line}");
    }
    Ok(())
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let given = parse_family(args.common.groups.as_deref())?;
    let sizes: Vec<usize> = parse_list("--clients", &args.clients)?;
    let (source, family) = match (&args.input, args.classes) {
        (Some(path), _) => {
            let records = gcfcp::datagen::ingest_scores(path)?;
            let family = given.ok_or_else(|| Failure::config("--input needs --groups"))?;
            (DataSource::Ingested(records), family)
        }
        (None, Some(classes)) => {
            if classes < 2 {
                return Err(Failure::config("--classes must be at least 2"));
            }
            let family = given.ok_or_else(|| Failure::config("--classes needs --groups"))?;
            let source = DataSource::SyntheticClassification {
                clients: sizes,
                classes,
                seed: args.seed,
            };
            (source, family)
        }
        (None, None) => {
            let source = DataSource::Regression(SynthConfig::with_sizes(sizes, args.seed)?);
            (source, given.unwrap_or_else(interval_family))
        }
    };
    let mixture = match args.common.mixture.as_str() {
        "uniform" => None,
        text => Some(serde_json::from_str(text).map_err(|e| Failure::config(format!("--mixture: {e}")))?),
    };
    let config = ExperimentConfig {
        calibrators: parse_calibrators(&args.calibrators)?,
        alpha: args.alpha,
        delta: args.delta,
        trials: args.trials,
        test_points: args.test_points,
        family,
        source,
        mixture,
        seed: args.seed,
        tol: args.tol,
        parallel: !args.serial,
    };
    let report = run_experiment(&config)?;
    eprint!("{}", report.text_table());
    write_output(args.out.as_deref(), &report.to_csv())?;
    if let Some(out) = &args.out {
        write_output(Some(&sibling(out, "timing")), &report.timing_csv())?;
        write_output(Some(&sibling(out, "miscoverage")), &report.miscoverage_csv())?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut config = BenchConfig::new(parse_list("--clients", &args.clients)?, parse_list("--delta", &args.delta)?, args.seed);
    config.alpha = args.alpha;
    config.test_points = args.test_points;
    config.tol = args.tol;
    if let Some(f) = parse_family(args.groups.as_deref())? {
        config.family = f;
    }
    let report = bench_speedup(&config)?;
    for s in &report.speedups {
        eprintln!(
            "n={} delta={} entries={} speedup median {:.2}x (min {:.2}x, max {:.2}x)",
            report.n, s.delta, s.coreset_entries, s.median, s.min, s.max
        );
    }
    write_output(args.out.as_deref(), &report.to_csv())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Predict(a) => predict(a),
        Command::Experiment(a) => experiment(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
