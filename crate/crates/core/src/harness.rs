//! Monte Carlo experiments: per-group coverage, set size, per-prediction
//! time and communication for each calibrator, plus a speedup benchmark of
//! the coreset regression against the raw-score regression.
//!
//! Trials are independent (each draws from its own substreams) and may run
//! on the rayon pool; results are collected in trial order before
//! aggregation, so serial and parallel runs report the same numbers apart
//! from wall-clock columns.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{
    calibrate_baseline, predict_classification, predict_regression, CalibrationInput, CalibratorKind,
    ConformalError, PredictionSet, SearchOptions, Threshold,
};
use crate::datagen::{
    calibration_records, classification_datasets, fit_linear, substream, synth_classification, test_records,
    to_datasets, training_set, ClassificationRecord, DataError, LinearModel, Purpose, SynthConfig,
};
use crate::federation::ClientDataset;
use crate::groups::{membership_vector, Covariate, GroupFamily, MembershipVector};
use crate::qr::QrError;
use crate::scalar::kahan_sum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("group {group} has no calibration mass in trial {trial} ({calibrator})")]
    DegenerateGroup {
        /// 1-based, as in the reports.
        group: usize,
        trial: u64,
        calibrator: String,
    },
    #[error("trial {trial} ({calibrator}): {source}")]
    Calibration {
        trial: u64,
        calibrator: String,
        source: ConformalError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A calibrator kind with an optional compression override, written
/// `kind` or `kind@delta` (e.g. `gcfcp_coreset@25`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratorSpec {
    pub kind: CalibratorKind,
    pub delta: Option<f64>,
}

impl CalibratorSpec {
    pub fn new(kind: CalibratorKind) -> Self {
        Self { kind, delta: None }
    }

    pub fn with_delta(kind: CalibratorKind, delta: f64) -> Self {
        Self {
            kind,
            delta: Some(delta),
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for CalibratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.delta {
            Some(d) => write!(f, "{}@{}", self.kind, d),
            None => write!(f, "{}", self.kind),
        }
    }
}

impl FromStr for CalibratorSpec {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, delta) = match s.split_once('@') {
            Some((n, d)) => {
                let d: f64 = d
                    .parse()
                    .map_err(|_| ExperimentError::Config(format!("bad compression in {s:?}")))?;
                (n, Some(d))
            }
            None => (s, None),
        };
        let kind: CalibratorKind = name
            .trim()
            .parse()
            .map_err(|e: ConformalError| ExperimentError::Config(e.to_string()))?;
        Ok(Self { kind, delta })
    }
}

/// Parses a comma-separated calibrator list.
pub fn parse_calibrators(list: &str) -> Result<Vec<CalibratorSpec>, ExperimentError> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect()
}

/// Where calibration and test data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Synthetic regression; test points drawn from the mixture weights.
    Regression(SynthConfig),
    /// Synthetic softmax scores with per-client calibration sizes; test
    /// points are drawn from the same generator in a separate trial stream.
    SyntheticClassification { clients: Vec<usize>, classes: usize, seed: u64 },
    /// Externally computed scores; each trial holds out a random subset as
    /// test points.
    Ingested(Vec<ClassificationRecord>),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub calibrators: Vec<CalibratorSpec>,
    pub alpha: f64,
    /// Compression for digest-based calibrators without an override.
    pub delta: f64,
    pub trials: usize,
    pub test_points: usize,
    pub family: GroupFamily<f64>,
    pub source: DataSource,
    /// Mixture weights; `None` means uniform.
    pub mixture: Option<Vec<f64>>,
    pub seed: u64,
    pub tol: f64,
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Four clients, four overlapping intervals, alpha 0.1.
    pub fn standard(seed: u64) -> Self {
        Self {
            calibrators: CalibratorKind::ALL.iter().map(|&k| CalibratorSpec::new(k)).collect(),
            alpha: 0.1,
            delta: 250.0,
            trials: 100,
            test_points: 200,
            family: GroupFamily::intervals(&[(0.0, 2.0), (1.0, 3.0), (2.0, 4.0), (3.0, 5.0)]).expect("valid"),
            source: DataSource::Regression(SynthConfig::standard(seed)),
            mixture: None,
            seed,
            tol: 1e-6,
            parallel: true,
        }
    }

    fn client_count(&self) -> usize {
        match &self.source {
            DataSource::Regression(c) => c.clients(),
            DataSource::SyntheticClassification { clients, .. } => clients.len(),
            DataSource::Ingested(records) => {
                let mut ids: Vec<u32> = records.iter().map(|r| r.client_id).collect();
                ids.sort_unstable();
                ids.dedup();
                ids.len()
            }
        }
    }

    pub fn mixture_weights(&self) -> Vec<f64> {
        let k = self.client_count();
        self.mixture.clone().unwrap_or_else(|| vec![1.0 / k as f64; k])
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tolerance {} must be positive", self.tol));
        }
        for d in std::iter::once(self.delta).chain(self.calibrators.iter().filter_map(|c| c.delta)) {
            if !(d >= 2.0 && d.is_finite()) {
                return bad(format!("compression {d} must be at least 2"));
            }
        }
        if self.calibrators.is_empty() {
            return bad("no calibrators selected".into());
        }
        let pi = self.mixture_weights();
        if pi.len() != self.client_count() {
            return bad(format!("{} mixture weights for {} clients", pi.len(), self.client_count()));
        }
        if pi.iter().any(|p| !(*p >= 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("mixture weights {pi:?} must be nonnegative and sum to 1"));
        }
        if let DataSource::Regression(c) = &self.source {
            c.validate()?;
        }
        Ok(())
    }
}

/// Group-conditional coverage `cov(G)`: fraction of covered points among
/// those whose membership bit `g` is set. Groups with no points are `None`.
pub fn coverage_estimate(points: &[(bool, &MembershipVector)], groups: usize) -> Vec<Option<f64>> {
    let (covered, total) = group_counts(points, groups);
    covered
        .iter()
        .zip(&total)
        .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
        .collect()
}

fn group_counts(points: &[(bool, &MembershipVector)], groups: usize) -> (Vec<u64>, Vec<u64>) {
    let mut covered = vec![0u64; groups];
    let mut total = vec![0u64; groups];
    for (hit, phi) in points {
        for g in 0..groups {
            if phi.get(g) {
                total[g] += 1;
                covered[g] += u64::from(*hit);
            }
        }
    }
    (covered, total)
}

/// Test point of either task.
#[derive(Debug, Clone)]
enum TestPoint {
    Regression { x: f64, y: f64, prediction: f64 },
    Classification(ClassificationRecord),
}

impl TestPoint {
    fn covariate(&self) -> Covariate<f64> {
        match self {
            TestPoint::Regression { x, .. } => Covariate::scalar(*x),
            TestPoint::Classification(r) => Covariate::label(r.predicted_label),
        }
    }

    fn set(&self, threshold: &Threshold<f64>) -> Result<PredictionSet<f64>, ConformalError> {
        match (self, threshold.value()) {
            (_, None) => Ok(PredictionSet::Empty),
            (TestPoint::Regression { prediction, .. }, Some(s)) => predict_regression(*prediction, s),
            (TestPoint::Classification(r), Some(s)) => Ok(predict_classification(&r.candidates(), s)),
        }
    }

    fn covered(&self, set: &PredictionSet<f64>) -> bool {
        match self {
            TestPoint::Regression { y, .. } => set.contains_value(*y),
            TestPoint::Classification(r) => set.contains_label(r.true_label),
        }
    }
}

struct TrialData {
    datasets: Vec<ClientDataset<f64>>,
    tests: Vec<TestPoint>,
    classification: bool,
}

fn regression_model(cfg: &SynthConfig) -> Result<LinearModel, DataError> {
    fit_linear(&training_set(cfg))
}

fn trial_data(config: &ExperimentConfig, model: Option<&LinearModel>, trial: u64) -> Result<TrialData, ExperimentError> {
    let pi = config.mixture_weights();
    match &config.source {
        DataSource::Regression(cfg) => {
            let model = model.expect("regression model");
            let cal = calibration_records(cfg, model, trial);
            let tests = test_records(cfg, model, &pi, trial, config.test_points)?
                .into_iter()
                .map(|r| TestPoint::Regression {
                    x: r.x,
                    y: r.y,
                    prediction: model.predict(r.x),
                })
                .collect();
            Ok(TrialData {
                datasets: to_datasets(&cal, &pi)?,
                tests,
                classification: false,
            })
        }
        DataSource::SyntheticClassification { clients, classes, seed } => {
            let cal = synth_classification(clients, *classes, *seed, trial);
            // Test points come from a disjoint trial key, pooled and then
            // subsampled by mixture weight.
            let pool = synth_classification(&vec![config.test_points; clients.len()], *classes, *seed, trial | 1 << 63);
            let mut pick = substream(*seed, trial, 0, Purpose::TestClients);
            let dist = rand::distributions::WeightedIndex::new(&pi)
                .map_err(|e| ExperimentError::Config(format!("mixture weights: {e}")))?;
            let tests = (0..config.test_points)
                .map(|i| {
                    let c = rand::distributions::Distribution::sample(&dist, &mut pick);
                    TestPoint::Classification(pool[c][i].clone())
                })
                .collect();
            Ok(TrialData {
                datasets: classification_datasets(&cal, &pi)?,
                tests,
                classification: true,
            })
        }
        DataSource::Ingested(records) => {
            let mut ids: Vec<u32> = records.iter().map(|r| r.client_id).collect();
            ids.sort_unstable();
            ids.dedup();
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut substream(config.seed, trial, 0, Purpose::TestClients));
            let held = config.test_points.min(records.len());
            let tests = order[..held]
                .iter()
                .map(|&i| TestPoint::Classification(records[i].clone()))
                .collect();
            let mut per_client: Vec<Vec<ClassificationRecord>> = vec![Vec::new(); ids.len()];
            let mut rest = order[held..].to_vec();
            rest.sort_unstable();
            for i in rest {
                let c = ids.binary_search(&records[i].client_id).expect("known id");
                per_client[c].push(records[i].clone());
            }
            Ok(TrialData {
                datasets: classification_datasets(&per_client, &pi)?,
                tests,
                classification: true,
            })
        }
    }
}

/// Per-trial, per-calibrator raw results.
#[derive(Debug, Clone, Default)]
struct TrialOutcome {
    covered: Vec<u64>,
    total: Vec<u64>,
    marginal_covered: u64,
    points: u64,
    set_sizes: Vec<f64>,
    seconds: Vec<f64>,
    solves: u64,
    bytes: usize,
}

fn map_conformal(err: ConformalError, trial: u64, calibrator: &CalibratorSpec) -> ExperimentError {
    let degenerate = match &err {
        ConformalError::Qr(QrError::DegenerateGroup { group }) => Some(group + 1),
        _ => None,
    };
    match degenerate {
        Some(group) => ExperimentError::DegenerateGroup {
            group,
            trial,
            calibrator: calibrator.label(),
        },
        None => ExperimentError::Calibration {
            trial,
            calibrator: calibrator.label(),
            source: err,
        },
    }
}

fn run_trial(
    config: &ExperimentConfig,
    model: Option<&LinearModel>,
    trial: u64,
) -> Result<Vec<TrialOutcome>, ExperimentError> {
    let data = trial_data(config, model, trial)?;
    let groups = config.family.len();
    let phis: Vec<MembershipVector> = data
        .tests
        .iter()
        .map(|t| membership_vector(&t.covariate(), &config.family))
        .collect::<Result<_, _>>()
        .map_err(|e| ExperimentError::Config(format!("test point outside every group: {e}")))?;
    let options = SearchOptions {
        tol: config.tol,
        bracket: data.classification.then_some((-0.01, 1.01)),
    };
    let mut outcomes = Vec::with_capacity(config.calibrators.len());
    for spec in &config.calibrators {
        let input = CalibrationInput {
            family: &config.family,
            clients: &data.datasets,
            alpha: config.alpha,
            delta: spec.delta.unwrap_or(config.delta),
        };
        let calibrator = calibrate_baseline(spec.kind, &input).map_err(|e| map_conformal(e, trial, spec))?;
        let mut out = TrialOutcome {
            covered: vec![0; groups],
            total: vec![0; groups],
            bytes: calibrator.comm_bytes(),
            ..Default::default()
        };
        let mut hint: Option<Vec<bool>> = None;
        for (t, phi) in data.tests.iter().zip(&phis) {
            let start = Instant::now();
            let result = calibrator
                .threshold(&t.covariate(), &options, hint.as_deref())
                .map_err(|e| map_conformal(e, trial, spec))?;
            out.seconds.push(start.elapsed().as_secs_f64());
            out.solves += result.solves as u64;
            let set = t.set(&result.threshold).map_err(|e| map_conformal(e, trial, spec))?;
            let hit = t.covered(&set);
            for g in 0..groups {
                if phi.get(g) {
                    out.total[g] += 1;
                    out.covered[g] += u64::from(hit);
                }
            }
            out.points += 1;
            out.marginal_covered += u64::from(hit);
            out.set_sizes.push(set.size());
            if !result.hint.is_empty() {
                hint = Some(result.hint);
            }
        }
        outcomes.push(out);
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCoverage {
    pub group: usize,
    pub covered: u64,
    pub total: u64,
    /// `None` when no test point fell in the group.
    pub coverage: Option<f64>,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorReport {
    pub calibrator: String,
    pub groups: Vec<GroupCoverage>,
    pub marginal_coverage: Option<f64>,
    pub marginal_std_error: Option<f64>,
    pub mean_set_size: Option<f64>,
    pub mean_seconds_per_prediction: Option<f64>,
    pub mean_solves_per_prediction: Option<f64>,
    pub mean_comm_bytes: f64,
    pub trials: usize,
}

impl CalibratorReport {
    /// `max_G |cov(G) - target|` over groups with test points.
    pub fn max_deviation(&self, target: f64) -> Option<f64> {
        self.groups
            .iter()
            .filter_map(|g| g.coverage)
            .map(|c| (c - target).abs())
            .reduce(f64::max)
    }

    pub fn min_coverage(&self) -> Option<f64> {
        self.groups.iter().filter_map(|g| g.coverage).reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: f64,
    pub trials: usize,
    pub test_points: usize,
    pub calibrators: Vec<CalibratorReport>,
}

fn proportion(hit: u64, total: u64) -> (Option<f64>, Option<f64>) {
    if total == 0 {
        return (None, None);
    }
    let p = hit as f64 / total as f64;
    (Some(p), Some((p * (1.0 - p) / total as f64).sqrt()))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| kahan_sum(values.iter().copied()) / values.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl CoverageReport {
    pub fn calibrator(&self, label: &str) -> Option<&CalibratorReport> {
        self.calibrators.iter().find(|c| c.calibrator == label)
    }

    /// Coverage CSV without timing columns; byte-identical for a fixed seed.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("calibrator,group,covered,total,coverage,std_error,mean_set_size,mean_comm_bytes,trials\n");
        for c in &self.calibrators {
            let tail = format!("{},{},{}", fmt_opt(c.mean_set_size), c.mean_comm_bytes, c.trials);
            for g in &c.groups {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{tail}",
                    c.calibrator,
                    g.group,
                    g.covered,
                    g.total,
                    fmt_opt(g.coverage),
                    fmt_opt(g.std_error)
                );
            }
            let _ = writeln!(
                s,
                "{},marginal,,,{},{},{tail}",
                c.calibrator,
                fmt_opt(c.marginal_coverage),
                fmt_opt(c.marginal_std_error)
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("calibrator,mean_seconds_per_prediction,mean_solves_per_prediction\n");
        for c in &self.calibrators {
            let _ = writeln!(
                s,
                "{},{},{}",
                c.calibrator,
                fmt_opt(c.mean_seconds_per_prediction),
                fmt_opt(c.mean_solves_per_prediction)
            );
        }
        s
    }

    /// Per-group miscoverage, one row per (calibrator, group), for plotting.
    pub fn miscoverage_csv(&self) -> String {
        let mut s = String::from("calibrator,group,miscoverage,std_error\n");
        for c in &self.calibrators {
            for g in &c.groups {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    c.calibrator,
                    g.group,
                    fmt_opt(g.coverage.map(|v| 1.0 - v)),
                    fmt_opt(g.std_error)
                );
            }
        }
        s
    }

    pub fn text_table(&self) -> String {
        let groups = self.calibrators.first().map_or(0, |c| c.groups.len());
        let mut s = format!("{:<22}", "calibrator");
        for g in 0..groups {
            let _ = write!(s, " {:>8}", format!("G{}", g + 1));
        }
        let _ = writeln!(s, " {:>8} {:>9} {:>11} {:>10}", "marginal", "set size", "ms/predict", "comm bytes");
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for c in &self.calibrators {
            let _ = write!(s, "{:<22}", c.calibrator);
            for g in &c.groups {
                let _ = write!(s, " {:>8}", cell(g.coverage));
            }
            let _ = writeln!(
                s,
                " {:>8} {:>9} {:>11} {:>10.0}",
                cell(c.marginal_coverage),
                cell(c.mean_set_size),
                c.mean_seconds_per_prediction.map_or_else(|| "-".into(), |v| format!("{:.3}", v * 1e3)),
                c.mean_comm_bytes
            );
        }
        s
    }
}

/// Runs every calibrator on every trial and aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<CoverageReport, ExperimentError> {
    config.validate()?;
    let model = match &config.source {
        DataSource::Regression(cfg) => Some(regression_model(cfg)?),
        _ => None,
    };
    let run = |t: usize| run_trial(config, model.as_ref(), t as u64);
    let trials: Vec<Vec<TrialOutcome>> = if config.parallel {
        (0..config.trials).into_par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        (0..config.trials).map(run).collect::<Result<_, _>>()?
    };

    let groups = config.family.len();
    let calibrators = config
        .calibrators
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let per_trial: Vec<&TrialOutcome> = trials.iter().map(|t| &t[i]).collect();
            let covered: Vec<u64> = (0..groups).map(|g| per_trial.iter().map(|o| o.covered[g]).sum()).collect();
            let total: Vec<u64> = (0..groups).map(|g| per_trial.iter().map(|o| o.total[g]).sum()).collect();
            let points: u64 = per_trial.iter().map(|o| o.points).sum();
            let hits: u64 = per_trial.iter().map(|o| o.marginal_covered).sum();
            let sizes: Vec<f64> = per_trial.iter().flat_map(|o| o.set_sizes.iter().copied()).collect();
            let seconds: Vec<f64> = per_trial.iter().flat_map(|o| o.seconds.iter().copied()).collect();
            let solves: u64 = per_trial.iter().map(|o| o.solves).sum();
            let bytes: Vec<f64> = per_trial.iter().map(|o| o.bytes as f64).collect();
            let (marginal_coverage, marginal_std_error) = proportion(hits, points);
            CalibratorReport {
                calibrator: spec.label(),
                groups: (0..groups)
                    .map(|g| {
                        let (coverage, std_error) = proportion(covered[g], total[g]);
                        GroupCoverage {
                            group: g + 1,
                            covered: covered[g],
                            total: total[g],
                            coverage,
                            std_error,
                        }
                    })
                    .collect(),
                marginal_coverage,
                marginal_std_error,
                mean_set_size: mean(&sizes),
                mean_seconds_per_prediction: mean(&seconds),
                mean_solves_per_prediction: (points > 0).then(|| solves as f64 / points as f64),
                mean_comm_bytes: mean(&bytes).unwrap_or(0.0),
                trials: config.trials,
            }
        })
        .collect();
    Ok(CoverageReport {
        alpha: config.alpha,
        trials: config.trials,
        test_points: config.test_points,
        calibrators,
    })
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Calibration sizes per client; their sum is the pooled `n`.
    pub clients: Vec<usize>,
    pub family: GroupFamily<f64>,
    pub alpha: f64,
    pub deltas: Vec<f64>,
    pub test_points: usize,
    pub warmups: usize,
    pub seed: u64,
    pub tol: f64,
}

impl BenchConfig {
    pub fn new(clients: Vec<usize>, deltas: Vec<f64>, seed: u64) -> Self {
        Self {
            clients,
            family: GroupFamily::intervals(&[(0.0, 2.0), (1.0, 3.0), (2.0, 4.0), (3.0, 5.0)]).expect("valid"),
            alpha: 0.1,
            deltas,
            test_points: 20,
            warmups: 3,
            seed,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupSummary {
    pub delta: f64,
    pub coreset_entries: usize,
    pub mean_coreset_seconds: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub n: usize,
    pub mean_centralized_seconds: f64,
    pub speedups: Vec<SpeedupSummary>,
}

impl SpeedupReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,delta,coreset_entries,centralized_seconds,coreset_seconds,min,median,max\n");
        for r in &self.speedups {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                self.n,
                r.delta,
                r.coreset_entries,
                self.mean_centralized_seconds,
                r.mean_coreset_seconds,
                r.min,
                r.median,
                r.max
            );
        }
        s
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Wall-clock per threshold search for the raw-score regression divided by
/// that of the coreset regression, per test point.
pub fn bench_speedup(config: &BenchConfig) -> Result<SpeedupReport, ExperimentError> {
    if config.test_points < 1 || config.deltas.is_empty() {
        return Err(ExperimentError::Config("need test points and at least one compression".into()));
    }
    let k = config.clients.len();
    let synth = SynthConfig::with_sizes(config.clients.clone(), config.seed)?;
    let model = regression_model(&synth)?;
    let pi = vec![1.0 / k as f64; k];
    let datasets = to_datasets::<f64>(&calibration_records(&synth, &model, 0), &pi)?;
    let tests = test_records(&synth, &model, &pi, 0, config.test_points + config.warmups)?;
    let options = SearchOptions {
        tol: config.tol,
        bracket: None,
    };
    let time_all = |kind: CalibratorKind, delta: f64| -> Result<(Vec<f64>, usize), ExperimentError> {
        let spec = CalibratorSpec::with_delta(kind, delta);
        let input = CalibrationInput {
            family: &config.family,
            clients: &datasets,
            alpha: config.alpha,
            delta,
        };
        let cal = calibrate_baseline(kind, &input).map_err(|e| map_conformal(e, 0, &spec))?;
        let size = match &cal {
            crate::conformal::Calibrator::Regression { source, .. } => source.calibration.len(),
            crate::conformal::Calibrator::Global { .. } => 0,
        };
        let mut times = Vec::with_capacity(config.test_points);
        for (i, r) in tests.iter().enumerate() {
            let x = Covariate::scalar(r.x);
            let start = Instant::now();
            cal.threshold(&x, &options, None).map_err(|e| map_conformal(e, 0, &spec))?;
            if i >= config.warmups {
                times.push(start.elapsed().as_secs_f64());
            }
        }
        Ok((times, size))
    };
    let (central, _) = time_all(CalibratorKind::GcfcpCentralized, config.deltas[0])?;
    let mut speedups = Vec::with_capacity(config.deltas.len());
    for &delta in &config.deltas {
        let (coreset, entries) = time_all(CalibratorKind::GcfcpCoreset, delta)?;
        let mut ratios: Vec<f64> = central.iter().zip(&coreset).map(|(c, s)| c / s).collect();
        ratios.sort_by(f64::total_cmp);
        speedups.push(SpeedupSummary {
            delta,
            coreset_entries: entries,
            mean_coreset_seconds: mean(&coreset).unwrap_or(0.0),
            min: ratios[0],
            median: median(&ratios),
            max: ratios[ratios.len() - 1],
        });
    }
    Ok(SpeedupReport {
        n: config.clients.iter().sum(),
        mean_centralized_seconds: mean(&central).unwrap_or(0.0),
        speedups,
    })
}
