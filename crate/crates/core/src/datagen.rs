//! Synthetic heterogeneous regression data, least-squares fitting,
//! absolute-residual scores, and CSV ingestion of precomputed
//! classification scores.
//!
//! Client `k` (1-based) draws covariates from a normal with mean
//! `0.5 + 4(k-1)/(K-1)` and standard deviation `0.5 + 0.1(k-1)`, truncated to
//! `[0, 5]`, and responses
//!
//! ```text
//! Y = Poisson(sin^2 X + 0.1) + 0.03 X e1 + 25 * 1{U < 0.01} e2 + N(0, 0.01 k^2)
//! ```
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! `(seed, trial, client, purpose)`, so results do not depend on thread
//! scheduling or on the order in which clients are generated.

use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::federation::ClientDataset;
use crate::groups::Covariate;
use crate::scalar::Scalar;
use crate::splitmix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("all training covariates are identical; slope is not identifiable")]
    SingularDesign,
    #[error("row {row}: {reason}")]
    Ingest { row: usize, reason: String },
    #[error("{0}")]
    Io(String),
}

/// Per-client covariate distributions and calibration sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub n: Vec<usize>,
    pub domain: (f64, f64),
    pub train_size: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Default means and spreads for `n.len()` clients.
    pub fn with_sizes(n: Vec<usize>, seed: u64) -> Result<Self, DataError> {
        let k = n.len();
        if k == 0 {
            return Err(DataError::Config("at least one client is required".into()));
        }
        let denom = (k.max(2) - 1) as f64;
        let cfg = Self {
            mu: (0..k).map(|i| 0.5 + 4.0 * i as f64 / denom).collect(),
            sigma: (0..k).map(|i| 0.5 + 0.1 * i as f64).collect(),
            n,
            domain: (0.0, 5.0),
            train_size: 2000,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Four clients with 1000, 333, 333, 333 calibration points.
    pub fn standard(seed: u64) -> Self {
        Self::with_sizes(vec![1000, 333, 333, 333], seed).expect("valid defaults")
    }

    pub fn clients(&self) -> usize {
        self.n.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let k = self.n.len();
        if k == 0 || self.mu.len() != k || self.sigma.len() != k {
            return Err(DataError::Config(format!(
                "{} sizes, {} means and {} spreads",
                k,
                self.mu.len(),
                self.sigma.len()
            )));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(DataError::Config(format!("spread {s} must be positive")));
        }
        if let Some(m) = self.mu.iter().find(|m| !m.is_finite()) {
            return Err(DataError::Config(format!("mean {m} is not finite")));
        }
        let (lo, hi) = self.domain;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(DataError::Config(format!("domain [{lo}, {hi}] is empty")));
        }
        Ok(())
    }

    fn check_client(&self, client: usize) {
        assert!(client < self.clients(), "client index {client} out of range");
    }
}

/// What a random stream is used for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Covariates = 1,
    Responses = 2,
    Train = 3,
    TestClients = 4,
    TestCovariates = 5,
    TestResponses = 6,
    Scores = 7,
}

/// Independent stream for `(seed, trial, client, purpose)`.
pub fn substream(seed: u64, trial: u64, client: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = splitmix(splitmix(splitmix(trial) ^ client) ^ purpose as u64);
    rng.set_stream(key);
    rng
}

/// Rejection sampler for a normal truncated to `[lo, hi]`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mu, sigma).expect("validated spread");
    loop {
        let x = normal.sample(rng);
        if x >= lo && x <= hi {
            return x;
        }
    }
}

/// `count` covariates for a 0-based client index from trial 0's stream.
pub fn sample_covariates(config: &SynthConfig, client: usize, count: usize) -> Vec<f64> {
    let mut rng = substream(config.seed, 0, client as u64, Purpose::Covariates);
    sample_covariates_with(config, client, count, &mut rng)
}

pub fn sample_covariates_with<R: Rng + ?Sized>(
    config: &SynthConfig,
    client: usize,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    config.check_client(client);
    let (lo, hi) = config.domain;
    (0..count)
        .map(|_| truncated_normal(rng, config.mu[client], config.sigma[client], lo, hi))
        .collect()
}

/// A response draw with its outlier indicator exposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseDraw {
    pub y: f64,
    pub outlier: bool,
}

/// Draws a response at `x` for a 0-based client index. Every call consumes
/// the same number of variates whether or not the outlier fires.
pub fn draw_response<R: Rng + ?Sized>(x: f64, client: usize, rng: &mut R) -> ResponseDraw {
    let rate = x.sin().powi(2) + 0.1;
    let count: f64 = Poisson::new(rate).expect("rate >= 0.1").sample(rng);
    let e1: f64 = StandardNormal.sample(rng);
    let e2: f64 = StandardNormal.sample(rng);
    let u: f64 = rng.gen();
    let z: f64 = StandardNormal.sample(rng);
    let k = (client + 1) as f64;
    let outlier = u < 0.01;
    let y = count + 0.03 * x * e1 + if outlier { 25.0 * e2 } else { 0.0 } + 0.1 * k * z;
    ResponseDraw { y, outlier }
}

pub fn generate_response<R: Rng + ?Sized>(x: f64, client: usize, rng: &mut R) -> f64 {
    draw_response(x, client, rng).y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares on centered data.
pub fn fit_linear(train: &[(f64, f64)]) -> Result<LinearModel, DataError> {
    if train.len() < 2 {
        return Err(DataError::SingularDesign);
    }
    let n = train.len() as f64;
    let mx = train.iter().map(|p| p.0).sum::<f64>() / n;
    let my = train.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy) = train.iter().fold((0.0, 0.0), |(sxx, sxy), &(x, y)| {
        let dx = x - mx;
        (sxx + dx * dx, sxy + dx * (y - my))
    });
    if sxx <= 0.0 {
        return Err(DataError::SingularDesign);
    }
    let slope = sxy / sxx;
    Ok(LinearModel {
        slope,
        intercept: my - slope * mx,
    })
}

pub fn score_absolute(model: &LinearModel, x: f64, y: f64) -> f64 {
    (y - model.predict(x)).abs()
}

/// Training set drawn from the uniform client mixture.
pub fn training_set(config: &SynthConfig) -> Vec<(f64, f64)> {
    let k = config.clients();
    let mut pick = substream(config.seed, u64::MAX, 0, Purpose::Train);
    let mut cov = substream(config.seed, u64::MAX, 1, Purpose::Train);
    let mut resp = substream(config.seed, u64::MAX, 2, Purpose::Train);
    (0..config.train_size)
        .map(|_| {
            let c = pick.gen_range(0..k);
            let x = truncated_normal(&mut cov, config.mu[c], config.sigma[c], config.domain.0, config.domain.1);
            (x, generate_response(x, c, &mut resp))
        })
        .collect()
}

/// One regression observation; `score` is `|y - f(x)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionRecord {
    pub client_id: u32,
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Calibration records of every client for one trial. Client ids are 1-based.
pub fn calibration_records(config: &SynthConfig, model: &LinearModel, trial: u64) -> Vec<Vec<RegressionRecord>> {
    (0..config.clients())
        .map(|c| {
            let mut cov = substream(config.seed, trial, c as u64, Purpose::Covariates);
            let mut resp = substream(config.seed, trial, c as u64, Purpose::Responses);
            sample_covariates_with(config, c, config.n[c], &mut cov)
                .into_iter()
                .map(|x| {
                    let y = generate_response(x, c, &mut resp);
                    RegressionRecord {
                        client_id: c as u32 + 1,
                        x,
                        y,
                        score: score_absolute(model, x, y),
                    }
                })
                .collect()
        })
        .collect()
}

/// Test records from the mixture `pi` over clients.
pub fn test_records(
    config: &SynthConfig,
    model: &LinearModel,
    pi: &[f64],
    trial: u64,
    count: usize,
) -> Result<Vec<RegressionRecord>, DataError> {
    if pi.len() != config.clients() {
        return Err(DataError::Config(format!(
            "{} mixture weights for {} clients",
            pi.len(),
            config.clients()
        )));
    }
    let pick_dist = WeightedIndex::new(pi).map_err(|e| DataError::Config(format!("mixture weights: {e}")))?;
    let mut pick = substream(config.seed, trial, 0, Purpose::TestClients);
    let mut cov = substream(config.seed, trial, 0, Purpose::TestCovariates);
    let mut resp = substream(config.seed, trial, 0, Purpose::TestResponses);
    Ok((0..count)
        .map(|_| {
            let c = pick_dist.sample(&mut pick);
            let x = truncated_normal(&mut cov, config.mu[c], config.sigma[c], config.domain.0, config.domain.1);
            let y = generate_response(x, c, &mut resp);
            RegressionRecord {
                client_id: c as u32 + 1,
                x,
                y,
                score: score_absolute(model, x, y),
            }
        })
        .collect())
}

/// Converts per-client regression records into federation datasets.
pub fn to_datasets<T: Scalar>(records: &[Vec<RegressionRecord>], pi: &[f64]) -> Result<Vec<ClientDataset<T>>, DataError> {
    if records.len() != pi.len() {
        return Err(DataError::Config(format!(
            "{} clients but {} mixture weights",
            records.len(),
            pi.len()
        )));
    }
    records
        .iter()
        .zip(pi)
        .enumerate()
        .map(|(i, (recs, &p))| {
            ClientDataset::new(
                recs.first().map_or(i as u32 + 1, |r| r.client_id),
                recs.iter().map(|r| Covariate::scalar(T::of(r.x))).collect(),
                recs.iter().map(|r| T::of(r.score)).collect(),
                T::of(p),
            )
            .map_err(|e| DataError::Config(e.to_string()))
        })
        .collect()
}

/// A classification observation with per-label scores `1 - softmax_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub client_id: u32,
    pub predicted_label: i64,
    pub true_label: i64,
    pub scores: Vec<f64>,
}

impl ClassificationRecord {
    pub fn candidates(&self) -> Vec<(i64, f64)> {
        self.scores.iter().enumerate().map(|(l, &s)| (l as i64, s)).collect()
    }

    pub fn true_score(&self) -> f64 {
        self.scores[self.true_label as usize]
    }
}

const SCORE_SLACK: f64 = 1e-6;

fn io_err(e: impl std::fmt::Display) -> DataError {
    DataError::Io(e.to_string())
}

/// Reads `client_id,predicted_label,true_label,score_0,...` rows.
/// Row numbers in errors count the header as row 1.
pub fn read_classification_csv<R: Read>(reader: R) -> Result<Vec<ClassificationRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| DataError::Ingest { row: 1, reason: e.to_string() })?.clone();
    let fixed = ["client_id", "predicted_label", "true_label"];
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(DataError::Ingest {
                row: 1,
                reason: format!("column {} must be {name:?}", i + 1),
            });
        }
    }
    let classes = header.len() - fixed.len();
    if classes == 0 {
        return Err(DataError::Ingest {
            row: 1,
            reason: "no score columns".into(),
        });
    }
    for (c, name) in header.iter().skip(fixed.len()).enumerate() {
        if name != format!("score_{c}") {
            return Err(DataError::Ingest {
                row: 1,
                reason: format!("expected score_{c}, found {name:?}"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| DataError::Ingest { row, reason: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(DataError::Ingest {
                row,
                reason: format!("{} fields, expected {}", rec.len(), header.len()),
            });
        }
        let field = |j: usize| rec.get(j).unwrap_or_default();
        let bad = |what: &str, j: usize| DataError::Ingest {
            row,
            reason: format!("{what} {:?} is not valid", field(j)),
        };
        let client_id: u32 = field(0).parse().map_err(|_| bad("client_id", 0))?;
        let predicted_label: i64 = field(1).parse().map_err(|_| bad("predicted_label", 1))?;
        let true_label: i64 = field(2).parse().map_err(|_| bad("true_label", 2))?;
        if true_label < 0 || true_label as usize >= classes {
            return Err(DataError::Ingest {
                row,
                reason: format!("true_label {true_label} outside 0..{classes}"),
            });
        }
        let mut scores = Vec::with_capacity(classes);
        for j in fixed.len()..rec.len() {
            let s: f64 = field(j).parse().map_err(|_| bad("score", j))?;
            if !(-SCORE_SLACK..=1.0 + SCORE_SLACK).contains(&s) {
                return Err(DataError::Ingest {
                    row,
                    reason: format!("score_{} = {s} outside [0, 1]", j - fixed.len()),
                });
            }
            scores.push(s);
        }
        out.push(ClassificationRecord {
            client_id,
            predicted_label,
            true_label,
            scores,
        });
    }
    Ok(out)
}

pub fn ingest_scores(path: &Path) -> Result<Vec<ClassificationRecord>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    read_classification_csv(file)
}

pub fn write_classification_csv<W: Write>(writer: W, records: &[ClassificationRecord]) -> Result<(), DataError> {
    let classes = records.first().map_or(0, |r| r.scores.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["client_id".to_string(), "predicted_label".into(), "true_label".into()];
    header.extend((0..classes).map(|c| format!("score_{c}")));
    w.write_record(&header).map_err(io_err)?;
    for r in records {
        if r.scores.len() != classes {
            return Err(DataError::Config("records disagree on the number of classes".into()));
        }
        let mut row = vec![r.client_id.to_string(), r.predicted_label.to_string(), r.true_label.to_string()];
        row.extend(r.scores.iter().map(|s| s.to_string()));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_regression_csv<W: Write>(writer: W, records: &[RegressionRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r).map_err(io_err)?;
    }
    if records.is_empty() {
        w.write_record(["client_id", "x", "y", "score"]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_regression_csv<R: Read>(reader: R) -> Result<Vec<RegressionRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<RegressionRecord>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| DataError::Ingest { row, reason: e.to_string() })?;
        if ![rec.x, rec.y, rec.score].iter().all(|v| v.is_finite()) {
            return Err(DataError::Ingest {
                row,
                reason: "non-finite value".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Softmax-style scores for a synthetic classifier: the true class gets a
/// logit boost, and clients differ in how confident the classifier is.
pub fn synth_classification(
    clients: &[usize],
    classes: usize,
    seed: u64,
    trial: u64,
) -> Vec<Vec<ClassificationRecord>> {
    assert!(classes >= 2, "need at least two classes");
    clients
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let mut rng = substream(seed, trial, c as u64, Purpose::Scores);
            let boost = 1.0 + c as f64;
            (0..n)
                .map(|_| {
                    let true_label = rng.gen_range(0..classes);
                    let logits: Vec<f64> = (0..classes)
                        .map(|l| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z + if l == true_label { boost } else { 0.0 }
                        })
                        .collect();
                    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exp: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
                    let total: f64 = exp.iter().sum();
                    let predicted = (0..classes)
                        .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
                        .expect("nonempty");
                    ClassificationRecord {
                        client_id: c as u32 + 1,
                        predicted_label: predicted as i64,
                        true_label: true_label as i64,
                        scores: exp.iter().map(|e| 1.0 - e / total).collect(),
                    }
                })
                .collect()
        })
        .collect()
}

/// Converts classification records into datasets keyed on the predicted
/// label, using the true-label score as the calibration score.
pub fn classification_datasets<T: Scalar>(
    records: &[Vec<ClassificationRecord>],
    pi: &[f64],
) -> Result<Vec<ClientDataset<T>>, DataError> {
    if records.len() != pi.len() {
        return Err(DataError::Config(format!(
            "{} clients but {} mixture weights",
            records.len(),
            pi.len()
        )));
    }
    records
        .iter()
        .zip(pi)
        .enumerate()
        .map(|(i, (recs, &p))| {
            ClientDataset::new(
                recs.first().map_or(i as u32 + 1, |r| r.client_id),
                recs.iter().map(|r| Covariate::label(r.predicted_label)).collect(),
                recs.iter().map(|r| T::of(r.true_score())).collect(),
                T::of(p),
            )
            .map_err(|e| DataError::Config(e.to_string()))
        })
        .collect()
}
