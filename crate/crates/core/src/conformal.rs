//! Prediction-set construction.
//!
//! For a test covariate the set is `{y : s(x, y) <= S*}` where `S*` is the
//! largest hypothesized test score whose dual value in the augmented
//! quantile regression stays strictly below its upper box bound
//! `w_test (1 - alpha)`. The dual value is nondecreasing in the hypothesized
//! score, so `S*` is located by bisection with a warm-started solver.
//!
//! Calibrators differ only in the data fed to the regression:
//!
//! | kind                 | entries                           | weights            |
//! |----------------------|-----------------------------------|--------------------|
//! | `centralized_cp`     | none (global order statistic)     | -                  |
//! | `fcp_marginal`       | coreset under a single group      | `pi_k / (n_k + 1)` |
//! | `condcp_centralized` | raw scores                        | `1 / (n + 1)`      |
//! | `gcfcp_centralized`  | raw scores                        | `pi_k / (n_k + 1)` |
//! | `gcfcp_coreset`      | per-atom merged digests           | `pi_k / (n_k + 1)` |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::federation::{run_protocol, test_weight, ClientDataset, ClientSpec, Coreset, FederationError};
use crate::groups::{membership_vector, Covariate, GroupError, GroupFamily, MembershipVector};
use crate::qr::{QrEntry, QrError, QrProblem, QrSolver, SolveOptions};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error(transparent)]
    Qr(#[from] QrError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("alpha {0} outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("negative threshold {0}")]
    NegativeThreshold(f64),
    #[error("search bracket [{lo}, {hi}] with tolerance {tol} is invalid")]
    BadBracket { lo: f64, hi: f64, tol: f64 },
    #[error("no calibration data")]
    InsufficientData,
    #[error("unknown calibrator {0:?}")]
    UnknownKind(String),
}

/// Outcome of a threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold<T> {
    /// Largest admitted score, to within the search tolerance.
    Value(T),
    /// Even the bottom of the bracket is rejected: the set is empty.
    Empty,
    /// The top of the bracket is still admitted; `S*` is reported as the
    /// bracket end (or infinity for order-statistic calibrators).
    Full(T),
}

impl<T: Scalar> Threshold<T> {
    pub fn value(&self) -> Option<T> {
        match *self {
            Threshold::Value(v) | Threshold::Full(v) => Some(v),
            Threshold::Empty => None,
        }
    }

    /// Whether a candidate with score `s` belongs to the set.
    pub fn admits(&self, s: T) -> bool {
        self.value().is_some_and(|v| s <= v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSet<T> {
    /// `[center - radius, center + radius]`.
    Interval { center: T, radius: T },
    LabelSet(BTreeSet<i64>),
    Empty,
}

impl<T: Scalar> PredictionSet<T> {
    pub fn contains_value(&self, y: T) -> bool {
        match *self {
            PredictionSet::Interval { center, radius } => (y - center).abs() <= radius,
            _ => false,
        }
    }

    pub fn contains_label(&self, label: i64) -> bool {
        matches!(self, PredictionSet::LabelSet(s) if s.contains(&label))
    }

    /// Interval length or label count.
    pub fn size(&self) -> T {
        match self {
            PredictionSet::Interval { radius, .. } => *radius + *radius,
            PredictionSet::LabelSet(s) => T::of(s.len() as f64),
            PredictionSet::Empty => T::zero(),
        }
    }
}

/// Interval `[f(x) - S*, f(x) + S*]` for the absolute-residual score.
pub fn predict_regression<T: Scalar>(
    model_prediction: T,
    s_star: T,
) -> Result<PredictionSet<T>, ConformalError> {
    if s_star < T::zero() {
        return Err(ConformalError::NegativeThreshold(s_star.as_f64()));
    }
    Ok(PredictionSet::Interval {
        center: model_prediction,
        radius: s_star,
    })
}

/// Labels whose score is at most `S*`.
pub fn predict_classification<T: Scalar>(
    candidate_scores: &[(i64, T)],
    s_star: T,
) -> PredictionSet<T> {
    PredictionSet::LabelSet(
        candidate_scores
            .iter()
            .filter(|(_, s)| *s <= s_star)
            .map(|(l, _)| *l)
            .collect(),
    )
}

/// Calibration entries of a regression-based calibrator with the weight of
/// the hypothesized test entry.
#[derive(Debug, Clone, PartialEq)]
pub struct QrSource<T> {
    pub calibration: Vec<QrEntry<T>>,
    pub test_weight: T,
}

impl<T: Scalar> QrSource<T> {
    pub fn from_coreset(coreset: &Coreset<T>, test_weight: T) -> Self {
        Self {
            calibration: coreset
                .entries()
                .iter()
                .map(|e| QrEntry::calibration(e.atom_feature().clone(), e.mean_score, e.weight))
                .collect(),
            test_weight,
        }
    }

    /// Default bracket `[min score - 1, max score + 1]`.
    pub fn default_bracket(&self) -> (T, T) {
        let (lo, hi) = self
            .calibration
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), e| {
                (lo.min(e.score), hi.max(e.score))
            });
        (lo - T::one(), hi + T::one())
    }

    pub fn problem(&self, test_feature: MembershipVector, test_score: T, alpha: T) -> Result<QrProblem<T>, QrError> {
        QrProblem::new(
            self.calibration.clone(),
            QrEntry::test(test_feature, test_score, self.test_weight),
            alpha,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions<T> {
    pub tol: T,
    /// Overrides the default bracket.
    pub bracket: Option<(T, T)>,
}

impl<T: Scalar> Default for SearchOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::of(1e-6),
            bracket: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<T> {
    pub threshold: Threshold<T>,
    pub solves: usize,
    pub pivots: usize,
    /// Final bound assignment; a warm-start hint for the next test point.
    pub hint: Vec<bool>,
}

/// Bisection for the largest `S` in `[lo, hi]` whose test dual stays below
/// `w_test (1 - alpha)`.
pub fn threshold_search<T: Scalar>(
    source: &QrSource<T>,
    test_feature: &MembershipVector,
    alpha: T,
    search_lo: T,
    search_hi: T,
    tol: T,
    hint: Option<&[bool]>,
) -> Result<SearchResult<T>, ConformalError> {
    if !(search_lo < search_hi) || !(tol > T::zero()) || !search_lo.is_finite() || !search_hi.is_finite() {
        return Err(ConformalError::BadBracket {
            lo: search_lo.as_f64(),
            hi: search_hi.as_f64(),
            tol: tol.as_f64(),
        });
    }
    let problem = source.problem(test_feature.clone(), search_lo, alpha)?;
    let hint = hint.filter(|h| h.len() == problem.entries().len());
    let mut solver = QrSolver::new(problem, SolveOptions::default(), hint)?;
    let w = source.test_weight;
    let cutoff = w * (T::one() - alpha) - T::of(1e-9) * w;
    let mut solves = 0usize;
    let mut admitted = |solver: &mut QrSolver<T>, s: T| -> Result<bool, ConformalError> {
        solver.set_test_score(s);
        solves += 1;
        Ok(solver.solve()?.eta_test < cutoff)
    };

    let threshold = if !admitted(&mut solver, search_lo)? {
        Threshold::Empty
    } else if admitted(&mut solver, search_hi)? {
        Threshold::Full(search_hi)
    } else {
        let (mut lo, mut hi) = (search_lo, search_hi);
        let two = T::one() + T::one();
        while hi - lo > tol {
            let mid = lo + (hi - lo) / two;
            if mid <= lo || mid >= hi {
                break;
            }
            if admitted(&mut solver, mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Threshold::Value(lo)
    };
    Ok(SearchResult {
        threshold,
        solves,
        pivots: solver.pivots(),
        hint: solver.bound_hint(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratorKind {
    CentralizedCp,
    FcpMarginal,
    CondcpCentralized,
    GcfcpCentralized,
    GcfcpCoreset,
}

impl CalibratorKind {
    pub const ALL: [CalibratorKind; 5] = [
        CalibratorKind::CentralizedCp,
        CalibratorKind::FcpMarginal,
        CalibratorKind::CondcpCentralized,
        CalibratorKind::GcfcpCentralized,
        CalibratorKind::GcfcpCoreset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CalibratorKind::CentralizedCp => "centralized_cp",
            CalibratorKind::FcpMarginal => "fcp_marginal",
            CalibratorKind::CondcpCentralized => "condcp_centralized",
            CalibratorKind::GcfcpCentralized => "gcfcp_centralized",
            CalibratorKind::GcfcpCoreset => "gcfcp_coreset",
        }
    }

    /// Whether the calibrator consumes digests (and so depends on delta).
    pub fn uses_digests(self) -> bool {
        matches!(self, CalibratorKind::FcpMarginal | CalibratorKind::GcfcpCoreset)
    }
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CalibratorKind {
    type Err = ConformalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CalibratorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConformalError::UnknownKind(s.to_string()))
    }
}

/// Calibration data shared by every calibrator kind.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationInput<'a, T> {
    pub family: &'a GroupFamily<T>,
    pub clients: &'a [ClientDataset<T>],
    pub alpha: T,
    pub delta: T,
}

/// A calibrated set constructor.
#[derive(Debug, Clone)]
pub enum Calibrator<T: Scalar> {
    /// One threshold for every test point.
    Global { threshold: Threshold<T>, bytes: usize },
    /// Augmented quantile regression per test point.
    Regression {
        source: QrSource<T>,
        family: GroupFamily<T>,
        alpha: T,
        bytes: usize,
    },
}

impl<T: Scalar> Calibrator<T> {
    /// Bytes the calibrator needed to move to the server.
    pub fn comm_bytes(&self) -> usize {
        match self {
            Calibrator::Global { bytes, .. } | Calibrator::Regression { bytes, .. } => *bytes,
        }
    }

    /// Threshold `S*` for a test covariate.
    pub fn threshold(
        &self,
        x: &Covariate<T>,
        options: &SearchOptions<T>,
        hint: Option<&[bool]>,
    ) -> Result<SearchResult<T>, ConformalError> {
        match self {
            Calibrator::Global { threshold, .. } => Ok(SearchResult {
                threshold: *threshold,
                solves: 0,
                pivots: 0,
                hint: Vec::new(),
            }),
            Calibrator::Regression {
                source,
                family,
                alpha,
                ..
            } => {
                let phi = membership_vector(x, family)?;
                let (lo, hi) = options.bracket.unwrap_or_else(|| source.default_bracket());
                threshold_search(source, &phi, *alpha, lo, hi, options.tol, hint)
            }
        }
    }
}

/// `ceil((1 - alpha)(n + 1))`-th smallest pooled score; `Full(inf)` when
/// the rank exceeds `n`.
pub fn split_conformal_threshold<T: Scalar>(scores: &[T], alpha: T) -> Result<Threshold<T>, ConformalError> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(ConformalError::InvalidAlpha(alpha.as_f64()));
    }
    if scores.is_empty() {
        return Err(ConformalError::InsufficientData);
    }
    let n = scores.len();
    let rank = ((T::one() - alpha) * T::of(n as f64 + 1.0)).ceil().to_usize().unwrap_or(usize::MAX);
    if rank > n {
        return Ok(Threshold::Full(T::infinity()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    Ok(Threshold::Value(sorted[rank.max(1) - 1]))
}

/// Bytes to ship every raw score with its client and membership pattern.
fn raw_bytes<T: Scalar>(entries: &[(u32, &MembershipVector, T)]) -> usize {
    entries
        .iter()
        .map(|(id, phi, s)| {
            serde_json::json!({"client_id": id, "atom": phi.to_string(), "score": s.as_f64()})
                .to_string()
                .len()
                + 1
        })
        .sum()
}

/// Builds the calibrator of the given kind.
pub fn calibrate_baseline<T: Scalar>(
    kind: CalibratorKind,
    input: &CalibrationInput<'_, T>,
) -> Result<Calibrator<T>, ConformalError> {
    let alpha = input.alpha;
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(ConformalError::InvalidAlpha(alpha.as_f64()));
    }
    let n: usize = input.clients.iter().map(|c| c.n()).sum();
    if n == 0 {
        return Err(ConformalError::InsufficientData);
    }
    let specs: Vec<ClientSpec> = input.clients.iter().map(|c| c.spec()).collect();
    match kind {
        CalibratorKind::CentralizedCp => {
            let pooled: Vec<T> = input.clients.iter().flat_map(|c| c.scores.iter().copied()).collect();
            let one = MembershipVector::new(vec![true]);
            let raw: Vec<_> = input
                .clients
                .iter()
                .flat_map(|c| c.scores.iter().map(|&s| (c.client_id, &one, s)))
                .collect();
            Ok(Calibrator::Global {
                threshold: split_conformal_threshold(&pooled, alpha)?,
                bytes: raw_bytes(&raw),
            })
        }
        CalibratorKind::FcpMarginal | CalibratorKind::GcfcpCoreset => {
            let family = if kind == CalibratorKind::FcpMarginal {
                GroupFamily::trivial()
            } else {
                input.family.clone()
            };
            let run = run_protocol(input.clients, &family, input.delta)?;
            Ok(Calibrator::Regression {
                source: QrSource::from_coreset(&run.coreset, test_weight(&specs)),
                family,
                alpha,
                bytes: run.bytes,
            })
        }
        CalibratorKind::CondcpCentralized | CalibratorKind::GcfcpCentralized => {
            let mut calibration = Vec::with_capacity(n);
            let mut features = Vec::with_capacity(n);
            for c in input.clients {
                let w = if kind == CalibratorKind::CondcpCentralized {
                    T::one() / T::of(n as f64 + 1.0)
                } else {
                    c.sample_weight()
                };
                for (x, &s) in c.covariates.iter().zip(&c.scores) {
                    let phi = membership_vector(x, input.family)?;
                    features.push((c.client_id, phi.clone(), s));
                    calibration.push(QrEntry::calibration(phi, s, w));
                }
            }
            let test_weight = if kind == CalibratorKind::CondcpCentralized {
                T::one() / T::of(n as f64 + 1.0)
            } else {
                test_weight(&specs)
            };
            let raw: Vec<_> = features.iter().map(|(id, phi, s)| (*id, phi, *s)).collect();
            Ok(Calibrator::Regression {
                source: QrSource {
                    calibration,
                    test_weight,
                },
                family: input.family.clone(),
                alpha,
                bytes: raw_bytes(&raw),
            })
        }
    }
}
