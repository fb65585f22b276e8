//! Group-conditional federated conformal prediction.
//!
//! Clients summarize their calibration scores per group atom with mergeable
//! T-Digests; the server merges them into a weighted coreset and runs an
//! augmented quantile regression over group indicators to obtain a
//! threshold for each test point.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are the configurations used by the CLI.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conformal;
pub mod datagen;
pub mod federation;
pub mod groups;
pub mod harness;
pub mod qr;
pub mod scalar;
pub mod simplex;
pub mod tdigest;

pub use conformal::{
    calibrate_baseline, predict_classification, predict_regression, threshold_search, CalibrationInput,
    Calibrator, CalibratorKind, ConformalError, PredictionSet, SearchOptions, Threshold,
};
pub use federation::{run_protocol, ClientDataset, ClientSpec, Coreset, DigestMessage, FederationError};
pub use groups::{membership_vector, AtomKey, Covariate, GroupError, GroupFamily, MembershipVector};
pub use qr::{QrEntry, QrError, QrProblem, QrSolution, QrSolver};
pub use scalar::Scalar;
pub use tdigest::{build_digest, merge, Digest, DigestError, WeightedSample};

pub type Digest64 = Digest<f64>;
pub type Digest32 = Digest<f32>;
pub type GroupFamily64 = GroupFamily<f64>;
pub type ClientDataset64 = ClientDataset<f64>;
pub type QrProblem64 = QrProblem<f64>;
pub type Calibrator64 = Calibrator<f64>;

/// SplitMix64 finalizer.
pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
