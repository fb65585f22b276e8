//! Weighted, mergeable T-Digest with the arcsine scale function.
//!
//! Samples are sorted (stable, ties keep input order) and folded greedily
//! into clusters: a sample joins the current cluster while the scale span
//! `r(q_R) - r(q_L)` of that cluster stays at most one, where
//! `r(q) = delta / (2 pi) * asin(2q - 1)`. A cluster therefore never holds
//! more than `sin(pi / delta)` of the total mass unless a single sample
//! already exceeds it.
//!
//! Merging concatenates the clusters of all inputs and reruns the same
//! greedy pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DigestError {
    #[error("quantile {0} outside [0, 1]")]
    QuantileOutOfRange(f64),
    #[error("probability level {0} outside (0, 1]")]
    LevelOutOfRange(f64),
    #[error("compression must be >= {min}, got {got}")]
    InvalidCompression { got: f64, min: f64 },
    #[error("no samples")]
    Empty,
    #[error("sample {index} has nonpositive weight {weight}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("cluster {index} breaks ascending mean order")]
    Unsorted { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample<T> {
    pub value: T,
    pub weight: T,
}

impl<T> WeightedSample<T> {
    pub fn new(value: T, weight: T) -> Self {
        Self { value, weight }
    }
}

/// A cluster representative: weighted mean of its samples and their mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(T, T)", into = "(T, T)")]
pub struct Cluster<T: Copy> {
    pub mean: T,
    pub weight: T,
}

impl<T: Copy> From<(T, T)> for Cluster<T> {
    fn from((mean, weight): (T, T)) -> Self {
        Self { mean, weight }
    }
}

impl<T: Copy> From<Cluster<T>> for (T, T) {
    fn from(c: Cluster<T>) -> Self {
        (c.mean, c.weight)
    }
}

/// Arcsine scale function `delta / (2 pi) * asin(2q - 1)`.
pub fn scale<T: Scalar>(q: T, delta: T) -> Result<T, DigestError> {
    if !(q >= T::zero() && q <= T::one()) {
        return Err(DigestError::QuantileOutOfRange(q.as_f64()));
    }
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(DigestError::InvalidCompression {
            got: delta.as_f64(),
            min: 0.0,
        });
    }
    Ok(scale_unchecked(q, delta))
}

#[inline]
fn scale_unchecked<T: Scalar>(q: T, delta: T) -> T {
    let two = T::one() + T::one();
    let arg = (two * q - T::one()).max(-T::one()).min(T::one());
    delta / (two * T::PI()) * arg.asin()
}

/// Ordered cluster summary of a weighted sample.
///
/// Equality compares the transmitted content (compression and clusters);
/// `total_weight` is derived bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DigestRepr<T>", into = "DigestRepr<T>", bound = "T: Scalar")]
pub struct Digest<T: Scalar> {
    clusters: Vec<Cluster<T>>,
    compression: T,
    total_weight: T,
}

impl<T: Scalar> PartialEq for Digest<T> {
    fn eq(&self, other: &Self) -> bool {
        self.compression == other.compression && self.clusters == other.clusters
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct DigestRepr<T: Scalar> {
    compression: T,
    clusters: Vec<Cluster<T>>,
}

impl<T: Scalar> TryFrom<DigestRepr<T>> for Digest<T> {
    type Error = DigestError;

    fn try_from(repr: DigestRepr<T>) -> Result<Self, Self::Error> {
        Digest::from_clusters(repr.clusters, repr.compression)
    }
}

impl<T: Scalar> From<Digest<T>> for DigestRepr<T> {
    fn from(d: Digest<T>) -> Self {
        DigestRepr {
            compression: d.compression,
            clusters: d.clusters,
        }
    }
}

fn check_compression<T: Scalar>(delta: T) -> Result<(), DigestError> {
    let min = T::one() + T::one();
    if !(delta >= min) || !delta.is_finite() {
        return Err(DigestError::InvalidCompression {
            got: delta.as_f64(),
            min: 2.0,
        });
    }
    Ok(())
}

impl<T: Scalar> Digest<T> {
    /// Rebuilds a digest from already-formed clusters, validating order and
    /// weights. Used by deserialization.
    pub fn from_clusters(clusters: Vec<Cluster<T>>, compression: T) -> Result<Self, DigestError> {
        check_compression(compression)?;
        if clusters.is_empty() {
            return Err(DigestError::Empty);
        }
        for (index, c) in clusters.iter().enumerate() {
            if !c.mean.is_finite() || !c.weight.is_finite() {
                return Err(DigestError::NonFinite { index });
            }
            if !(c.weight > T::zero()) {
                return Err(DigestError::NonPositiveWeight {
                    index,
                    weight: c.weight.as_f64(),
                });
            }
            if index > 0 && clusters[index - 1].mean > c.mean {
                return Err(DigestError::Unsorted { index });
            }
        }
        let total_weight = clusters.iter().fold(T::zero(), |acc, c| acc + c.weight);
        Ok(Self {
            clusters,
            compression,
            total_weight,
        })
    }

    pub fn clusters(&self) -> &[Cluster<T>] {
        &self.clusters
    }

    pub fn compression(&self) -> T {
        self.compression
    }

    pub fn total_weight(&self) -> T {
        self.total_weight
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Step-function CDF estimate: share of mass in clusters with mean <= t.
    pub fn approx_cdf(&self, t: T) -> T {
        let idx = self.clusters.partition_point(|c| c.mean <= t);
        if idx == self.clusters.len() {
            return T::one();
        }
        let below = self.clusters[..idx]
            .iter()
            .fold(T::zero(), |acc, c| acc + c.weight);
        below / self.total_weight
    }

    /// Smallest cluster mean whose cumulative mass reaches `u`.
    pub fn approx_quantile(&self, u: T) -> Result<T, DigestError> {
        if !(u > T::zero() && u <= T::one()) {
            return Err(DigestError::LevelOutOfRange(u.as_f64()));
        }
        let target = u * self.total_weight;
        let mut cum = T::zero();
        for c in &self.clusters {
            cum = cum + c.weight;
            if cum >= target {
                return Ok(c.mean);
            }
        }
        // Rounding left the running sum a hair below the total.
        Ok(self.clusters[self.clusters.len() - 1].mean)
    }

    /// Largest normalized cluster mass `max_c W_c / W`.
    pub fn max_cluster_mass(&self) -> T {
        self.clusters
            .iter()
            .map(|c| c.weight / self.total_weight)
            .fold(T::zero(), T::max)
    }

    /// `sin(pi / delta)`: the per-cluster mass cap of the greedy pass. A
    /// single sample heavier than this forms its own cluster and exceeds it.
    pub fn mass_bound(&self) -> T {
        (T::PI() / self.compression).sin()
    }
}

/// Builds a digest from weighted samples at compression `delta`.
pub fn build_digest<T: Scalar>(
    samples: &[WeightedSample<T>],
    delta: T,
) -> Result<Digest<T>, DigestError> {
    check_compression(delta)?;
    if samples.is_empty() {
        return Err(DigestError::Empty);
    }
    let mut total = T::zero();
    for (index, s) in samples.iter().enumerate() {
        if !s.value.is_finite() || !s.weight.is_finite() {
            return Err(DigestError::NonFinite { index });
        }
        if !(s.weight > T::zero()) {
            return Err(DigestError::NonPositiveWeight {
                index,
                weight: s.weight.as_f64(),
            });
        }
        total = total + s.weight;
    }
    let mut sorted = samples.to_vec();
    // `sort_by` is stable, so equal values keep their input order.
    sorted.sort_by(|a, b| a.value.partial_cmp(&b.value).expect("finite values"));
    Ok(Digest {
        clusters: greedy_clusters(&sorted, total, delta),
        compression: delta,
        total_weight: total,
    })
}

fn greedy_clusters<T: Scalar>(sorted: &[WeightedSample<T>], total: T, delta: T) -> Vec<Cluster<T>> {
    let mut clusters = Vec::new();
    let mut left_mass = T::zero();
    let mut left_scale = scale_unchecked(T::zero(), delta);
    let mut current = Cluster {
        mean: sorted[0].value,
        weight: sorted[0].weight,
    };
    let mut lowest = sorted[0].value;

    for s in &sorted[1..] {
        let q_right = ((left_mass + current.weight + s.weight) / total).min(T::one());
        if scale_unchecked(q_right, delta) - left_scale <= T::one() {
            current.weight = current.weight + s.weight;
            current.mean = current.mean + (s.value - current.mean) * (s.weight / current.weight);
            current.mean = current.mean.max(lowest).min(s.value);
        } else {
            left_mass = left_mass + current.weight;
            left_scale = scale_unchecked((left_mass / total).min(T::one()), delta);
            clusters.push(current);
            current = Cluster {
                mean: s.value,
                weight: s.weight,
            };
            lowest = s.value;
        }
    }
    clusters.push(current);
    clusters
}

/// Merges digests by re-clustering the union of their clusters at `delta`.
pub fn merge<T: Scalar>(digests: &[&Digest<T>], delta: T) -> Result<Digest<T>, DigestError> {
    check_compression(delta)?;
    if digests.is_empty() {
        return Err(DigestError::Empty);
    }
    let mut pooled = Vec::with_capacity(digests.iter().map(|d| d.len()).sum());
    let mut total = T::zero();
    for d in digests {
        total = total + d.total_weight;
        pooled.extend(d.clusters.iter().map(|c| WeightedSample::new(c.mean, c.weight)));
    }
    if pooled.is_empty() {
        return Err(DigestError::Empty);
    }
    pooled.sort_by(|a, b| a.value.partial_cmp(&b.value).expect("finite means"));
    Ok(Digest {
        clusters: greedy_clusters(&pooled, total, delta),
        compression: delta,
        total_weight: total,
    })
}
