//! Group-membership features over a finite, possibly overlapping family of
//! groups, and the atoms (distinct membership patterns) they induce.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("covariate {covariate} lies outside every group")]
    CoveringViolation { covariate: String },
    #[error("covariate has no feature {0}")]
    MissingFeature(String),
    #[error("group family is empty")]
    EmptyFamily,
    #[error("invalid group family: {0}")]
    Config(String),
    #[error("invalid membership pattern {0:?}")]
    BadPattern(String),
}

/// A test or calibration input: numeric features plus an optional
/// predicted label (for classification groupings).
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate<T> {
    pub features: Vec<T>,
    pub predicted_label: Option<i64>,
}

impl<T> Covariate<T> {
    pub fn scalar(x: T) -> Self {
        Self {
            features: vec![x],
            predicted_label: None,
        }
    }

    pub fn label(label: i64) -> Self {
        Self {
            features: Vec::new(),
            predicted_label: Some(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSelector {
    Index(usize),
    Named(NamedFeature),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedFeature {
    PredictedLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Group<T> {
    Interval {
        lo: T,
        hi: T,
        lo_closed: bool,
        hi_closed: bool,
    },
    LabelSet(BTreeSet<i64>),
}

impl<T: Scalar> Group<T> {
    /// Closed interval `[lo, hi]`.
    pub fn closed(lo: T, hi: T) -> Self {
        Group::Interval {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    pub fn labels<I: IntoIterator<Item = i64>>(labels: I) -> Self {
        Group::LabelSet(labels.into_iter().collect())
    }

    fn contains_value(&self, x: T) -> bool {
        match *self {
            Group::Interval {
                lo,
                hi,
                lo_closed,
                hi_closed,
            } => {
                let above = if lo_closed { x >= lo } else { x > lo };
                let below = if hi_closed { x <= hi } else { x < hi };
                above && below
            }
            Group::LabelSet(_) => false,
        }
    }
}

/// Ordered group family; group order fixes bit positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFamily<T> {
    groups: Vec<Group<T>>,
    feature: FeatureSelector,
}

impl<T: Scalar> GroupFamily<T> {
    pub fn new(groups: Vec<Group<T>>, feature: FeatureSelector) -> Result<Self, GroupError> {
        if groups.is_empty() {
            return Err(GroupError::EmptyFamily);
        }
        let interval = groups.iter().all(|g| matches!(g, Group::Interval { .. }));
        let labels = groups.iter().all(|g| matches!(g, Group::LabelSet(_)));
        match (&feature, interval, labels) {
            (FeatureSelector::Index(_), true, _) => {}
            (FeatureSelector::Named(NamedFeature::PredictedLabel), _, true) => {}
            _ => {
                return Err(GroupError::Config(
                    "interval groups need a feature index, label sets need \"predicted_label\""
                        .into(),
                ))
            }
        }
        for g in &groups {
            if let Group::Interval { lo, hi, .. } = g {
                if !(lo <= hi) {
                    return Err(GroupError::Config(format!("interval [{lo}, {hi}] is empty")));
                }
            }
        }
        Ok(Self { groups, feature })
    }

    /// Closed intervals over feature 0.
    pub fn intervals(bounds: &[(T, T)]) -> Result<Self, GroupError> {
        Self::new(
            bounds.iter().map(|&(lo, hi)| Group::closed(lo, hi)).collect(),
            FeatureSelector::Index(0),
        )
    }

    /// Label sets over the predicted label.
    pub fn label_sets(sets: &[&[i64]]) -> Result<Self, GroupError> {
        Self::new(
            sets.iter().map(|s| Group::labels(s.iter().copied())).collect(),
            FeatureSelector::Named(NamedFeature::PredictedLabel),
        )
    }

    /// Single group covering every covariate (the marginal case).
    pub fn trivial() -> Self {
        Self {
            groups: vec![Group::closed(T::neg_infinity(), T::infinity())],
            feature: FeatureSelector::Index(0),
        }
    }

    pub fn groups(&self) -> &[Group<T>] {
        &self.groups
    }

    pub fn feature(&self) -> &FeatureSelector {
        &self.feature
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    fn is_trivial(&self) -> bool {
        matches!(
            self.groups.as_slice(),
            [Group::Interval { lo, hi, .. }] if *lo == T::neg_infinity() && *hi == T::infinity()
        )
    }

    pub fn from_json(text: &str) -> Result<Self, GroupError> {
        let cfg: GroupFamilyConfig =
            serde_json::from_str(text).map_err(|e| GroupError::Config(e.to_string()))?;
        cfg.try_into()
    }

    pub fn to_config(&self) -> GroupFamilyConfig {
        let interval = matches!(self.feature, FeatureSelector::Index(_));
        GroupFamilyConfig {
            kind: if interval {
                FamilyKind::Intervals
            } else {
                FamilyKind::LabelSets
            },
            feature: self.feature.clone(),
            groups: self
                .groups
                .iter()
                .map(|g| match g {
                    Group::Interval {
                        lo,
                        hi,
                        lo_closed,
                        hi_closed,
                    } => GroupConfig::Interval {
                        lo: lo.as_f64(),
                        hi: hi.as_f64(),
                        lo_closed: *lo_closed,
                        hi_closed: *hi_closed,
                    },
                    Group::LabelSet(labels) => GroupConfig::Labels(labels.iter().copied().collect()),
                })
                .collect(),
        }
    }
}

/// JSON form: `{"kind": "intervals"|"label_sets", "feature": <index|"predicted_label">, "groups": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFamilyConfig {
    pub kind: FamilyKind,
    pub feature: FeatureSelector,
    pub groups: Vec<GroupConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Intervals,
    LabelSets,
}

fn closed_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupConfig {
    Interval {
        lo: f64,
        hi: f64,
        #[serde(default = "closed_default")]
        lo_closed: bool,
        #[serde(default = "closed_default")]
        hi_closed: bool,
    },
    Labels(Vec<i64>),
    LabelObject { labels: Vec<i64> },
}

impl<T: Scalar> TryFrom<GroupFamilyConfig> for GroupFamily<T> {
    type Error = GroupError;

    fn try_from(cfg: GroupFamilyConfig) -> Result<Self, GroupError> {
        let mut groups = Vec::with_capacity(cfg.groups.len());
        for g in cfg.groups {
            let group = match (cfg.kind, g) {
                (
                    FamilyKind::Intervals,
                    GroupConfig::Interval {
                        lo,
                        hi,
                        lo_closed,
                        hi_closed,
                    },
                ) => Group::Interval {
                    lo: T::of(lo),
                    hi: T::of(hi),
                    lo_closed,
                    hi_closed,
                },
                (FamilyKind::LabelSets, GroupConfig::Labels(labels))
                | (FamilyKind::LabelSets, GroupConfig::LabelObject { labels }) => {
                    Group::labels(labels)
                }
                (kind, other) => {
                    return Err(GroupError::Config(format!(
                        "group {other:?} does not match kind {kind:?}"
                    )))
                }
            };
            groups.push(group);
        }
        GroupFamily::new(groups, cfg.feature)
    }
}

/// Binary group-membership vector; bit `g` is set iff the covariate lies in
/// group `g`. Orders lexicographically with `0 < 1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MembershipVector(Vec<bool>);

impl MembershipVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, g: usize) -> bool {
        self.0[g]
    }

    pub fn is_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    /// `beta . phi`.
    pub fn dot<T: Scalar>(&self, beta: &[T]) -> T {
        self.0
            .iter()
            .zip(beta)
            .filter(|(b, _)| **b)
            .fold(T::zero(), |acc, (_, &v)| acc + v)
    }
}

impl fmt::Display for MembershipVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for MembershipVector {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(GroupError::BadPattern(s.into()));
        }
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(GroupError::BadPattern(s.into())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(MembershipVector)
    }
}

/// Membership pattern used as an atom identifier; never all-zero.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomKey(MembershipVector);

impl AtomKey {
    pub fn new(pattern: MembershipVector) -> Result<Self, GroupError> {
        if pattern.is_empty() || pattern.is_zero() {
            return Err(GroupError::BadPattern(pattern.to_string()));
        }
        Ok(Self(pattern))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for AtomKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for AtomKey {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AtomKey::new(s.parse()?)
    }
}

impl Serialize for AtomKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AtomKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Feature vector `Phi_A` of an atom: its pattern.
pub fn atom_feature(atom: &AtomKey) -> &MembershipVector {
    &atom.0
}

/// Computes `Phi(x)` and rejects covariates outside every group.
pub fn membership_vector<T: Scalar>(
    x: &Covariate<T>,
    family: &GroupFamily<T>,
) -> Result<MembershipVector, GroupError> {
    let bits: Vec<bool> = if family.is_trivial() {
        vec![true]
    } else {
        match &family.feature {
            FeatureSelector::Index(i) => {
                let v = *x
                    .features
                    .get(*i)
                    .ok_or_else(|| GroupError::MissingFeature(format!("index {i}")))?;
                family.groups.iter().map(|g| g.contains_value(v)).collect()
            }
            FeatureSelector::Named(NamedFeature::PredictedLabel) => {
                let label = x
                    .predicted_label
                    .ok_or_else(|| GroupError::MissingFeature("predicted_label".into()))?;
                family
                    .groups
                    .iter()
                    .map(|g| matches!(g, Group::LabelSet(s) if s.contains(&label)))
                    .collect()
            }
        }
    };
    let phi = MembershipVector(bits);
    if phi.is_zero() {
        let covariate = match (&family.feature, x.predicted_label) {
            (FeatureSelector::Named(_), Some(l)) => format!("predicted_label={l}"),
            (FeatureSelector::Index(i), _) => format!("x[{i}]={}", x.features[*i]),
            _ => format!("{:?}", x.features),
        };
        return Err(GroupError::CoveringViolation { covariate });
    }
    Ok(phi)
}

/// Groups sample indices by membership pattern; only non-empty atoms
/// appear, iterated in lexicographic pattern order.
pub fn enumerate_atoms<T: Scalar>(
    covariates: &[Covariate<T>],
    family: &GroupFamily<T>,
) -> Result<BTreeMap<AtomKey, Vec<usize>>, GroupError> {
    let mut atoms: BTreeMap<AtomKey, Vec<usize>> = BTreeMap::new();
    for (i, x) in covariates.iter().enumerate() {
        let key = AtomKey(membership_vector(x, family)?);
        atoms.entry(key).or_default().push(i);
    }
    Ok(atoms)
}
