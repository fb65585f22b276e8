//! In-process simulation of the one-shot client/server calibration
//! protocol.
//!
//! Each client splits its scores by atom (membership pattern), builds one
//! digest per atom with equal weights `pi_k / (n_k + 1)` and sends one JSON
//! line per digest. The server parses those lines, merges all digests of
//! the same atom at the same compression and tags the merged clusters with
//! their atom to form the coreset. Messages cross the boundary as bytes,
//! so [`comm_bytes`] measures exactly what is transmitted.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groups::{atom_feature, membership_vector, AtomKey, Covariate, GroupError, GroupFamily, MembershipVector};
use crate::scalar::Scalar;
use crate::tdigest::{build_digest, merge, Cluster, Digest, DigestError, WeightedSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Digest(#[from] DigestError),
    #[error("invalid client dataset: {0}")]
    Dataset(String),
    #[error("message line {line}: {reason}")]
    Wire { line: usize, reason: String },
    #[error("atom {atom} has {got} groups, expected {expected}")]
    DimensionMismatch {
        atom: String,
        expected: usize,
        got: usize,
    },
    #[error("mixture weights sum to {0}, expected 1")]
    MixtureSum(f64),
    #[error("message from unknown client {0}")]
    UnknownClient(u32),
    #[error("no messages to assemble")]
    NoMessages,
}

/// Per-client entry of the federation configuration: `{id, n, pi}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: u32,
    pub n: usize,
    pub pi: f64,
}

/// Weight `sum_k pi_k / (n_k + 1)` of the hypothesized test entry.
pub fn test_weight<T: Scalar>(clients: &[ClientSpec]) -> T {
    clients
        .iter()
        .fold(T::zero(), |acc, c| acc + T::of(c.pi) / T::of(c.n as f64 + 1.0))
}

/// Coreset mass `sum_k pi_k n_k / (n_k + 1)`.
pub fn expected_total_weight<T: Scalar>(clients: &[ClientSpec]) -> T {
    clients.iter().fold(T::zero(), |acc, c| {
        acc + T::of(c.pi) * T::of(c.n as f64) / T::of(c.n as f64 + 1.0)
    })
}

pub fn check_mixture(clients: &[ClientSpec]) -> Result<(), FederationError> {
    let sum: f64 = clients.iter().map(|c| c.pi).sum();
    if (sum - 1.0).abs() > 1e-9 || clients.iter().any(|c| !(0.0..=1.0).contains(&c.pi)) {
        return Err(FederationError::MixtureSum(sum));
    }
    Ok(())
}

/// Local calibration data of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset<T> {
    pub client_id: u32,
    pub covariates: Vec<Covariate<T>>,
    pub scores: Vec<T>,
    pub pi: T,
}

impl<T: Scalar> ClientDataset<T> {
    pub fn new(
        client_id: u32,
        covariates: Vec<Covariate<T>>,
        scores: Vec<T>,
        pi: T,
    ) -> Result<Self, FederationError> {
        if covariates.len() != scores.len() {
            return Err(FederationError::Dataset(format!(
                "client {client_id}: {} covariates but {} scores",
                covariates.len(),
                scores.len()
            )));
        }
        if !(pi >= T::zero() && pi <= T::one()) {
            return Err(FederationError::Dataset(format!(
                "client {client_id}: mixture weight {pi} outside [0, 1]"
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(FederationError::Dataset(format!(
                "client {client_id}: score {i} is not finite"
            )));
        }
        Ok(Self {
            client_id,
            covariates,
            scores,
            pi,
        })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// Equal per-sample weight `pi_k / (n_k + 1)`.
    pub fn sample_weight(&self) -> T {
        self.pi / T::of(self.n() as f64 + 1.0)
    }

    pub fn spec(&self) -> ClientSpec {
        ClientSpec {
            id: self.client_id,
            n: self.n(),
            pi: self.pi.as_f64(),
        }
    }
}

/// One client's digest for one atom.
#[derive(Debug, Clone, PartialEq)]
pub struct DigestMessage<T: Scalar> {
    pub client_id: u32,
    pub atom: AtomKey,
    pub digest: Digest<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct WireMessage<T: Scalar> {
    client_id: u32,
    atom: AtomKey,
    compression: T,
    clusters: Vec<Cluster<T>>,
}

impl<T: Scalar> DigestMessage<T> {
    /// `{"client_id": int, "atom": "1100", "compression": num, "clusters": [[mean, weight], ...]}`
    pub fn to_line(&self) -> String {
        let wire = WireMessage {
            client_id: self.client_id,
            atom: self.atom.clone(),
            compression: self.digest.compression(),
            clusters: self.digest.clusters().to_vec(),
        };
        serde_json::to_string(&wire).expect("finite digest serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let wire: WireMessage<T> = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let digest = Digest::from_clusters(wire.clusters, wire.compression).map_err(|e| e.to_string())?;
        Ok(Self {
            client_id: wire.client_id,
            atom: wire.atom,
            digest,
        })
    }
}

/// Newline-terminated JSON lines.
pub fn encode_messages<T: Scalar>(messages: &[DigestMessage<T>]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str(&m.to_line());
        out.push('\n');
    }
    out
}

pub fn decode_messages<T: Scalar>(text: &str) -> Result<Vec<DigestMessage<T>>, FederationError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            DigestMessage::from_line(l).map_err(|reason| FederationError::Wire { line: i + 1, reason })
        })
        .collect()
}

/// Total transmitted bytes (one JSON line plus newline per message).
pub fn comm_bytes<T: Scalar>(messages: &[DigestMessage<T>]) -> usize {
    messages.iter().map(|m| m.to_line().len() + 1).sum()
}

/// Splits a client's scores by the atom of their covariates.
pub fn client_stratify<T: Scalar>(
    dataset: &ClientDataset<T>,
    family: &GroupFamily<T>,
) -> Result<BTreeMap<AtomKey, Vec<T>>, FederationError> {
    let mut strata: BTreeMap<AtomKey, Vec<T>> = BTreeMap::new();
    for (x, &s) in dataset.covariates.iter().zip(&dataset.scores) {
        let key = AtomKey::new(membership_vector(x, family)?)?;
        strata.entry(key).or_default().push(s);
    }
    Ok(strata)
}

/// One message per non-empty atom of the client.
pub fn client_build_messages<T: Scalar>(
    dataset: &ClientDataset<T>,
    family: &GroupFamily<T>,
    delta: T,
) -> Result<Vec<DigestMessage<T>>, FederationError> {
    let w = dataset.sample_weight();
    client_stratify(dataset, family)?
        .into_iter()
        .map(|(atom, scores)| {
            let samples: Vec<_> = scores.iter().map(|&s| WeightedSample::new(s, w)).collect();
            Ok(DigestMessage {
                client_id: dataset.client_id,
                atom,
                digest: build_digest(&samples, delta)?,
            })
        })
        .collect()
}

/// Server-side union of the per-atom merged digests.
#[derive(Debug, Clone, PartialEq)]
pub struct Coreset<T: Scalar> {
    atoms: Vec<AtomKey>,
    entries: Vec<CoresetEntry<T>>,
    per_atom_digests: BTreeMap<AtomKey, Digest<T>>,
    dimension: usize,
}

/// Coreset triple `(atom, mean score, weight)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoresetEntry<T> {
    pub atom: AtomKey,
    pub mean_score: T,
    pub weight: T,
}

impl<T> CoresetEntry<T> {
    pub fn atom_feature(&self) -> &MembershipVector {
        atom_feature(&self.atom)
    }
}

impl<T: Scalar> Coreset<T> {
    /// Entries grouped by atom (lexicographic), ascending mean within atom.
    pub fn entries(&self) -> &[CoresetEntry<T>] {
        &self.entries
    }

    pub fn atoms(&self) -> &[AtomKey] {
        &self.atoms
    }

    pub fn per_atom_digests(&self) -> &BTreeMap<AtomKey, Digest<T>> {
        &self.per_atom_digests
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> T {
        self.per_atom_digests
            .values()
            .fold(T::zero(), |acc, d| acc + d.total_weight())
    }
}

/// Merges every atom's client digests at compression `delta`.
pub fn server_assemble<T: Scalar>(
    messages: &[DigestMessage<T>],
    delta: T,
    clients: &[ClientSpec],
) -> Result<Coreset<T>, FederationError> {
    check_mixture(clients)?;
    let first = messages.first().ok_or(FederationError::NoMessages)?;
    let dimension = first.atom.dimension();
    let mut by_atom: BTreeMap<AtomKey, Vec<&Digest<T>>> = BTreeMap::new();
    for m in messages {
        if !clients.iter().any(|c| c.id == m.client_id) {
            return Err(FederationError::UnknownClient(m.client_id));
        }
        if m.atom.dimension() != dimension {
            return Err(FederationError::DimensionMismatch {
                atom: m.atom.to_string(),
                expected: dimension,
                got: m.atom.dimension(),
            });
        }
        by_atom.entry(m.atom.clone()).or_default().push(&m.digest);
    }
    let mut atoms = Vec::with_capacity(by_atom.len());
    let mut entries = Vec::new();
    let mut per_atom_digests = BTreeMap::new();
    for (atom, digests) in by_atom {
        let merged = merge(&digests, delta)?;
        entries.extend(merged.clusters().iter().map(|c| CoresetEntry {
            atom: atom.clone(),
            mean_score: c.mean,
            weight: c.weight,
        }));
        atoms.push(atom.clone());
        per_atom_digests.insert(atom, merged);
    }
    Ok(Coreset {
        atoms,
        entries,
        per_atom_digests,
        dimension,
    })
}

/// Outcome of a full protocol round.
#[derive(Debug, Clone)]
pub struct ProtocolRun<T: Scalar> {
    pub coreset: Coreset<T>,
    pub messages: usize,
    pub bytes: usize,
}

/// Clients build and serialize their messages (in parallel); the server
/// parses the bytes and assembles the coreset.
pub fn run_protocol<T: Scalar>(
    datasets: &[ClientDataset<T>],
    family: &GroupFamily<T>,
    delta: T,
) -> Result<ProtocolRun<T>, FederationError> {
    let payloads: Vec<String> = datasets
        .par_iter()
        .map(|d| client_build_messages(d, family, delta).map(|m| encode_messages(&m)))
        .collect::<Result<_, _>>()?;
    let wire: String = payloads.concat();
    let messages = decode_messages::<T>(&wire)?;
    let specs: Vec<ClientSpec> = datasets.iter().map(|d| d.spec()).collect();
    let coreset = server_assemble(&messages, delta, &specs)?;
    Ok(ProtocolRun {
        coreset,
        messages: messages.len(),
        bytes: wire.len(),
    })
}
