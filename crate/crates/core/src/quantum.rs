//! Fidelity algebra for entangled pairs and computation-qubit accounting.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rounds after which purification is declared infeasible.
pub const DEFAULT_ROUND_CAP: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("fidelity {0} outside [0, 1]")]
    FidelityOutOfRange(f64),
    #[error("invalid fidelity distribution: {0}")]
    InvalidDistribution(&'static str),
    #[error("target fidelity {target} unreachable from {initial}")]
    InfeasibleTarget { initial: f64, target: f64 },
    #[error("cannot compress {n} qubits into {k}")]
    InvalidCompression { n: u32, k: u32 },
}

/// Fidelity of an entangled pair, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fidelity(f64);

impl Fidelity {
    pub const PERFECT: Fidelity = Fidelity(1.0);

    pub fn new(value: f64) -> Result<Self, QuantumError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(QuantumError::FidelityOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Pairs at or below 0.5 carry no usable entanglement.
    pub fn is_usable(self) -> bool {
        self.0 > 0.5
    }
}

/// Gaussian fidelity model clamped to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityDistribution {
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for FidelityDistribution {
    fn default() -> Self {
        Self { mean: 0.85, std: 0.05, lo: 0.6, hi: 0.99 }
    }
}

impl FidelityDistribution {
    pub fn fixed(value: f64) -> Self {
        Self { mean: value, std: 0.0, lo: value, hi: value }
    }

    pub fn validate(&self) -> Result<(), QuantumError> {
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(QuantumError::InvalidDistribution("std must be finite and >= 0"));
        }
        if !(0.0 <= self.lo && self.lo <= self.mean && self.mean <= self.hi && self.hi <= 1.0) {
            return Err(QuantumError::InvalidDistribution("need 0 <= lo <= mean <= hi <= 1"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Fidelity {
        let z: f64 = rng.sample(StandardNormal);
        Fidelity((self.mean + self.std * z).clamp(self.lo, self.hi))
    }
}

/// Outcome of one symmetric purification attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Purified {
    pub fidelity: Fidelity,
    pub success_probability: f64,
}

/// Distills two pairs of fidelity `f` into one.
///
/// `f' = f^2 / (f^2 + (1-f)^2)`, succeeding with probability
/// `f^2 + (1-f)^2`. Both input pairs are consumed either way.
pub fn purify_once(f: Fidelity) -> Purified {
    let good = f.0 * f.0;
    let bad = (1.0 - f.0) * (1.0 - f.0);
    let p = good + bad;
    Purified { fidelity: Fidelity(good / p), success_probability: p }
}

/// Smallest number of purification rounds that lifts `initial` to at least
/// `target`, or `None` when the target is out of reach within `cap` rounds.
pub fn purification_rounds(initial: Fidelity, target: Fidelity, cap: u32) -> Option<u32> {
    if initial.0 >= target.0 {
        return Some(0);
    }
    if !initial.is_usable() {
        return None;
    }
    let mut f = initial;
    for round in 1..=cap {
        f = purify_once(f).fidelity;
        if f.0 >= target.0 {
            return Some(round);
        }
    }
    None
}

/// Expected raw pairs spent to deliver one pair at `target`, under the
/// pairwise tournament model: each round doubles the pairs and failed
/// attempts are retried, so round `i` costs `2 / p_i`.
pub fn expected_pairs_consumed(initial: Fidelity, target: Fidelity, cap: u32) -> Result<f64, QuantumError> {
    let rounds = purification_rounds(initial, target, cap)
        .ok_or(QuantumError::InfeasibleTarget { initial: initial.0, target: target.0 })?;
    let mut f = initial;
    let mut pairs = 1.0;
    for _ in 0..rounds {
        let step = purify_once(f);
        pairs *= 2.0 / step.success_probability;
        f = step.fidelity;
    }
    Ok(pairs)
}

/// Physical qubits needed by an `n -> k` quantum autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitDemand {
    pub n: u32,
    pub k: u32,
    pub total: u32,
}

/// `n` input qubits, `n - k` reference qubits and one auxiliary qubit.
pub fn autoencoder_qubit_requirement(n: u32, k: u32) -> Result<QubitDemand, QuantumError> {
    if k == 0 || k > n {
        return Err(QuantumError::InvalidCompression { n, k });
    }
    Ok(QubitDemand { n, k, total: 2 * n - k + 1 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packing {
    /// `nodes[i]` hosts demand `i`.
    Placed { nodes: Vec<usize> },
    Infeasible { unplaced: Vec<u32> },
}

impl Packing {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Packing::Placed { .. })
    }
}

/// First-fit-decreasing placement of qubit demands onto node capacities.
pub fn pack_qubits(demands: &[u32], capacities: &[u32]) -> Packing {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| demands[b].cmp(&demands[a]));

    let mut residual = capacities.to_vec();
    let mut nodes = vec![usize::MAX; demands.len()];
    let mut unplaced = Vec::new();
    for i in order {
        match residual.iter().position(|&free| free >= demands[i]) {
            Some(node) => {
                residual[node] -= demands[i];
                nodes[i] = node;
            }
            None => unplaced.push(demands[i]),
        }
    }
    if unplaced.is_empty() {
        Packing::Placed { nodes }
    } else {
        Packing::Infeasible { unplaced }
    }
}
