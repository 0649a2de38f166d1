//! Quantum-autoencoder workloads and the latency/energy cost of splitting
//! one between its origin and a remote node.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NodeId, NodeSpec, PathMetrics};
use crate::quantum::{autoencoder_qubit_requirement, QubitDemand};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("offload fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("offload fraction {0} > 0 requires a remote node")]
    MissingRemote(f64),
    #[error("route has no secret-key capacity for {bits} key bits")]
    KeyStarvation { bits: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: u64,
    pub origin: NodeId,
    /// Input-register qubits.
    pub n: u32,
    /// Latent qubits.
    pub k: u32,
    /// Work units (circuit depth times shots).
    pub work: f64,
    pub payload_bits: f64,
    /// Secret-key bits consumed per offloaded payload bit.
    pub key_ratio: f64,
}

impl TaskSpec {
    pub fn demand(&self) -> QubitDemand {
        autoencoder_qubit_requirement(self.n, self.k).expect("task ranges keep k <= n")
    }
}

/// Inclusive ranges for generated tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub n_min: u32,
    pub n_max: u32,
    pub k_min: u32,
    pub k_max: u32,
    pub depth_min: u32,
    pub depth_max: u32,
    pub shots_min: u32,
    pub shots_max: u32,
    pub payload_min: f64,
    pub payload_max: f64,
    pub key_ratio: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            n_min: 6,
            n_max: 9,
            k_min: 3,
            k_max: 5,
            depth_min: 100,
            depth_max: 300,
            shots_min: 500,
            shots_max: 1500,
            payload_min: 1000.0,
            payload_max: 4000.0,
            key_ratio: 1.0,
        }
    }
}

impl TaskConfig {
    /// A configuration that always yields the same task.
    pub fn fixed(n: u32, k: u32, depth: u32, shots: u32, payload: f64, key_ratio: f64) -> Self {
        Self {
            n_min: n,
            n_max: n,
            k_min: k,
            k_max: k,
            depth_min: depth,
            depth_max: depth,
            shots_min: shots,
            shots_max: shots,
            payload_min: payload,
            payload_max: payload,
            key_ratio,
        }
    }

    /// Largest qubit demand any generated task can have.
    pub fn max_demand(&self) -> u32 {
        2 * self.n_max - self.k_min + 1
    }

    pub fn max_work(&self) -> f64 {
        f64::from(self.depth_max) * f64::from(self.shots_max)
    }

    /// `(field, constraint)` for every violated bound.
    pub fn violations(&self) -> Vec<(&'static str, &'static str)> {
        let mut out = Vec::new();
        if !(6 <= self.n_min && self.n_min <= self.n_max && self.n_max <= 9) {
            out.push(("task.n_min/n_max", "6 <= n_min <= n_max <= 9"));
        }
        if !(3 <= self.k_min && self.k_min <= self.k_max && self.k_max <= 5) {
            out.push(("task.k_min/k_max", "3 <= k_min <= k_max <= 5"));
        }
        if !(1 <= self.depth_min && self.depth_min <= self.depth_max) {
            out.push(("task.depth_min/depth_max", "1 <= depth_min <= depth_max"));
        }
        if !(1 <= self.shots_min && self.shots_min <= self.shots_max) {
            out.push(("task.shots_min/shots_max", "1 <= shots_min <= shots_max"));
        }
        if !(0.0 <= self.payload_min && self.payload_min <= self.payload_max && self.payload_max.is_finite()) {
            out.push(("task.payload_min/payload_max", "0 <= payload_min <= payload_max"));
        }
        if !(self.key_ratio >= 0.0 && self.key_ratio.is_finite()) {
            out.push(("task.key_ratio", ">= 0"));
        }
        out
    }
}

/// Draws one task; `n` and `k` are uniform over their integer ranges.
pub fn generate_task<R: Rng + ?Sized>(rng: &mut R, id: u64, origin: NodeId, config: &TaskConfig) -> TaskSpec {
    let n = rng.random_range(config.n_min..=config.n_max);
    let k = rng.random_range(config.k_min..=config.k_max);
    let depth = rng.random_range(config.depth_min..=config.depth_max);
    let shots = rng.random_range(config.shots_min..=config.shots_max);
    let payload_bits = if config.payload_max > config.payload_min {
        rng.random_range(config.payload_min..=config.payload_max)
    } else {
        config.payload_min
    };
    TaskSpec {
        id,
        origin,
        n,
        k,
        work: f64::from(depth) * f64::from(shots),
        payload_bits,
        key_ratio: config.key_ratio,
    }
}

/// Latency weight `d` (per second) and energy weight `e` (per joule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QosWeights {
    pub d: f64,
    pub e: f64,
}

impl Default for QosWeights {
    fn default() -> Self {
        Self { d: 0.5, e: 0.5 }
    }
}

impl QosWeights {
    pub fn new(d: f64, e: f64) -> Self {
        Self { d, e }
    }

    pub fn violations(&self) -> Vec<(&'static str, &'static str)> {
        let mut out = Vec::new();
        if !(self.d >= 0.0 && self.d.is_finite()) {
            out.push(("qos.d", ">= 0"));
        }
        if !(self.e >= 0.0 && self.e.is_finite()) {
            out.push(("qos.e", ">= 0"));
        }
        if self.d + self.e <= 0.0 {
            out.push(("qos.d+qos.e", "> 0"));
        }
        out
    }
}

pub fn task_cost(latency: f64, energy: f64, qos: QosWeights) -> f64 {
    qos.d * latency + qos.e * energy
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub latency: f64,
    pub energy: f64,
    pub cost: f64,
}

impl CostBreakdown {
    pub fn scaled(self, factor: f64) -> Self {
        Self { cost: self.cost * factor, ..self }
    }
}

/// Per-phase timings of a split execution, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitTimes {
    pub local: f64,
    pub transmit: f64,
    pub key_wait: f64,
    pub remote: f64,
}

impl SplitTimes {
    /// Time at which the offloaded share finishes.
    pub fn remote_done(&self) -> f64 {
        self.transmit + self.key_wait + self.remote
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOutcome {
    pub times: SplitTimes,
    pub breakdown: CostBreakdown,
}

/// Runs `1 - x` of the task locally and `x` remotely, in parallel.
///
/// The offloaded share pays transmission (serialization plus route latency),
/// a wait for enough secret key, and remote compute. Remote energy counts
/// toward the total.
pub fn split_execution(
    task: &TaskSpec,
    x: f64,
    local: &NodeSpec,
    remote: Option<&NodeSpec>,
    route: &PathMetrics,
    qos: QosWeights,
) -> Result<SplitOutcome, TaskError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(TaskError::InvalidFraction(x));
    }
    let mut times = SplitTimes { local: (1.0 - x) * task.work / local.gate_speed, ..SplitTimes::default() };
    let mut remote_power = 0.0;
    if x > 0.0 {
        let remote = remote.ok_or(TaskError::MissingRemote(x))?;
        let bits = x * task.payload_bits;
        let key_bits = bits * task.key_ratio;
        times.transmit = bits / route.min_classical_rate + route.latency;
        if key_bits > 0.0 {
            if route.min_key_rate <= 0.0 {
                return Err(TaskError::KeyStarvation { bits: key_bits });
            }
            times.key_wait = key_bits / route.min_key_rate;
        }
        times.remote = x * task.work / remote.gate_speed;
        remote_power = remote.power_active;
    }
    let latency = times.local.max(times.remote_done());
    let energy = times.local * local.power_active + times.transmit * local.power_tx + times.remote * remote_power;
    Ok(SplitOutcome {
        times,
        breakdown: CostBreakdown { latency, energy, cost: task_cost(latency, energy, qos) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Tier;
    use crate::seed;
    use proptest::prelude::*;

    fn node(speed: f64, active: f64, tx: f64) -> NodeSpec {
        NodeSpec { id: NodeId(0), tier: Tier::Mobile, qubit_capacity: 20, gate_speed: speed, power_active: active, power_tx: tx }
    }

    fn task(work: f64, payload: f64, key_ratio: f64) -> TaskSpec {
        TaskSpec { id: 0, origin: NodeId(0), n: 6, k: 3, work, payload_bits: payload, key_ratio }
    }

    fn route(latency: f64, rate: f64, key: f64) -> PathMetrics {
        PathMetrics { latency, min_classical_rate: rate, min_key_rate: key, min_epr_rate: 100.0, hops: 1 }
    }

    #[test]
    fn generated_tasks_fit_qubit_range() {
        let mut rng = seed::stream(5, "tasks", 0);
        let cfg = TaskConfig::default();
        for i in 0..2000 {
            let t = generate_task(&mut rng, i, NodeId(0), &cfg);
            let total = t.demand().total;
            assert!((8..=16).contains(&total));
            assert!(t.k < t.n && t.work > 0.0);
        }
    }

    #[test]
    fn collapsed_ranges_fix_the_demand() {
        let mut rng = seed::stream(5, "tasks", 1);
        let cfg = TaskConfig { n_max: 6, k_max: 3, ..TaskConfig::default() };
        for i in 0..200 {
            assert_eq!(generate_task(&mut rng, i, NodeId(0), &cfg).demand().total, 10);
        }
    }

    #[test]
    fn equal_seeds_give_equal_tasks() {
        let cfg = TaskConfig::default();
        let mut a = seed::stream(9, "tasks", 0);
        let mut b = seed::stream(9, "tasks", 0);
        for i in 0..50 {
            assert_eq!(generate_task(&mut a, i, NodeId(2), &cfg), generate_task(&mut b, i, NodeId(2), &cfg));
        }
    }

    #[test]
    fn all_local_closed_form() {
        let out = split_execution(&task(100.0, 8000.0, 1.0), 0.0, &node(50.0, 2.0, 1.0), None, &PathMetrics::LOCAL, QosWeights::new(1.0, 0.0)).unwrap();
        assert_eq!(out.breakdown.latency, 2.0);
        assert_eq!(out.breakdown.energy, 4.0);
        assert_eq!(out.breakdown.cost, 2.0);
    }

    #[test]
    fn full_offload_terms() {
        let local = node(50.0, 2.0, 1.0);
        let remote = node(500.0, 10.0, 1.0);
        let out = split_execution(&task(100.0, 8000.0, 1.0), 1.0, &local, Some(&remote), &route(0.005, 1.0e6, 2000.0), QosWeights::new(1.0, 0.0)).unwrap();
        // t_tx = 8000/1e6 + 0.005, t_key = 8000/2000, t_r = 100/500
        assert!((out.times.transmit - 0.013).abs() < 1e-12);
        assert!((out.times.key_wait - 4.0).abs() < 1e-12);
        assert!((out.times.remote - 0.2).abs() < 1e-12);
        assert!((out.breakdown.latency - 4.213).abs() < 1e-12);
        // energy = 0.013 * 1 + 0.2 * 10
        assert!((out.breakdown.energy - 2.013).abs() < 1e-12);
    }

    #[test]
    fn zero_key_ratio_never_waits() {
        let out = split_execution(&task(100.0, 8000.0, 0.0), 0.5, &node(50.0, 2.0, 1.0), Some(&node(500.0, 10.0, 1.0)), &route(0.005, 1.0e6, 0.0), QosWeights::new(1.0, 0.0)).unwrap();
        assert_eq!(out.times.key_wait, 0.0);
    }

    #[test]
    fn errors() {
        let local = node(50.0, 2.0, 1.0);
        let t = task(100.0, 8000.0, 1.0);
        let q = QosWeights::new(1.0, 1.0);
        assert_eq!(split_execution(&t, 0.3, &local, None, &route(0.0, 1.0, 1.0), q), Err(TaskError::MissingRemote(0.3)));
        assert!(matches!(
            split_execution(&t, 0.5, &local, Some(&local), &route(0.0, 1.0e6, 0.0), q),
            Err(TaskError::KeyStarvation { .. })
        ));
        assert_eq!(split_execution(&t, 1.5, &local, None, &PathMetrics::LOCAL, q), Err(TaskError::InvalidFraction(1.5)));
    }

    #[test]
    fn weighted_costs() {
        assert_eq!(task_cost(2.0, 5.0, QosWeights::new(1.0, 0.0)), 2.0);
        assert_eq!(task_cost(2.0, 5.0, QosWeights::new(0.0, 1.0)), 5.0);
        assert_eq!(task_cost(2.0, 4.0, QosWeights::new(0.5, 0.5)), 3.0);
        assert_eq!(QosWeights::new(-1.0, 2.0).violations(), vec![("qos.d", ">= 0")]);
    }

    proptest! {
        #[test]
        fn local_run_ignores_remote_and_route(speed in 1.0f64..1e4, lat in 0.0f64..1.0, rate in 0.0f64..1e6) {
            let t = task(100.0, 8000.0, 1.0);
            let local = node(50.0, 2.0, 1.0);
            let q = QosWeights::new(0.3, 0.7);
            let a = split_execution(&t, 0.0, &local, None, &PathMetrics::LOCAL, q).unwrap();
            let b = split_execution(&t, 0.0, &local, Some(&node(speed, 9.0, 3.0)), &route(lat, rate.max(1.0), rate), q).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn faster_free_remote_never_hurts(x in 0.0f64..1.0, dx in 0.0f64..1.0, ratio in 1.01f64..100.0) {
            // Shares run in parallel, so latency falls until the two shares
            // balance at x* = s_r / (s_l + s_r) and rises after it; it never
            // exceeds the all-local latency.
            let t = task(1000.0, 0.0, 0.0);
            let local = node(50.0, 2.0, 1.0);
            let remote = node(50.0 * ratio, 2.0, 1.0);
            let free = route(0.0, f64::INFINITY, f64::INFINITY);
            let q = QosWeights::new(1.0, 0.0);
            let lat = |x: f64| split_execution(&t, x, &local, Some(&remote), &free, q).unwrap().breakdown.latency;
            let balance = ratio / (1.0 + ratio);
            let a = x * balance;
            let b = (a + dx).min(balance);
            prop_assert!(lat(b) <= lat(a) + 1e-12);
            prop_assert!(lat(x) <= lat(0.0) + 1e-12);
        }

        #[test]
        fn cost_is_linear_and_monotone(l in 0.0f64..10.0, e in 0.0f64..10.0, dl in 0.0f64..1.0, d in 0.0f64..2.0, w in 0.0f64..2.0) {
            let q = QosWeights::new(d, w);
            prop_assert!(task_cost(l + dl, e, q) >= task_cost(l, e, q));
            prop_assert!(task_cost(l, e + dl, q) >= task_cost(l, e, q));
            let sum = task_cost(l + dl, e + dl, q);
            prop_assert!((sum - task_cost(l, e, q) - task_cost(dl, dl, q)).abs() < 1e-9);
        }

        #[test]
        fn latency_is_continuous_in_fraction(x in 0.001f64..0.999) {
            let t = task(100.0, 8000.0, 1.0);
            let local = node(50.0, 2.0, 1.0);
            let remote = node(500.0, 10.0, 1.0);
            let r = route(0.005, 1e6, 2000.0);
            let q = QosWeights::new(1.0, 0.0);
            let h = 1e-7;
            let a = split_execution(&t, x, &local, Some(&remote), &r, q).unwrap().breakdown.latency;
            let b = split_execution(&t, x + h, &local, Some(&remote), &r, q).unwrap().breakdown.latency;
            prop_assert!((a - b).abs() < 1e-4);
        }
    }
}
