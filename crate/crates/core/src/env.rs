//! Partially observable multi-agent offloading environment.
//!
//! Each mobile node is an agent. Every step, agents holding a pending task
//! choose a [`HybridAction`]; the environment checks qubit, secret-key and
//! entangled-pair resources, falls back to penalized local execution when an
//! offload is infeasible, and pays every agent the same reward: the negated
//! global cost of the step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{build_topology, LinkId, NetworkTopology, NodeId, NodeSpec, PathMetrics, TopologyConfig, TopologyError};
use crate::quantum::{expected_pairs_consumed, Fidelity, FidelityDistribution};
use crate::seed::{self, StreamRng};
use crate::task::{generate_task, split_execution, CostBreakdown, QosWeights, SplitOutcome, TaskConfig, TaskSpec};

/// Length of every observation feature vector.
pub const OBS_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("agent {agent}: {reason}")]
    InvalidAction { agent: usize, reason: String },
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("episode already finished")]
    EpisodeFinished,
}

/// Environment dynamics parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    pub episode_length: u32,
    /// Per-agent, per-step Bernoulli task arrival probability.
    pub arrival_prob: f64,
    /// Cost multiplier for tasks forced back to local execution.
    pub penalty: f64,
    pub fidelity_target: f64,
    /// Step duration in seconds.
    pub dt: f64,
    pub purification_cap: u32,
    /// Key/pair budgets at reset, in steps of replenishment.
    pub initial_budget_steps: f64,
    /// Key/pair budgets never exceed this many steps of replenishment.
    pub budget_cap_steps: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            episode_length: 200,
            arrival_prob: 0.6,
            penalty: 1.5,
            fidelity_target: 0.95,
            dt: 1.0,
            purification_cap: crate::quantum::DEFAULT_ROUND_CAP,
            initial_budget_steps: 1.0,
            budget_cap_steps: 4.0,
        }
    }
}

/// Everything needed to instantiate an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EnvConfig {
    pub topology: TopologyConfig,
    pub task: TaskConfig,
    pub env: EnvParams,
    pub qos: QosWeights,
}

impl EnvConfig {
    /// `(field, constraint)` for every violated bound outside the topology.
    pub fn violations(&self) -> Vec<(&'static str, &'static str)> {
        let mut out = self.task.violations();
        out.extend(self.qos.violations());
        let p = &self.env;
        if p.episode_length < 1 {
            out.push(("env.episode_length", ">= 1"));
        }
        if !(0.0..=1.0).contains(&p.arrival_prob) {
            out.push(("env.arrival_prob", "in [0, 1]"));
        }
        if !(p.penalty >= 1.0 && p.penalty.is_finite()) {
            out.push(("env.penalty", ">= 1"));
        }
        if !(p.fidelity_target > 0.5 && p.fidelity_target < 1.0) {
            out.push(("env.fidelity_target", "in (0.5, 1)"));
        }
        if !(p.dt > 0.0 && p.dt.is_finite()) {
            out.push(("env.dt", "> 0"));
        }
        if !(p.initial_budget_steps >= 0.0 && p.initial_budget_steps <= p.budget_cap_steps) {
            out.push(("env.initial_budget_steps", "in [0, budget_cap_steps]"));
        }
        if !(p.budget_cap_steps >= 1.0 && p.budget_cap_steps.is_finite()) {
            out.push(("env.budget_cap_steps", ">= 1"));
        }
        if self.topology.mobile_node.qubit_capacity < self.task.max_demand() {
            out.push(("topology.mobile_node.qubit_capacity", ">= largest task demand (2*n_max - k_min + 1)"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Local,
    Edge(usize),
    Cloud,
}

impl Target {
    /// Dense index: `Local = 0`, `Edge(j) = 1 + j`, `Cloud = edges + 1`.
    pub fn index(self, edges: usize) -> usize {
        match self {
            Target::Local => 0,
            Target::Edge(j) => 1 + j,
            Target::Cloud => edges + 1,
        }
    }

    pub fn from_index(index: usize, edges: usize) -> Option<Self> {
        match index {
            0 => Some(Target::Local),
            i if i <= edges => Some(Target::Edge(i - 1)),
            i if i == edges + 1 => Some(Target::Cloud),
            _ => None,
        }
    }
}

/// Discrete offload target plus the continuous share of work sent there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridAction {
    pub target: Target,
    pub fraction: f64,
}

impl HybridAction {
    pub const LOCAL: HybridAction = HybridAction { target: Target::Local, fraction: 0.0 };

    /// Local targets always carry a zero fraction.
    pub fn new(target: Target, fraction: f64) -> Self {
        let fraction = if target == Target::Local { 0.0 } else { fraction };
        Self { target, fraction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub n: u32,
    pub k: u32,
    pub work: f64,
    pub payload_bits: f64,
}

/// One agent's partial view. Edge and cloud qubit counts are one step stale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: usize,
    pub task: Option<TaskDescriptor>,
    pub own_free: u32,
    pub edge_free: u32,
    pub cloud_free: u32,
    pub last_cost: f64,
    pub features: Vec<f64>,
}

impl Observation {
    pub fn has_task(&self) -> bool {
        self.task.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub observation: Vec<f64>,
    pub action: HybridAction,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
}

/// Source of exogenous randomness: link fidelities and task arrivals.
pub trait Exogenous: Send {
    /// Fidelity of every link during `step`.
    fn link_fidelities(&mut self, step: u32, out: &mut [f64]);
    /// Task arriving at `agent` at the start of `step`. Called for every
    /// agent every step, whether or not the agent can accept it.
    fn arrival(&mut self, step: u32, agent: usize) -> Option<TaskSpec>;
}

/// Samples exogenous events from per-source seeded streams.
pub struct LiveSource {
    arrivals: StreamRng,
    tasks: StreamRng,
    fidelity: StreamRng,
    arrival_prob: f64,
    task_config: TaskConfig,
    link_dists: Vec<FidelityDistribution>,
    origins: Vec<NodeId>,
}

impl LiveSource {
    pub fn new(seed: u64, config: &EnvConfig, topology: &NetworkTopology) -> Self {
        Self {
            arrivals: seed::stream(seed, "arrivals", 0),
            tasks: seed::stream(seed, "tasks", 0),
            fidelity: seed::stream(seed, "fidelity", 0),
            arrival_prob: config.env.arrival_prob,
            task_config: config.task.clone(),
            link_dists: topology.links().iter().map(|l| l.fidelity_dist).collect(),
            origins: topology.mobiles(),
        }
    }
}

impl Exogenous for LiveSource {
    fn link_fidelities(&mut self, _step: u32, out: &mut [f64]) {
        for (slot, dist) in out.iter_mut().zip(&self.link_dists) {
            *slot = dist.sample(&mut self.fidelity).value();
        }
    }

    fn arrival(&mut self, step: u32, agent: usize) -> Option<TaskSpec> {
        use rand::Rng;
        if !self.arrivals.random_bool(self.arrival_prob) {
            return None;
        }
        let id = u64::from(step) * self.origins.len() as u64 + agent as u64;
        Some(generate_task(&mut self.tasks, id, self.origins[agent], &self.task_config))
    }
}

/// Why an offload fell back to local execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Infeasibility {
    Qubits,
    KeyStarvation,
    PairStarvation,
}

/// Route from an agent to one offload target.
#[derive(Debug, Clone)]
pub struct RouteInfo {
    pub node: NodeId,
    pub node_index: usize,
    pub links: Vec<LinkId>,
    pub metrics: PathMetrics,
}

/// Result of evaluating one task under one action.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    /// Action actually executed (Local/0 after a fallback).
    pub executed: HybridAction,
    pub outcome: SplitOutcome,
    /// Cost including any fallback penalty.
    pub cost: f64,
    pub fallback: Option<Infeasibility>,
    pub local_qubits: u32,
    pub remote_qubits: u32,
    pub pairs: f64,
    pub key_bits: f64,
}

/// Per-task cost evaluation shared by the environment and model-based
/// policies.
#[derive(Debug, Clone)]
pub struct CostModel {
    topology: Arc<NetworkTopology>,
    params: EnvParams,
    qos: QosWeights,
    agents: Vec<NodeId>,
    agent_nodes: Vec<usize>,
    edges: usize,
    /// `routes[agent][target_index - 1]` for every remote target.
    routes: Vec<Vec<RouteInfo>>,
}

impl CostModel {
    pub fn new(topology: Arc<NetworkTopology>, params: EnvParams, qos: QosWeights) -> Result<Self, TopologyError> {
        let agents = topology.mobiles();
        let edges = topology.edges();
        let cloud = topology.cloud().ok_or_else(|| {
            TopologyError::Violations(vec![crate::network::Violation::MissingCloud { found: 0 }])
        })?;
        let node_index = |id: NodeId| topology.nodes().iter().position(|n| n.id == id).expect("node exists");
        let mut routes = Vec::with_capacity(agents.len());
        for &agent in &agents {
            let mut per_target = Vec::with_capacity(edges.len() + 1);
            for &dst in edges.iter().chain(std::iter::once(&cloud)) {
                let metrics = topology.path_metrics(agent, dst)?;
                let links = topology.route(agent, dst).unwrap_or_default().to_vec();
                per_target.push(RouteInfo { node: dst, node_index: node_index(dst), links, metrics });
            }
            routes.push(per_target);
        }
        let agent_nodes = agents.iter().map(|&a| node_index(a)).collect();
        Ok(Self { edges: edges.len(), topology, params, qos, agents, agent_nodes, routes })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn qos(&self) -> QosWeights {
        self.qos
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn agents(&self) -> usize {
        self.agents.len()
    }

    pub fn edges(&self) -> usize {
        self.edges
    }

    /// Local plus every edge plus the cloud.
    pub fn num_targets(&self) -> usize {
        self.edges + 2
    }

    pub fn agent_node(&self, agent: usize) -> &NodeSpec {
        &self.topology.nodes()[self.agent_nodes[agent]]
    }

    pub fn agent_node_index(&self, agent: usize) -> usize {
        self.agent_nodes[agent]
    }

    pub fn route(&self, agent: usize, target: Target) -> Option<&RouteInfo> {
        match target {
            Target::Local => None,
            t => self.routes[agent].get(t.index(self.edges) - 1),
        }
    }

    /// End-to-end fidelity of a route: the weakest link's realization.
    pub fn route_fidelity(route: &RouteInfo, link_fidelities: &[f64]) -> f64 {
        route.links.iter().map(|l| link_fidelities[l.0]).fold(1.0, f64::min)
    }

    /// Route fidelity when every link sits at its distribution mean.
    pub fn expected_route_fidelity(&self, route: &RouteInfo) -> f64 {
        route
            .links
            .iter()
            .map(|l| self.topology.links()[l.0].fidelity_dist.mean)
            .fold(1.0, f64::min)
    }

    pub fn local_only(&self, agent: usize, task: &TaskSpec) -> SplitOutcome {
        split_execution(task, 0.0, self.agent_node(agent), None, &PathMetrics::LOCAL, self.qos)
            .expect("local execution always succeeds")
    }

    /// Evaluates `action` for `task`.
    ///
    /// `remote_free` is the free qubit count believed to be available at the
    /// target; `budget(link)` returns the `(key bits, pairs)` available on a
    /// link. Infeasible offloads degrade to penalized local execution.
    pub fn assess(
        &self,
        agent: usize,
        task: &TaskSpec,
        action: HybridAction,
        route_fidelity: f64,
        remote_free: u32,
        budget: impl Fn(LinkId) -> (f64, f64),
    ) -> Assessment {
        let total = task.demand().total;
        let local = |fallback: Option<Infeasibility>| {
            let outcome = self.local_only(agent, task);
            let factor = if fallback.is_some() { self.params.penalty } else { 1.0 };
            Assessment {
                executed: HybridAction::LOCAL,
                cost: outcome.breakdown.cost * factor,
                outcome,
                fallback,
                local_qubits: total,
                remote_qubits: 0,
                pairs: 0.0,
                key_bits: 0.0,
            }
        };
        let Some(route) = self.route(agent, action.target) else {
            return local(None);
        };
        let x = action.fraction;
        if x <= 0.0 {
            return local(None);
        }

        let remote_qubits = ((x * f64::from(total)).ceil() as u32).min(total);
        if remote_free < remote_qubits {
            return local(Some(Infeasibility::Qubits));
        }

        let pairs = match expected_pairs_consumed(
            Fidelity::new(route_fidelity.clamp(0.0, 1.0)).expect("clamped"),
            Fidelity::new(self.params.fidelity_target).expect("validated target"),
            self.params.purification_cap,
        ) {
            Ok(p) => p,
            Err(_) => return local(Some(Infeasibility::PairStarvation)),
        };
        if route.metrics.min_epr_rate <= 0.0 || route.links.iter().any(|&l| budget(l).1 < pairs) {
            return local(Some(Infeasibility::PairStarvation));
        }

        let key_bits = x * task.payload_bits * task.key_ratio;
        if key_bits > 0.0
            && (route.metrics.min_key_rate <= 0.0 || route.links.iter().any(|&l| budget(l).0 < key_bits))
        {
            return local(Some(Infeasibility::KeyStarvation));
        }

        // Generating the consumed pairs delays the transfer.
        let mut metrics = route.metrics;
        metrics.latency += pairs / metrics.min_epr_rate;
        let remote = &self.topology.nodes()[route.node_index];
        match split_execution(task, x, self.agent_node(agent), Some(remote), &metrics, self.qos) {
            Ok(outcome) => Assessment {
                executed: action,
                cost: outcome.breakdown.cost,
                outcome,
                fallback: None,
                local_qubits: total - remote_qubits,
                remote_qubits,
                pairs,
                key_bits,
            },
            Err(_) => local(Some(Infeasibility::KeyStarvation)),
        }
    }
}

/// Qubits held by an in-flight share of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct Hold {
    pub node: usize,
    pub agent: usize,
    pub qubits: u32,
    pub until: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub time_step: u32,
    pub free_qubits: Vec<u32>,
    pub key_budget: Vec<f64>,
    pub pair_budget: Vec<f64>,
    pub pending: Vec<Option<TaskSpec>>,
    pub busy_until: Vec<f64>,
    pub in_flight: Vec<Hold>,
    pub last_cost: Vec<f64>,
    /// Free qubits as of the previous step, which is what agents observe
    /// for remote nodes.
    pub last_known_free: Vec<u32>,
}

impl EnvState {
    pub fn held_qubits(&self, node: usize) -> u32 {
        self.in_flight.iter().filter(|h| h.node == node).map(|h| h.qubits).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task_id: u64,
    pub requested: HybridAction,
    pub executed: HybridAction,
    pub breakdown: CostBreakdown,
    pub cost: f64,
    pub fallback: Option<Infeasibility>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub global_cost: f64,
    /// Indexed by agent; `None` for agents that had no task.
    pub outcomes: Vec<Option<TaskOutcome>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: StepInfo,
}

/// Sum of penalized task costs completed in a step.
pub fn global_cost(outcomes: &[Option<TaskOutcome>]) -> f64 {
    outcomes.iter().flatten().map(|o| o.cost).sum()
}

pub struct QuantumNetworkEnv {
    config: EnvConfig,
    model: CostModel,
    state: EnvState,
    source: Box<dyn Exogenous>,
    link_fidelity: Vec<f64>,
    capacities: Vec<u32>,
}

impl QuantumNetworkEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        let violations = config.violations();
        if !violations.is_empty() {
            return Err(EnvError::InvalidConfig(
                violations.into_iter().map(|(f, c)| format!("{f} must be {c}")).collect(),
            ));
        }
        let topology = Arc::new(build_topology(&config.topology)?);
        let model = CostModel::new(topology.clone(), config.env.clone(), config.qos)?;
        let capacities: Vec<u32> = topology.nodes().iter().map(|n| n.qubit_capacity).collect();
        let links = topology.links().len();
        let source = Box::new(LiveSource::new(0, &config, &topology));
        let state = Self::fresh_state(&config, &topology, model.agents());
        Ok(Self { link_fidelity: vec![1.0; links], capacities, config, model, state, source })
    }

    fn fresh_state(config: &EnvConfig, topology: &NetworkTopology, agents: usize) -> EnvState {
        let free: Vec<u32> = topology.nodes().iter().map(|n| n.qubit_capacity).collect();
        let steps = config.env.initial_budget_steps * config.env.dt;
        EnvState {
            time_step: 0,
            last_known_free: free.clone(),
            free_qubits: free,
            key_budget: topology.links().iter().map(|l| l.key_rate() * steps).collect(),
            pair_budget: topology.links().iter().map(|l| l.epr_rate * steps).collect(),
            pending: vec![None; agents],
            busy_until: vec![0.0; topology.nodes().len()],
            in_flight: Vec::new(),
            last_cost: vec![0.0; agents],
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn topology(&self) -> &NetworkTopology {
        self.model.topology()
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn num_agents(&self) -> usize {
        self.model.agents()
    }

    pub fn num_targets(&self) -> usize {
        self.model.num_targets()
    }

    pub fn is_done(&self) -> bool {
        self.state.time_step >= self.config.env.episode_length
    }

    /// Starts a new episode driven by live streams derived from `seed`.
    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        let source = LiveSource::new(seed, &self.config, self.model.topology());
        self.reset_with(Box::new(source))
    }

    /// Starts a new episode driven by an explicit exogenous source.
    pub fn reset_with(&mut self, source: Box<dyn Exogenous>) -> Vec<Observation> {
        self.source = source;
        self.state = Self::fresh_state(&self.config, self.model.topology(), self.model.agents());
        self.admit_arrivals();
        self.observations()
    }

    fn now(&self) -> f64 {
        f64::from(self.state.time_step) * self.config.env.dt
    }

    fn admit_arrivals(&mut self) {
        let step = self.state.time_step;
        let now = self.now();
        for agent in 0..self.model.agents() {
            let task = self.source.arrival(step, agent);
            let node = self.model.agent_node_index(agent);
            if self.state.pending[agent].is_none() && self.state.busy_until[node] <= now {
                self.state.pending[agent] = task;
            }
        }
    }

    pub fn observation(&self, agent: usize) -> Result<Observation, EnvError> {
        if agent >= self.model.agents() {
            return Err(EnvError::UnknownAgent(agent));
        }
        let topology = self.model.topology();
        let own = self.model.agent_node_index(agent);
        let own_id = topology.nodes()[own].id;
        let index_of = |id: NodeId| topology.nodes().iter().position(|n| n.id == id);
        let edge = topology.assigned_edge(own_id).and_then(index_of);
        let cloud = topology.cloud().and_then(index_of).expect("validated topology has a cloud");

        let s = &self.state;
        let task = s.pending[agent].as_ref().map(|t| TaskDescriptor {
            n: t.n,
            k: t.k,
            work: t.work,
            payload_bits: t.payload_bits,
        });
        let edge_free = edge.map_or(0, |e| s.last_known_free[e]);
        let cloud_free = s.last_known_free[cloud];
        let ratio = |free: u32, node: Option<usize>| {
            node.map_or(0.0, |i| f64::from(free) / f64::from(self.capacities[i]))
        };
        let tc = &self.config.task;
        let mut features = vec![0.0; OBS_DIM];
        if let Some(t) = &task {
            features[0] = f64::from(t.n) / 9.0;
            features[1] = f64::from(t.k) / 5.0;
            features[2] = t.work / tc.max_work();
            features[3] = t.payload_bits / tc.payload_max.max(1.0);
        }
        features[4] = ratio(s.free_qubits[own], Some(own));
        features[5] = ratio(edge_free, edge);
        features[6] = ratio(cloud_free, Some(cloud));
        features[7] = s.last_cost[agent].ln_1p();
        Ok(Observation {
            agent,
            task,
            own_free: s.free_qubits[own],
            edge_free,
            cloud_free,
            last_cost: s.last_cost[agent],
            features,
        })
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.model.agents())
            .map(|a| self.observation(a).expect("agent in range"))
            .collect()
    }

    fn check_action(&self, agent: usize, action: &HybridAction) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&action.fraction) {
            return Err(EnvError::InvalidAction { agent, reason: format!("fraction {} outside [0, 1]", action.fraction) });
        }
        if let Target::Edge(j) = action.target {
            if j >= self.model.edges() {
                return Err(EnvError::InvalidAction { agent, reason: format!("edge index {j} out of range") });
            }
        }
        Ok(())
    }

    /// Applies one joint action, indexed by agent. Actions of agents without
    /// a pending task are ignored.
    pub fn step(&mut self, joint_action: &[HybridAction]) -> Result<StepResult, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        let agents = self.model.agents();
        if joint_action.len() != agents {
            return Err(EnvError::ActionCountMismatch { expected: agents, got: joint_action.len() });
        }
        for (agent, action) in joint_action.iter().enumerate() {
            if self.state.pending[agent].is_some() {
                self.check_action(agent, action)?;
            }
        }

        let now = self.now();
        let snapshot = self.state.free_qubits.clone();
        self.source.link_fidelities(self.state.time_step, &mut self.link_fidelity);

        let mut outcomes = vec![None; agents];
        for (agent, &requested) in joint_action.iter().enumerate() {
            let Some(task) = self.state.pending[agent].take() else { continue };
            let requested = HybridAction::new(requested.target, requested.fraction);
            let (fidelity, remote_free) = match self.model.route(agent, requested.target) {
                Some(route) => (
                    CostModel::route_fidelity(route, &self.link_fidelity),
                    self.state.free_qubits[route.node_index],
                ),
                None => (1.0, 0),
            };
            let state = &self.state;
            let assessment = self.model.assess(agent, &task, requested, fidelity, remote_free, |l| {
                (state.key_budget[l.0], state.pair_budget[l.0])
            });
            self.commit(agent, now, &assessment);
            self.state.last_cost[agent] = assessment.cost;
            outcomes[agent] = Some(TaskOutcome {
                task_id: task.id,
                requested,
                executed: assessment.executed,
                breakdown: assessment.outcome.breakdown,
                cost: assessment.cost,
                fallback: assessment.fallback,
            });
        }

        let global = global_cost(&outcomes);
        self.state.time_step += 1;
        self.release(self.now());
        self.replenish();
        self.state.last_known_free = snapshot;
        self.admit_arrivals();

        Ok(StepResult {
            observations: self.observations(),
            rewards: vec![-global; agents],
            done: self.is_done(),
            info: StepInfo { global_cost: global, outcomes },
        })
    }

    fn commit(&mut self, agent: usize, now: f64, a: &Assessment) {
        let origin = self.model.agent_node_index(agent);
        let times = a.outcome.times;
        let mut hold = |node: usize, qubits: u32, until: f64| {
            if qubits == 0 {
                return;
            }
            let s = &mut self.state;
            debug_assert!(s.free_qubits[node] >= qubits);
            s.free_qubits[node] -= qubits;
            s.busy_until[node] = s.busy_until[node].max(until);
            s.in_flight.push(Hold { node, agent, qubits, until });
        };
        hold(origin, a.local_qubits, now + times.local);
        if a.remote_qubits > 0 {
            let route = self.model.route(agent, a.executed.target).expect("remote action has a route");
            hold(route.node_index, a.remote_qubits, now + times.remote_done());
            for l in &route.links {
                self.state.key_budget[l.0] = (self.state.key_budget[l.0] - a.key_bits).max(0.0);
                self.state.pair_budget[l.0] = (self.state.pair_budget[l.0] - a.pairs).max(0.0);
            }
        }
    }

    fn release(&mut self, now: f64) {
        let s = &mut self.state;
        s.in_flight.retain(|h| {
            if h.until <= now {
                s.free_qubits[h.node] += h.qubits;
                false
            } else {
                true
            }
        });
    }

    fn replenish(&mut self) {
        let p = &self.config.env;
        for (i, link) in self.model.topology().links().iter().enumerate() {
            let key = link.key_rate() * p.dt;
            let pairs = link.epr_rate * p.dt;
            self.state.key_budget[i] = (self.state.key_budget[i] + key).min(key * p.budget_cap_steps);
            self.state.pair_budget[i] = (self.state.pair_budget[i] + pairs).min(pairs * p.budget_cap_steps);
        }
    }

    /// Checks qubit conservation and budget non-negativity.
    pub fn check_invariants(&self) -> Result<(), String> {
        let s = &self.state;
        for (node, &cap) in self.capacities.iter().enumerate() {
            let held = s.held_qubits(node);
            if s.free_qubits[node] > cap || s.free_qubits[node] + held != cap {
                return Err(format!(
                    "node {node}: free {} + held {held} != capacity {cap}",
                    s.free_qubits[node]
                ));
            }
        }
        for (i, (&k, &p)) in s.key_budget.iter().zip(&s.pair_budget).enumerate() {
            if !(k >= 0.0 && p >= 0.0) {
                return Err(format!("link {i}: negative budget (key {k}, pairs {p})"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TopologyConfig;

    /// Replays a fixed list of arrivals with constant fidelities.
    struct Scripted {
        fidelity: f64,
        arrivals: Vec<Vec<Option<TaskSpec>>>,
    }

    impl Exogenous for Scripted {
        fn link_fidelities(&mut self, _step: u32, out: &mut [f64]) {
            out.fill(self.fidelity);
        }
        fn arrival(&mut self, step: u32, agent: usize) -> Option<TaskSpec> {
            self.arrivals.get(step as usize).and_then(|s| s[agent].clone())
        }
    }

    fn paper_env() -> QuantumNetworkEnv {
        QuantumNetworkEnv::new(EnvConfig::default()).unwrap()
    }

    fn task(id: u64, origin: usize) -> TaskSpec {
        TaskSpec { id, origin: NodeId(origin), n: 9, k: 3, work: 2.0e5, payload_bits: 2000.0, key_ratio: 1.0 }
    }

    #[test]
    fn reset_is_deterministic_and_sized() {
        let mut env = paper_env();
        let a = env.reset(42);
        let b = env.reset(42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|o| o.features.len() == OBS_DIM));
        let caps: Vec<u32> = env.topology().nodes().iter().map(|n| n.qubit_capacity).collect();
        assert_eq!(env.state().free_qubits, caps);
    }

    #[test]
    fn idle_step_pays_nothing() {
        let mut env = paper_env();
        env.reset_with(Box::new(Scripted { fidelity: 0.9, arrivals: vec![] }));
        let out = env.step(&vec![HybridAction::LOCAL; 10]).unwrap();
        assert!(out.rewards.iter().all(|&r| r == 0.0));
        assert_eq!(out.info.global_cost, 0.0);
    }

    #[test]
    fn local_task_matches_cost_model() {
        let mut cfg = EnvConfig::default();
        cfg.qos = QosWeights::new(0.3, 0.7);
        let mut env = QuantumNetworkEnv::new(cfg).unwrap();
        let mut first = vec![None; 10];
        first[0] = Some(task(1, 0));
        env.reset_with(Box::new(Scripted { fidelity: 0.9, arrivals: vec![first] }));
        let out = env.step(&vec![HybridAction::LOCAL; 10]).unwrap();
        // t_l = 2e5 / 1e5 = 2 s at 5 W
        let expected = 0.3 * 2.0 + 0.7 * 2.0 * 5.0;
        assert!((out.rewards[0] + expected).abs() < 1e-12);
        assert!(out.rewards.iter().all(|&r| r == out.rewards[0]));
    }

    #[test]
    fn contention_forces_one_agent_back_home() {
        let mut cfg = EnvConfig::default();
        cfg.topology = TopologyConfig::with_counts(2, 1, 1);
        cfg.topology.edge_node.qubit_capacity = 20;
        cfg.qos = QosWeights::new(1.0, 0.0);
        let mut env = QuantumNetworkEnv::new(cfg).unwrap();
        env.reset_with(Box::new(Scripted {
            fidelity: 0.99,
            arrivals: vec![vec![Some(task(1, 0)), Some(task(2, 1))]],
        }));
        let act = HybridAction::new(Target::Edge(0), 1.0);
        let out = env.step(&[act, act]).unwrap();
        let first = out.info.outcomes[0].as_ref().unwrap();
        let second = out.info.outcomes[1].as_ref().unwrap();
        // demand 2*9-3+1 = 16 fits once into 20 qubits
        assert_eq!(first.fallback, None);
        assert_eq!(second.fallback, Some(Infeasibility::Qubits));
        assert_eq!(second.executed, HybridAction::LOCAL);
        assert!((second.cost - 1.5 * 2.0).abs() < 1e-12);
        // hand replay of the offloaded share: 2000/1e8 + 5 ms + 1 pair / 100 per s
        // + 2000/32000 key wait + 2e5/5e5 compute
        let expected_first = 2.0e-5 + 0.005 + 0.01 + 0.0625 + 0.4;
        assert!((first.cost - expected_first).abs() < 1e-12);
        assert_eq!(out.rewards[0], out.rewards[1]);
        assert!((out.info.global_cost - (first.cost + second.cost)).abs() < 1e-12);
        env.check_invariants().unwrap();
    }

    #[test]
    fn busy_agents_drop_arrivals() {
        let mut env = paper_env();
        let mut s0 = vec![None; 10];
        s0[0] = Some(task(1, 0));
        let mut s1 = vec![None; 10];
        s1[0] = Some(task(2, 0));
        env.reset_with(Box::new(Scripted { fidelity: 0.9, arrivals: vec![s0, s1] }));
        // a 2 s local run keeps agent 0 busy through step 1
        let out = env.step(&vec![HybridAction::LOCAL; 10]).unwrap();
        assert!(!out.observations[0].has_task());
        assert_eq!(env.state().held_qubits(0), 16);
    }

    #[test]
    fn remote_state_is_observed_one_step_late() {
        let mut env = paper_env();
        let mut s0 = vec![None; 10];
        s0[0] = Some(task(1, 0));
        env.reset_with(Box::new(Scripted { fidelity: 0.99, arrivals: vec![s0] }));
        let before = env.observations();
        let mut actions = vec![HybridAction::LOCAL; 10];
        actions[0] = HybridAction::new(Target::Cloud, 1.0);
        let after = env.step(&actions).unwrap().observations;
        // the cloud share was released at the step boundary, and the observed
        // value is the pre-step snapshot either way
        assert_eq!(after[0].cloud_free, before[0].cloud_free);
    }

    #[test]
    fn malformed_actions_are_rejected() {
        let mut env = paper_env();
        env.reset(1);
        assert_eq!(
            env.step(&[HybridAction::LOCAL]),
            Err(EnvError::ActionCountMismatch { expected: 10, got: 1 })
        );
        assert_eq!(env.observation(10).unwrap_err(), EnvError::UnknownAgent(10));
    }

    #[test]
    fn episode_ends_at_configured_length() {
        let mut cfg = EnvConfig::default();
        cfg.env.episode_length = 3;
        let mut env = QuantumNetworkEnv::new(cfg).unwrap();
        env.reset(9);
        let actions = vec![HybridAction::LOCAL; 10];
        assert!(!env.step(&actions).unwrap().done);
        assert!(!env.step(&actions).unwrap().done);
        assert!(env.step(&actions).unwrap().done);
        assert_eq!(env.step(&actions), Err(EnvError::EpisodeFinished));
    }

    #[test]
    fn invalid_config_lists_violations() {
        let mut cfg = EnvConfig::default();
        cfg.env.arrival_prob = 1.5;
        cfg.topology.mobile_node.qubit_capacity = 8;
        let Err(EnvError::InvalidConfig(v)) = QuantumNetworkEnv::new(cfg) else { panic!() };
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn global_cost_sums_outcomes() {
        let outcome = |cost: f64| {
            Some(TaskOutcome {
                task_id: 0,
                requested: HybridAction::LOCAL,
                executed: HybridAction::LOCAL,
                breakdown: CostBreakdown::default(),
                cost,
                fallback: None,
            })
        };
        assert_eq!(global_cost(&[]), 0.0);
        assert_eq!(global_cost(&[outcome(3.2)]), 3.2);
        assert!((global_cost(&[outcome(3.2), None, outcome(1.8), outcome(0.5)]) - 5.5).abs() < 1e-12);
    }
}
