use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;

use crate::env::{CostModel, HybridAction, Observation, QuantumNetworkEnv, Target};
use crate::network::NodeId;
use crate::seed::{self, StreamRng};
use crate::task::TaskSpec;

use super::agent::greedy_action;
use super::nn::{Matrix, Mlp};
use super::LearnError;

/// Maps one agent's observation to an action. Observations without a
/// pending task may receive any action; the environment ignores it.
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> HybridAction;
}

/// Uniform target, uniform fraction.
pub struct RandomPolicy {
    rng: StreamRng,
    num_targets: usize,
}

impl RandomPolicy {
    pub fn new(num_targets: usize, seed: u64) -> Self {
        Self { rng: seed::stream(seed, "random-policy", 0), num_targets }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, obs: &Observation) -> HybridAction {
        if !obs.has_task() {
            return HybridAction::LOCAL;
        }
        let index = self.rng.random_range(0..self.num_targets);
        let fraction = self.rng.random::<f64>();
        let target = Target::from_index(index, self.num_targets - 2).expect("index within target count");
        HybridAction::new(target, fraction)
    }
}

pub struct AllLocal;

impl Policy for AllLocal {
    fn act(&mut self, _obs: &Observation) -> HybridAction {
        HybridAction::LOCAL
    }
}

pub struct AllCloud;

impl Policy for AllCloud {
    fn act(&mut self, _obs: &Observation) -> HybridAction {
        HybridAction::new(Target::Cloud, 1.0)
    }
}

/// Myopic minimizer of the cost model over every target and a fraction
/// grid. Uses the observed (stale) free-qubit counts for the assigned edge
/// and the cloud, full capacity for other edges, mean link fidelities and
/// unconstrained key and pair budgets.
pub struct GreedyPolicy {
    model: Arc<CostModel>,
    key_ratio: f64,
    grid: Vec<f64>,
    assigned: Vec<Option<NodeId>>,
    cloud: Option<NodeId>,
}

impl GreedyPolicy {
    pub const DEFAULT_GRID_POINTS: usize = 11;

    pub fn new(env: &QuantumNetworkEnv, grid_points: usize) -> Self {
        let model = Arc::new(env.model().clone());
        let topology = model.topology();
        let assigned = (0..model.agents())
            .map(|a| topology.assigned_edge(model.agent_node(a).id))
            .collect();
        let cloud = topology.cloud();
        Self { key_ratio: env.config().task.key_ratio, grid: fraction_grid(grid_points), assigned, cloud, model }
    }

    /// Candidate actions in evaluation order: Local/0, then each remote
    /// target over the grid.
    pub fn candidates(&self) -> Vec<HybridAction> {
        candidate_actions(self.model.num_targets(), &self.grid)
    }
}

/// `points` evenly spaced fractions from 0 to 1 inclusive.
pub fn fraction_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![1.0],
        p => (0..p).map(|g| g as f64 / (p - 1) as f64).collect(),
    }
}

/// Local/0 followed by every remote target paired with every grid fraction.
pub fn candidate_actions(num_targets: usize, grid: &[f64]) -> Vec<HybridAction> {
    let edges = num_targets - 2;
    let mut out = vec![HybridAction::LOCAL];
    for index in 1..num_targets {
        let target = Target::from_index(index, edges).expect("index within target count");
        out.extend(grid.iter().map(|&x| HybridAction::new(target, x)));
    }
    out
}

impl Policy for GreedyPolicy {
    fn act(&mut self, obs: &Observation) -> HybridAction {
        let Some(desc) = obs.task else {
            return HybridAction::LOCAL;
        };
        let agent = obs.agent;
        let model = &self.model;
        let origin = model.agent_node(agent).id;
        let task = TaskSpec {
            id: 0,
            origin,
            n: desc.n,
            k: desc.k,
            work: desc.work,
            payload_bits: desc.payload_bits,
            key_ratio: self.key_ratio,
        };
        let mut best = (HybridAction::LOCAL, f64::INFINITY);
        for action in self.candidates() {
            let (fidelity, free) = match model.route(agent, action.target) {
                None => (1.0, 0),
                Some(route) => {
                    let free = if Some(route.node) == self.assigned[agent] {
                        obs.edge_free
                    } else if Some(route.node) == self.cloud {
                        obs.cloud_free
                    } else {
                        model.topology().nodes()[route.node_index].qubit_capacity
                    };
                    (model.expected_route_fidelity(route), free)
                }
            };
            let cost = model
                .assess(agent, &task, action, fidelity, free, |_| (f64::INFINITY, f64::INFINITY))
                .cost;
            if cost < best.1 {
                best = (action, cost);
            }
        }
        best.0
    }
}

/// Greedy decoding of trained actor networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicy {
    /// `(actor, critic)` per agent, or a single pair shared by all agents.
    pub networks: Vec<(Mlp, Mlp)>,
    pub num_targets: usize,
}

impl LearnedPolicy {
    pub fn new(networks: Vec<(Mlp, Mlp)>, num_targets: usize) -> Result<Self, LearnError> {
        for (actor, _) in &networks {
            if actor.output_dim() != num_targets + 1 {
                return Err(LearnError::ShapeMismatch { expected: num_targets + 1, got: actor.output_dim() });
            }
        }
        Ok(Self { networks, num_targets })
    }

    /// Checks that the networks fit an environment's agents and observations.
    pub fn check_compatible(&self, agents: usize, obs_dim: usize, num_targets: usize) -> Result<(), LearnError> {
        if self.networks.len() != 1 && self.networks.len() != agents {
            return Err(LearnError::ShapeMismatch { expected: agents, got: self.networks.len() });
        }
        if self.num_targets != num_targets {
            return Err(LearnError::ShapeMismatch { expected: num_targets, got: self.num_targets });
        }
        for (actor, critic) in &self.networks {
            if actor.input_dim() != obs_dim {
                return Err(LearnError::ShapeMismatch { expected: obs_dim, got: actor.input_dim() });
            }
            let width = obs_dim + super::agent::encoding_width(num_targets);
            if critic.input_dim() != width {
                return Err(LearnError::ShapeMismatch { expected: width, got: critic.input_dim() });
            }
        }
        Ok(())
    }

    fn actor(&self, agent: usize) -> &Mlp {
        &self.networks[if self.networks.len() == 1 { 0 } else { agent }].0
    }
}

impl Policy for LearnedPolicy {
    fn act(&mut self, obs: &Observation) -> HybridAction {
        let out = self.actor(obs.agent).forward(&Matrix::from_rows(&[obs.features.as_slice()]));
        greedy_action(&out.data, self.num_targets)
    }
}

/// Where an evaluation policy comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySource {
    Checkpoint(PathBuf),
    Random,
    Greedy,
    AllLocal,
    AllCloud,
}

impl PolicySource {
    pub const BASELINES: [&'static str; 4] = ["random", "greedy", "all-local", "all-cloud"];

    /// A baseline by name.
    pub fn baseline(name: &str) -> Result<Self, LearnError> {
        match name {
            "random" => Ok(Self::Random),
            "greedy" => Ok(Self::Greedy),
            "all-local" => Ok(Self::AllLocal),
            "all-cloud" => Ok(Self::AllCloud),
            other => Err(LearnError::UnknownPolicy(other.to_string())),
        }
    }

    /// A baseline name, or otherwise a path to an existing checkpoint.
    pub fn parse(spec: &str) -> Result<Self, LearnError> {
        Self::baseline(spec).or_else(|_| {
            let path = PathBuf::from(spec);
            if path.is_file() {
                Ok(Self::Checkpoint(path))
            } else {
                Err(LearnError::UnknownPolicy(spec.to_string()))
            }
        })
    }

    pub fn build(&self, env: &QuantumNetworkEnv, seed: u64) -> Result<Box<dyn Policy>, LearnError> {
        Ok(match self {
            Self::Random => Box::new(RandomPolicy::new(env.num_targets(), seed)),
            Self::Greedy => Box::new(GreedyPolicy::new(env, GreedyPolicy::DEFAULT_GRID_POINTS)),
            Self::AllLocal => Box::new(AllLocal),
            Self::AllCloud => Box::new(AllCloud),
            Self::Checkpoint(path) => {
                let policy = super::checkpoint::load_policy(path)?;
                policy.check_compatible(env.num_agents(), crate::env::OBS_DIM, env.num_targets())?;
                Box::new(policy)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::network::TopologyConfig;

    fn small_env() -> QuantumNetworkEnv {
        let config = EnvConfig { topology: TopologyConfig::with_counts(2, 2, 1), ..EnvConfig::default() };
        QuantumNetworkEnv::new(config).unwrap()
    }

    #[test]
    fn random_covers_every_target() {
        let mut env = small_env();
        let mut policy = RandomPolicy::new(env.num_targets(), 5);
        let mut seen = vec![false; env.num_targets()];
        let mut obs = env.reset(1);
        let mut steps = 0;
        while steps < 10_000 {
            let actions: Vec<HybridAction> = obs.iter().map(|o| policy.act(o)).collect();
            for (o, a) in obs.iter().zip(&actions) {
                if o.has_task() {
                    seen[a.target.index(env.model().edges())] = true;
                    assert!((0.0..=1.0).contains(&a.fraction));
                }
            }
            let result = env.step(&actions).unwrap();
            obs = if result.done { env.reset(steps as u64) } else { result.observations };
            steps += 1;
        }
        assert!(seen.iter().all(|&s| s), "{seen:?}");
    }

    #[test]
    fn all_local_never_spends_budgets() {
        let mut env = small_env();
        let mut obs = env.reset(3);
        let mut before = (env.state().key_budget.clone(), env.state().pair_budget.clone());
        for _ in 0..50 {
            let actions: Vec<HybridAction> = obs.iter().map(|o| AllLocal.act(o)).collect();
            let result = env.step(&actions).unwrap();
            for outcome in result.info.outcomes.iter().flatten() {
                assert_eq!(outcome.executed, HybridAction::LOCAL);
                let expected = outcome.breakdown.latency * env.model().agent_node(0).power_active;
                assert!((outcome.breakdown.energy - expected).abs() <= 1e-12 * expected);
            }
            let after = (env.state().key_budget.clone(), env.state().pair_budget.clone());
            for (b, a) in before.0.iter().zip(&after.0).chain(before.1.iter().zip(&after.1)) {
                assert!(a >= b);
            }
            before = after;
            obs = result.observations;
        }
    }

    #[test]
    fn greedy_scans_local_first_then_grid() {
        let env = small_env();
        let greedy = GreedyPolicy::new(&env, 11);
        let c = greedy.candidates();
        assert_eq!(c.len(), 1 + 3 * 11);
        assert_eq!(c[0], HybridAction::LOCAL);
        assert_eq!(c[1], HybridAction::new(Target::Edge(0), 0.0));
        assert_eq!(c[c.len() - 1], HybridAction::new(Target::Cloud, 1.0));
    }

    #[test]
    fn grid_endpoints() {
        assert_eq!(fraction_grid(11)[10], 1.0);
        assert_eq!(fraction_grid(11)[3], 0.3);
        assert_eq!(fraction_grid(2), vec![0.0, 1.0]);
    }

    #[test]
    fn baseline_names_parse() {
        for name in PolicySource::BASELINES {
            assert!(PolicySource::parse(name).is_ok());
        }
        assert_eq!(
            PolicySource::parse("no-such-policy"),
            Err(LearnError::UnknownPolicy("no-such-policy".into()))
        );
    }
}
