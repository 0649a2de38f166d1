//! Sample-average evaluation over sampled scenarios and an exhaustive
//! oracle over stationary joint actions for small instances.

use std::sync::Arc;

use thiserror::Error;

use crate::env::{EnvConfig, EnvError, Exogenous, HybridAction, LiveSource, Observation, QuantumNetworkEnv};
use crate::marl::policy::{candidate_actions, fraction_grid, Policy};
use crate::network::build_topology;
use crate::seed;
use crate::task::TaskSpec;

/// Joint-action enumeration limit for [`exhaustive_oracle`].
pub const MAX_JOINT_ACTIONS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochasticError {
    #[error("scenario count must be at least 1")]
    EmptyScenarioSet,
    #[error("fraction grid needs at least one point")]
    EmptyGrid,
    #[error("search space of {candidates} joint actions exceeds the limit of {limit}")]
    SearchSpaceTooLarge { candidates: f64, limit: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// One realization of every exogenous event in an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `fidelities[step][link]`.
    pub fidelities: Vec<Vec<f64>>,
    /// `arrivals[step][agent]`, for steps `0..=episode_length`.
    pub arrivals: Vec<Vec<Option<TaskSpec>>>,
    pub weight: f64,
}

/// Replays a scenario as the environment's exogenous source.
#[derive(Debug, Clone)]
pub struct ScenarioSource {
    scenario: Arc<Scenario>,
}

impl ScenarioSource {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        Self { scenario }
    }
}

impl Exogenous for ScenarioSource {
    fn link_fidelities(&mut self, step: u32, out: &mut [f64]) {
        if let Some(row) = self.scenario.fidelities.get(step as usize) {
            out.copy_from_slice(row);
        }
    }

    fn arrival(&mut self, step: u32, agent: usize) -> Option<TaskSpec> {
        self.scenario.arrivals.get(step as usize).and_then(|row| row[agent].clone())
    }
}

/// Draws `count` i.i.d. scenarios. Scenario `i` holds exactly the events a
/// live episode seeded with `child_seed(seed, "scenario", i)` would see.
pub fn sample_scenarios(config: &EnvConfig, count: usize, seed: u64) -> Result<Vec<Scenario>, StochasticError> {
    if count == 0 {
        return Err(StochasticError::EmptyScenarioSet);
    }
    let topology = build_topology(&config.topology).map_err(EnvError::from)?;
    let links = topology.links().len();
    let agents = topology.mobiles().len();
    let steps = config.env.episode_length;
    let weight = 1.0 / count as f64;
    Ok((0..count)
        .map(|i| {
            let mut source = LiveSource::new(scenario_seed(seed, i), config, &topology);
            let fidelities = (0..steps)
                .map(|step| {
                    let mut row = vec![0.0; links];
                    source.link_fidelities(step, &mut row);
                    row
                })
                .collect();
            let arrivals = (0..=steps)
                .map(|step| (0..agents).map(|a| source.arrival(step, a)).collect())
                .collect();
            Scenario { fidelities, arrivals, weight }
        })
        .collect())
}

/// Live-episode seed whose events scenario `index` reproduces.
pub fn scenario_seed(seed: u64, index: usize) -> u64 {
    seed::child_seed(seed, "scenario", index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    /// Weighted mean episode cost.
    pub mean: f64,
    /// Sample standard deviation over scenarios divided by `sqrt(count)`;
    /// 0 for a single scenario.
    pub std_error: f64,
}

/// Runs `policy` on every scenario and summarizes the episode costs.
pub fn expected_cost(
    config: &EnvConfig,
    policy: &mut dyn Policy,
    scenarios: &[Scenario],
) -> Result<CostEstimate, StochasticError> {
    let mut env = QuantumNetworkEnv::new(config.clone())?;
    let shared: Vec<Arc<Scenario>> = scenarios.iter().cloned().map(Arc::new).collect();
    expected_cost_in(&mut env, policy, &shared)
}

fn expected_cost_in(
    env: &mut QuantumNetworkEnv,
    policy: &mut dyn Policy,
    scenarios: &[Arc<Scenario>],
) -> Result<CostEstimate, StochasticError> {
    if scenarios.is_empty() {
        return Err(StochasticError::EmptyScenarioSet);
    }
    let mut costs = Vec::with_capacity(scenarios.len());
    for scenario in scenarios {
        let mut obs = env.reset_with(Box::new(ScenarioSource::new(scenario.clone())));
        let mut total = 0.0;
        loop {
            let actions: Vec<HybridAction> = obs.iter().map(|o| policy.act(o)).collect();
            let result = env.step(&actions)?;
            total += result.info.global_cost;
            if result.done {
                break;
            }
            obs = result.observations;
        }
        costs.push(total);
    }
    let weight_sum: f64 = scenarios.iter().map(|s| s.weight).sum();
    let mean = scenarios.iter().zip(&costs).map(|(s, c)| s.weight * c).sum::<f64>() / weight_sum;
    let n = costs.len() as f64;
    let std_error = if costs.len() < 2 {
        0.0
    } else {
        let plain_mean = costs.iter().sum::<f64>() / n;
        let var = costs.iter().map(|c| (c - plain_mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(CostEstimate { mean, std_error })
}

/// The same action for an agent in every state.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    pub actions: Vec<HybridAction>,
}

impl Policy for StationaryPolicy {
    fn act(&mut self, obs: &Observation) -> HybridAction {
        self.actions[obs.agent]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Best stationary action per agent.
    pub actions: Vec<HybridAction>,
    pub estimate: CostEstimate,
    /// Joint actions evaluated.
    pub candidates: usize,
}

/// Per-agent candidates: Local/0, then each remote target over the grid.
pub fn oracle_candidates(num_targets: usize, grid_points: usize) -> Vec<HybridAction> {
    candidate_actions(num_targets, &fraction_grid(grid_points))
}

/// Enumerates every stationary joint action over the grid in lexicographic
/// order (agent 0 most significant) and returns the first minimizer of the
/// expected cost.
pub fn exhaustive_oracle(
    config: &EnvConfig,
    grid_points: usize,
    scenarios: &[Scenario],
) -> Result<OracleResult, StochasticError> {
    if grid_points == 0 {
        return Err(StochasticError::EmptyGrid);
    }
    if scenarios.is_empty() {
        return Err(StochasticError::EmptyScenarioSet);
    }
    let mut env = QuantumNetworkEnv::new(config.clone())?;
    let agents = env.num_agents();
    let per_agent = oracle_candidates(env.num_targets(), grid_points);
    let joint = (per_agent.len() as f64).powi(agents as i32);
    if joint > MAX_JOINT_ACTIONS as f64 {
        return Err(StochasticError::SearchSpaceTooLarge { candidates: joint, limit: MAX_JOINT_ACTIONS });
    }
    let joint = joint as usize;
    let shared: Vec<Arc<Scenario>> = scenarios.iter().cloned().map(Arc::new).collect();
    let mut best: Option<(Vec<HybridAction>, CostEstimate)> = None;
    let mut digits = vec![0usize; agents];
    for _ in 0..joint {
        let mut policy = StationaryPolicy { actions: digits.iter().map(|&d| per_agent[d]).collect() };
        let estimate = expected_cost_in(&mut env, &mut policy, &shared)?;
        if best.as_ref().is_none_or(|(_, b)| estimate.mean < b.mean) {
            best = Some((policy.actions, estimate));
        }
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < per_agent.len() {
                break;
            }
            *d = 0;
        }
    }
    let (actions, estimate) = best.expect("at least one candidate");
    Ok(OracleResult { actions, estimate, candidates: joint })
}
