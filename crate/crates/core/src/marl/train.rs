use crate::env::{EnvConfig, HybridAction, QuantumNetworkEnv, TransitionRecord, OBS_DIM};
use crate::seed::{self, StreamRng};

use super::agent::{AgentLearner, TrainConfig};
use super::policy::{LearnedPolicy, Policy, PolicySource, RandomPolicy};
use super::LearnError;

/// One row of the training trace. Costs are per-step means of the global
/// cost over an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub episode: u32,
    /// Exploring policy, training episode.
    pub mean_global_cost: f64,
    /// Greedy policy, fixed evaluation episode.
    pub eval_cost: f64,
    pub epsilon: f64,
    /// Mean over the episode's updates; 0 before the first update.
    pub critic_loss: f64,
    pub actor_objective: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stats: Vec<EpisodeStats>,
    pub learners: Vec<AgentLearner>,
    pub num_targets: usize,
}

impl TrainOutcome {
    pub fn policy(&self) -> LearnedPolicy {
        let networks = self.learners.iter().map(|l| (l.actor.clone(), l.critic.clone())).collect();
        LearnedPolicy::new(networks, self.num_targets).expect("learners built for these targets")
    }
}

/// Total global cost of one episode driven by `policy`.
pub fn run_episode(env: &mut QuantumNetworkEnv, policy: &mut dyn Policy, env_seed: u64) -> Result<f64, LearnError> {
    let mut obs = env.reset(env_seed);
    let mut total = 0.0;
    loop {
        let actions: Vec<HybridAction> = obs.iter().map(|o| policy.act(o)).collect();
        let result = env.step(&actions)?;
        total += result.info.global_cost;
        if result.done {
            return Ok(total);
        }
        obs = result.observations;
    }
}

pub fn train(env_config: &EnvConfig, config: &TrainConfig, seed: u64) -> Result<TrainOutcome, LearnError> {
    train_with_progress(env_config, config, seed, |_| {})
}

/// Independent learners acting on a shared reward. Each step every agent
/// with a task acts, every agent stores its transition, then every learner
/// with enough experience performs one update, in agent order.
pub fn train_with_progress(
    env_config: &EnvConfig,
    config: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(&EpisodeStats),
) -> Result<TrainOutcome, LearnError> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(LearnError::InvalidConfig(
            violations.into_iter().map(|(f, c)| format!("{f} must be {c}")).collect(),
        ));
    }
    let mut env = QuantumNetworkEnv::new(env_config.clone())?;
    let mut eval_env = QuantumNetworkEnv::new(env_config.clone())?;
    let config = &TrainConfig { reward_scale: effective_reward_scale(&mut env, config, seed)?, ..config.clone() };
    let agents = env.num_agents();
    let targets = env.num_targets();
    let learner_count = if config.share_parameters { 1 } else { agents };
    let mut learners: Vec<AgentLearner> = (0..learner_count)
        .map(|a| AgentLearner::new(OBS_DIM, targets, config, &mut seed::stream(seed, "init", a as u64)))
        .collect();
    let slot = |agent: usize| if config.share_parameters { 0 } else { agent };
    let mut explore: Vec<StreamRng> = (0..agents).map(|a| seed::stream(seed, "explore", a as u64)).collect();
    let mut replay: Vec<StreamRng> = (0..agents).map(|a| seed::stream(seed, "replay", a as u64)).collect();
    let eval_seed = seed::child_seed(seed, "train-eval", 0);
    let steps = f64::from(env_config.env.episode_length);

    let mut stats = Vec::with_capacity(config.episodes as usize);
    let mut updates: u64 = 0;
    for episode in 0..config.episodes {
        let mut obs = env.reset(seed::child_seed(seed, "train-env", u64::from(episode)));
        let mut total = 0.0;
        let (mut loss_sum, mut objective_sum, mut episode_updates) = (0.0, 0.0, 0u64);
        loop {
            let mut actions = vec![HybridAction::LOCAL; agents];
            for (agent, o) in obs.iter().enumerate() {
                if o.has_task() {
                    actions[agent] = learners[slot(agent)].select_action(&o.features, true, &mut explore[agent])?;
                }
            }
            let result = env.step(&actions)?;
            total += result.info.global_cost;
            // Idle agents store Local/0 so the critic also sees task-free states.
            for (agent, o) in obs.iter().enumerate() {
                let action = result.info.outcomes[agent].as_ref().map_or(HybridAction::LOCAL, |out| out.requested);
                learners[slot(agent)].buffer.store(TransitionRecord {
                    observation: o.features.clone(),
                    action,
                    reward: result.rewards[agent],
                    next_observation: result.observations[agent].features.clone(),
                    done: result.done,
                });
            }
            for agent in 0..agents {
                let learner = &mut learners[slot(agent)];
                if learner.buffer.len() < config.batch_size {
                    continue;
                }
                let batch: Vec<TransitionRecord> = learner
                    .buffer
                    .sample_batch(config.batch_size, &mut replay[agent])?
                    .into_iter()
                    .cloned()
                    .collect();
                let refs: Vec<&TransitionRecord> = batch.iter().collect();
                let (loss, objective) = learner
                    .update(&refs, config)
                    .map_err(|e| match e {
                        LearnError::NonFiniteLoss { .. } => LearnError::NonFiniteLoss { step: updates },
                        other => other,
                    })?;
                updates += 1;
                episode_updates += 1;
                loss_sum += loss;
                objective_sum += objective;
            }
            if result.done {
                break;
            }
            obs = result.observations;
        }
        if learners.iter().any(|l| !l.is_finite()) {
            return Err(LearnError::NonFiniteParameters);
        }

        let networks = learners.iter().map(|l| (l.actor.clone(), l.critic.clone())).collect();
        let eval_total = run_episode(&mut eval_env, &mut LearnedPolicy::new(networks, targets)?, eval_seed)?;

        let mean = |sum: f64| if episode_updates == 0 { 0.0 } else { sum / episode_updates as f64 };
        let row = EpisodeStats {
            episode,
            mean_global_cost: total / steps,
            eval_cost: eval_total / steps,
            epsilon: learners[0].epsilon,
            critic_loss: mean(loss_sum),
            actor_objective: mean(objective_sum),
        };
        progress(&row);
        stats.push(row);
        for l in &mut learners {
            l.decay_exploration(config);
        }
    }
    Ok(TrainOutcome { stats, learners, num_targets: targets })
}

/// `reward_scale`, divided by the random policy's mean per-step global cost
/// when normalization is on and that cost is positive.
pub fn effective_reward_scale(env: &mut QuantumNetworkEnv, config: &TrainConfig, seed: u64) -> Result<f64, LearnError> {
    if !config.normalize_reward {
        return Ok(config.reward_scale);
    }
    let mut random = RandomPolicy::new(env.num_targets(), seed::child_seed(seed, "calibration-policy", 0));
    let total = run_episode(env, &mut random, seed::child_seed(seed, "calibration-env", 0))?;
    let per_step = total / f64::from(env.config().env.episode_length);
    Ok(if per_step > 0.0 { config.reward_scale / per_step } else { config.reward_scale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean of the per-episode totals.
    pub mean: f64,
    /// Total global cost of each evaluation episode.
    pub episode_costs: Vec<f64>,
}

/// Runs `episodes` exploration-free episodes of the given policy.
pub fn evaluate(env_config: &EnvConfig, source: &PolicySource, episodes: u32, seed: u64) -> Result<Evaluation, LearnError> {
    let mut env = QuantumNetworkEnv::new(env_config.clone())?;
    let mut policy = source.build(&env, seed::child_seed(seed, "eval-policy", 0))?;
    evaluate_policy(&mut env, policy.as_mut(), episodes, seed)
}

pub fn evaluate_policy(
    env: &mut QuantumNetworkEnv,
    policy: &mut dyn Policy,
    episodes: u32,
    seed: u64,
) -> Result<Evaluation, LearnError> {
    let episode_costs = (0..episodes)
        .map(|ep| run_episode(env, policy, seed::child_seed(seed, "eval-env", u64::from(ep))))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = if episode_costs.is_empty() { 0.0 } else { episode_costs.iter().sum::<f64>() / episode_costs.len() as f64 };
    Ok(Evaluation { mean, episode_costs })
}
