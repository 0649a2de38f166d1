//! Per-agent actor-critic learner over the hybrid action space.
//!
//! The actor emits one preference per offload target plus a fraction logit.
//! The critic scores `[observation, offload shares]`, with one share slot per
//! remote target. Stored actions put the fraction in the chosen target's
//! slot; when differentiating the actor objective each slot holds the
//! softmax probability of its target times the fraction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{HybridAction, Target, TransitionRecord};
use crate::seed::StreamRng;

use super::nn::{Adam, Matrix, Mlp, MlpGrad};
use super::replay::ReplayBuffer;
use super::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: u32,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub noise_start: f64,
    pub noise_min: f64,
    pub noise_decay: f64,
    pub grad_clip: f64,
    pub hidden: Vec<usize>,
    /// Multiplies rewards before they enter the TD target.
    pub reward_scale: f64,
    /// Divide rewards by the random policy's mean per-step cost, measured
    /// on one calibration episode before training.
    pub normalize_reward: bool,
    /// Weight of the squared actor-output penalty in the actor objective.
    pub logit_penalty: f64,
    /// One learner shared by all agents instead of one per agent.
    pub share_parameters: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            actor_lr: 1e-3,
            critic_lr: 3e-4,
            gamma: 0.8,
            batch_size: 64,
            buffer_capacity: 100_000,
            tau: 0.01,
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            epsilon_decay: 0.99,
            noise_start: 0.2,
            noise_min: 0.02,
            noise_decay: 0.99,
            grad_clip: 10.0,
            hidden: vec![32, 32],
            reward_scale: 2.0,
            normalize_reward: true,
            logit_penalty: 1e-3,
            share_parameters: false,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<(&'static str, &'static str)> {
        let mut out = Vec::new();
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.actor_lr) {
            out.push(("train.actor_lr", "> 0"));
        }
        if !positive(self.critic_lr) {
            out.push(("train.critic_lr", "> 0"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            out.push(("train.gamma", "in [0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            out.push(("train.tau", "in (0, 1]"));
        }
        if self.batch_size == 0 {
            out.push(("train.batch_size", ">= 1"));
        }
        if self.buffer_capacity < self.batch_size.max(1) {
            out.push(("train.buffer_capacity", ">= batch_size"));
        }
        if !(0.0 <= self.epsilon_min && self.epsilon_min <= self.epsilon_start && self.epsilon_start <= 1.0) {
            out.push(("train.epsilon_start/epsilon_min", "0 <= epsilon_min <= epsilon_start <= 1"));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            out.push(("train.epsilon_decay", "in (0, 1]"));
        }
        if !(0.0 <= self.noise_min && self.noise_min <= self.noise_start && self.noise_start.is_finite()) {
            out.push(("train.noise_start/noise_min", "0 <= noise_min <= noise_start"));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            out.push(("train.noise_decay", "in (0, 1]"));
        }
        if !positive(self.grad_clip) {
            out.push(("train.grad_clip", "> 0"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            out.push(("train.hidden", "all sizes >= 1"));
        }
        if !(self.logit_penalty >= 0.0 && self.logit_penalty.is_finite()) {
            out.push(("train.logit_penalty", ">= 0"));
        }
        if !positive(self.reward_scale) {
            out.push(("train.reward_scale", "> 0"));
        }
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax(prefs: &[f64]) -> Vec<f64> {
    let max = prefs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = prefs.iter().map(|p| (p - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest preference; the first one wins ties.
pub fn greedy_target(prefs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in prefs.iter().enumerate().skip(1) {
        if p > prefs[best] {
            best = i;
        }
    }
    best
}

/// Width of the critic's action encoding: one slot per remote target.
pub fn encoding_width(num_targets: usize) -> usize {
    num_targets - 1
}

/// Offload-share encoding: the fraction placed in the slot of the chosen
/// remote target. Local, and any remote target with fraction 0, encode as
/// the zero vector, so equivalent actions are indistinguishable.
pub fn encode_action(action: &HybridAction, num_targets: usize) -> Vec<f64> {
    let edges = num_targets - 2;
    let mut enc = vec![0.0; encoding_width(num_targets)];
    let index = action.target.index(edges);
    if index > 0 {
        enc[index - 1] = action.fraction;
    }
    enc
}

/// Deterministic action from raw actor outputs.
pub fn greedy_action(actor_out: &[f64], num_targets: usize) -> HybridAction {
    let target = Target::from_index(greedy_target(&actor_out[..num_targets]), num_targets - 2)
        .expect("index within target count");
    HybridAction::new(target, sigmoid(actor_out[num_targets]))
}

/// Squared TD error averaged over the batch.
pub fn critic_loss(critic: &Mlp, inputs: &Matrix, targets: &[f64]) -> f64 {
    let q = critic.forward(inputs);
    q.data.iter().zip(targets).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() / targets.len() as f64
}

pub fn critic_loss_and_grad(critic: &Mlp, inputs: &Matrix, targets: &[f64]) -> (f64, MlpGrad) {
    let tape = critic.forward_tape(inputs);
    let q = tape.output();
    let n = targets.len() as f64;
    let mut grad_out = Matrix::zeros(q.rows, 1);
    let mut loss = 0.0;
    for (i, (qv, y)) in q.data.iter().zip(targets).enumerate() {
        let err = qv - y;
        loss += err * err;
        grad_out.data[i] = 2.0 * err / n;
    }
    let (grads, _) = critic.backward(&tape, &grad_out, true);
    (loss / n, grads.expect("requested"))
}

/// Soft action encoding: each remote slot holds the softmax probability
/// of that target times the squashed fraction.
fn soft_encoding(actor_out: &Matrix, num_targets: usize) -> Matrix {
    let mut enc = Matrix::zeros(actor_out.rows, encoding_width(num_targets));
    for b in 0..actor_out.rows {
        let row = actor_out.row(b);
        let probs = softmax(&row[..num_targets]);
        let frac = sigmoid(row[num_targets]);
        for (slot, p) in enc.row_mut(b).iter_mut().zip(&probs[1..]) {
            *slot = p * frac;
        }
    }
    enc
}

fn logit_penalty(out: &Matrix, weight: f64) -> f64 {
    weight * out.data.iter().map(|z| z * z).sum::<f64>() / out.rows as f64
}

/// Mean critic score of the actor's soft actions, less `penalty` times the
/// mean squared norm of the raw actor outputs. The penalty keeps the
/// softmax and sigmoid heads out of saturation.
pub fn actor_objective(actor: &Mlp, critic: &Mlp, obs: &Matrix, num_targets: usize, penalty: f64) -> f64 {
    let out = actor.forward(obs);
    let enc = soft_encoding(&out, num_targets);
    let q = critic.forward(&obs.hstack(&enc));
    q.data.iter().sum::<f64>() / q.rows as f64 - logit_penalty(&out, penalty)
}

/// Objective and its gradient with respect to the actor parameters
/// (ascent direction).
pub fn actor_objective_and_grad(
    actor: &Mlp,
    critic: &Mlp,
    obs: &Matrix,
    num_targets: usize,
    penalty: f64,
) -> (f64, MlpGrad) {
    let actor_tape = actor.forward_tape(obs);
    let out = actor_tape.output();
    let enc = soft_encoding(out, num_targets);
    let critic_tape = critic.forward_tape(&obs.hstack(&enc));
    let q = critic_tape.output();
    let n = q.rows as f64;
    let objective = q.data.iter().sum::<f64>() / n - logit_penalty(out, penalty);

    let grad_q = Matrix { rows: q.rows, cols: 1, data: vec![1.0 / n; q.rows] };
    let (_, grad_in) = critic.backward(&critic_tape, &grad_q, false);
    let obs_dim = obs.cols;
    let mut grad_out = Matrix::zeros(out.rows, num_targets + 1);
    let mut g_probs = vec![0.0; num_targets];
    for b in 0..out.rows {
        let g_enc = &grad_in.row(b)[obs_dim..];
        let row_out = out.row(b);
        let probs = softmax(&row_out[..num_targets]);
        let frac = sigmoid(row_out[num_targets]);
        // d objective / d probability; Local has no slot.
        g_probs[0] = 0.0;
        for j in 1..num_targets {
            g_probs[j] = g_enc[j - 1] * frac;
        }
        let mean: f64 = probs.iter().zip(&g_probs).map(|(p, g)| p * g).sum();
        let g_frac: f64 = probs[1..].iter().zip(g_enc).map(|(p, g)| p * g).sum();
        let row = grad_out.row_mut(b);
        for j in 0..num_targets {
            row[j] = probs[j] * (g_probs[j] - mean);
        }
        row[num_targets] = g_frac * frac * (1.0 - frac);
        for (g, z) in row.iter_mut().zip(row_out) {
            *g -= 2.0 * penalty * z / n;
        }
    }
    let (grads, _) = actor.backward(&actor_tape, &grad_out, true);
    (objective, grads.expect("requested"))
}

#[derive(Debug, Clone)]
pub struct AgentLearner {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub epsilon: f64,
    pub noise_std: f64,
    pub buffer: ReplayBuffer,
    obs_dim: usize,
    num_targets: usize,
}

impl AgentLearner {
    pub fn new(obs_dim: usize, num_targets: usize, config: &TrainConfig, rng: &mut StreamRng) -> Self {
        let actor_sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(num_targets + 1))
            .collect();
        let critic_sizes: Vec<usize> = std::iter::once(obs_dim + encoding_width(num_targets))
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let actor = Mlp::new(&actor_sizes, rng);
        let critic = Mlp::new(&critic_sizes, rng);
        Self {
            actor_opt: Adam::new(&actor, config.actor_lr),
            critic_opt: Adam::new(&critic, config.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            epsilon: config.epsilon_start,
            noise_std: config.noise_start,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            obs_dim,
            num_targets,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn num_targets(&self) -> usize {
        self.num_targets
    }

    pub fn actor_output(&self, obs: &[f64]) -> Result<Vec<f64>, LearnError> {
        if obs.len() != self.obs_dim {
            return Err(LearnError::ShapeMismatch { expected: self.obs_dim, got: obs.len() });
        }
        Ok(self.actor.forward(&Matrix::from_rows(&[obs])).data)
    }

    /// Epsilon-greedy over targets, Gaussian noise on the fraction.
    pub fn select_action(&self, obs: &[f64], explore: bool, rng: &mut StreamRng) -> Result<HybridAction, LearnError> {
        let out = self.actor_output(obs)?;
        if !explore {
            return Ok(greedy_action(&out, self.num_targets));
        }
        let index = if rng.random::<f64>() < self.epsilon {
            rng.random_range(0..self.num_targets)
        } else {
            greedy_target(&out[..self.num_targets])
        };
        let noise: f64 = rng.sample(StandardNormal);
        let fraction = (sigmoid(out[self.num_targets]) + self.noise_std * noise).clamp(0.0, 1.0);
        let target = Target::from_index(index, self.num_targets - 2).expect("index within target count");
        Ok(HybridAction::new(target, fraction))
    }

    /// Per-episode decay of the exploration schedule.
    pub fn decay_exploration(&mut self, config: &TrainConfig) {
        self.epsilon = (self.epsilon * config.epsilon_decay).max(config.epsilon_min);
        self.noise_std = (self.noise_std * config.noise_decay).max(config.noise_min);
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.target_actor.is_finite() && self.target_critic.is_finite()
    }

    /// One critic step, one actor step and a soft target update. Returns the
    /// critic loss and the actor objective, both measured before the steps.
    pub fn update(&mut self, batch: &[&TransitionRecord], config: &TrainConfig) -> Result<(f64, f64), LearnError> {
        if batch.is_empty() {
            return Err(LearnError::InsufficientExperience { have: 0, need: 1 });
        }
        let t = self.num_targets;
        let obs = Matrix::from_rows(&batch.iter().map(|r| r.observation.as_slice()).collect::<Vec<_>>());
        let next = Matrix::from_rows(&batch.iter().map(|r| r.next_observation.as_slice()).collect::<Vec<_>>());
        if obs.cols != self.obs_dim || next.cols != self.obs_dim {
            return Err(LearnError::ShapeMismatch { expected: self.obs_dim, got: obs.cols });
        }
        let acts = Matrix::from_rows(&batch.iter().map(|r| encode_action(&r.action, t)).collect::<Vec<_>>());

        let next_out = self.target_actor.forward(&next);
        let next_acts = Matrix::from_rows(
            &(0..next_out.rows)
                .map(|b| encode_action(&greedy_action(next_out.row(b), t), t))
                .collect::<Vec<_>>(),
        );
        let next_q = self.target_critic.forward(&next.hstack(&next_acts));
        let targets: Vec<f64> = batch
            .iter()
            .zip(&next_q.data)
            .map(|(r, q)| {
                let bootstrap = if r.done { 0.0 } else { config.gamma * q };
                r.reward * config.reward_scale + bootstrap
            })
            .collect();

        let (loss, mut critic_grad) = critic_loss_and_grad(&self.critic, &obs.hstack(&acts), &targets);
        if !loss.is_finite() {
            return Err(LearnError::NonFiniteLoss { step: 0 });
        }
        critic_grad.clip(config.grad_clip);
        self.critic_opt.step(&mut self.critic, &critic_grad);

        let (objective, mut actor_grad) = actor_objective_and_grad(&self.actor, &self.critic, &obs, t, config.logit_penalty);
        if !objective.is_finite() {
            return Err(LearnError::NonFiniteLoss { step: 0 });
        }
        // ascend the objective
        for l in &mut actor_grad.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g = -*g);
        }
        actor_grad.clip(config.grad_clip);
        self.actor_opt.step(&mut self.actor, &actor_grad);

        self.target_critic.blend_from(&self.critic, config.tau);
        self.target_actor.blend_from(&self.actor, config.tau);
        Ok((loss, objective))
    }
}
