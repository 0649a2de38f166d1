//! C ABI over `qnet-core`.
//!
//! Every function returns a [`QnetStatus`]; on failure the message is kept
//! per thread and read with [`qnet_last_error`]. Environments and policies
//! are opaque handles owned by the caller and released with their `_free`
//! function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qnet_core::config::RunConfig;
use qnet_core::env::{HybridAction, Observation, QuantumNetworkEnv, Target, OBS_DIM};
use qnet_core::marl::{self, Policy, PolicySource};
use qnet_core::quantum::{self, Fidelity, DEFAULT_ROUND_CAP};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Runtime = 4,
    BufferTooSmall = 5,
    EpisodeFinished = 6,
    Panic = 7,
}

/// A simulator instance.
pub struct QnetEnv {
    env: QuantumNetworkEnv,
    seed: u64,
    observations: Vec<Observation>,
}

/// A checkpointed or baseline policy.
pub struct QnetPolicy {
    policy: Box<dyn Policy>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).ok());
}

struct Fail(QnetStatus, String);

impl Fail {
    fn new(status: QnetStatus, message: impl ToString) -> Self {
        Fail(status, message.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> QnetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            QnetStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QnetStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(QnetStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(QnetStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::new(QnetStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::new(QnetStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, need: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len < need {
        return Err(Fail::new(QnetStatus::BufferTooSmall, format!("{name} holds {len}, need {need}")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::new(QnetStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

fn fidelity(value: f64) -> Result<Fidelity, Fail> {
    Fidelity::new(value).map_err(|e| Fail::new(QnetStatus::InvalidArgument, e))
}

/// Message of the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qnet_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Observation width per agent.
#[no_mangle]
pub extern "C" fn qnet_obs_dim() -> usize {
    OBS_DIM
}

/// Builds an environment from a run-configuration TOML document; only its
/// topology, task, env and qos sections are used.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_env_new(toml: *const c_char, out: *mut *mut QnetEnv) -> QnetStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let out = out_arg(out, "out")?;
        let config = RunConfig::from_toml(text).map_err(|e| Fail::new(QnetStatus::Config, e))?;
        let env = QuantumNetworkEnv::new(config.env_config()).map_err(|e| Fail::new(QnetStatus::Config, e))?;
        *out = Box::into_raw(Box::new(QnetEnv { env, seed: config.seed, observations: Vec::new() }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`qnet_env_new`] and not be used afterwards; null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn qnet_env_free(env: *mut QnetEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_env_shape(env: *const QnetEnv, agents: *mut usize, targets: *mut usize) -> QnetStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| Fail::new(QnetStatus::NullPointer, "env is null"))?;
        *out_arg(agents, "agents")? = env.env.num_agents();
        *out_arg(targets, "targets")? = env.env.num_targets();
        Ok(())
    })
}

/// The root seed named in the configuration.
///
/// # Safety
/// `env` must be a live handle; `seed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_env_config_seed(env: *const QnetEnv, seed: *mut u64) -> QnetStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| Fail::new(QnetStatus::NullPointer, "env is null"))?;
        *out_arg(seed, "seed")? = env.seed;
        Ok(())
    })
}

fn write_features(observations: &[Observation], out: &mut [f64]) {
    for (chunk, o) in out.chunks_exact_mut(OBS_DIM).zip(observations) {
        chunk.copy_from_slice(&o.features);
    }
}

/// Starts an episode and writes `agents * qnet_obs_dim()` features,
/// agent-major.
///
/// # Safety
/// `env` must be a live handle; `obs` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qnet_env_reset(env: *mut QnetEnv, seed: u64, obs: *mut f64, obs_len: usize) -> QnetStatus {
    guard(|| {
        let env = out_arg(env, "env")?;
        let out = slice_out(obs, obs_len, env.env.num_agents() * OBS_DIM, "obs")?;
        env.observations = env.env.reset(seed);
        write_features(&env.observations, out);
        Ok(())
    })
}

/// Advances one step. `targets[i]` is agent `i`'s dense target index
/// (0 local, 1..=edges an edge, edges + 1 the cloud) and `fractions[i]` its
/// offload share. Writes next observations, per-agent rewards, the done
/// flag and the step's global cost.
///
/// # Safety
/// `env` must be a live handle; every array must hold its stated length
/// and the scalar out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_env_step(
    env: *mut QnetEnv,
    targets: *const u32,
    fractions: *const f64,
    agents: usize,
    obs: *mut f64,
    obs_len: usize,
    rewards: *mut f64,
    rewards_len: usize,
    done: *mut bool,
    global_cost: *mut f64,
) -> QnetStatus {
    guard(|| {
        let env = out_arg(env, "env")?;
        let n = env.env.num_agents();
        if agents != n {
            return Err(Fail::new(QnetStatus::InvalidArgument, format!("{agents} actions for {n} agents")));
        }
        let targets = slice_arg(targets, agents, "targets")?;
        let fractions = slice_arg(fractions, agents, "fractions")?;
        let obs = slice_out(obs, obs_len, n * OBS_DIM, "obs")?;
        let rewards = slice_out(rewards, rewards_len, n, "rewards")?;
        let done = out_arg(done, "done")?;
        let global_cost = out_arg(global_cost, "global_cost")?;
        let edges = env.env.num_targets() - 2;
        let actions = targets
            .iter()
            .zip(fractions)
            .map(|(&t, &x)| {
                let target = Target::from_index(t as usize, edges)
                    .ok_or_else(|| Fail::new(QnetStatus::InvalidArgument, format!("target index {t} out of range")))?;
                Ok(HybridAction::new(target, x))
            })
            .collect::<Result<Vec<_>, Fail>>()?;
        if env.env.is_done() {
            return Err(Fail::new(QnetStatus::EpisodeFinished, "episode finished; reset first"));
        }
        let result = env.env.step(&actions).map_err(|e| Fail::new(QnetStatus::InvalidArgument, e))?;
        write_features(&result.observations, obs);
        rewards.copy_from_slice(&result.rewards);
        *done = result.done;
        *global_cost = result.info.global_cost;
        env.observations = result.observations;
        Ok(())
    })
}

/// Loads a checkpoint, or builds a baseline when `spec` names one
/// (`random`, `greedy`, `all-local`, `all-cloud`). The policy is checked
/// against `env`'s shape.
///
/// # Safety
/// `spec` must be a NUL-terminated string, `env` a live handle and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_policy_new(
    spec: *const c_char,
    env: *const QnetEnv,
    seed: u64,
    out: *mut *mut QnetPolicy,
) -> QnetStatus {
    guard(|| {
        let spec = str_arg(spec, "spec")?;
        let env = env.as_ref().ok_or_else(|| Fail::new(QnetStatus::NullPointer, "env is null"))?;
        let out = out_arg(out, "out")?;
        let source = PolicySource::baseline(spec).unwrap_or_else(|_| PolicySource::Checkpoint(PathBuf::from(spec)));
        let policy = source.build(&env.env, seed).map_err(|e| Fail::new(QnetStatus::Runtime, e))?;
        *out = Box::into_raw(Box::new(QnetPolicy { policy }));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from [`qnet_policy_new`] and not be used afterwards;
/// null is ignored.
#[no_mangle]
pub unsafe extern "C" fn qnet_policy_free(policy: *mut QnetPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// The policy's action for `agent` on the environment's latest observation.
///
/// # Safety
/// Handles must be live; `target` and `fraction` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_policy_act(
    policy: *mut QnetPolicy,
    env: *const QnetEnv,
    agent: usize,
    target: *mut u32,
    fraction: *mut f64,
) -> QnetStatus {
    guard(|| {
        let policy = out_arg(policy, "policy")?;
        let env = env.as_ref().ok_or_else(|| Fail::new(QnetStatus::NullPointer, "env is null"))?;
        let target = out_arg(target, "target")?;
        let fraction = out_arg(fraction, "fraction")?;
        let obs = env
            .observations
            .get(agent)
            .ok_or_else(|| Fail::new(QnetStatus::InvalidArgument, format!("no observation for agent {agent}; reset first")))?;
        let action = policy.policy.act(obs);
        *target = action.target.index(env.env.num_targets() - 2) as u32;
        *fraction = action.fraction;
        Ok(())
    })
}

/// Mean total cost of `episodes` evaluation episodes; resets `env`.
///
/// # Safety
/// Handles must be live; `mean` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_policy_evaluate(
    policy: *mut QnetPolicy,
    env: *mut QnetEnv,
    episodes: u32,
    seed: u64,
    mean: *mut f64,
) -> QnetStatus {
    guard(|| {
        let policy = out_arg(policy, "policy")?;
        let env = out_arg(env, "env")?;
        let mean = out_arg(mean, "mean")?;
        let evaluation = marl::evaluate_policy(&mut env.env, policy.policy.as_mut(), episodes, seed)
            .map_err(|e| Fail::new(QnetStatus::Runtime, e))?;
        env.observations.clear();
        *mean = evaluation.mean;
        Ok(())
    })
}

/// One purification round: output fidelity and success probability.
///
/// # Safety
/// Out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_purify_once(f: f64, fidelity_out: *mut f64, success_probability: *mut f64) -> QnetStatus {
    guard(|| {
        let result = quantum::purify_once(fidelity(f)?);
        *out_arg(fidelity_out, "fidelity_out")? = result.fidelity.value();
        *out_arg(success_probability, "success_probability")? = result.success_probability;
        Ok(())
    })
}

/// Rounds needed to lift `initial` to `target`; `InvalidArgument` when out
/// of reach.
///
/// # Safety
/// `rounds` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_purification_rounds(initial: f64, target: f64, rounds: *mut u32) -> QnetStatus {
    guard(|| {
        let out = out_arg(rounds, "rounds")?;
        *out = quantum::purification_rounds(fidelity(initial)?, fidelity(target)?, DEFAULT_ROUND_CAP)
            .ok_or_else(|| Fail::new(QnetStatus::InvalidArgument, format!("fidelity {target} unreachable from {initial}")))?;
        Ok(())
    })
}

/// # Safety
/// `pairs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_expected_pairs_consumed(initial: f64, target: f64, pairs: *mut f64) -> QnetStatus {
    guard(|| {
        let out = out_arg(pairs, "pairs")?;
        *out = quantum::expected_pairs_consumed(fidelity(initial)?, fidelity(target)?, DEFAULT_ROUND_CAP)
            .map_err(|e| Fail::new(QnetStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// Physical qubits for an `n -> k` autoencoder.
///
/// # Safety
/// `qubits` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qnet_autoencoder_qubits(n: u32, k: u32, qubits: *mut u32) -> QnetStatus {
    guard(|| {
        let out = out_arg(qubits, "qubits")?;
        *out = quantum::autoencoder_qubit_requirement(n, k).map_err(|e| Fail::new(QnetStatus::InvalidArgument, e))?.total;
        Ok(())
    })
}
