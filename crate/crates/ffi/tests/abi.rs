use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use qnet_ffi::*;

const SMALL: &str = "seed = 5\n[topology]\nmobile = 2\nedge = 1\ncloud = 1\n[env]\nepisode_length = 10\n";

fn last_error() -> String {
    let p = qnet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_env(toml: &str) -> *mut QnetEnv {
    let text = CString::new(toml).unwrap();
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { qnet_env_new(text.as_ptr(), &mut env) }, QnetStatus::Ok);
    env
}

#[test]
fn quantum_wrappers_match_closed_forms() {
    let (mut f, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { qnet_purify_once(0.5, &mut f, &mut p) }, QnetStatus::Ok);
    assert_eq!((f, p), (0.5, 0.5));
    let mut rounds = 0;
    assert_eq!(unsafe { qnet_purification_rounds(0.8, 0.99, &mut rounds) }, QnetStatus::Ok);
    assert_eq!(rounds, 2);
    let mut qubits = 0;
    assert_eq!(unsafe { qnet_autoencoder_qubits(9, 3, &mut qubits) }, QnetStatus::Ok);
    assert_eq!(qubits, 16);
    let mut pairs = 0.0;
    assert_eq!(unsafe { qnet_expected_pairs_consumed(0.8, 0.99, &mut pairs) }, QnetStatus::Ok);
    // 2/0.68 * 2/(f1^2 + (1-f1)^2) with f1 = 0.64/0.68
    let f1 = 0.64 / 0.68;
    assert!((pairs - 2.0 / 0.68 * 2.0 / (f1 * f1 + (1.0 - f1) * (1.0 - f1))).abs() < 1e-12);
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut qubits = 0;
    assert_eq!(unsafe { qnet_autoencoder_qubits(3, 5, &mut qubits) }, QnetStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { qnet_autoencoder_qubits(3, 1, ptr::null_mut()) }, QnetStatus::NullPointer);
    let mut rounds = 0;
    assert_eq!(unsafe { qnet_purification_rounds(0.5, 0.9, &mut rounds) }, QnetStatus::InvalidArgument);
    assert_eq!(unsafe { qnet_purify_once(1.5, &mut 0.0, &mut 0.0) }, QnetStatus::InvalidArgument);
    // success clears the message
    assert_eq!(unsafe { qnet_autoencoder_qubits(3, 1, &mut qubits) }, QnetStatus::Ok);
    assert!(qnet_last_error().is_null());
}

#[test]
fn bad_config_is_a_config_error() {
    let text = CString::new("[qos]\nd = -1.0\n").unwrap();
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { qnet_env_new(text.as_ptr(), &mut env) }, QnetStatus::Config);
    assert!(env.is_null());
    assert!(last_error().contains("qos.d"));
}

#[test]
fn episode_runs_through_the_abi() {
    let env = new_env(SMALL);
    let (mut agents, mut targets) = (0, 0);
    assert_eq!(unsafe { qnet_env_shape(env, &mut agents, &mut targets) }, QnetStatus::Ok);
    assert_eq!((agents, targets), (2, 3));
    let width = agents * qnet_obs_dim();
    let mut obs = vec![0.0; width];
    assert_eq!(unsafe { qnet_env_reset(env, 1, obs.as_mut_ptr(), 1) }, QnetStatus::BufferTooSmall);
    assert_eq!(unsafe { qnet_env_reset(env, 1, obs.as_mut_ptr(), width) }, QnetStatus::Ok);

    let spec = CString::new("all-cloud").unwrap();
    let mut policy = ptr::null_mut();
    assert_eq!(unsafe { qnet_policy_new(spec.as_ptr(), env, 0, &mut policy) }, QnetStatus::Ok);

    let mut rewards = vec![0.0; agents];
    let mut done = false;
    let mut steps = 0;
    while !done {
        let mut t = vec![0u32; agents];
        let mut x = vec![0.0; agents];
        for a in 0..agents {
            assert_eq!(unsafe { qnet_policy_act(policy, env, a, &mut t[a], &mut x[a]) }, QnetStatus::Ok);
        }
        let mut cost = 0.0;
        let status = unsafe {
            qnet_env_step(env, t.as_ptr(), x.as_ptr(), agents, obs.as_mut_ptr(), width, rewards.as_mut_ptr(), agents, &mut done, &mut cost)
        };
        assert_eq!(status, QnetStatus::Ok);
        assert!(rewards.iter().all(|&r| r == -cost));
        steps += 1;
    }
    assert_eq!(steps, 10);
    let (t, x) = ([0u32; 2], [0.0; 2]);
    let status = unsafe {
        qnet_env_step(env, t.as_ptr(), x.as_ptr(), agents, obs.as_mut_ptr(), width, rewards.as_mut_ptr(), agents, &mut done, &mut 0.0)
    };
    assert_eq!(status, QnetStatus::EpisodeFinished);

    let mut mean = 0.0;
    assert_eq!(unsafe { qnet_policy_evaluate(policy, env, 3, 9, &mut mean) }, QnetStatus::Ok);
    assert!(mean > 0.0);
    unsafe {
        qnet_policy_free(policy);
        qnet_env_free(env);
    }
}

#[test]
fn out_of_range_target_is_rejected() {
    let env = new_env(SMALL);
    let mut obs = vec![0.0; 2 * qnet_obs_dim()];
    unsafe { qnet_env_reset(env, 1, obs.as_mut_ptr(), obs.len()) };
    let (t, x) = ([0u32, 7], [0.0, 0.5]);
    let mut rewards = [0.0; 2];
    let status = unsafe {
        qnet_env_step(env, t.as_ptr(), x.as_ptr(), 2, obs.as_mut_ptr(), obs.len(), rewards.as_mut_ptr(), 2, &mut false, &mut 0.0)
    };
    assert_eq!(status, QnetStatus::InvalidArgument);
    unsafe { qnet_env_free(env) };
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let env = new_env(SMALL);
    let dir = tempfile::tempdir().unwrap();
    let spec = CString::new(dir.path().join("absent.bin").to_str().unwrap()).unwrap();
    let mut policy = ptr::null_mut();
    assert_eq!(unsafe { qnet_policy_new(spec.as_ptr(), env, 0, &mut policy) }, QnetStatus::Runtime);
    assert!(policy.is_null());
    unsafe { qnet_env_free(env) };
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qnet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["qnet_env_new", "qnet_env_step", "qnet_policy_act", "qnet_last_error", "QNET_STATUS_OK", "typedef struct QnetEnv QnetEnv"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // syntax-check with the system C compiler when one is installed
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
