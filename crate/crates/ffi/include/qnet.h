#ifndef QNET_H
#define QNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum QnetStatus {
  QNET_STATUS_OK = 0,
  QNET_STATUS_NULL_POINTER = 1,
  QNET_STATUS_INVALID_ARGUMENT = 2,
  QNET_STATUS_CONFIG = 3,
  QNET_STATUS_RUNTIME = 4,
  QNET_STATUS_BUFFER_TOO_SMALL = 5,
  QNET_STATUS_EPISODE_FINISHED = 6,
  QNET_STATUS_PANIC = 7,
} QnetStatus;

/**
 * A simulator instance.
 */
typedef struct QnetEnv QnetEnv;

/**
 * A checkpointed or baseline policy.
 */
typedef struct QnetPolicy QnetPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * success. Valid until the next call on the same thread.
 */
const char *qnet_last_error(void);

/**
 * Observation width per agent.
 */
size_t qnet_obs_dim(void);

/**
 * Builds an environment from a run-configuration TOML document; only its
 * topology, task, env and qos sections are used.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum QnetStatus qnet_env_new(const char *toml, struct QnetEnv **out);

/**
 * # Safety
 * `env` must come from [`qnet_env_new`] and not be used afterwards; null is
 * ignored.
 */
void qnet_env_free(struct QnetEnv *env);

/**
 * # Safety
 * `env` must be a live handle; the out pointers must be writable.
 */
enum QnetStatus qnet_env_shape(const struct QnetEnv *env, size_t *agents, size_t *targets);

/**
 * The root seed named in the configuration.
 *
 * # Safety
 * `env` must be a live handle; `seed` must be writable.
 */
enum QnetStatus qnet_env_config_seed(const struct QnetEnv *env, uint64_t *seed);

/**
 * Starts an episode and writes `agents * qnet_obs_dim()` features,
 * agent-major.
 *
 * # Safety
 * `env` must be a live handle; `obs` must hold `obs_len` doubles.
 */
enum QnetStatus qnet_env_reset(struct QnetEnv *env, uint64_t seed, double *obs, size_t obs_len);

/**
 * Advances one step. `targets[i]` is agent `i`'s dense target index
 * (0 local, 1..=edges an edge, edges + 1 the cloud) and `fractions[i]` its
 * offload share. Writes next observations, per-agent rewards, the done
 * flag and the step's global cost.
 *
 * # Safety
 * `env` must be a live handle; every array must hold its stated length
 * and the scalar out pointers must be writable.
 */
enum QnetStatus qnet_env_step(struct QnetEnv *env,
                              const uint32_t *targets,
                              const double *fractions,
                              size_t agents,
                              double *obs,
                              size_t obs_len,
                              double *rewards,
                              size_t rewards_len,
                              bool *done,
                              double *global_cost);

/**
 * Loads a checkpoint, or builds a baseline when `spec` names one
 * (`random`, `greedy`, `all-local`, `all-cloud`). The policy is checked
 * against `env`'s shape.
 *
 * # Safety
 * `spec` must be a NUL-terminated string, `env` a live handle and `out`
 * writable.
 */
enum QnetStatus qnet_policy_new(const char *spec,
                                const struct QnetEnv *env,
                                uint64_t seed,
                                struct QnetPolicy **out);

/**
 * # Safety
 * `policy` must come from [`qnet_policy_new`] and not be used afterwards;
 * null is ignored.
 */
void qnet_policy_free(struct QnetPolicy *policy);

/**
 * The policy's action for `agent` on the environment's latest observation.
 *
 * # Safety
 * Handles must be live; `target` and `fraction` must be writable.
 */
enum QnetStatus qnet_policy_act(struct QnetPolicy *policy,
                                const struct QnetEnv *env,
                                size_t agent,
                                uint32_t *target,
                                double *fraction);

/**
 * Mean total cost of `episodes` evaluation episodes; resets `env`.
 *
 * # Safety
 * Handles must be live; `mean` must be writable.
 */
enum QnetStatus qnet_policy_evaluate(struct QnetPolicy *policy,
                                     struct QnetEnv *env,
                                     uint32_t episodes,
                                     uint64_t seed,
                                     double *mean);

/**
 * One purification round: output fidelity and success probability.
 *
 * # Safety
 * Out pointers must be writable.
 */
enum QnetStatus qnet_purify_once(double f, double *fidelity_out, double *success_probability);

/**
 * Rounds needed to lift `initial` to `target`; `InvalidArgument` when out
 * of reach.
 *
 * # Safety
 * `rounds` must be writable.
 */
enum QnetStatus qnet_purification_rounds(double initial, double target, uint32_t *rounds);

/**
 * # Safety
 * `pairs` must be writable.
 */
enum QnetStatus qnet_expected_pairs_consumed(double initial, double target, double *pairs);

/**
 * Physical qubits for an `n -> k` autoencoder.
 *
 * # Safety
 * `qubits` must be writable.
 */
enum QnetStatus qnet_autoencoder_qubits(uint32_t n, uint32_t k, uint32_t *qubits);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QNET_H */
