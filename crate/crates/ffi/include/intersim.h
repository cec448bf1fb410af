#ifndef INTERSIM_H
#define INTERSIM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define ISIM_ACTION_STOP 0

#define ISIM_ACTION_GO 1

typedef enum {
  ISIM_STATUS_OK = 0,
  ISIM_STATUS_NULL_POINTER = 1,
  ISIM_STATUS_INVALID_ARGUMENT = 2,
  ISIM_STATUS_INVARIANT_BREACH = 3,
  ISIM_STATUS_EPISODE_DONE = 4,
  ISIM_STATUS_UNKNOWN_AGENT = 5,
  ISIM_STATUS_BUFFER_TOO_SMALL = 6,
  ISIM_STATUS_PANIC = 7,
} IsimStatus;

typedef enum {
  ISIM_POLLUTANT_FUEL = 0,
  ISIM_POLLUTANT_CO2 = 1,
  ISIM_POLLUTANT_CO = 2,
  ISIM_POLLUTANT_HC = 3,
  ISIM_POLLUTANT_NOX = 4,
} IsimPollutant;

/**
 * Opaque environment handle.
 */
typedef struct IsimEnv IsimEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *isim_last_error(void);

/**
 * Creates an environment and resets it. `scenario` is a scenario file path or
 * `"paper4"`; `warmup_s` seconds run under the FCFS heuristic before the first
 * observation.
 *
 * # Safety
 * `scenario` must be a valid NUL-terminated string and `out` a valid pointer.
 */
IsimStatus isim_env_new(const char *scenario,
                        uint64_t seed,
                        double rv_rate,
                        uint64_t horizon_ticks,
                        double warmup_s,
                        IsimEnv **out);

/**
 * # Safety
 * `env` must come from [`isim_env_new`] and not be used afterwards. Null is a no-op.
 */
void isim_env_free(IsimEnv *env);

/**
 * Starts a new episode with `seed`.
 *
 * # Safety
 * `env` must be a live handle.
 */
IsimStatus isim_env_reset(IsimEnv *env, uint64_t seed);

/**
 * Observation length per agent, or 0 for a null handle.
 *
 * # Safety
 * `env` must be a live handle or null.
 */
size_t isim_env_obs_dim(const IsimEnv *env);

/**
 * Number of RVs awaiting an action.
 *
 * # Safety
 * `env` must be a live handle or null.
 */
size_t isim_env_num_agents(const IsimEnv *env);

/**
 * Simulated time in seconds.
 *
 * # Safety
 * `env` must be a live handle or null.
 */
double isim_env_time(const IsimEnv *env);

/**
 * # Safety
 * `env` must be a live handle or null.
 */
bool isim_env_done(const IsimEnv *env);

/**
 * Conflict-monitor events since the last reset.
 *
 * # Safety
 * `env` must be a live handle or null.
 */
uint64_t isim_env_conflicts(const IsimEnv *env);

/**
 * Copies agent `index`'s id and observation. `obs_len` must be at least
 * [`isim_env_obs_dim`].
 *
 * # Safety
 * `env` must be a live handle; `id` and `obs` must be writable for 1 and
 * `obs_len` elements.
 */
IsimStatus isim_env_agent(const IsimEnv *env,
                          size_t index,
                          uint64_t *id,
                          double *obs,
                          size_t obs_len);

/**
 * Applies `n` actions and advances one step. Agents without an action stop.
 * `rewards`, if not null, receives the reward of each listed agent in order.
 *
 * # Safety
 * `env` must be a live handle; `ids` and `actions` must hold `n` elements;
 * `rewards` must be null or writable for `n` elements; `done` must be null
 * or writable.
 */
IsimStatus isim_env_step(IsimEnv *env,
                         const uint64_t *ids,
                         const uint8_t *actions,
                         size_t n,
                         double *rewards,
                         bool *done);

/**
 * Instantaneous emission rate of one PC_G_EU4 vehicle at speed `v` (m/s) and
 * acceleration `a` (m/s^2). Fuel in ml/s, everything else in mg/s.
 *
 * # Safety
 * `out` must be writable.
 */
IsimStatus isim_emission_rate(IsimPollutant pollutant, double v, double a, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INTERSIM_H */
