#ifndef WMLAB_H
#define WMLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WmlabStatus {
  WMLAB_STATUS_OK = 0,
  WMLAB_STATUS_NULL_POINTER = 1,
  WMLAB_STATUS_INVALID_PARAMETER = 2,
  /**
   * Training failure, non-finite loss or degenerate gradient.
   */
  WMLAB_STATUS_RUNTIME = 3,
  WMLAB_STATUS_IO = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  WMLAB_STATUS_UTF8 = 5,
  /**
   * A caller-provided buffer is too small.
   */
  WMLAB_STATUS_BUFFER = 6,
  WMLAB_STATUS_PANIC = 7,
} WmlabStatus;

typedef enum WmlabTier {
  WMLAB_TIER_LOW = 0,
  WMLAB_TIER_MODERATE = 1,
  WMLAB_TIER_HIGH = 2,
} WmlabTier;

/**
 * Opaque experiment configuration.
 */
typedef struct WmlabConfig WmlabConfig;

/**
 * Opaque world-model parameters.
 */
typedef struct WmlabParams WmlabParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last error on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *wmlab_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *wmlab_version(void);

/**
 * A config with every default.
 */
struct WmlabConfig *wmlab_config_new(void);

/**
 * Parse a TOML config.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum WmlabStatus wmlab_config_from_toml(const char *toml, struct WmlabConfig **out);

/**
 * # Safety
 * `cfg` must come from this library and not be used afterwards.
 */
void wmlab_config_free(struct WmlabConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum WmlabStatus wmlab_config_set_seed(struct WmlabConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum WmlabStatus wmlab_config_set_trials(struct WmlabConfig *cfg, size_t trials);

/**
 * Rollout length `K` of the config.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum WmlabStatus wmlab_config_steps(const struct WmlabConfig *cfg, size_t *out);

/**
 * Run a named experiment (`core`, `arch-compare`, `mitigate`,
 * `reward-gap`, `risk`, `gradcheck`), writing its files under `out_dir`.
 * `checks_failed` receives the number of failed property checks.
 *
 * # Safety
 * String arguments must be nul-terminated; pointers must be valid.
 */
enum WmlabStatus wmlab_run_experiment(const struct WmlabConfig *cfg,
                                      const char *name,
                                      const char *out_dir,
                                      size_t *checks_failed);

/**
 * Amplification ratios `A_1..A_K` of the world model over the baseline.
 * `ratios` must hold `capacity` doubles; `written` receives `K`. Fails with
 * [`WmlabStatus::Buffer`] (and still sets `written`) when `capacity < K`.
 *
 * # Safety
 * `ratios` must point to `capacity` writable doubles.
 */
enum WmlabStatus wmlab_amplification(const struct WmlabConfig *cfg,
                                     double *ratios,
                                     size_t capacity,
                                     size_t *written);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum WmlabStatus wmlab_classify_tier(double a_1, enum WmlabTier *out);

/**
 * Draw world-model parameters with entries `N(0, weight_std²)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum WmlabStatus wmlab_params_new(size_t d_o,
                                  size_t d_h,
                                  size_t d_z,
                                  double weight_std,
                                  uint64_t seed,
                                  struct WmlabParams **out);

/**
 * # Safety
 * `path` must be nul-terminated and `out` a valid pointer.
 */
enum WmlabStatus wmlab_params_load(const char *path, struct WmlabParams **out);

/**
 * # Safety
 * `params` must be a live handle and `path` nul-terminated.
 */
enum WmlabStatus wmlab_params_save(const struct WmlabParams *params, const char *path);

/**
 * Total scalar count of the parameters.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum WmlabStatus wmlab_params_len(const struct WmlabParams *params, size_t *out);

/**
 * # Safety
 * `params` must come from this library and not be used afterwards.
 */
void wmlab_params_free(struct WmlabParams *params);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WMLAB_H */
