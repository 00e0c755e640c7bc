#ifndef IRSAD_H
#define IRSAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IrsadStatus {
  IRSAD_STATUS_OK = 0,
  IRSAD_STATUS_NULL_ARGUMENT = 1,
  IRSAD_STATUS_CONFIG = 2,
  IRSAD_STATUS_NUMERICAL = 3,
  IRSAD_STATUS_MISSING_CHECKPOINT = 4,
  IRSAD_STATUS_FORMAT = 5,
  IRSAD_STATUS_IO = 6,
  IRSAD_STATUS_DIMENSION = 7,
  IRSAD_STATUS_UNDEFINED_METRIC = 8,
  IRSAD_STATUS_PANIC = 9,
} IrsadStatus;

/**
 * A placed scenario with its signatures and IRS phases.
 */
typedef struct IrsadDeployment IrsadDeployment;

/**
 * A ready-to-run detector.
 */
typedef struct IrsadDetector IrsadDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on this thread.
 */
const char *irsad_last_error_message(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *irsad_version(void);

/**
 * Builds a deployment from scenario TOML, or the desk-scale scenario when
 * `toml` is null. `seed` replaces the scenario seed.
 *
 * # Safety
 * `toml` must be null or a NUL-terminated string; `out` must be writable.
 */
enum IrsadStatus irsad_deployment_new(const char *toml,
                                      uint64_t seed,
                                      struct IrsadDeployment **out);

/**
 * # Safety
 * `dep` must be null or come from [`irsad_deployment_new`] and not be freed twice.
 */
void irsad_deployment_free(struct IrsadDeployment *dep);

/**
 * Signature length `L`, antennas `M` and devices `K`.
 *
 * # Safety
 * `dep` must be a live handle; the outputs must be writable.
 */
enum IrsadStatus irsad_deployment_dims(const struct IrsadDeployment *dep,
                                       size_t *l,
                                       size_t *m,
                                       size_t *k);

/**
 * Draws Monte Carlo frame `index` under `seed`: `y` receives `2*L*M`
 * doubles, `a` and `b` receive `K` true activities and indicators. Frames
 * depend only on `(seed, index)`.
 *
 * # Safety
 * `dep` must be a live handle; each buffer must hold the stated length.
 */
enum IrsadStatus irsad_draw_frame(const struct IrsadDeployment *dep,
                                  uint64_t seed,
                                  uint64_t index,
                                  double *y,
                                  size_t y_len,
                                  double *a,
                                  uint8_t *b,
                                  size_t k_len);

/**
 * Creates a detector from its id (`cd`, `pgd:<expert>`, `unfold:<expert|moe>`).
 * Learned detectors need `checkpoint`, and `unfold:moe` also `gate`; either
 * may be null otherwise.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum IrsadStatus irsad_detector_new(const char *id,
                                    const char *checkpoint,
                                    const char *gate,
                                    struct IrsadDetector **out);

/**
 * # Safety
 * `det` must be null or come from [`irsad_detector_new`] and not be freed twice.
 */
void irsad_detector_free(struct IrsadDetector *det);

/**
 * Estimates the `K` activities from one received frame `y` (`2*L*M` doubles,
 * working units as produced by [`irsad_draw_frame`]).
 *
 * # Safety
 * Handles must be live; `y` and `a_hat` must hold the stated lengths.
 */
enum IrsadStatus irsad_detect(const struct IrsadDetector *det,
                              const struct IrsadDeployment *dep,
                              const double *y,
                              size_t y_len,
                              double *a_hat,
                              size_t k_len);

/**
 * Pooled miss and false-alarm probabilities of `frames` estimates, each of
 * `k` devices, laid out frame after frame.
 *
 * # Safety
 * `a_hat` and `b` must hold `frames * k` values; `pm` and `pf` must be writable.
 */
enum IrsadStatus irsad_pm_pf(const double *a_hat,
                             const uint8_t *b,
                             size_t frames,
                             size_t k,
                             double threshold,
                             double *pm,
                             double *pf);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRSAD_H */
