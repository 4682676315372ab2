#ifndef FIBERLAB_H
#define FIBERLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlStatus {
  FL_STATUS_OK = 0,
  FL_STATUS_NULL_POINTER = 1,
  FL_STATUS_INVALID_ARGUMENT = 2,
  FL_STATUS_IO = 3,
  FL_STATUS_FORMAT = 4,
  FL_STATUS_CONFIG = 5,
  FL_STATUS_NUMERICAL = 6,
  FL_STATUS_PANIC = 7,
} FlStatus;

/**
 * Method identifiers used in [`FlMetrics`].
 */
typedef enum FlMethod {
  FL_METHOD_LINEAR_EQ = 0,
  FL_METHOD_DBP = 1,
  FL_METHOD_FCNN = 2,
  FL_METHOD_TRANSFORMER = 3,
} FlMethod;

/**
 * Trained equalizer handle.
 */
typedef struct FlCheckpoint FlCheckpoint;

/**
 * Experiment configuration handle.
 */
typedef struct FlExperiment FlExperiment;

/**
 * Results of one pipeline run.
 */
typedef struct FlReport FlReport;

/**
 * Figures of merit for one receiver method.
 */
typedef struct FlMetrics {
  enum FlMethod method;
  double ber;
  double ser;
  double q_db;
  double evm_pct;
  /**
   * Nonzero when no bit errors were seen and `q_db` is a lower bound.
   */
  uint8_t ber_is_floor;
  double runtime_s;
} FlMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fl_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator, so a caller can size a second attempt.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fl_last_error_message(char *buf, size_t len);

/**
 * Q factor in dB for a bit error rate in `(0, 0.5)`.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum FlStatus fl_q_factor(double ber, double *out);

/**
 * Writes the 32 binary32 bits of `x`, most significant first, as 0/1 bytes.
 *
 * # Safety
 * `out` must be null or point to 32 writable bytes.
 */
enum FlStatus fl_float_to_bits(double x, uint8_t *out);

/**
 * Creates an experiment from TOML text; null selects the defaults.
 *
 * # Safety
 * `toml` must be null or a NUL-terminated string; `out` must be valid for
 * a write.
 */
enum FlStatus fl_experiment_new(const char *toml, struct FlExperiment **out);

/**
 * Applies one `key=value` override, e.g. `run.n_symbols=4096`.
 *
 * # Safety
 * `exp` must be a live handle; `assignment` a NUL-terminated string.
 */
enum FlStatus fl_experiment_set(struct FlExperiment *exp, const char *assignment);

/**
 * Runs transmission, propagation and every configured receiver once.
 *
 * # Safety
 * `exp` must be a live handle; `out` must be valid for a write.
 */
enum FlStatus fl_experiment_run(const struct FlExperiment *exp,
                                uint64_t seed,
                                struct FlReport **out);

/**
 * # Safety
 * `exp` must be null or a handle from [`fl_experiment_new`] not yet freed.
 */
void fl_experiment_free(struct FlExperiment *exp);

/**
 * Number of method rows in a report; 0 for null.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t fl_report_len(const struct FlReport *report);

/**
 * # Safety
 * `report` must be a live handle; `out` must be valid for a write.
 */
enum FlStatus fl_report_get(const struct FlReport *report, size_t index, struct FlMetrics *out);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void fl_report_free(struct FlReport *report);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum FlStatus fl_checkpoint_load(const char *path, struct FlCheckpoint **out);

/**
 * Trainable parameter count of the stored model; 0 for null.
 *
 * # Safety
 * `ck` must be null or a live handle.
 */
size_t fl_checkpoint_n_params(const struct FlCheckpoint *ck);

/**
 * Equalizes `n_symbols` received symbols given as interleaved `I, Q`
 * pairs. The first and last `window_n` symbols are copied through.
 *
 * # Safety
 * `ck` must be a live handle; `input` and `output` must each hold
 * `2 * n_symbols` doubles and may alias.
 */
enum FlStatus fl_checkpoint_equalize(const struct FlCheckpoint *ck,
                                     const double *input,
                                     double *output,
                                     size_t n_symbols);

/**
 * # Safety
 * `ck` must be null or a handle not yet freed.
 */
void fl_checkpoint_free(struct FlCheckpoint *ck);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIBERLAB_H */
