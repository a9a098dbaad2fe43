#ifndef QNNCLUSTER_H
#define QNNCLUSTER_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum qnn_status_t {
  QNN_STATUS_T_OK = 0,
  /**
   * Null pointer or malformed UTF-8/JSON argument.
   */
  QNN_STATUS_T_INVALID_ARGUMENT = 1,
  /**
   * Structurally valid input rejected by model validation.
   */
  QNN_STATUS_T_VALIDATION = 2,
  /**
   * Simulation failed at runtime.
   */
  QNN_STATUS_T_RUNTIME = 3,
} qnn_status_t;

/**
 * Opaque calibration handle.
 */
typedef struct qnn_calibration_t qnn_calibration_t;

/**
 * Opaque convolution-job handle.
 */
typedef struct qnn_rbe_job_t qnn_rbe_job_t;

/**
 * Cycle breakdown of one engine job.
 */
typedef struct qnn_cycle_report_t {
  uint64_t total_cycles;
  uint64_t load_cycles;
  uint64_t compute_cycles;
  uint64_t normquant_cycles;
  uint64_t streamout_cycles;
  double ops_per_cycle;
} qnn_cycle_report_t;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *qnn_last_error_message(void);

/**
 * Built-in calibration constants. Free with `qnn_calibration_free`.
 */
struct qnn_calibration_t *qnn_calibration_default(void);

/**
 * Loads calibration constants from a JSON file; returns null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct qnn_calibration_t *qnn_calibration_load(const char *path);

/**
 * # Safety
 * `c` must come from a `qnn_calibration_*` constructor and not be freed twice.
 */
void qnn_calibration_free(struct qnn_calibration_t *c);

/**
 * Parses and validates a job from its JSON description.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string; `out` must be writable.
 */
enum qnn_status_t qnn_rbe_job_from_json(const char *json, struct qnn_rbe_job_t **out);

/**
 * # Safety
 * `j` must come from `qnn_rbe_job_from_json` and not be freed twice.
 */
void qnn_rbe_job_free(struct qnn_rbe_job_t *j);

/**
 * Runs the cycle model for a validated job.
 *
 * # Safety
 * All pointers must be live handles/writable memory.
 */
enum qnn_status_t qnn_rbe_cycle_report(const struct qnn_rbe_job_t *job,
                                       const struct qnn_calibration_t *calib,
                                       struct qnn_cycle_report_t *out);

/**
 * Minimum error-free supply voltage at `freq_hz`, with or without the
 * adaptive body-bias loop.
 *
 * # Safety
 * `calib` must be a live handle and `out_vdd` writable.
 */
enum qnn_status_t qnn_min_vdd(const struct qnn_calibration_t *calib,
                              double freq_hz,
                              bool abb_on,
                              double *out_vdd);

/**
 * Tiles and schedules a network (JSON array of layer descriptors) and
 * returns the per-layer cost table as a CSV string. Free the string with
 * `qnn_string_free`.
 *
 * # Safety
 * All pointers must be valid; `out_csv` receives an owned C string.
 */
enum qnn_status_t qnn_net_schedule_csv(const struct qnn_calibration_t *calib,
                                       const char *network_json,
                                       double vdd,
                                       double freq_hz,
                                       double vbb,
                                       char **out_csv);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void qnn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QNNCLUSTER_H */
