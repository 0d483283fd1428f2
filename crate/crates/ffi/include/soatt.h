#ifndef SOATT_H
#define SOATT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SoattStatus {
  SOATT_STATUS_OK = 0,
  SOATT_STATUS_NULL_POINTER = 1,
  SOATT_STATUS_INVALID_ARGUMENT = 2,
  SOATT_STATUS_CONFIG = 3,
  SOATT_STATUS_SOLVER = 4,
  SOATT_STATUS_SIMULATION = 5,
  SOATT_STATUS_IO = 6,
  SOATT_STATUS_MALFORMED_TRACE = 7,
  SOATT_STATUS_OUT_OF_RANGE = 8,
  SOATT_STATUS_PANIC = 9,
} SoattStatus;

/**
 * A validated scenario.
 */
typedef struct SoattScenario SoattScenario;

/**
 * A finished simulation run.
 */
typedef struct SoattTrace SoattTrace;

typedef struct SoattRobotState {
  double x;
  double y;
  double theta;
  double u1;
  double u2;
  double ref_x;
  double ref_y;
} SoattRobotState;

typedef struct SoattMetrics {
  double rmse;
  double mae;
  double std_dev;
  double mean_intervention_time;
  double min_distance;
  size_t violations;
  double max_final_error;
  size_t deadlock_events;
  size_t feasibility_events;
} SoattMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *soatt_version(void);

/**
 * Message of the last failed call on this thread, or null after a success.
 * Valid until the next `soatt_*` call on the same thread.
 */
const char *soatt_last_error_message(void);

/**
 * Parses a TOML scenario document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum SoattStatus soatt_scenario_from_toml(const char *toml, struct SoattScenario **out);

/**
 * Loads a TOML scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SoattStatus soatt_scenario_load(const char *path, struct SoattScenario **out);

/**
 * Robots on a circle of `radius` meters swapping to antipodal points at `speed` m/s.
 *
 * # Safety
 * `out` must be writable.
 */
enum SoattStatus soatt_scenario_circle(size_t count,
                                       double radius,
                                       double speed,
                                       struct SoattScenario **out);

/**
 * # Safety
 * `scenario` must come from a `soatt_scenario_*` constructor and not be used afterwards.
 */
void soatt_scenario_free(struct SoattScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum SoattStatus soatt_scenario_robot_count(const struct SoattScenario *scenario, size_t *out);

/**
 * Selects the collision-avoidance strategy by name, e.g. `"proposed"` or `"braking"`.
 *
 * # Safety
 * `scenario` must be a live handle; `name` a NUL-terminated string.
 */
enum SoattStatus soatt_scenario_set_collision(struct SoattScenario *scenario, const char *name);

/**
 * Selects the deadlock strategy by name, e.g. `"auxiliary_term"` or `"none"`.
 *
 * # Safety
 * `scenario` must be a live handle; `name` a NUL-terminated string.
 */
enum SoattStatus soatt_scenario_set_deadlock(struct SoattScenario *scenario, const char *name);

/**
 * Sets the step size and horizon in seconds.
 *
 * # Safety
 * `scenario` must be a live handle.
 */
enum SoattStatus soatt_scenario_set_timing(struct SoattScenario *scenario,
                                           double dt,
                                           double total_time);

/**
 * Runs the closed loop to completion.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum SoattStatus soatt_run(const struct SoattScenario *scenario, struct SoattTrace **out);

/**
 * Reads `trace.csv` (and `multipliers.csv` beside it, if present).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SoattStatus soatt_trace_load(const char *path, struct SoattTrace **out);

/**
 * Writes `trace.csv` and `multipliers.csv` into an existing directory.
 *
 * # Safety
 * `trace` must be a live handle; `dir` a NUL-terminated string.
 */
enum SoattStatus soatt_trace_save(const struct SoattTrace *trace, const char *dir);

/**
 * # Safety
 * `trace` must come from `soatt_run` or `soatt_trace_load` and not be used afterwards.
 */
void soatt_trace_free(struct SoattTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum SoattStatus soatt_trace_robot_count(const struct SoattTrace *trace, size_t *out);

/**
 * Number of recorded steps after the initial state.
 *
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum SoattStatus soatt_trace_step_count(const struct SoattTrace *trace, size_t *out);

/**
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum SoattStatus soatt_trace_dt(const struct SoattTrace *trace, double *out);

/**
 * State of `robot` at `step`; step 0 is the initial state.
 *
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum SoattStatus soatt_trace_robot_state(const struct SoattTrace *trace,
                                         size_t step,
                                         size_t robot,
                                         struct SoattRobotState *out);

/**
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum SoattStatus soatt_trace_metrics(const struct SoattTrace *trace, struct SoattMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOATT_H */
