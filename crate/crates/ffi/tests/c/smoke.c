#include <stdio.h>
#include <string.h>

#include "soatt.h"

#define CHECK(call)                                                              \
  do {                                                                           \
    SoattStatus s_ = (call);                                                     \
    if (s_ != SOATT_STATUS_OK) {                                                 \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, soatt_last_error_message()); \
      return 1;                                                                  \
    }                                                                            \
  } while (0)

int main(void) {
  SoattScenario *scenario = NULL;
  SoattTrace *trace = NULL;
  SoattMetrics metrics;
  size_t robots = 0, steps = 0;

  CHECK(soatt_scenario_circle(4, 3.0, 1.0, &scenario));
  CHECK(soatt_scenario_set_timing(scenario, 0.01, 2.0));
  CHECK(soatt_run(scenario, &trace));
  CHECK(soatt_trace_robot_count(trace, &robots));
  CHECK(soatt_trace_step_count(trace, &steps));
  CHECK(soatt_trace_metrics(trace, &metrics));

  if (soatt_scenario_set_collision(scenario, "teleport") != SOATT_STATUS_CONFIG) return 2;
  if (soatt_last_error_message() == NULL) return 3;
  if (soatt_trace_robot_state(trace, steps + 1, 0, NULL) != SOATT_STATUS_OUT_OF_RANGE) return 4;

  printf("%zu %zu %.6f\n", robots, steps, metrics.min_distance);
  soatt_trace_free(trace);
  soatt_scenario_free(scenario);
  return 0;
}
