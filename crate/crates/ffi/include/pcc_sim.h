/* C interface for the private compute sandbox simulator. */

#ifndef PCC_SIM_H
#define PCC_SIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code for every exported function.
typedef enum {
  // The call succeeded.
  PCC_OK = 0,
  // A required pointer was null or a string was not valid UTF-8.
  PCC_INVALID_ARGUMENT = 1,
  // The input failed to parse or validate.
  PCC_PARSE_ERROR = 2,
  // The simulation itself failed.
  PCC_RUNTIME_ERROR = 3,
  // The manifest verifier found violations (the report is still returned).
  PCC_VERIFY_FAILED = 4,
} PccStatus;

// Opaque handle to a loaded, validated scenario.
typedef struct PccScenario PccScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the message for the most recent failure on this thread, or null
// if the last call succeeded. The pointer is valid until the next call on
// this thread; do not free it.
const char *pcc_last_error_message(void);

// Returns the simulator version as a static string. Do not free it.
const char *pcc_version(void);

// Parses and validates scenario JSON. On success `*out` owns a new
// scenario handle.
//
// # Safety
// `json` must be a valid nul-terminated string and `out` a valid pointer.
PccStatus pcc_scenario_load(const char *json, PccScenario **out);

// Returns the scenario's name. Free the string with `pcc_string_free`.
//
// # Safety
// `scenario` must come from `pcc_scenario_load` and `out` must be valid.
PccStatus pcc_scenario_name(const PccScenario *scenario, char **out);

// Runs a scenario and returns the full report as JSON via `report_out`.
// Pass `has_seed_override = 0` to use the scenario's own seed. `passed_out`
// may be null; otherwise it is set to 1 when all assertions held.
//
// # Safety
// `scenario` must come from `pcc_scenario_load`; `report_out` must be a
// valid pointer; `passed_out` may be null.
PccStatus pcc_scenario_run(const PccScenario *scenario,
                           int32_t has_seed_override,
                           uint64_t seed_override,
                           char **report_out,
                           int32_t *passed_out);

// Frees a scenario handle. Null is a no-op.
//
// # Safety
// `scenario` must be null or a pointer from `pcc_scenario_load`, not yet
// freed.
void pcc_scenario_free(PccScenario *scenario);

// Verifies a package manifest against an allow-association config.
// `report_out` receives the verifier report as JSON Lines and is written
// on both `PccOk` (clean) and `PccVerifyFailed` (violations found).
//
// # Safety
// `manifest_json` and `association_xml` must be valid nul-terminated
// strings; `report_out` must be a valid pointer.
PccStatus pcc_verify_manifest(const char *manifest_json,
                              const char *association_xml,
                              char **report_out);

// Frees a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void pcc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCC_SIM_H */
