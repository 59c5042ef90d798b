#ifndef CPMHS_H
#define CPMHS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CpmhsStatus {
  CPMHS_STATUS_OK = 0,
  CPMHS_STATUS_NULL_POINTER = 1,
  CPMHS_STATUS_INVALID_ARGUMENT = 2,
  CPMHS_STATUS_PARSE = 3,
  CPMHS_STATUS_IO = 4,
  CPMHS_STATUS_VALIDATION = 5,
  CPMHS_STATUS_INFEASIBLE = 6,
  CPMHS_STATUS_PANIC = 7,
} CpmhsStatus;

/**
 * A completed simulation together with the scenario it ran.
 */
typedef struct CpmhsRun CpmhsRun;

/**
 * A loaded scenario.
 */
typedef struct CpmhsScenario CpmhsScenario;

/**
 * Run totals. Energies in Wh, volumes in m³.
 */
typedef struct CpmhsSummary {
  size_t steps;
  double dt_s;
  double load_wh;
  double renewable_wh;
  double generated_wh;
  double pumped_wh;
  double imported_wh;
  double exported_wh;
  double unserved_wh;
  double curtailed_wh;
  double spilled_m3;
  double losses_m3;
} CpmhsSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *cpmhs_last_error(void);

/**
 * Loads a scenario JSON file. Series paths resolve against its directory.
 */
enum CpmhsStatus cpmhs_scenario_load(const char *path, struct CpmhsScenario **out);

/**
 * The built-in Mountain Lake case study.
 */
enum CpmhsStatus cpmhs_scenario_bundled(struct CpmhsScenario **out);

void cpmhs_scenario_free(struct CpmhsScenario *scenario);

/**
 * Stores the number of validation violations in `violations`; the report
 * text is available from [`cpmhs_last_error`] when it is non-zero.
 */
enum CpmhsStatus cpmhs_scenario_validate(const struct CpmhsScenario *scenario, size_t *violations);

size_t cpmhs_scenario_reservoir_count(const struct CpmhsScenario *scenario);

size_t cpmhs_scenario_stage_count(const struct CpmhsScenario *scenario);

size_t cpmhs_scenario_step_count(const struct CpmhsScenario *scenario);

/**
 * Runs the rule-based dispatch over the scenario's series.
 */
enum CpmhsStatus cpmhs_simulate(const struct CpmhsScenario *scenario, struct CpmhsRun **out);

void cpmhs_run_free(struct CpmhsRun *run);

size_t cpmhs_run_step_count(const struct CpmhsRun *run);

enum CpmhsStatus cpmhs_run_summary(const struct CpmhsRun *run, struct CpmhsSummary *out);

/**
 * Volume of reservoir `reservoir` (declaration order) after step `step`.
 */
enum CpmhsStatus cpmhs_run_volume(const struct CpmhsRun *run,
                                  size_t step,
                                  size_t reservoir,
                                  double *out_m3);

/**
 * Writes `steps.csv`, `reservoirs.csv` and `summary.json` into `out_dir`.
 */
enum CpmhsStatus cpmhs_run_write(const struct CpmhsRun *run, const char *out_dir);

/**
 * η_t·ρ·g·h·q in watts.
 */
enum CpmhsStatus cpmhs_generation_power(double eta_turbine,
                                        double rho,
                                        double g,
                                        double head_m,
                                        double q_turbine_m3s,
                                        double *out_w);

/**
 * η_p·P/(ρ·g·h) in m³/s.
 */
enum CpmhsStatus cpmhs_pumping_flow(double eta_pump,
                                    double rho,
                                    double g,
                                    double head_m,
                                    double p_charge_w,
                                    double *out_m3s);

/**
 * η·ρ·g·h·V, reported in both joules and GWh.
 */
enum CpmhsStatus cpmhs_potential_energy(double eta,
                                        double rho,
                                        double g,
                                        double head_m,
                                        double volume_m3,
                                        double *out_joules,
                                        double *out_gwh);

/**
 * Plans intermediate sites over `n` profile vertices. On success
 * `out_n_intermediate` holds the site count and `out_min_head_m` the smallest
 * hop head.
 */
enum CpmhsStatus cpmhs_plan_cascade(const double *distance_km,
                                    const double *elevation_m,
                                    size_t n,
                                    double segment_max_km,
                                    double head_min_m,
                                    size_t *out_n_intermediate,
                                    double *out_min_head_m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPMHS_H */
