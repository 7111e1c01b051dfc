#ifndef POCOOPT_H
#define POCOOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define POCO_EVENT_REFRESH 1

#define POCO_EVENT_CORRECTION_START 2

#define POCO_EVENT_CLAMP 4

#define POCO_EVENT_DIVERGENCE 8

/**
 * Status codes. Zero is success.
 */
typedef enum PocoStatus {
  POCO_STATUS_OK = 0,
  POCO_STATUS_NULL_POINTER = 1,
  POCO_STATUS_INVALID_ARGUMENT = 2,
  POCO_STATUS_CONFIG = 3,
  POCO_STATUS_NUMERIC = 4,
  POCO_STATUS_IO = 5,
  POCO_STATUS_PANIC = 6,
} PocoStatus;

/**
 * A built problem together with its reference optimum.
 */
typedef struct PocoProblem PocoProblem;

/**
 * The trace of one finished run.
 */
typedef struct PocoRun PocoRun;

/**
 * One trace row as seen from C.
 */
typedef struct PocoRow {
  uint64_t step;
  uint64_t grad_evals;
  double objective;
  uint64_t param_hash;
  /**
   * Bit set of events: 1 refresh, 2 correction start, 4 clamp, 8 divergence.
   */
  uint32_t events;
} PocoRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread ("" after a success).
 * Valid until the next call on the same thread.
 */
const char *poco_last_error(void);

/**
 * Build a problem from a JSON problem spec, e.g.
 * `{"kind": "logistic", "n": 100, "d": 5, "seed": 1, "s0": 1.0}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum PocoStatus poco_problem_new(const char *json, struct PocoProblem **out_problem);

/**
 * # Safety
 * `problem` must come from [`poco_problem_new`] and not be used afterwards.
 */
void poco_problem_free(struct PocoProblem *problem);

/**
 * Dimension and number of examples.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum PocoStatus poco_problem_shape(const struct PocoProblem *problem,
                                   uintptr_t *dim,
                                   uintptr_t *len);

/**
 * Mean-scaled objective at the optimum.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum PocoStatus poco_problem_reference(const struct PocoProblem *problem, double *value);

/**
 * Mean-scaled objective at `theta[0..len]`.
 *
 * # Safety
 * `theta` must point to `len` doubles.
 */
enum PocoStatus poco_problem_objective(const struct PocoProblem *problem,
                                       const double *theta,
                                       uintptr_t len,
                                       double *value);

/**
 * Gradient of the summed objective at `theta`, written to `grad[0..len]`.
 *
 * # Safety
 * `theta` and `grad` must each point to `len` doubles.
 */
enum PocoStatus poco_problem_gradient(const struct PocoProblem *problem,
                                      const double *theta,
                                      uintptr_t len,
                                      double *grad);

/**
 * Run one seed of an experiment given as a JSON config (same format as the
 * CLI). Nothing is written to disk.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out_run` must be writable.
 */
enum PocoStatus poco_run_new(const char *json, uint64_t seed, struct PocoRun **out_run);

/**
 * # Safety
 * `run` must come from [`poco_run_new`] and not be used afterwards.
 */
void poco_run_free(struct PocoRun *run);

/**
 * Number of recorded rows.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum PocoStatus poco_run_rows(const struct PocoRun *run, uintptr_t *rows);

/**
 * Row `index` of the trace.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum PocoStatus poco_run_row(const struct PocoRun *run, uintptr_t index, struct PocoRow *row);

/**
 * Final objective and its gap to the reference optimum.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum PocoStatus poco_run_final(const struct PocoRun *run, double *objective, double *gap);

/**
 * Write the trace as CSV to `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum PocoStatus poco_run_write_csv(const struct PocoRun *run, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POCOOPT_H */
