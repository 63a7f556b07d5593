#ifndef HYPOLDP_H
#define HYPOLDP_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; `HLDP_STATUS_OK` is zero.
typedef enum HldpStatus {
  HLDP_STATUS_OK = 0,
  HLDP_STATUS_NULL_POINTER = 1,
  HLDP_STATUS_INVALID_UTF8 = 2,
  HLDP_STATUS_PARSE_ERROR = 3,
  HLDP_STATUS_DIMENSION_MISMATCH = 4,
  HLDP_STATUS_DEGREE_CAP_EXCEEDED = 5,
  HLDP_STATUS_NOT_CONVERGED = 6,
  HLDP_STATUS_INVALID_ARGUMENT = 7,
  HLDP_STATUS_PANIC = 8,
} HldpStatus;

// Opaque vector-field system.
typedef struct HldpSystem HldpSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on the same thread.
const char *hldp_last_error(void);

// Library version as a static nul-terminated string.
const char *hldp_version(void);

// Parses a system from JSON (`n`, `d`, `fields`, `drift`).
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum HldpStatus hldp_system_from_json(const char *json, struct HldpSystem **out);

// Built-in fixture by name: `elliptic`, `heisenberg`, `grushin`, `engel`
// or `counterexample`.
//
// # Safety
// `name` must be a nul-terminated string and `out` a valid pointer.
enum HldpStatus hldp_system_fixture(const char *name, struct HldpSystem **out);

// Releases a system. Null is ignored.
//
// # Safety
// `sys` must come from this library and must not be used afterwards.
void hldp_system_free(struct HldpSystem *sys);

// State dimension `n` and number of driving fields `d`.
//
// # Safety
// `sys` must be a live handle; `n` and `d` valid pointers.
enum HldpStatus hldp_system_dims(const struct HldpSystem *sys, size_t *n, size_t *d);

// Strong Hörmander degree at `x` (length `n`), with default options.
//
// # Safety
// `x` must point to `n` doubles and `degree` be a valid pointer.
enum HldpStatus hldp_hormander_degree(const struct HldpSystem *sys,
                                      const double *x,
                                      size_t n,
                                      uint32_t *degree);

// Minimal energy `½‖h‖²` of controls steering `start` to `target` (both of
// length `n`). Returns `NotConverged` when no start reaches the target; the
// best energy found is still written.
//
// # Safety
// `start` and `target` must point to `n` doubles, `energy` be valid.
enum HldpStatus hldp_minimize_energy(const struct HldpSystem *sys,
                                     const double *start,
                                     const double *target,
                                     size_t n,
                                     size_t segments,
                                     size_t restarts,
                                     uint64_t seed,
                                     double *energy);

// Closed-form counterexample heat kernel at `(0, x2)` for noise `eps`.
//
// # Safety
// `density` must be a valid pointer.
enum HldpStatus hldp_counterexample_density(double eps, double x2, double *density);

// Skeleton endpoint from `x0` (length `n`) under piecewise-constant
// slopes (`segments × d`, row-major) on `[0, horizon]`; writes `n` values.
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum HldpStatus hldp_skeleton_endpoint(const struct HldpSystem *sys,
                                       const double *x0,
                                       size_t n,
                                       const double *slopes,
                                       size_t segments,
                                       double horizon,
                                       double *out);

// Smallest eigenvalue of the deterministic Malliavin covariance of the
// endpoint for the same control layout as [`hldp_skeleton_endpoint`].
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum HldpStatus hldp_covariance_min_eig(const struct HldpSystem *sys,
                                        const double *x0,
                                        size_t n,
                                        const double *slopes,
                                        size_t segments,
                                        double horizon,
                                        double *min_eig);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPOLDP_H */
