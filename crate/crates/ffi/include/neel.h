#ifndef NEEL_H
#define NEEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NeelStatus {
  NEEL_STATUS_OK = 0,
  NEEL_STATUS_NULL_POINTER = 1,
  NEEL_STATUS_INVALID_PARAMETER = 2,
  NEEL_STATUS_DIMENSION = 3,
  NEEL_STATUS_SOLVER_FAILURE = 4,
  NEEL_STATUS_VALIDITY = 5,
  NEEL_STATUS_NUMERICAL = 6,
  NEEL_STATUS_IO = 7,
  NEEL_STATUS_FORMAT = 8,
  /**
   * The output buffer is shorter than the data.
   */
  NEEL_STATUS_BUFFER_TOO_SMALL = 9,
  NEEL_STATUS_INDEX_OUT_OF_RANGE = 10,
  NEEL_STATUS_PANIC = 11,
} NeelStatus;

/**
 * The orbits of one continuation run.
 */
typedef struct NeelOrbitSet NeelOrbitSet;

/**
 * A converged static wall.
 */
typedef struct NeelWall NeelWall;

/**
 * Exchange length d, film thickness δ, quality factor Q and α.
 */
typedef struct NeelPhysicalParameters {
  double d;
  double delta;
  double q;
  double alpha;
} NeelPhysicalParameters;

/**
 * Dimensionless constants (κ, ε, α).
 */
typedef struct NeelRescaledParameters {
  double kappa;
  double epsilon;
  double alpha;
} NeelRescaledParameters;

typedef struct NeelWallSummary {
  size_t n_points;
  double half_length;
  double el_residual;
  double tail_value;
  double energy_exchange;
  double energy_anisotropy;
  double energy_stray;
  double energy_total;
  bool domain_too_small;
} NeelWallSummary;

/**
 * Settings for [`neel_orbits_continue`]. Zero fields take the defaults
 * (T = 1, 2000 steps per period, 10 continuation steps).
 */
typedef struct NeelContinuationSettings {
  double alpha;
  double period;
  size_t steps_per_period;
  double lambda_max;
  size_t n_steps;
} NeelContinuationSettings;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *neel_last_error_message(void);

void neel_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *neel_version(void);

/**
 * (1/ε) σε(ξ).
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum NeelStatus neel_rescaled_symbol(double xi, double epsilon, double *out);

/**
 * # Safety
 * `physical` must point to a readable struct and `out` be valid for one write.
 */
enum NeelStatus neel_rescale(const struct NeelPhysicalParameters *physical,
                             struct NeelRescaledParameters *out);

/**
 * Solves the static wall on N nodes of [-L, L). `tol` <= 0 keeps the
 * default residual tolerance.
 *
 * # Safety
 * `out` must be valid for one write; on success it receives a handle to
 * release with [`neel_wall_free`].
 */
enum NeelStatus neel_wall_solve(struct NeelRescaledParameters params,
                                double half_length,
                                size_t n_points,
                                double tol,
                                struct NeelWall **out);

/**
 * # Safety
 * `wall` must be NULL or a handle from this library not yet freed.
 */
void neel_wall_free(struct NeelWall *wall);

/**
 * Number of grid nodes, or 0 for NULL.
 *
 * # Safety
 * `wall` must be NULL or a live handle.
 */
size_t neel_wall_len(const struct NeelWall *wall);

/**
 * # Safety
 * `wall` must be a live handle and `out` valid for one write.
 */
enum NeelStatus neel_wall_summary(const struct NeelWall *wall, struct NeelWallSummary *out);

/**
 * # Safety
 * `wall` must be a live handle and `out` valid for one write.
 */
enum NeelStatus neel_wall_params(const struct NeelWall *wall, struct NeelRescaledParameters *out);

/**
 * Grid nodes x_j into `out[0..len)`.
 *
 * # Safety
 * `wall` must be a live handle and `out` valid for `len` writes.
 */
enum NeelStatus neel_wall_nodes(const struct NeelWall *wall, double *out, size_t len);

/**
 * θε at the nodes.
 *
 * # Safety
 * `wall` must be a live handle and `out` valid for `len` writes.
 */
enum NeelStatus neel_wall_theta(const struct NeelWall *wall, double *out, size_t len);

/**
 * θ'ε at the nodes.
 *
 * # Safety
 * `wall` must be a live handle and `out` valid for `len` writes.
 */
enum NeelStatus neel_wall_derivative(const struct NeelWall *wall, double *out, size_t len);

/**
 * Writes the wall archive (the same format as `neel wall`).
 *
 * # Safety
 * `wall` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum NeelStatus neel_wall_save(const struct NeelWall *wall, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` valid for one write.
 */
enum NeelStatus neel_wall_load(const char *path, struct NeelWall **out);

/**
 * Continuation of T-periodic orbits under h = λ sin(2πt/T) + γ from λ = 0
 * to `lambda_max`, on the grid of `wall`. A run that stops early still
 * returns `Ok` with the orbits found; see [`neel_orbits_complete`].
 *
 * # Safety
 * `wall` must be a live handle, `settings` readable and `out` valid for one write.
 */
enum NeelStatus neel_orbits_continue(const struct NeelWall *wall,
                                     const struct NeelContinuationSettings *settings,
                                     struct NeelOrbitSet **out);

/**
 * # Safety
 * `set` must be NULL or a handle from this library not yet freed.
 */
void neel_orbits_free(struct NeelOrbitSet *set);

/**
 * Number of converged orbits, or 0 for NULL.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
size_t neel_orbits_count(const struct NeelOrbitSet *set);

/**
 * True when the run reached `lambda_max`.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
bool neel_orbits_complete(const struct NeelOrbitSet *set);

/**
 * λ, γ(λ) and the fixed-point residual of orbit `index`.
 *
 * # Safety
 * `set` must be a live handle; the out pointers must be valid for one write.
 */
enum NeelStatus neel_orbits_get(const struct NeelOrbitSet *set,
                                size_t index,
                                double *lambda,
                                double *gamma,
                                double *residual);

/**
 * Initial data (φ₀, ϑ₀) of orbit `index`, `len` values each.
 *
 * # Safety
 * `set` must be a live handle; `phi` and `vartheta` valid for `len` writes.
 */
enum NeelStatus neel_orbits_state(const struct NeelOrbitSet *set,
                                  size_t index,
                                  double *phi,
                                  double *vartheta,
                                  size_t len);

/**
 * # Safety
 * `set` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum NeelStatus neel_orbits_save(const struct NeelOrbitSet *set, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` valid for one write.
 */
enum NeelStatus neel_orbits_load(const char *path, struct NeelOrbitSet **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEEL_H */
