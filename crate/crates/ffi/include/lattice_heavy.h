#ifndef LATTICE_HEAVY_H
#define LATTICE_HEAVY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LhStatus {
  LH_STATUS_OK = 0,
  LH_STATUS_NULL_POINTER = 1,
  LH_STATUS_INVALID_ARGUMENT = 2,
  LH_STATUS_DIMENSION_TOO_SMALL = 3,
  LH_STATUS_OUT_OF_DOMAIN = 4,
  LH_STATUS_NUMERICAL_FAILURE = 5,
  LH_STATUS_IO = 6,
  LH_STATUS_BUFFER_TOO_SMALL = 7,
  LH_STATUS_MISSING_VALUE = 8,
  LH_STATUS_PANIC = 99,
} LhStatus;

/**
 * Green values and derived constants for a set of sites.
 */
typedef struct LhConstants LhConstants;

/**
 * A validated step distribution.
 */
typedef struct LhDistribution LhDistribution;

/**
 * A simulated walk with its local-time fields.
 */
typedef struct LhWalkRun LhWalkRun;

typedef struct LhSiteConstants {
  double green;
  double gamma_x;
  double q_x;
  double s_x;
  double m_x;
} LhSiteConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lh_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be NULL or valid for `len` bytes.
 */
size_t lh_last_error(char *buf, size_t len);

/**
 * The simple symmetric walk on Z^dim.
 *
 * # Safety
 * `out` must be valid for writing a pointer.
 */
enum LhStatus lh_distribution_simple(size_t dim, struct LhDistribution **out);

/**
 * A distribution from spec text: a `dim=<d>` header, then `x1 ... xd : p`
 * lines or the token `simple`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string; `out` must be valid for writing.
 */
enum LhStatus lh_distribution_from_spec(const char *spec, struct LhDistribution **out);

/**
 * # Safety
 * `dist` must be NULL or a handle from this library, not yet freed.
 */
size_t lh_distribution_dim(const struct LhDistribution *dist);

/**
 * # Safety
 * `dist` must be NULL or a handle from this library, not yet freed.
 */
void lh_distribution_free(struct LhDistribution *dist);

/**
 * Green values by quadrature at `n_sites` sites (row-major, `dim` coordinates
 * each) plus the origin, and the constants derived from them.
 *
 * # Safety
 * `sites` must hold `n_sites * dim` values; `out` must be valid for writing.
 */
enum LhStatus lh_constants_compute(const struct LhDistribution *dist,
                                   const int64_t *sites,
                                   size_t n_sites,
                                   double tol,
                                   struct LhConstants **out);

/**
 * Escape probability `gamma`, `lambda` and `G(0)`; any output may be NULL.
 *
 * # Safety
 * `c` must be a live handle; non-NULL outputs must be valid for writing.
 */
enum LhStatus lh_constants_global(const struct LhConstants *c,
                                  double *gamma,
                                  double *lambda,
                                  double *g0);

/**
 * Per-site constants at `x` (`dim` coordinates). `q_x` and `s_x` are NaN at
 * the origin.
 *
 * # Safety
 * `c` must be a live handle; `x` must hold `dim` values.
 */
enum LhStatus lh_constants_site(const struct LhConstants *c,
                                const int64_t *x,
                                struct LhSiteConstants *out);

/**
 * # Safety
 * `c` must be NULL or a handle from this library, not yet freed.
 */
void lh_constants_free(struct LhConstants *c);

/**
 * Generating function of the visits to `x` per returning excursion.
 *
 * # Safety
 * `c` must be a live handle; `x` must hold `dim` values.
 */
enum LhStatus lh_phi(const struct LhConstants *c, const int64_t *x, double v, double *out);

/**
 * Generating function of the visits to `x` after the last return.
 *
 * # Safety
 * `c` must be a live handle; `x` must hold `dim` values.
 */
enum LhStatus lh_psi(const struct LhConstants *c, const int64_t *x, double v, double *out);

/**
 * Joint pmf `P(xi(0) = k, xi(x) = j)` for `k <= kmax`, `j <= jmax`, written
 * row-major into `out`, which must hold `(kmax+1)*(jmax+1)` doubles.
 *
 * # Safety
 * `c` must be a live handle; `x` must hold `dim` values; `out` must hold `len` doubles.
 */
enum LhStatus lh_jointlaw_pmf(const struct LhConstants *c,
                              const int64_t *x,
                              size_t kmax,
                              size_t jmax,
                              double *out,
                              size_t len);

/**
 * Simulates `n` steps of replica `stream` of `seed`, tracking local times to
 * the horizon `horizon_factor * n`.
 *
 * # Safety
 * `dist` must be a live handle; `out` must be valid for writing.
 */
enum LhStatus lh_walk_simulate(const struct LhDistribution *dist,
                               uint64_t n,
                               uint64_t seed,
                               uint64_t stream,
                               uint64_t horizon_factor,
                               struct LhWalkRun **out);

/**
 * Local time at `x` up to time `n` (`at_horizon == 0`) or to the horizon.
 *
 * # Safety
 * `run` must be a live handle; `x` must hold `dim` values.
 */
enum LhStatus lh_walk_local_time(const struct LhWalkRun *run,
                                 const int64_t *x,
                                 int32_t at_horizon,
                                 uint64_t *out);

/**
 * Largest local time up to time `n`; optionally the lexicographically first
 * maximiser, written to `argmax` (`dim` values).
 *
 * # Safety
 * `run` must be a live handle; `argmax` must be NULL or hold `dim` values.
 */
enum LhStatus lh_walk_max_local_time(const struct LhWalkRun *run, uint64_t *max, int64_t *argmax);

/**
 * Number of distinct sites visited up to time `n`.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum LhStatus lh_walk_distinct_sites(const struct LhWalkRun *run, uint64_t *out);

/**
 * # Safety
 * `run` must be NULL or a handle from this library, not yet freed.
 */
void lh_walk_free(struct LhWalkRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATTICE_HEAVY_H */
