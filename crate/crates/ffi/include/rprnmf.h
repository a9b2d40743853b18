#ifndef RPRNMF_H
#define RPRNMF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RprnmfMeasure {
  RPRNMF_MEASURE_EUCLIDEAN = 0,
  RPRNMF_MEASURE_DIVERGENCE = 1,
} RprnmfMeasure;

typedef enum RprnmfStatus {
  RPRNMF_STATUS_OK = 0,
  RPRNMF_STATUS_NULL_POINTER = 1,
  RPRNMF_STATUS_INVALID_ARGUMENT = 2,
  RPRNMF_STATUS_SHAPE_MISMATCH = 3,
  RPRNMF_STATUS_PARSE = 4,
  RPRNMF_STATUS_OVERFLOW = 5,
  RPRNMF_STATUS_NUMERICAL = 6,
  RPRNMF_STATUS_INTERNAL = 7,
} RprnmfStatus;

/**
 * Parsed constraint sets for W and H.
 */
typedef struct RprnmfConstraints RprnmfConstraints;

/**
 * Result of one factorisation.
 */
typedef struct RprnmfReport RprnmfReport;

/**
 * Solver settings; obtain defaults from [`rprnmf_options_default`].
 */
typedef struct RprnmfOptions {
  size_t latent_dim;
  enum RprnmfMeasure measure;
  double lambda_w;
  double lambda_h;
  size_t max_iters;
  double rel_tol;
  uint64_t seed;
} RprnmfOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *rprnmf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rprnmf_version(void);

struct RprnmfOptions rprnmf_options_default(size_t latent_dim);

/**
 * Parses constraints in the `W q r s` / `H q r s` text format.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum RprnmfStatus rprnmf_constraints_parse(const char *text, struct RprnmfConstraints **out);

/**
 * Number of triples on W and on H; either output pointer may be null.
 *
 * # Safety
 * `constraints` must come from [`rprnmf_constraints_parse`].
 */
enum RprnmfStatus rprnmf_constraints_count(const struct RprnmfConstraints *constraints,
                                           size_t *on_w,
                                           size_t *on_h);

/**
 * # Safety
 * `constraints` must be null or come from [`rprnmf_constraints_parse`] and not be used afterwards.
 */
void rprnmf_constraints_free(struct RprnmfConstraints *constraints);

/**
 * Factorises the row-major `rows × cols` matrix `v`.
 *
 * `mask` is null for a fully observed matrix, otherwise `rows × cols` bytes
 * with non-zero meaning observed. `constraints` may be null.
 *
 * # Safety
 * `v` (and `mask` when non-null) must point to `rows * cols` readable
 * elements; `options` and `out` must be valid pointers.
 */
enum RprnmfStatus rprnmf_factorize(const double *v,
                                   size_t rows,
                                   size_t cols,
                                   const uint8_t *mask,
                                   const struct RprnmfConstraints *constraints,
                                   const struct RprnmfOptions *options,
                                   struct RprnmfReport **out);

/**
 * Writes the factor shapes `W: rows × k`, `H: k × cols`; null outputs are skipped.
 *
 * # Safety
 * `report` must come from [`rprnmf_factorize`].
 */
enum RprnmfStatus rprnmf_report_shape(const struct RprnmfReport *report,
                                      size_t *rows,
                                      size_t *k,
                                      size_t *cols);

/**
 * Copies W row-major into `buf`, which must hold exactly `rows * k` values.
 *
 * # Safety
 * `report` must come from [`rprnmf_factorize`]; `buf` must be writable for `len` values.
 */
enum RprnmfStatus rprnmf_report_copy_w(const struct RprnmfReport *report, double *buf, size_t len);

/**
 * Copies H row-major into `buf`, which must hold exactly `k * cols` values.
 *
 * # Safety
 * `report` must come from [`rprnmf_factorize`]; `buf` must be writable for `len` values.
 */
enum RprnmfStatus rprnmf_report_copy_h(const struct RprnmfReport *report, double *buf, size_t len);

/**
 * Accepted iterations; 0 for a null report.
 *
 * # Safety
 * `report` must be null or come from [`rprnmf_factorize`].
 */
size_t rprnmf_report_iterations(const struct RprnmfReport *report);

/**
 * Final objective value; NaN for a null report.
 *
 * # Safety
 * `report` must be null or come from [`rprnmf_factorize`].
 */
double rprnmf_report_objective(const struct RprnmfReport *report);

/**
 * Constraint satisfaction rate; NaN when the run had no constraints.
 *
 * # Safety
 * `report` must be null or come from [`rprnmf_factorize`].
 */
double rprnmf_report_csr(const struct RprnmfReport *report);

/**
 * # Safety
 * `report` must be null or come from [`rprnmf_factorize`].
 */
bool rprnmf_report_converged(const struct RprnmfReport *report);

/**
 * # Safety
 * `report` must be null or come from [`rprnmf_factorize`] and not be used afterwards.
 */
void rprnmf_report_free(struct RprnmfReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RPRNMF_H */
