#ifndef AGPCA_H
#define AGPCA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AgpcaStatus {
  AGPCA_STATUS_OK = 0,
  AGPCA_STATUS_NULL_POINTER = 1,
  AGPCA_STATUS_INVALID_INPUT = 2,
  AGPCA_STATUS_NUMERICAL = 3,
  AGPCA_STATUS_IO = 4,
  AGPCA_STATUS_BUFFER_TOO_SMALL = 5,
  AGPCA_STATUS_PANIC = 6,
} AgpcaStatus;

/**
 * An adaptive gPCA fit.
 */
typedef struct AgpcaFit AgpcaFit;

/**
 * A variable kernel with its eigendecomposition.
 */
typedef struct AgpcaKernel AgpcaKernel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *agpca_last_error(void);

const char *agpca_version(void);

/**
 * Kernel from a `p x p` symmetric positive semidefinite similarity.
 *
 * # Safety
 * `q` must point to `p * p` doubles; `out` to a writable handle slot.
 */
enum AgpcaStatus agpca_kernel_from_similarity(const double *q,
                                              size_t p,
                                              bool trace_normalize,
                                              struct AgpcaKernel **out);

/**
 * Trace-normalised kernel from `p x p` squared Euclidean distances.
 *
 * # Safety
 * `delta` must point to `p * p` doubles; `out` to a writable handle slot.
 */
enum AgpcaStatus agpca_kernel_from_distances(const double *delta,
                                             size_t p,
                                             struct AgpcaKernel **out);

/**
 * Shared-ancestry kernel of a Newick tree; rows follow leaf order.
 *
 * # Safety
 * `newick` must be a nul-terminated string; `out` a writable handle slot.
 */
enum AgpcaStatus agpca_kernel_from_newick(const char *newick, struct AgpcaKernel **out);

/**
 * Number of variables, or 0 for a null handle.
 *
 * # Safety
 * `kernel` must be null or a live handle.
 */
size_t agpca_kernel_dim(const struct AgpcaKernel *kernel);

/**
 * Copies the (normalised) kernel matrix into `out`.
 *
 * # Safety
 * `kernel` must be a live handle and `out` hold `len` doubles.
 */
enum AgpcaStatus agpca_kernel_matrix(const struct AgpcaKernel *kernel, double *out, size_t len);

/**
 * # Safety
 * `kernel` must be null or a handle not yet freed.
 */
void agpca_kernel_free(struct AgpcaKernel *kernel);

/**
 * Adaptive gPCA of the `n x p` data `x` (centred internally) with `k`
 * axes. A NaN `r` estimates it by maximum likelihood; otherwise `r` must
 * lie in [0, 1].
 *
 * # Safety
 * `x` must point to `n * p` doubles, `kernel` be a live handle, and `out`
 * a writable handle slot.
 */
enum AgpcaStatus agpca_fit(const double *x,
                           size_t n,
                           size_t p,
                           const struct AgpcaKernel *kernel,
                           size_t k,
                           double r,
                           struct AgpcaFit **out);

/**
 * # Safety
 * `fit` must be null or a live handle.
 */
double agpca_fit_r(const struct AgpcaFit *fit);

/**
 * # Safety
 * `fit` must be null or a live handle.
 */
double agpca_fit_sigma2(const struct AgpcaFit *fit);

/**
 * Axes actually returned, which may be fewer than requested.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t agpca_fit_k(const struct AgpcaFit *fit);

/**
 * # Safety
 * `fit` must be a live handle and `out` hold `len` doubles.
 */
enum AgpcaStatus agpca_fit_eigenvalues(const struct AgpcaFit *fit, double *out, size_t len);

/**
 * Sample coordinates, `n x k` row-major.
 *
 * # Safety
 * `fit` must be a live handle and `out` hold `len` doubles.
 */
enum AgpcaStatus agpca_fit_sample_coordinates(const struct AgpcaFit *fit, double *out, size_t len);

/**
 * Variable scores `S(r) V`, `p x k` row-major.
 *
 * # Safety
 * `fit` must be a live handle and `out` hold `len` doubles.
 */
enum AgpcaStatus agpca_fit_variable_scores(const struct AgpcaFit *fit, double *out, size_t len);

/**
 * # Safety
 * `fit` must be null or a handle not yet freed.
 */
void agpca_fit_free(struct AgpcaFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGPCA_H */
