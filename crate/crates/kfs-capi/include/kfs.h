#ifndef KFS_H
#define KFS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define KFS_OK 0

/**
 * A required pointer argument was null.
 */
#define KFS_NULL_POINTER -1

/**
 * Inputs failed validation (dimensions, ranges, non-finite values).
 */
#define KFS_INVALID_ARGUMENT -2

/**
 * The numeric solve failed (factorization or descent backoff).
 */
#define KFS_SOLVER_FAILURE -3

/**
 * An internal panic was caught at the boundary.
 */
#define KFS_PANIC -4

/**
 * Dataset handle: design matrix plus centered response.
 */
typedef struct KfsDataset KfsDataset;

/**
 * Selection handle: final weights, support and iteration history.
 */
typedef struct KfsSelection KfsSelection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *kfs_version(void);

/**
 * Message for the most recent error on this thread. Valid until the
 * next failing call on the same thread.
 */
const char *kfs_last_error(void);

/**
 * Builds a dataset from a row-major n x p design and n responses.
 * The response is centered internally.
 *
 * # Safety
 * `x` must point to n*p readable doubles, `y` to n readable doubles,
 * and `out` must be a valid location for the handle.
 */
int32_t kfs_dataset_new(const double *x,
                        uintptr_t n,
                        uintptr_t p,
                        const double *y,
                        struct KfsDataset **out);

/**
 * Frees a dataset handle. Null is ignored.
 *
 * # Safety
 * `ds` must be a handle from `kfs_dataset_new` not yet freed.
 */
void kfs_dataset_free(struct KfsDataset *ds);

/**
 * Number of observations in a dataset.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
uintptr_t kfs_dataset_n(const struct KfsDataset *ds);

/**
 * Number of features in a dataset.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
uintptr_t kfs_dataset_p(const struct KfsDataset *ds);

/**
 * Projected-gradient feature selection from the origin.
 *
 * The kernel is a mixture of `n_atoms` exponentials with the given
 * scales and weights over the q-weighted distance (q is 1 or 2).
 * `stepsize <= 0` requests the automatic stepsize.
 *
 * # Safety
 * Pointer arguments must be valid for the documented lengths; `out`
 * receives a handle to free with `kfs_selection_free`.
 */
int32_t kfs_select(const struct KfsDataset *ds,
                   uint32_t q,
                   const double *atom_scales,
                   const double *atom_weights,
                   uintptr_t n_atoms,
                   double lambda,
                   double gamma,
                   double m,
                   double stepsize,
                   uintptr_t max_iters,
                   double tol,
                   double support_eps,
                   double tau,
                   uint64_t seed,
                   struct KfsSelection **out);

/**
 * Multi-round selection that pins discovered features at tau between
 * rounds. Same contract as `kfs_select`.
 *
 * # Safety
 * As for `kfs_select`.
 */
int32_t kfs_hier_select(const struct KfsDataset *ds,
                        uint32_t q,
                        const double *atom_scales,
                        const double *atom_weights,
                        uintptr_t n_atoms,
                        double lambda,
                        double gamma,
                        double m,
                        double stepsize,
                        uintptr_t max_iters,
                        double tol,
                        double support_eps,
                        double tau,
                        uint64_t seed,
                        struct KfsSelection **out);

/**
 * Number of feature weights in a selection result.
 *
 * # Safety
 * `sel` must be a live selection handle.
 */
uintptr_t kfs_selection_dim(const struct KfsSelection *sel);

/**
 * Copies the final weight vector into `out` (length `len` == dim).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
int32_t kfs_selection_beta(const struct KfsSelection *sel, double *out, uintptr_t len);

/**
 * Number of selected features.
 *
 * # Safety
 * `sel` must be a live selection handle.
 */
uintptr_t kfs_selection_support_len(const struct KfsSelection *sel);

/**
 * Copies the selected feature indices (0-based) into `out`.
 *
 * # Safety
 * `out` must point to `len` writable uint64 slots, `len` == support length.
 */
int32_t kfs_selection_support(const struct KfsSelection *sel, uint64_t *out, uintptr_t len);

/**
 * Length of the objective history (initial value plus accepted steps).
 *
 * # Safety
 * `sel` must be a live selection handle.
 */
uintptr_t kfs_selection_history_len(const struct KfsSelection *sel);

/**
 * Copies the penalized objective history into `out`.
 *
 * # Safety
 * `out` must point to `len` writable doubles, `len` == history length.
 */
int32_t kfs_selection_history(const struct KfsSelection *sel, double *out, uintptr_t len);

/**
 * Frees a selection handle. Null is ignored.
 *
 * # Safety
 * `sel` must be a handle from a selection call not yet freed.
 */
void kfs_selection_free(struct KfsSelection *sel);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* KFS_H */
