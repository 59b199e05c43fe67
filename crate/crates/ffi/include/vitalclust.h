#ifndef VITALCLUST_H
#define VITALCLUST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VcStatus {
  VC_STATUS_OK = 0,
  VC_STATUS_NULL_POINTER = 1,
  VC_STATUS_INVALID_ARGUMENT = 2,
  VC_STATUS_IO = 3,
  VC_STATUS_PARSE = 4,
  VC_STATUS_DIMENSION = 5,
  VC_STATUS_UNDEFINED = 6,
  VC_STATUS_PANIC = 7,
} VcStatus;

/**
 * A fitted model loaded from JSON.
 */
typedef struct VcModel VcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *vc_last_error(void);

const char *vc_version(void);

/**
 * Number of features in the extraction catalog.
 */
size_t vc_feature_count(void);

/**
 * Name of catalog feature `i`, or null when out of range. Static storage.
 */
const char *vc_feature_name(size_t i);

/**
 * Extracts the catalog features of one patient. `grid` is channel-major
 * (temperature, heart rate, mean BP, respiratory rate, SpO2), `hours`
 * values each; `out` holds `vc_feature_count()` values.
 *
 * # Safety
 * `grid` must point to `5 * hours` doubles and `out` to `out_len`.
 */
enum VcStatus vc_extract_features(const double *grid, size_t hours, double *out, size_t out_len);

/**
 * Shape-based distance of two series and the best shift.
 *
 * # Safety
 * `x` and `y` must point to `len` doubles.
 */
enum VcStatus vc_sbd(const double *x,
                     const double *y,
                     size_t len,
                     double *distance,
                     int64_t *shift);

/**
 * Calinski-Harabasz index of an `n × d` row-major matrix; labels below 0
 * are noise and left out.
 *
 * # Safety
 * `data` must point to `n * d` doubles and `labels` to `n` values.
 */
enum VcStatus vc_chi(const double *data, size_t n, size_t d, const int64_t *labels, double *out);

/**
 * Davies-Bouldin index; same layout as [`vc_chi`].
 *
 * # Safety
 * `data` must point to `n * d` doubles and `labels` to `n` values.
 */
enum VcStatus vc_dbi(const double *data, size_t n, size_t d, const int64_t *labels, double *out);

/**
 * Adjusted Rand index of two labelings of `n` points.
 *
 * # Safety
 * `a` and `b` must point to `n` values.
 */
enum VcStatus vc_ari(const int64_t *a, const int64_t *b, size_t n, double *out);

/**
 * Death rate of `flags` (0 or 1) and its bootstrap standard error over
 * `b` resamples.
 *
 * # Safety
 * `flags` must point to `n` bytes.
 */
enum VcStatus vc_mortality_bootstrap(const uint8_t *flags,
                                     size_t n,
                                     size_t b,
                                     uint64_t seed,
                                     double *mean,
                                     double *se);

/**
 * k-means on an `n × d` row-major matrix with the library defaults
 * (k-means++ seeding, 10 restarts). Rows are treated as given; no
 * normalization is applied.
 *
 * # Safety
 * `data` must point to `n * d` doubles and `labels` to `n` values.
 */
enum VcStatus vc_kmeans_fit(const double *data,
                            size_t n,
                            size_t d,
                            size_t k,
                            uint64_t seed,
                            int64_t *labels,
                            double *inertia);

/**
 * Loads a model written by `vitalclust run` or `sweep`.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum VcStatus vc_model_load(const char *path, struct VcModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`vc_model_load`] and not be used afterwards.
 */
void vc_model_free(struct VcModel *model);

/**
 * Number of clusters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t vc_model_k(const struct VcModel *model);

/**
 * Number of selected features, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t vc_model_n_features(const struct VcModel *model);

/**
 * Algorithm name, owned by the handle; null for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *vc_model_algorithm(const struct VcModel *model);

/**
 * Assigns `n` new patients to the model's clusters without refitting.
 * `grids` holds `n` channel-major grids of `5 * hours` raw values. Noise
 * is reported as -1.
 *
 * # Safety
 * `grids` must point to `n * 5 * hours` doubles and `labels` to `n` values.
 */
enum VcStatus vc_model_assign(const struct VcModel *model,
                              const double *grids,
                              size_t n,
                              size_t hours,
                              int64_t *labels);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* VITALCLUST_H */
