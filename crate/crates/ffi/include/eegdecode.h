#ifndef EEGDECODE_H
#define EEGDECODE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EegStatus {
  EEG_OK = 0,
  // A required pointer argument was NULL.
  EEG_ERR_NULL = 1,
  // Invalid argument or configuration.
  EEG_ERR_INVALID = 2,
  // The input data cannot be used (unreadable, malformed, degenerate).
  EEG_ERR_DATA = 3,
  // Internal failure, including caught panics.
  EEG_ERR_INTERNAL = 4,
  // The caller's buffer is too small; the needed length was written.
  EEG_ERR_BUFFER = 5,
} EegStatus;

// Result of one cluster permutation test.
typedef struct EegClusterResult EegClusterResult;

// Loaded dataset.
typedef struct EegDataset EegDataset;

// Fitted sparse logistic regression model.
typedef struct EegLogReg EegLogReg;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// NUL-terminated message of the calling thread's last failure; empty if
// none. Valid until the next failing call on this thread.
const char *eeg_last_error(void);

// Library version as a static NUL-terminated string.
const char *eeg_version(void);

// Loads and validates a dataset directory.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum EegStatus eeg_dataset_load(const char *path, struct EegDataset **out);

// # Safety
// `ds` must be NULL or a handle from [`eeg_dataset_load`] not yet freed.
void eeg_dataset_free(struct EegDataset *ds);

// # Safety
// `ds` must be a live handle; `out` writable.
enum EegStatus eeg_dataset_n_subjects(const struct EegDataset *ds, size_t *out);

// # Safety
// `ds` must be a live handle; `out` writable.
enum EegStatus eeg_dataset_n_channels(const struct EegDataset *ds, size_t *out);

// Fits an L1 logistic regression on the row-major `n_samples × n_features`
// matrix `x` with 0/1 labels `y`. `standardize` is 0 or 1.
//
// # Safety
// `x` valid for `n_samples * n_features` reads, `y` for `n_samples`; `out` writable.
enum EegStatus eeg_logreg_fit(const double *x,
                              size_t n_samples,
                              size_t n_features,
                              const uint8_t *y,
                              double lambda,
                              int32_t standardize,
                              struct EegLogReg **out);

// # Safety
// `m` must be NULL or a handle from [`eeg_logreg_fit`] not yet freed.
void eeg_logreg_free(struct EegLogReg *m);

// Copies the weights (in original feature units) into `out[0..len]`.
// Fails with `EEG_ERR_BUFFER` when `len` is less than the feature count.
//
// # Safety
// `m` live; `out` valid for `len` writes.
enum EegStatus eeg_logreg_weights(const struct EegLogReg *m, double *out, size_t len);

// # Safety
// `m` live; `out` writable.
enum EegStatus eeg_logreg_intercept(const struct EegLogReg *m, double *out);

// # Safety
// `m` live; `out` writable.
enum EegStatus eeg_logreg_n_features(const struct EegLogReg *m, size_t *out);

// Positive-class probabilities of the `n_samples` rows of `x`.
//
// # Safety
// `x` valid for `n_samples * n_features` reads; `out` for `n_samples` writes.
enum EegStatus eeg_logreg_predict_proba(const struct EegLogReg *m,
                                        const double *x,
                                        size_t n_samples,
                                        size_t n_features,
                                        double *out);

// Sign-flip cluster test on a row-major `n_runs × n_timepoints` AUC matrix.
// `exact` non-zero enumerates all sign patterns (at most 20 runs) instead of
// drawing `n_perm` random ones.
//
// # Safety
// `auc` valid for `n_runs * n_timepoints` reads; `out` writable.
enum EegStatus eeg_cluster_test(const double *auc,
                                size_t n_runs,
                                size_t n_timepoints,
                                double start_ms,
                                double step_ms,
                                size_t n_perm,
                                uint64_t seed,
                                int32_t exact,
                                struct EegClusterResult **out);

// # Safety
// `r` must be NULL or a handle from [`eeg_cluster_test`] not yet freed.
void eeg_cluster_free(struct EegClusterResult *r);

// Number of clusters at or below the significance level.
//
// # Safety
// `r` live; `out` writable.
enum EegStatus eeg_cluster_n_significant(const struct EegClusterResult *r, size_t *out);

// Copies the pointwise p-values into `out[0..len]`; `EEG_ERR_BUFFER` when
// `len` is less than the number of timepoints.
//
// # Safety
// `r` live; `out` valid for `len` writes.
enum EegStatus eeg_cluster_pointwise_p(const struct EegClusterResult *r, double *out, size_t len);

// Writes the full result as NUL-terminated JSON into `buf`. `*needed`
// receives the size including the NUL; when `len` is too small nothing but
// `*needed` is written and `EEG_ERR_BUFFER` is returned.
//
// # Safety
// `r` live; `buf` valid for `len` writes (may be NULL when `len` is 0);
// `needed` writable.
enum EegStatus eeg_cluster_to_json(const struct EegClusterResult *r,
                                   char *buf,
                                   size_t len,
                                   size_t *needed);

// ROC AUC of `scores` against 0/1 `labels`, ties counted as one half.
//
// # Safety
// `scores` and `labels` valid for `n` reads; `out` writable.
enum EegStatus eeg_auc(const double *scores, const uint8_t *labels_, size_t n, double *out);

// Spearman rank correlation with average ranks for ties.
//
// # Safety
// `x` and `y` valid for `n` reads; `out` writable.
enum EegStatus eeg_spearman(const double *x, const double *y, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EEGDECODE_H */
