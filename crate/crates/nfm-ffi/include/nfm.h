#ifndef NFM_H
#define NFM_H

/* Generated by cbindgen from the nfm-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this API.
typedef enum NfmStatus {
  // Success.
  NFM_OK = 0,
  // A null handle or output pointer was passed.
  NFM_NULL_POINTER = 1,
  // Arguments were structurally invalid (dimension mismatch, b = 0, ...).
  NFM_INVALID_ARGUMENT = 2,
  // The filesystem said no (missing file, permissions, short read).
  NFM_IO_ERROR = 3,
  // A file exists but is not a valid artifact (bad magic, corrupt payload).
  NFM_FORMAT_ERROR = 4,
  // An internal panic was caught at the boundary; state is unchanged.
  NFM_INTERNAL_ERROR = 5,
} NfmStatus;

// A reference bank of normal feature rows (opaque).
typedef struct NfmBank NfmBank;

// A matrix of `float` feature rows (opaque).
typedef struct NfmTensor NfmTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, as a NUL-terminated
// string. Empty if nothing failed yet. The pointer stays valid until the
// next failing call on the same thread.
const char *nfm_last_error(void);

// Reads a tensor from an `.nfmb` file into a new handle.
//
// # Safety
// `path` must point to a NUL-terminated string and `out` to writable
// storage for one pointer.
enum NfmStatus nfm_tensor_read(const char *path, struct NfmTensor **out);

// Writes a tensor to an `.nfmb` file.
//
// # Safety
// `tensor` must be a live handle and `path` a NUL-terminated string.
enum NfmStatus nfm_tensor_write(const struct NfmTensor *tensor, const char *path);

// Builds a tensor handle from a dense row-major buffer of `rows * dim`
// floats. The data is copied; the caller keeps ownership of `data`.
// Rejects non-finite values.
//
// # Safety
// `data` must point to at least `rows * dim` readable floats and `out` to
// writable storage for one pointer.
enum NfmStatus nfm_tensor_create(uint64_t rows,
                                 uint64_t dim,
                                 const float *data,
                                 struct NfmTensor **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `tensor` must be a live handle or null.
uint64_t nfm_tensor_rows(const struct NfmTensor *tensor);

// Row width, or 0 for a null handle.
//
// # Safety
// `tensor` must be a live handle or null.
uint64_t nfm_tensor_dim(const struct NfmTensor *tensor);

// Frees a tensor handle. Null is a no-op.
//
// # Safety
// `tensor` must be a handle from this library, freed at most once.
void nfm_tensor_free(struct NfmTensor *tensor);

// Loads a saved bank (`.nfmb` plus metadata sidecar) into a new handle.
//
// # Safety
// `path` must point to a NUL-terminated string and `out` to writable
// storage for one pointer.
enum NfmStatus nfm_bank_load(const char *path, struct NfmBank **out);

// Wraps a tensor's rows as an ad-hoc bank (no provenance metadata). The
// tensor is copied; the handle remains owned by the caller.
//
// # Safety
// `tensor` must be a live handle and `out` writable storage for one pointer.
enum NfmStatus nfm_bank_from_tensor(const struct NfmTensor *tensor, struct NfmBank **out);

// Number of reference rows in the bank, or 0 for a null handle.
//
// # Safety
// `bank` must be a live handle or null.
uint64_t nfm_bank_rows(const struct NfmBank *bank);

// Row width of the bank, or 0 for a null handle.
//
// # Safety
// `bank` must be a live handle or null.
uint64_t nfm_bank_dim(const struct NfmBank *bank);

// Frees a bank handle. Null is a no-op.
//
// # Safety
// `bank` must be a handle from this library, freed at most once.
void nfm_bank_free(struct NfmBank *bank);

// Scores one sample (a tensor of feature rows) against the bank with
// neighborhood size `b`. Higher scores mean more anomalous.
//
// # Safety
// `bank` and `sample` must be live handles and `out_score` writable.
enum NfmStatus nfm_memory_score(const struct NfmBank *bank,
                                const struct NfmTensor *sample,
                                uint64_t b,
                                double *out_score);

// Area under the ROC curve for `len` samples; `labels[i]` nonzero marks an
// abnormal sample. Requires at least one abnormal and one normal.
//
// # Safety
// `labels` and `scores` must each point to `len` readable elements, and
// `out_auroc` must be writable.
enum NfmStatus nfm_auroc(const uint8_t *labels,
                         const double *scores,
                         uint64_t len,
                         double *out_auroc);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* NFM_H */
