#ifndef DGSSM_H
#define DGSSM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DgssmDirection {
  DGSSM_DIRECTION_LEFT_TO_RIGHT = 0,
  DGSSM_DIRECTION_RIGHT_TO_LEFT = 1,
  DGSSM_DIRECTION_TOP_TO_BOTTOM = 2,
  DGSSM_DIRECTION_BOTTOM_TO_TOP = 3,
} DgssmDirection;

typedef enum DgssmStatus {
  DGSSM_STATUS_OK = 0,
  DGSSM_STATUS_NULL_POINTER = 1,
  DGSSM_STATUS_INVALID_ARGUMENT = 2,
  DGSSM_STATUS_IO = 3,
  DGSSM_STATUS_FORMAT = 4,
  DGSSM_STATUS_NUMERIC = 5,
  DGSSM_STATUS_PANIC = 6,
} DgssmStatus;

// Opaque model handle (single precision).
typedef struct DgssmModel DgssmModel;

// The four measures of one prediction map.
typedef struct DgssmScores {
  double s_measure;
  double f_measure_mean;
  double e_measure_mean;
  double mae;
} DgssmScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *dgssm_version(void);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *dgssm_last_error(void);

// Creates a freshly initialised model with the default architecture.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum DgssmStatus dgssm_model_new(uint64_t seed, struct DgssmModel **out);

// Loads a checkpoint written by `dgssm train` or [`dgssm_model_save`].
//
// # Safety
// `path` must be a NUL-terminated string; `out` as for [`dgssm_model_new`].
enum DgssmStatus dgssm_model_load(const char *path_, struct DgssmModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum DgssmStatus dgssm_model_save(const struct DgssmModel *model_, const char *path_);

// Number of trainable network parameters (the denoiser excluded).
//
// # Safety
// `model` must be a live handle and `out` writable.
enum DgssmStatus dgssm_model_param_count(const struct DgssmModel *model_, uintptr_t *out);

// Predicts the final saliency map of one image.
//
// `rgb` holds `3·H·W` planar values in `[0,1]`, `aux` holds `H·W` values or
// is NULL (treated as zeros), `out_map` receives `H·W` probabilities.
// `seed` drives the forward-noise draw of the structural prior.
//
// # Safety
// The buffers must have the stated lengths; `model` must be a live handle.
enum DgssmStatus dgssm_model_predict(const struct DgssmModel *model_,
                                     const float *rgb,
                                     const float *aux,
                                     uintptr_t height,
                                     uintptr_t width,
                                     uint64_t seed,
                                     float *out_map);

// Releases a handle; NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void dgssm_model_free(struct DgssmModel *model);

// S-measure, mean F-measure, mean E-measure and MAE of an `H×W` map
// against a binary ground truth.
//
// # Safety
// `pred` and `gt` must hold `H·W` values; `out` must be writable.
enum DgssmStatus dgssm_metrics(const double *pred,
                               const double *gt,
                               uintptr_t height,
                               uintptr_t width,
                               struct DgssmScores *out);

// One directional diagonal state-space scan of a `(Din,H,W)` grid.
//
// `a` has `Dh` entries, `b` is `Dh×Din` and `c` is `Dout×Dh`, all row
// major; `out` receives `Dout·H·W` values. `parallel` selects the prefix-scan
// kernel instead of the sequential loop.
//
// # Safety
// All buffers must have the stated lengths.
enum DgssmStatus dgssm_scan(const double *x,
                            uintptr_t din,
                            uintptr_t height,
                            uintptr_t width,
                            const double *a,
                            const double *b,
                            const double *c,
                            uintptr_t dh,
                            uintptr_t dout,
                            enum DgssmDirection direction,
                            bool parallel,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DGSSM_H */
