/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef CUD_H
#define CUD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum CudStatus {
  CUD_STATUS_OK = 0,
  // A required pointer argument was null.
  CUD_STATUS_NULL_POINTER = 1,
  // A hyperparameter, index or length is out of range.
  CUD_STATUS_INVALID_ARGUMENT = 2,
  // An input lies outside the operation's domain (e.g. not a distribution).
  CUD_STATUS_DOMAIN = 3,
  // An iterative routine failed to converge.
  CUD_STATUS_NUMERICAL = 4,
  // Array lengths disagree.
  CUD_STATUS_DIMENSION = 5,
  // A file could not be read.
  CUD_STATUS_IO = 6,
  // A file was read but its contents are invalid.
  CUD_STATUS_FORMAT = 7,
  // A bug in the library (a caught panic).
  CUD_STATUS_INTERNAL = 8,
} CudStatus;

// Opaque trained classifier.
typedef struct CudClassifier CudClassifier;

// Teacher objective weights and gate shape; see [`cud_dus_params_default`].
typedef struct CudDusParams {
  double lambda_ce;
  double lambda_f;
  double lambda_h;
  double alpha_y;
  double gamma;
  double gate_threshold_tau;
  double gate_rho;
  double gate_beta;
  // Nonzero: differentiate through the smooth part of the gate.
  uint8_t grad_through_gate;
} CudDusParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the calling thread's last failure ("" after a success). The
// pointer stays valid until the thread calls into the library again.
const char *cud_last_error(void);

// Library version as a static NUL-terminated string.
const char *cud_version(void);

struct CudDusParams cud_dus_params_default(void);

// `out[k] = softmax(logits / temperature)[k]` for `n` classes.
//
// # Safety
// `logits` and `out` must each point to `n` doubles.
enum CudStatus cud_softmax(const double *logits, size_t n, double temperature, double *out);

// Wrong-mass clipping of the distribution `dist` (`n` entries) toward
// `label`. Writes the clipped distribution to `out` and, if `delta_out` is
// non-null, the mass moved.
//
// # Safety
// `dist` and `out` must each point to `n` doubles; `delta_out` may be null.
enum CudStatus cud_w_clip(const double *dist,
                          size_t n,
                          size_t label,
                          double eta,
                          double margin_scale_m,
                          double *out,
                          double *delta_out);

// KL projection of `dist` onto `{q : q[wrong_class] <= max_wrong_mass}`.
// Writes the projection to `out` and, if `nu_out` is non-null, the dual
// variable (zero when the cap is already met).
//
// # Safety
// `dist` and `out` must each point to `n` doubles; `nu_out` may be null.
enum CudStatus cud_exact_tilt(const double *dist,
                              size_t n,
                              size_t wrong_class,
                              double max_wrong_mass,
                              double *out,
                              double *nu_out);

// Teacher objective at `logits` (`n` classes) for `label`. `params` may be
// null for the defaults; `grad_out` may be null, otherwise it receives the
// `n`-element logit gradient.
//
// # Safety
// `logits` must point to `n` doubles, `loss_out` to one double, and
// `grad_out` (if non-null) to `n` doubles.
enum CudStatus cud_teacher_loss(const double *logits,
                                size_t n,
                                size_t label,
                                const struct CudDusParams *params,
                                double *loss_out,
                                double *grad_out);

// AUROC of `scores` for separating `positive[i] != 0` from the rest.
//
// # Safety
// `scores` and `positive` must each point to `n` elements; `out` to one double.
enum CudStatus cud_auroc(const double *scores, const uint8_t *positive, size_t n, double *out);

// Loads a checkpoint written by the `cud` tool. On success `*out` owns a
// handle to release with [`cud_classifier_free`]; on failure it is set to null.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum CudStatus cud_classifier_load(const char *path, struct CudClassifier **out);

// Number of input features, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t cud_classifier_input_dim(const struct CudClassifier *model);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t cud_classifier_num_classes(const struct CudClassifier *model);

// Class probabilities for one example.
//
// # Safety
// `model` must be a live handle, `features` must point to `n_features`
// doubles and `probs_out` to `n_classes` doubles.
enum CudStatus cud_classifier_predict(const struct CudClassifier *model,
                                      const double *features,
                                      size_t n_features,
                                      double *probs_out,
                                      size_t n_classes);

// Releases a handle from [`cud_classifier_load`]. Null is a no-op.
//
// # Safety
// `model` must be null or a handle not yet freed.
void cud_classifier_free(struct CudClassifier *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CUD_H */
