#ifndef LAYERSCALE_H
#define LAYERSCALE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_EVALUATOR = 3,
  LS_STATUS_BUFFER_TOO_SMALL = 4,
  LS_STATUS_PANIC = 5,
} LsStatus;

typedef enum LsSamplingMode {
  LS_SAMPLING_MODE_UNIFORM_T = 0,
  LS_SAMPLING_MODE_X_RESOLVED = 1,
} LsSamplingMode;

typedef struct LsCurve LsCurve;

typedef struct LsEvaluator LsEvaluator;

typedef struct LsSearchResult LsSearchResult;

// Position-wise accuracies in percent.
typedef struct LsAccuracy {
  double first;
  double middle;
  double last;
  uint64_t sample_count;
} LsAccuracy;

typedef struct LsWeights {
  double first;
  double middle;
  double last;
} LsWeights;

// Scores `n_layers` scales into `out`; returns 0 on success.
typedef int32_t (*LsEvalCallback)(void *user_data,
                                  const double *scales,
                                  size_t n_layers,
                                  size_t first_scaled_layer,
                                  struct LsAccuracy *out);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *ls_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *ls_last_error(void);

// Number of distinct curves with `n_control` points on the default grid.
//
// # Safety
// `out` must be a valid pointer.
enum LsStatus ls_space_size(size_t n_layers, size_t n_control, uint64_t *out);

// `log10` of the number of per-layer schedules on the default grid.
//
// # Safety
// `out` must be a valid pointer.
enum LsStatus ls_brute_force_log10(size_t n_layers, double *out);

// Weighted utilization of `acc`; weights must satisfy `0 < first < middle < last`.
//
// # Safety
// All pointers must be valid.
enum LsStatus ls_utilization(const struct LsAccuracy *acc,
                             const struct LsWeights *weights,
                             double *out);

// Shannon entropy in nats of the normalized weights.
//
// # Safety
// `weights` must point to `len` doubles; `out` must be valid.
enum LsStatus ls_entropy(const double *weights, size_t len, double *out);

// Triangle schedule rising from `target / pretrained` to that plus
// `interval` at `peak_layer` (negative for the default) and back.
//
// # Safety
// `out_scales` must have room for `len >= n_layers` doubles.
enum LsStatus ls_extrapolation_schedule(size_t n_layers,
                                        double pretrained,
                                        double target,
                                        double interval,
                                        int64_t peak_layer,
                                        double *out_scales,
                                        size_t len);

// Builds a curve from `len` control points with strictly increasing x.
//
// # Safety
// `xs` and `ys` must point to `len` doubles; `out` must be valid.
enum LsStatus ls_curve_new(const double *xs, const double *ys, size_t len, struct LsCurve **out);

// Samples one scale per layer, clamping values below 1.
//
// # Safety
// `curve` must come from [`ls_curve_new`]; `out_scales` must have room for `len` doubles.
enum LsStatus ls_curve_sample(const struct LsCurve *curve,
                              size_t n_layers,
                              enum LsSamplingMode mode,
                              double *out_scales,
                              size_t len);

// # Safety
// `curve` must come from [`ls_curve_new`] or be NULL.
void ls_curve_free(struct LsCurve *curve);

// Synthetic oracle peaked at the given per-layer schedule.
//
// # Safety
// `hidden` must point to `len` doubles; `out` must be valid.
enum LsStatus ls_evaluator_planted_new(const double *hidden,
                                       size_t len,
                                       double sharpness,
                                       struct LsEvaluator **out);

// Evaluator returning `acc` for every schedule.
//
// # Safety
// `acc` and `out` must be valid.
enum LsStatus ls_evaluator_constant_new(const struct LsAccuracy *acc, struct LsEvaluator **out);

// Evaluator backed by a host function. With `jobs > 1` in
// [`ls_search_run`] the callback is invoked from several threads at once.
//
// # Safety
// `callback` must stay valid for the evaluator's lifetime; `out` must be valid.
enum LsStatus ls_evaluator_callback_new(LsEvalCallback callback,
                                        void *user_data,
                                        struct LsEvaluator **out);

// Scores one schedule.
//
// # Safety
// `evaluator` must come from an `ls_evaluator_*_new` call; `scales` must
// point to `len` doubles; `out` must be valid.
enum LsStatus ls_evaluator_evaluate(const struct LsEvaluator *evaluator,
                                    const double *scales,
                                    size_t len,
                                    size_t first_scaled_layer,
                                    struct LsAccuracy *out);

// # Safety
// `evaluator` must come from an `ls_evaluator_*_new` call or be NULL.
void ls_evaluator_free(struct LsEvaluator *evaluator);

// Runs the genetic search.
//
// `config_json` holds search settings as a JSON object (NULL or `"{}"`
// for defaults); `jobs` of 0 means one thread. If the evaluator fails
// mid-run the partial result is still stored in `out` and
// [`LsStatus::Evaluator`] is returned.
//
// # Safety
// `config_json` must be NULL or NUL-terminated UTF-8; `evaluator` must be
// valid; `out` must be valid.
enum LsStatus ls_search_run(const char *config_json,
                            const struct LsEvaluator *evaluator,
                            size_t jobs,
                            struct LsSearchResult **out);

// # Safety
// `result` must come from [`ls_search_run`].
bool ls_result_complete(const struct LsSearchResult *result);

// # Safety
// `result` must come from [`ls_search_run`]; `out` must be valid.
enum LsStatus ls_result_best_utilization(const struct LsSearchResult *result, double *out);

// Copies the best schedule into `out_scales` and its length into `out_len`.
// When the buffer is too short only `out_len` is written.
//
// # Safety
// `result` must come from [`ls_search_run`]; `out_scales` must have room for
// `len` doubles; `out_len` must be valid.
enum LsStatus ls_result_best_schedule(const struct LsSearchResult *result,
                                      double *out_scales,
                                      size_t len,
                                      size_t *out_len);

// Result as canonical JSON; release with [`ls_string_free`]. NULL on failure.
//
// # Safety
// `result` must come from [`ls_search_run`].
char *ls_result_to_json(const struct LsSearchResult *result);

// # Safety
// `result` must come from [`ls_search_run`] or be NULL.
void ls_result_free(struct LsSearchResult *result);

// # Safety
// `s` must come from this library or be NULL.
void ls_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAYERSCALE_H */
