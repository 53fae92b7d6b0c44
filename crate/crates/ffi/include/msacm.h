#ifndef MSACM_H
#define MSACM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum MsacmStatus {
  MSACM_STATUS_OK = 0,
  MSACM_STATUS_NULL_POINTER = 1,
  MSACM_STATUS_INVALID_INPUT = 2,
  MSACM_STATUS_ESTIMATION = 3,
  MSACM_STATUS_EMPTY_TASK = 4,
  MSACM_STATUS_DOMAIN = 5,
  MSACM_STATUS_IO = 6,
  MSACM_STATUS_BUFFER_TOO_SMALL = 7,
  MSACM_STATUS_PANIC = 8,
} MsacmStatus;

// Output of the Hamilton filter with Kim collapsing and smoothing.
typedef struct MsacmFilter MsacmFilter;

// Outcome of a multi-start fit.
typedef struct MsacmFit MsacmFit;

// Switching-model parameters.
typedef struct MsacmParams MsacmParams;

// Market data: dates, realized volatility, negative-return dummy, proxy
// forecast and announcement mask.
typedef struct MsacmSeries MsacmSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string.
// The pointer stays valid until the next failing call on the same thread.
const char *msacm_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void msacm_string_free(char *s);

// Loads a market CSV with the default column names.
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum MsacmStatus msacm_series_load_csv(const char *path, struct MsacmSeries **out);

// Builds a series from parallel arrays of length `n`. Dates are integers
// `YYYYMMDD`. `x_hat` and `lambda` may be null (no proxy, no
// announcements). The proxy mean is the sample mean of `x_hat`.
//
// # Safety
// Non-null arrays are valid for `n` reads; `out` is writable.
enum MsacmStatus msacm_series_from_arrays(uintptr_t n,
                                          const int32_t *dates,
                                          const double *rv,
                                          const uint8_t *d,
                                          const double *x_hat,
                                          const uint8_t *lambda,
                                          struct MsacmSeries **out);

// Number of observations; 0 for null.
//
// # Safety
// `s` is null or a live handle.
uintptr_t msacm_series_len(const struct MsacmSeries *s);

// # Safety
// `s` is null or a live handle, not used afterwards.
void msacm_series_free(struct MsacmSeries *s);

// Parses parameters from JSON (`base`, `policy`, `trans`, `theta`) and
// checks admissibility.
//
// # Safety
// `json` is a NUL-terminated string; `out` is writable.
enum MsacmStatus msacm_params_from_json(const char *json, struct MsacmParams **out);

// Serializes parameters to JSON; free the result with [`msacm_string_free`].
//
// # Safety
// `p` is a live handle; `out` is writable.
enum MsacmStatus msacm_params_to_json(const struct MsacmParams *p, char **out);

// # Safety
// `p` is null or a live handle, not used afterwards.
void msacm_params_free(struct MsacmParams *p);

// Runs the filter and smoother.
//
// # Safety
// `params` and `series` are live handles; `out` is writable.
enum MsacmStatus msacm_filter_run(const struct MsacmParams *params,
                                  const struct MsacmSeries *series,
                                  struct MsacmFilter **out);

// Log-likelihood from the filter (`-inf` if the mean turned non-positive).
//
// # Safety
// `f` is a live handle; `out` is writable.
enum MsacmStatus msacm_filter_loglik(const struct MsacmFilter *f, double *out);

// Copies the smoothed probabilities of `regime` into `buf`, which must
// hold at least as many values as the series has observations.
//
// # Safety
// `f` is a live handle; `buf` is valid for `len` writes.
enum MsacmStatus msacm_filter_smoothed(const struct MsacmFilter *f,
                                       uintptr_t regime,
                                       double *buf,
                                       uintptr_t len);

// # Safety
// `f` is null or a live handle, not used afterwards.
void msacm_filter_free(struct MsacmFilter *f);

// Exact log-likelihood by enumerating all regime paths; only feasible for
// short series.
//
// # Safety
// `params` and `series` are live handles; `out` is writable.
enum MsacmStatus msacm_exact_loglik(const struct MsacmParams *params,
                                    const struct MsacmSeries *series,
                                    double *out);

// Fits a model. `config_json` uses the command-line configuration format
// (`model`, `k`, `seed`, `flags`, `optimizer`); null means the defaults.
//
// # Safety
// `series` is a live handle; `config_json` is null or NUL-terminated;
// `out` is writable.
enum MsacmStatus msacm_fit(const struct MsacmSeries *series,
                           const char *config_json,
                           struct MsacmFit **out);

// # Safety
// `fit` is a live handle; `out` is writable.
enum MsacmStatus msacm_fit_loglik(const struct MsacmFit *fit, double *out);

// Full fit result as JSON; free with [`msacm_string_free`].
//
// # Safety
// `fit` is a live handle; `out` is writable.
enum MsacmStatus msacm_fit_to_json(const struct MsacmFit *fit, char **out);

// Estimated parameters of a fit as a new handle.
//
// # Safety
// `fit` is a live handle; `out` is writable.
enum MsacmStatus msacm_fit_params(const struct MsacmFit *fit, struct MsacmParams **out);

// # Safety
// `fit` is null or a live handle, not used afterwards.
void msacm_fit_free(struct MsacmFit *fit);

// Adjusted Rand index between two integer labelings of length `n`.
//
// # Safety
// `a` and `b` are valid for `n` reads; `out` is writable.
enum MsacmStatus msacm_adjusted_rand(const int32_t *a, const int32_t *b, uintptr_t n, double *out);

// Uncertainty index for `n` announcements with probability changes
// `delta_p` and labels `0 = Plank`, `1 = Squat`, `2 = Jump`.
//
// # Safety
// `delta_p` and `labels` are valid for `n` reads; `out` is writable.
enum MsacmStatus msacm_uncertainty_index(const double *delta_p,
                                         const int32_t *labels,
                                         uintptr_t n,
                                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSACM_H */
