#ifndef SIS_H
#define SIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum SisStatus {
  SIS_STATUS_OK = 0,
  SIS_STATUS_INVALID_ARGUMENT = 1,
  SIS_STATUS_NO_SIGNAL = 2,
  SIS_STATUS_CALIBRATION_FAILED = 3,
  SIS_STATUS_SUPPORT_VIOLATION = 4,
  SIS_STATUS_ILL_CONDITIONED = 5,
  SIS_STATUS_IO = 6,
  SIS_STATUS_PARSE = 7,
  SIS_STATUS_NULL_POINTER = 8,
  SIS_STATUS_PANIC = 9,
} SisStatus;

// Estimation methods.
typedef enum SisMethod {
  SIS_METHOD_MC = 0,
  SIS_METHOD_SIS_STAR = 1,
  SIS_METHOD_SSIS_STAR = 2,
  SIS_METHOD_SIS_MU = 3,
  SIS_METHOD_SSIS_MU = 4,
  SIS_METHOD_SIS_MU_SIGMA = 5,
  SIS_METHOD_SSIS_MU_SIGMA = 6,
  SIS_METHOD_GL_IS = 7,
  SIS_METHOD_CMC = 8,
  SIS_METHOD_CMC_SIS = 9,
  SIS_METHOD_CMC_SSIS = 10,
} SisMethod;

// Uniform point generator used for estimation.
typedef enum SisRng {
  SIS_RNG_PSEUDO = 0,
  SIS_RNG_SOBOL = 1,
} SisRng;

// Opaque calibration handle for one threshold and target.
typedef struct SisCalibration SisCalibration;

// Opaque model handle.
typedef struct SisModel SisModel;

// One estimate. `wall_time` is in seconds.
typedef struct SisResult {
  double estimate;
  double variance_estimate;
  double ci_halfwidth;
  size_t n;
  double debias_added;
  double wall_time;
} SisResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL if none.
// The pointer stays valid until the next failing call on the same thread.
const char *sis_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a string returned by this library that has not been freed.
void sis_string_free(char *s);

// Linear model `Ψ(X) = 1{αX₁ + √(1−α²)X₂ > l}`.
//
// # Safety
// `out` must be valid for writes.
enum SisStatus sis_model_linear_new(double alpha, struct SisModel **out);

// Gaussian copula credit model with the standard random portfolio.
//
// # Safety
// `out` must be valid for writes.
enum SisStatus sis_model_gaussian_credit_new(size_t h,
                                             size_t d,
                                             uint64_t loadings_seed,
                                             struct SisModel **out);

// t-copula credit model with the standard random portfolio. Index methods sample
// the shock under the second transformation; set `shock_in_index` to sample it
// as an extra index coordinate instead.
//
// # Safety
// `out` must be valid for writes.
enum SisStatus sis_model_tcopula_new(size_t h,
                                     size_t d,
                                     uint64_t loadings_seed,
                                     double nu,
                                     bool shock_in_index,
                                     struct SisModel **out);

// Model from a TOML table in the same format as the `[model]` block of an
// experiment file.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` valid for writes.
enum SisStatus sis_model_from_toml(const char *toml, struct SisModel **out);

// Releases a model. NULL is ignored.
//
// # Safety
// `model` must be NULL or a live handle from a `sis_model_*` constructor.
void sis_model_free(struct SisModel *model);

// Pilot stage for `method` at threshold `l`. Methods without an index proposal
// (`mc`, `cmc`) are rejected; `gl-is` computes the factor mean shift.
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum SisStatus sis_calibrate(const struct SisModel *model,
                             enum SisMethod method,
                             double l,
                             size_t n_pilot,
                             uint64_t seed,
                             struct SisCalibration **out);

// Releases a calibration. NULL is ignored.
//
// # Safety
// `cal` must be NULL or a live calibration handle.
void sis_calibration_free(struct SisCalibration *cal);

// Optimal shift `k*` and, when fitted, scale `σ*` (NaN otherwise).
//
// # Safety
// `cal` must be a live handle; `k_star` and `sigma_star` valid for writes.
enum SisStatus sis_calibration_location_scale(const struct SisCalibration *cal,
                                              double *k_star,
                                              double *sigma_star);

// Serializes a calibration as one `[[fit]]` entry tied to `model`. Free the
// returned string with [`sis_string_free`].
//
// # Safety
// `model` and `cal` must be live handles and `out` valid for writes.
enum SisStatus sis_calibration_to_toml(const struct SisModel *model,
                                       const struct SisCalibration *cal,
                                       char **out);

// Restores the calibration for threshold `l` and `method`'s target from a fit
// document. Fails if the document was produced for a different model.
//
// # Safety
// `model` must be a live handle, `toml` NUL-terminated and `out` valid for writes.
enum SisStatus sis_calibration_from_toml(const struct SisModel *model,
                                         const char *toml,
                                         enum SisMethod method,
                                         double l,
                                         struct SisCalibration **out);

// One estimate of `P(L > l)` (or `E Ψ`) with `n` points. `cal` may be NULL for
// `mc` and `cmc`; every other method needs a calibration for the same `l`.
//
// # Safety
// `model` must be a live handle, `cal` NULL or a live handle, `out` valid for writes.
enum SisStatus sis_estimate(const struct SisModel *model,
                            const struct SisCalibration *cal,
                            enum SisMethod method,
                            double l,
                            size_t n,
                            enum SisRng rng,
                            uint64_t seed,
                            bool self_normalized,
                            struct SisResult *out);

// Canonical TOML of the model block. Free with [`sis_string_free`].
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum SisStatus sis_model_to_toml(const struct SisModel *model, char **out);

// Φ⁻¹(u) for u in (0, 1).
//
// # Safety
// `out` must be valid for writes.
enum SisStatus sis_std_normal_quantile(double u, double *out);

// Φ(x).
double sis_std_normal_cdf(double x);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIS_H */
