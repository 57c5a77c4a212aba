#ifndef RAGGEDEDGE_H
#define RAGGEDEDGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RgStatus {
  RG_STATUS_OK = 0,
  RG_STATUS_NULL_POINTER = 1,
  RG_STATUS_INVALID_UTF8 = 2,
  RG_STATUS_INVALID_INPUT = 3,
  RG_STATUS_IO = 4,
  RG_STATUS_FORMAT = 5,
  RG_STATUS_NUMERICAL = 6,
  RG_STATUS_BUFFER_TOO_SMALL = 7,
  RG_STATUS_PANIC = 8,
} RgStatus;

/**
 * Trained network ensemble.
 */
typedef struct RgEnsemble RgEnsemble;

/**
 * Loaded or generated panel.
 */
typedef struct RgPanel RgPanel;

typedef struct RgLagCorrelation {
  /**
   * Positive when the first series leads.
   */
  int64_t lag;
  double r;
  double p_value;
  size_t n;
} RgLagCorrelation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library from the same thread.
 */
const char *rg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rg_version(void);

/**
 * Loads a panel from the GERD CSV, the SVI directory and the macro CSV.
 *
 * # Safety
 * The paths must be NUL-terminated strings and `out` a writable pointer.
 */
enum RgStatus rg_panel_load(const char *gerd_csv,
                            const char *svi_dir,
                            const char *macro_csv,
                            struct RgPanel **out);

/**
 * Generates a synthetic panel from a JSON spec.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RgStatus rg_panel_synthetic(const char *spec_json, uint64_t seed, struct RgPanel **out);

/**
 * Writes the number of countries and years.
 *
 * # Safety
 * `panel` must come from this library; the outputs must be writable.
 */
enum RgStatus rg_panel_shape(const struct RgPanel *panel, size_t *n_countries, size_t *n_years);

/**
 * Annual target of one country, one value per panel year starting with the
 * first year.
 *
 * # Safety
 * `panel` must come from this library and `out` hold `len` doubles.
 */
enum RgStatus rg_panel_targets(const struct RgPanel *panel,
                               size_t country,
                               double *out,
                               size_t len);

/**
 * # Safety
 * `panel` must be null or come from this library and not be freed twice.
 */
void rg_panel_free(struct RgPanel *panel);

/**
 * Loads a model file written by the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RgStatus rg_ensemble_load(const char *path, struct RgEnsemble **out);

/**
 * Raw row width the ensemble expects.
 *
 * # Safety
 * `model` must come from this library and `out` be writable.
 */
enum RgStatus rg_ensemble_input_width(const struct RgEnsemble *model, size_t *out);

/**
 * Ensemble-mean predictions for `n_rows` raw rows stored row-major.
 *
 * # Safety
 * `rows` must hold `n_rows * n_cols` doubles and `out` `n_rows` doubles.
 */
enum RgStatus rg_ensemble_predict(const struct RgEnsemble *model,
                                  const double *rows,
                                  size_t n_rows,
                                  size_t n_cols,
                                  double *out);

/**
 * # Safety
 * `model` must be null or come from this library and not be freed twice.
 */
void rg_ensemble_free(struct RgEnsemble *model);

/**
 * Chow-Lin disaggregation with a constant and the default `rho` grid.
 *
 * `indicators` is row-major with `12 * n_years` rows and `n_indicators`
 * columns. `out_monthly` receives `12 * n_years` values; `out_rho` may be
 * null.
 *
 * # Safety
 * The buffers must have the sizes above.
 */
enum RgStatus rg_chow_lin(const double *annual,
                          size_t n_years,
                          const double *indicators,
                          size_t n_indicators,
                          double *out_monthly,
                          double *out_rho);

/**
 * Correlations of two equally long series at lags `-max_lag..=max_lag`,
 * strongest first. `capacity` must be at least `2 * max_lag + 1`.
 *
 * # Safety
 * `a` and `b` must hold `len` doubles, `out` `capacity` records and
 * `out_len` be writable.
 */
enum RgStatus rg_lagged_correlation(const double *a,
                                    const double *b,
                                    size_t len,
                                    size_t max_lag,
                                    struct RgLagCorrelation *out,
                                    size_t capacity,
                                    size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAGGEDEDGE_H */
