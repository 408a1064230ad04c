#ifndef CHANCEPRED_H
#define CHANCEPRED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Quantile rule selector for the bounds functions.
 */
typedef enum CpQuantileRule {
  CP_QUANTILE_RULE_STANDARD = 0,
  CP_QUANTILE_RULE_PAPER = 1,
} CpQuantileRule;

/**
 * Result of every fallible call. Values other than `Ok` and the two
 * FFI-only codes match the command-line tool's exit codes.
 */
typedef enum CpStatus {
  CP_STATUS_OK = 0,
  CP_STATUS_INVALID_ARGUMENT = 2,
  CP_STATUS_MISSING_INPUT = 3,
  CP_STATUS_IO = 4,
  CP_STATUS_MALFORMED = 5,
  CP_STATUS_NUMERICAL = 6,
  CP_STATUS_DATA = 7,
  CP_STATUS_DIMENSION = 8,
  /**
   * A required pointer argument was null, or a string was not UTF-8.
   */
  CP_STATUS_BAD_POINTER = 9,
  /**
   * An internal panic was caught at the boundary.
   */
  CP_STATUS_PANIC = 10,
} CpStatus;

/**
 * Per-bin conformal bounds.
 */
typedef struct CpBounds CpBounds;

/**
 * A fitted score calibrator.
 */
typedef struct CpCalibrator CpCalibrator;

/**
 * A trained label predictor for one window length and horizon.
 */
typedef struct CpPredictor CpPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cp_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *cp_last_error(void);

/**
 * Pixels per frame (row-major, intensity in [0, 1], 1 = white).
 */
size_t cp_frame_pixels(void);

/**
 * Renders the state `[cart_pos, cart_vel, pole_angle, pole_angvel]` into
 * `out`, which must hold `cp_frame_pixels()` floats.
 *
 * # Safety
 * `state` must point to 4 doubles and `out` to `cp_frame_pixels()` floats.
 */
enum CpStatus cp_render(const double *state, float *out);

/**
 * Loads a predictor bundle written by the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CpStatus cp_predictor_load(const char *path, struct CpPredictor **out);

/**
 * # Safety
 * `p` must come from [`cp_predictor_load`] and not be used afterwards. Null is ignored.
 */
void cp_predictor_free(struct CpPredictor *p);

/**
 * Window length `m` the predictor expects; 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t cp_predictor_window(const struct CpPredictor *p);

/**
 * Prediction horizon `k`; 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t cp_predictor_horizon(const struct CpPredictor *p);

/**
 * Whether the predictor needs the window's actions (controller-independent).
 *
 * # Safety
 * `p` must be null or a live handle.
 */
bool cp_predictor_uses_actions(const struct CpPredictor *p);

/**
 * Uncalibrated chance that the system is safe `k` steps after the last frame.
 * `frames` holds `n_frames * cp_frame_pixels()` floats, oldest frame first.
 * `actions` holds one `-1`/`+1` per frame, or is null when not needed.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum CpStatus cp_predictor_score(const struct CpPredictor *p,
                                 const float *frames,
                                 size_t n_frames,
                                 const int8_t *actions,
                                 size_t n_actions,
                                 double *out);

/**
 * Loads a calibrator written by the `calibrate` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CpStatus cp_calibrator_load(const char *path, struct CpCalibrator **out);

/**
 * # Safety
 * `c` must come from [`cp_calibrator_load`] and not be used afterwards. Null is ignored.
 */
void cp_calibrator_free(struct CpCalibrator *c);

/**
 * Calibrated score in [0, 1].
 *
 * # Safety
 * `c` must be a live handle and `out` a valid pointer.
 */
enum CpStatus cp_calibrator_apply(const struct CpCalibrator *c, double score, double *out);

/**
 * Fits bounds from `n` calibrated validation scores and 0/1 labels.
 * `rule` is a [`CpQuantileRule`] value.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements and `out` must be valid.
 */
enum CpStatus cp_bounds_fit(const double *scores,
                            const uint8_t *labels,
                            size_t n,
                            size_t bins,
                            double alpha,
                            size_t resamples,
                            size_t resample_size,
                            uint32_t rule,
                            uint64_t seed,
                            struct CpBounds **out);

/**
 * Loads a bounds CSV written by the `calibrate` command. The remaining
 * arguments are the parameters it was computed with.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CpStatus cp_bounds_load(const char *path,
                             double alpha,
                             size_t resamples,
                             size_t resample_size,
                             uint32_t rule,
                             struct CpBounds **out);

/**
 * # Safety
 * `b` must come from a bounds constructor and not be used afterwards. Null is ignored.
 */
void cp_bounds_free(struct CpBounds *b);

/**
 * Number of bins; 0 for a null handle.
 *
 * # Safety
 * `b` must be null or a live handle.
 */
size_t cp_bounds_bins(const struct CpBounds *b);

/**
 * Bound `c_j` of bin `j`.
 *
 * # Safety
 * `b` must be a live handle and `out` a valid pointer.
 */
enum CpStatus cp_bounds_get(const struct CpBounds *b, size_t j, double *out);

/**
 * Interval `[lo, hi]` around calibrated score `g`, clipped to [0, 1], and the bin used.
 * `bin` may be null.
 *
 * # Safety
 * `b` must be a live handle; `lo` and `hi` valid pointers.
 */
enum CpStatus cp_bounds_interval(const struct CpBounds *b,
                                 double g,
                                 double *lo,
                                 double *hi,
                                 size_t *bin);

/**
 * Expected and maximum calibration error over `bins` equal-count bins.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `ece` and `mce` must be valid.
 */
enum CpStatus cp_calibration_error(const double *scores,
                                   const uint8_t *labels,
                                   size_t n,
                                   size_t bins,
                                   double *ece,
                                   double *mce);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHANCEPRED_H */
