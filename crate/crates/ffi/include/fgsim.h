#ifndef FGSIM_H
#define FGSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * How the merged frame's leakage is scaled before subtraction.
 */
typedef enum FgsimBetaMode {
  FGSIM_BETA_MODE_FIXED = 0,
  /**
   * `L_m / S_m` from the noise parameters.
   */
  FGSIM_BETA_MODE_NOMINAL = 1,
  FGSIM_BETA_MODE_ESTIMATED = 2,
} FgsimBetaMode;

typedef enum FgsimChannel {
  FGSIM_CHANNEL_FLUORESCENCE_CLEAN = 0,
  FGSIM_CHANNEL_REFERENCE = 1,
  FGSIM_CHANNEL_LEAKAGE = 2,
  FGSIM_CHANNEL_READ_NOISE = 3,
  FGSIM_CHANNEL_NOISY_FV = 4,
  FGSIM_CHANNEL_DENOISED = 5,
} FgsimChannel;

typedef enum FgsimFormat {
  FGSIM_FORMAT_PNG16 = 0,
  FGSIM_FORMAT_RAW_F32 = 1,
} FgsimFormat;

typedef enum FgsimPredictorKind {
  FGSIM_PREDICTOR_KIND_ORACLE = 0,
  FGSIM_PREDICTOR_KIND_AFFINE = 1,
  FGSIM_PREDICTOR_KIND_PATCH_AFFINE = 2,
} FgsimPredictorKind;

typedef enum FgsimStatus {
  FGSIM_STATUS_OK = 0,
  FGSIM_STATUS_NULL_POINTER = 1,
  FGSIM_STATUS_INVALID_ARGUMENT = 2,
  FGSIM_STATUS_IO = 3,
  FGSIM_STATUS_SHAPE_MISMATCH = 4,
  FGSIM_STATUS_DEGENERATE = 5,
  FGSIM_STATUS_PANIC = 6,
} FgsimStatus;

/**
 * Opaque leakage predictor handle.
 */
typedef struct FgsimPredictor FgsimPredictor;

/**
 * Opaque video handle.
 */
typedef struct FgsimSequence FgsimSequence;

typedef struct FgsimNoiseParams {
  double s_m;
  double l_m;
  double r_m;
  double inv_k;
  uint32_t bit_depth;
} FgsimNoiseParams;

typedef struct FgsimPipelineParams {
  double n_max;
  double tau;
  enum FgsimBetaMode beta_mode;
  /**
   * Used when `beta_mode` is `Fixed`.
   */
  double beta;
  /**
   * Gaussian smoothing after subtraction; 0 disables it.
   */
  double smooth_sigma;
} FgsimPipelineParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty when none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *fgsim_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fgsim_version(void);

/**
 * Calibrated camera defaults (`1/K = 1763.5`, `R_m = 6`, 12 bits).
 */
struct FgsimNoiseParams fgsim_noise_params_paper_test(double s_m, double l_m);

/**
 * Default align-and-merge settings: `N_max = 64`, `tau = 0.08`, nominal
 * leakage scale, no smoothing.
 */
struct FgsimPipelineParams fgsim_pipeline_params_default(void);

double fgsim_quantize(double x, uint32_t bit_depth);

/**
 * Builds a sequence from `frames * height * width` row-major values.
 *
 * # Safety
 * `data` must point to that many readable doubles; `out` must be writable.
 */
enum FgsimStatus fgsim_sequence_new(const double *data,
                                    size_t width,
                                    size_t height,
                                    size_t frames,
                                    double fps,
                                    enum FgsimChannel channel,
                                    struct FgsimSequence **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FgsimStatus fgsim_sequence_load(const char *path,
                                     enum FgsimChannel channel,
                                     struct FgsimSequence **out);

/**
 * # Safety
 * `seq` must be a live handle and `dir` a NUL-terminated string.
 */
enum FgsimStatus fgsim_sequence_save(const struct FgsimSequence *seq,
                                     const char *dir,
                                     enum FgsimFormat format);

/**
 * # Safety
 * `seq` must be null or a handle not yet freed.
 */
void fgsim_sequence_free(struct FgsimSequence *seq);

/**
 * # Safety
 * `seq` must be a live handle; the output pointers must be writable.
 */
enum FgsimStatus fgsim_sequence_dims(const struct FgsimSequence *seq,
                                     size_t *width,
                                     size_t *height,
                                     size_t *frames);

/**
 * Copies frame `t` into `out`, which holds `len >= width * height` values.
 *
 * # Safety
 * `seq` must be a live handle and `out` writable for `len` doubles.
 */
enum FgsimStatus fgsim_sequence_copy_frame(const struct FgsimSequence *seq,
                                           size_t t,
                                           double *out,
                                           size_t len);

/**
 * Generates a synthetic scene with default motion and content.
 *
 * # Safety
 * The three output pointers must be writable.
 */
enum FgsimStatus fgsim_synth_scene(size_t width,
                                   size_t height,
                                   size_t length,
                                   uint64_t seed,
                                   struct FgsimSequence **clean,
                                   struct FgsimSequence **reference,
                                   struct FgsimSequence **leakage);

/**
 * Simulates a noisy fluorescence video. `predictor` of null uses
 * `leakage` directly; `dark` of null disables read noise.
 *
 * # Safety
 * Handles must be live or null where allowed; `params` and `out` valid.
 */
enum FgsimStatus fgsim_simulate(const struct FgsimSequence *clean,
                                const struct FgsimSequence *reference,
                                const struct FgsimSequence *leakage,
                                const struct FgsimPredictor *predictor,
                                const struct FgsimSequence *dark,
                                const struct FgsimNoiseParams *params,
                                uint64_t seed,
                                struct FgsimSequence **out);

/**
 * Runs the causal align-and-merge denoiser. A null `predictor` uses the
 * oracle (which then needs `oracle_leakage`); `noise` is needed for the
 * nominal leakage scale.
 *
 * # Safety
 * Handles must be live or null where allowed; `pipeline` and `out` valid.
 */
enum FgsimStatus fgsim_denoise(const struct FgsimSequence *noisy,
                               const struct FgsimSequence *reference,
                               const struct FgsimSequence *oracle_leakage,
                               const struct FgsimPredictor *predictor,
                               const struct FgsimPipelineParams *pipeline,
                               const struct FgsimNoiseParams *noise,
                               struct FgsimSequence **out);

/**
 * PSNR over the pooled sequence, capped at 100 dB.
 *
 * # Safety
 * Both handles must be live; `out` writable.
 */
enum FgsimStatus fgsim_psnr(const struct FgsimSequence *a,
                            const struct FgsimSequence *b,
                            double *out);

/**
 * Mean per-frame SSIM.
 *
 * # Safety
 * Both handles must be live; `out` writable.
 */
enum FgsimStatus fgsim_ssim(const struct FgsimSequence *a,
                            const struct FgsimSequence *b,
                            double *out);

/**
 * Gain from phantom video. `mask` holds `width * height` values where
 * non-zero marks ROI pixels; null means the whole frame.
 *
 * # Safety
 * `video` must be live, `mask` null or readable, outputs writable.
 */
enum FgsimStatus fgsim_estimate_gain(const struct FgsimSequence *video,
                                     const double *mask,
                                     double *k_mean,
                                     size_t *roi_count);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum FgsimStatus fgsim_predictor_load(const char *path, struct FgsimPredictor **out);

/**
 * # Safety
 * `pred` must be live and `path` a NUL-terminated string.
 */
enum FgsimStatus fgsim_predictor_save(const struct FgsimPredictor *pred, const char *path);

/**
 * Fits a predictor to the frame pairs of two equally long sequences.
 *
 * # Safety
 * Both handles must be live; `out` writable.
 */
enum FgsimStatus fgsim_predictor_fit(const struct FgsimSequence *reference,
                                     const struct FgsimSequence *leakage,
                                     enum FgsimPredictorKind kind,
                                     struct FgsimPredictor **out);

/**
 * # Safety
 * `pred` must be null or a handle not yet freed.
 */
void fgsim_predictor_free(struct FgsimPredictor *pred);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGSIM_H */
