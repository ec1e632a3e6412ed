#ifndef DESPECKLER_DESPECKLER_H
#define DESPECKLER_DESPECKLER_H

/*
 * C interface to the despeckler library.
 *
 * Objects are opaque handles created by *_create / *_load and released with
 * the matching *_free. Every fallible call returns a dsp_status; on failure
 * dsp_last_error() holds a message for the calling thread until its next
 * failing call. Strings returned by accessors are owned by the handle and
 * stay valid until the handle is freed or modified.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(DSP_BUILDING_LIBRARY)
#    define DSP_API __declspec(dllexport)
#  else
#    define DSP_API __declspec(dllimport)
#  endif
#else
#  define DSP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dsp_status {
  DSP_OK = 0,
  DSP_ERR_ARGUMENT = 1, /* bad option, unknown key, invalid config */
  DSP_ERR_DATA = 2,     /* unreadable/malformed files, shape mismatch */
  DSP_ERR_NUMERIC = 3,  /* NaN/Inf during computation */
  DSP_ERR_INTERNAL = 4
} dsp_status;

DSP_API const char* dsp_version(void);
DSP_API const char* dsp_last_error(void);
/* 0 restores the default (DESPECKLER_THREADS or hardware concurrency). */
DSP_API void dsp_set_threads(size_t n);

/* ---- speckle ----------------------------------------------------------- */

/* Fills out[height*width] with unit-mean Gamma(L) speckle. */
DSP_API dsp_status dsp_sample_speckle(size_t height, size_t width, double looks, uint64_t seed,
                                      float* out);
DSP_API dsp_status dsp_speckle_pdf(double n, double looks, double* out);

/* Writes clean/, speckled/, preview/ and manifest.txt into out_dir. */
DSP_API dsp_status dsp_build_dataset(const char* corpus_dir, const char* out_dir, size_t patch,
                                     double looks, uint64_t seed, size_t train_count,
                                     size_t val_count, size_t* n_train, size_t* n_val);

/* ---- images ------------------------------------------------------------ */

typedef struct dsp_image dsp_image;

/* .png, .pgm or .f32 (float tensor file). */
DSP_API dsp_status dsp_image_load(const char* path, dsp_image** out);
DSP_API dsp_status dsp_image_create(size_t height, size_t width, const float* pixels,
                                    dsp_image** out);
DSP_API size_t dsp_image_height(const dsp_image* img);
DSP_API size_t dsp_image_width(const dsp_image* img);
DSP_API const float* dsp_image_data(const dsp_image* img);
DSP_API dsp_status dsp_image_save_tensor(const dsp_image* img, const char* path);
/* 8-bit preview, values clamped to [0, 1]. */
DSP_API dsp_status dsp_image_save_png(const dsp_image* img, const char* path);
DSP_API void dsp_image_free(dsp_image* img);

/* ---- model ------------------------------------------------------------- */

typedef struct dsp_model dsp_model;

/* preset: "full" or "desk". */
DSP_API dsp_status dsp_model_create(const char* preset, uint64_t seed, dsp_model** out);
DSP_API dsp_status dsp_model_load(const char* checkpoint, dsp_model** out);
DSP_API dsp_status dsp_model_save(const dsp_model* model, const char* checkpoint);
DSP_API size_t dsp_model_param_count(const dsp_model* model);
/* Input height and width must be multiples of this. */
DSP_API size_t dsp_model_downsample_factor(const dsp_model* model);
DSP_API const char* dsp_model_describe(dsp_model* model);
/* With pad_reflect != 0 the input is reflect-padded to the next valid size
 * and the output cropped back; otherwise a non-divisible size is an error. */
DSP_API dsp_status dsp_model_despeckle(const dsp_model* model, const dsp_image* input,
                                       int pad_reflect, dsp_image** out);
DSP_API void dsp_model_free(dsp_model* model);

/* ---- training ---------------------------------------------------------- */

typedef struct dsp_train_config dsp_train_config;

DSP_API dsp_status dsp_train_config_create(const char* preset, dsp_train_config** out);
/* key=value lines, '#' comments. All problems are reported in one message. */
DSP_API dsp_status dsp_train_config_load_file(dsp_train_config* cfg, const char* path);
DSP_API dsp_status dsp_train_config_set(dsp_train_config* cfg, const char* key, const char* value);
/* Lists every violated constraint at once. */
DSP_API dsp_status dsp_train_config_validate(const dsp_train_config* cfg);
DSP_API const char* dsp_train_config_text(dsp_train_config* cfg);
DSP_API void dsp_train_config_free(dsp_train_config* cfg);

typedef struct dsp_epoch_info {
  size_t epoch;
  double train_loss;
  int has_validation;
  double val_psnr;
  double val_ssim;
  double wall_time_s;
} dsp_epoch_info;

typedef void (*dsp_progress_fn)(const dsp_epoch_info* info, void* user);

typedef struct dsp_fit_result {
  size_t epochs_completed;
  uint64_t steps;
  double final_train_loss;
  double final_val_psnr;
  double final_val_ssim;
  double best_val_psnr;
  double baseline_val_psnr;
  double baseline_val_ssim;
} dsp_fit_result;

/* resume may be NULL; progress may be NULL; result may be NULL. */
DSP_API dsp_status dsp_fit(const dsp_train_config* cfg, const char* resume,
                           dsp_progress_fn progress, void* user, dsp_fit_result* result);

/* ---- metrics ----------------------------------------------------------- */

DSP_API dsp_status dsp_psnr(const dsp_image* estimate, const dsp_image* reference, double peak,
                            double* out);
DSP_API dsp_status dsp_ssim(const dsp_image* a, const dsp_image* b, double peak, double* out);
DSP_API dsp_status dsp_enl(const dsp_image* img, size_t x0, size_t y0, size_t width,
                           size_t height, double* out);
DSP_API dsp_status dsp_cx(const dsp_image* img, size_t x0, size_t y0, size_t width,
                          size_t height, double* out);

typedef struct dsp_report dsp_report;

/* Despeckles one split of a dataset manifest with the checkpoint and scores
 * it against the clean references; the speckled input is scored too. */
DSP_API dsp_status dsp_evaluate_manifest(const char* manifest, const char* split,
                                         const char* checkpoint, double peak, dsp_report** out);
/* estimates[i] is scored against references[i]; a missing reference is a
 * data error naming the file. */
DSP_API dsp_status dsp_evaluate_files(const char* const* estimates,
                                      const char* const* references, size_t count, double peak,
                                      dsp_report** out);
/* ENL and Cx of every region of the region file in every image. */
DSP_API dsp_status dsp_evaluate_regions(const char* const* images, size_t count,
                                        const char* region_file, dsp_report** out);
DSP_API size_t dsp_report_rows(const dsp_report* report);
/* key: mean_psnr, mean_ssim, mean_baseline_psnr, mean_baseline_ssim,
 * mean_enl, mean_cx. */
DSP_API dsp_status dsp_report_value(const dsp_report* report, const char* key, double* out);
DSP_API const char* dsp_report_table(const dsp_report* report);
DSP_API const char* dsp_report_key_values(const dsp_report* report);
/* Writes <dir>/report.txt and <dir>/report.kv. */
DSP_API dsp_status dsp_report_write(const dsp_report* report, const char* dir);
DSP_API void dsp_report_free(dsp_report* report);

#ifdef __cplusplus
}
#endif

#endif /* DESPECKLER_DESPECKLER_H */
