#ifndef OCTPAD_OCTPAD_H
#define OCTPAD_OCTPAD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(OCTPAD_BUILDING)
#    define OCTPAD_API __declspec(dllexport)
#  else
#    define OCTPAD_API __declspec(dllimport)
#  endif
#else
#  define OCTPAD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum octpad_status {
  OCTPAD_OK = 0,
  OCTPAD_ERR_INVALID_ARGUMENT = 1, /* bad parameter or config value */
  OCTPAD_ERR_IO = 2,               /* file missing or unwritable */
  OCTPAD_ERR_FORMAT = 3,           /* malformed image, manifest, checkpoint or CSV */
  OCTPAD_ERR_DATA = 4,             /* input cannot be processed (e.g. single-class training set) */
  OCTPAD_ERR_NUMERIC = 5,          /* training diverged */
  OCTPAD_ERR_INTERNAL = 6
} octpad_status;

/* Message of the last failed call on this thread; "" when none. */
OCTPAD_API const char* octpad_last_error(void);
OCTPAD_API const char* octpad_version(void);

/* Progress sink for long-running calls. */
typedef void (*octpad_progress_fn)(const char* message, void* user);

/* ------------------------------------------------------------ config
 * One JSON document with a section per concern:
 *   seed, preprocess, patches, train, heatmap, eval, synth
 * Keys are addressed as "section.key" (or "seed"). Unknown keys and values
 * that break an invariant are rejected with OCTPAD_ERR_INVALID_ARGUMENT. */
typedef struct octpad_config octpad_config;

OCTPAD_API octpad_status octpad_config_new(octpad_config** out);
OCTPAD_API void octpad_config_free(octpad_config* cfg);
/* Merges a JSON config file over the current values. */
OCTPAD_API octpad_status octpad_config_load(octpad_config* cfg, const char* path);
/* value_json is JSON text: "20", "true", "\"name\"", "[\"a\",\"b\"]". */
OCTPAD_API octpad_status octpad_config_set(octpad_config* cfg, const char* key, const char* value_json);
/* Writes the fully resolved config as JSON. */
OCTPAD_API octpad_status octpad_config_save(const octpad_config* cfg, const char* path);
/* Copies the resolved JSON into buf (NUL-terminated, truncated to cap) and
 * stores the untruncated length in *len when len is non-null. */
OCTPAD_API octpad_status octpad_config_json(const octpad_config* cfg, char* buf, size_t cap, size_t* len);

/* ------------------------------------------------------------ images */
typedef struct octpad_image octpad_image;

OCTPAD_API octpad_status octpad_image_create(int height, int width, const uint8_t* pixels, octpad_image** out);
/* PGM (P5) or 8-bit grayscale PNG. */
OCTPAD_API octpad_status octpad_image_load(const char* path, octpad_image** out);
/* ".pgm" writes PGM, anything else PNG. */
OCTPAD_API octpad_status octpad_image_save(const octpad_image* img, const char* path);
OCTPAD_API void octpad_image_free(octpad_image* img);
OCTPAD_API int octpad_image_height(const octpad_image* img);
OCTPAD_API int octpad_image_width(const octpad_image* img);
/* Row-major pixels, valid until the image is freed. */
OCTPAD_API const uint8_t* octpad_image_data(const octpad_image* img);

/* ------------------------------------------------------------ pipeline */

/* Writes a synthetic corpus into out_dir (images plus manifest.jsonl). */
OCTPAD_API octpad_status octpad_synth_corpus(const octpad_config* cfg, const char* out_dir);

/* Denoise, dilate, Otsu. The mask is a 0/255 image. */
OCTPAD_API octpad_status octpad_preprocess(const octpad_config* cfg, const octpad_image* scan, octpad_image** mask_out);

/* Candidate search on the mask, selection, and extraction from the scan.
 * Writes <scan_id>_<k>_<row>_<col>.png files into out_dir and appends one
 * JSON line per patch to out_dir/patches.jsonl. */
OCTPAD_API octpad_status octpad_extract_patches(const octpad_config* cfg, const octpad_image* scan,
                                                const octpad_image* mask, const char* scan_id, const char* out_dir,
                                                size_t* n_written);

/* ------------------------------------------------------------ models */
typedef struct octpad_model octpad_model;

/* Trains on patches drawn from every scan in a scan manifest. */
OCTPAD_API octpad_status octpad_train(const octpad_config* cfg, const char* manifest, octpad_progress_fn progress,
                                      void* user, octpad_model** out);
OCTPAD_API octpad_status octpad_model_save(const octpad_model* model, const char* path);
OCTPAD_API octpad_status octpad_model_load(const char* path, octpad_model** out);
OCTPAD_API void octpad_model_free(octpad_model* model);
OCTPAD_API size_t octpad_model_param_count(const octpad_model* model);

/* PA-class probability of one patch. */
OCTPAD_API octpad_status octpad_spoofness(const octpad_model* model, const octpad_image* patch, double* out);

/* Scores every scan of a manifest; writes scan_id,label,material,n_patches,global_score. */
OCTPAD_API octpad_status octpad_score_manifest(const octpad_config* cfg, const octpad_model* model,
                                               const char* manifest, const char* out_csv);

/* Fixation heatmap of one patch (0..255) and its points as row,col,weight
 * CSV when points_csv is non-null. spoofness may be null. */
OCTPAD_API octpad_status octpad_fixate(const octpad_config* cfg, const octpad_model* model, const octpad_image* patch,
                                       octpad_image** heat_out, const char* points_csv, double* spoofness);

/* ------------------------------------------------------------ evaluation */
typedef struct octpad_operating_point {
  double tdr;
  double fdr;
  double tau;
} octpad_operating_point;

/* ROC of a scores CSV at eval.fdr. Writes roc.csv, roc.svg and summary.json
 * into out_dir when it is non-null. */
OCTPAD_API octpad_status octpad_eval_scores(const octpad_config* cfg, const char* scores_csv, const char* out_dir,
                                            octpad_operating_point* out);

/* Stratified k-fold cross-validation over a scan manifest. Writes scores,
 * per-fold ROC CSVs, roc.svg and summary.json into out_dir. */
OCTPAD_API octpad_status octpad_crossval(const octpad_config* cfg, const char* manifest, const char* out_dir,
                                         octpad_progress_fn progress, void* user, double* mean_tdr, double* sd_tdr);

#ifdef __cplusplus
}
#endif

#endif
