/* miscal.h - C interface to the LiDAR-camera miscalibration detection toolkit.
 *
 * All entry points return miscal_status; MISCAL_OK means success. On failure
 * miscal_last_error() describes the problem for the calling thread. Objects
 * returned through out-parameters are owned by the caller and released with
 * the matching *_close function.
 */
#ifndef MISCAL_H
#define MISCAL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum miscal_status {
  MISCAL_OK = 0,
  MISCAL_ERR_USAGE = 2,   /* invalid arguments / configuration */
  MISCAL_ERR_DATA = 3,    /* missing or malformed input data */
  MISCAL_ERR_NUMERIC = 4, /* numeric failure during training/evaluation */
  MISCAL_ERR_INTERNAL = 5
} miscal_status;

typedef struct miscal_dataset miscal_dataset; /* opaque frame collection */
typedef struct miscal_model miscal_model;     /* opaque trained detector */

const char* miscal_version(void);

/* Message describing the most recent failure on this thread. */
const char* miscal_last_error(void);

/* ---- datasets ---------------------------------------------------------- */

miscal_status miscal_dataset_open_synthetic(int n_frames, int width, int height,
                                            int points_per_frame, uint64_t seed,
                                            miscal_dataset** out);

/* sequences is a comma-separated list like "00" or "01,02,03".
 * max_frames_per_seq <= 0 loads every frame. holdout_sequence (nullable)
 * names the reserved test sequence; loading fails if the list contains it. */
miscal_status miscal_dataset_open_kitti(const char* root, const char* sequences,
                                        int max_frames_per_seq, const char* holdout_sequence,
                                        miscal_dataset** out);

int miscal_dataset_frame_count(const miscal_dataset* ds);
void miscal_dataset_close(miscal_dataset* ds);

/* Materializes labeled pairs to out_dir/<config>/ (images/, depth/ 16-bit
 * PNGs and manifest.csv). configs_csv: comma-separated config names.
 * error_config_file may be NULL to use the built-in bands. */
miscal_status miscal_generate(const miscal_dataset* ds, const char* configs_csv,
                              const char* error_config_file, int input_width, int input_height,
                              uint64_t seed, const char* out_dir);

/* ---- training ----------------------------------------------------------- */

typedef struct miscal_train_options {
  int epochs;
  int batch_size;
  int micro_batch;
  double lr_initial;
  double lr_after_drop;
  int lr_drop_epoch;
  double weight_decay;
  double margin;
  double val_fraction;
  uint64_t seed;
  int input_width;
  int input_height;
  const char* variant;           /* "resnet18_small" | "resnet18_all" */
  const char* error_config_file; /* NULL -> built-in bands */
  const char* resume_from;       /* NULL, or a resume_state.mckpt path */
} miscal_train_options;

/* Fills the published defaults (batch 64, AdamW 1e-3/0.05, margin 4,
 * 50 epochs with the drop to 1e-4 after 30). */
void miscal_train_options_init(miscal_train_options* opts);

miscal_status miscal_train_pretext(const miscal_dataset* ds, const miscal_train_options* opts,
                                   const char* run_dir, char* checkpoint_path_out, size_t cap);

miscal_status miscal_train_classifier(const miscal_dataset* ds, const char* encoder_checkpoint,
                                      const miscal_train_options* opts, const char* run_dir,
                                      char* checkpoint_path_out, size_t cap);

/* ---- models ------------------------------------------------------------- */

miscal_status miscal_model_open(const char* checkpoint_path, miscal_model** out);
void miscal_model_close(miscal_model* model);
int64_t miscal_model_parameter_count(const miscal_model* model);

/* ---- evaluation / analysis ---------------------------------------------- */

/* Writes metrics.csv (one row per config) and a plain-text table to out_dir.
 * configs_csv may mix band names and "Intrinsic easy|medium|hard". */
miscal_status miscal_evaluate(const miscal_model* model, const miscal_dataset* ds,
                              const char* configs_csv, const char* error_config_file,
                              double threshold, int pairs_per_config, uint64_t seed,
                              const char* out_dir);

/* condition: "calibrated" or "miscalibrated". Writes cka_<condition>.csv and
 * cka_<condition>.png to out_dir. */
miscal_status miscal_cka(const miscal_model* model, const miscal_dataset* ds,
                         const char* condition, int n_samples, uint64_t seed,
                         const char* out_dir);

/* Latency/size benchmark; writes a CSV with a hardware-info header. */
miscal_status miscal_bench(const miscal_model* model, int warmup, int iters,
                           const char* out_csv);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MISCAL_H */
