/* advtrans — adversarial-transformation defense laboratory, C API.
 *
 * All functions return advt_status; every non-OK return leaves a
 * human-readable message retrievable via advt_last_error() (thread local).
 * Objects are opaque handles released with the matching _close call.
 */
#ifndef ADVTRANS_H
#define ADVTRANS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define ADVT_API __declspec(dllexport)
#else
#define ADVT_API __attribute__((visibility("default")))
#endif

typedef enum advt_status {
  ADVT_OK = 0,
  ADVT_ERROR = 1,             /* argument/dimension/internal errors */
  ADVT_ERROR_CONFIG = 2,      /* configuration [exit code 2] */
  ADVT_ERROR_DATA_FORMAT = 3, /* dataset/checkpoint format [exit code 3] */
  ADVT_ERROR_PHASE = 4,       /* experiment phase failure [exit code 4] */
} advt_status;

ADVT_API const char* advt_status_name(advt_status s);
ADVT_API const char* advt_last_error(void);
ADVT_API const char* advt_version(void);

/* ---- datasets -------------------------------------------------------- */

typedef struct advt_dataset advt_dataset;

ADVT_API advt_status advt_dataset_load_idx(const char* images_path, const char* labels_path,
                                           advt_dataset** out);
/* kind: "gaussian-blobs" | "ring" */
ADVT_API advt_status advt_dataset_synthetic(const char* kind, int n, int classes,
                                            int image_side, uint64_t seed, advt_dataset** out);
ADVT_API int64_t advt_dataset_size(const advt_dataset* ds);
ADVT_API int advt_dataset_classes(const advt_dataset* ds);
ADVT_API void advt_dataset_close(advt_dataset* ds);

/* ---- models ---------------------------------------------------------- */

typedef struct advt_model advt_model;

ADVT_API advt_status advt_model_load(const char* checkpoint_path, advt_model** out);
ADVT_API advt_status advt_model_save(const advt_model* m, const char* checkpoint_path);
ADVT_API advt_status advt_model_accuracy(const advt_model* m, const advt_dataset* ds,
                                         double* out_accuracy);
/* sha256 hex of the serialized checkpoint; buffer must hold >= 65 bytes */
ADVT_API advt_status advt_model_digest(const advt_model* m, char* out_hex65);
ADVT_API void advt_model_close(advt_model* m);

/* ---- the adversarial transformation g(x) ----------------------------- */

/* Applies g to one image (pixels row-major in [0,1], length must equal the
 * model input size). stepsize <= 0 selects the default delta/6. */
ADVT_API advt_status advt_transform_apply(const advt_model* fb, double delta, int steps,
                                          double stepsize, int random_start, uint64_t seed,
                                          const double* image, size_t len, double* out_image);

/* ---- experiments ------------------------------------------------------ */

typedef struct advt_experiment advt_experiment;

ADVT_API advt_status advt_experiment_open(const char* config_path, advt_experiment** out);
/* keys: "out_dir" (string), "seed" (u64), "threads" (int) */
ADVT_API advt_status advt_experiment_override(advt_experiment* e, const char* key,
                                              const char* value);
ADVT_API advt_status advt_experiment_pretrain_fb(advt_experiment* e);
ADVT_API advt_status advt_experiment_train_defense(advt_experiment* e);
ADVT_API advt_status advt_experiment_attack(advt_experiment* e);
/* full pipeline: pretrain -> defense -> attacks -> report.json */
ADVT_API advt_status advt_experiment_evaluate(advt_experiment* e);
/* re-emit report.json from stored phase outputs */
ADVT_API advt_status advt_experiment_report(advt_experiment* e);
/* parameter: "defense.N" | "defense.delta" | "attack.eot_samples";
 * values: comma-separated list */
ADVT_API advt_status advt_experiment_sweep(advt_experiment* e, const char* parameter,
                                           const char* values);
/* resolved output directory; buffer of cap bytes, NUL terminated */
ADVT_API advt_status advt_experiment_out_dir(const advt_experiment* e, char* buf, size_t cap);
ADVT_API void advt_experiment_close(advt_experiment* e);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ADVTRANS_H */
