/*
 * C interface to the ldistill library.
 *
 * Every function returns an ld_status. On failure, ld_last_error() holds a
 * message for the calling thread until the next failing call. Handles are
 * opaque and owned by the caller; release them with the matching *_free.
 * Strings returned through char** are released with ld_string_free.
 */
#ifndef LDISTILL_C_API_H
#define LDISTILL_C_API_H

#include <stddef.h>
#include <stdint.h>

#if defined(LDISTILL_BUILDING)
#define LD_API __attribute__((visibility("default")))
#else
#define LD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ld_status {
  LD_OK = 0,
  LD_ERR_INVALID_ARGUMENT = 1,
  LD_ERR_CONFIG = 2,
  LD_ERR_IO = 3,
  LD_ERR_MISMATCH = 4,
  LD_ERR_NUMERIC = 5,
  LD_ERR_CRITERION = 6,
  LD_ERR_INTERNAL = 7
} ld_status;

typedef struct ld_config ld_config;
typedef struct ld_model ld_model;

LD_API const char* ld_last_error(void);
LD_API const char* ld_status_string(ld_status status);
LD_API void ld_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

LD_API ld_status ld_config_default(ld_config** out);
LD_API ld_status ld_config_load(const char* path, ld_config** out);
/* Applies one "section.key = value" assignment. */
LD_API ld_status ld_config_set(ld_config* config, const char* key, const char* value);
LD_API void ld_config_free(ld_config* config);

/* ---- models ----------------------------------------------------------- */

typedef struct ld_train_summary {
  uint64_t steps;
  double initial_loss;
  double final_loss;
} ld_train_summary;

/* Trains a teacher. log_csv_path may be NULL. */
LD_API ld_status ld_train_teacher(const ld_config* config, const char* log_csv_path, ld_model** out,
                                  ld_train_summary* summary);

/* Base weights (teacher checkpoint) as <manifest> plus a sibling .bin blob. */
LD_API ld_status ld_model_save_teacher(const ld_model* model, const char* manifest_path);
LD_API ld_status ld_model_load_teacher(const char* manifest_path, ld_model** out);
/* Adapter-only checkpoint; guidance_s is taken from the last distillation or load. */
LD_API ld_status ld_model_save_adapters(const ld_model* model, const char* manifest_path);
/* Fails with LD_ERR_MISMATCH when the adapters were trained on another base. */
LD_API ld_status ld_model_load_adapters(ld_model* model, const char* manifest_path);
LD_API void ld_model_free(ld_model* model);

/* LD_ERR_MISMATCH when the model's network/schedule disagree with the config. */
LD_API ld_status ld_model_check_config(const ld_model* model, const ld_config* config);
LD_API ld_status ld_model_has_adapters(const ld_model* model, int* out);
/* Guidance the adapters were distilled for; LD_ERR_INVALID_ARGUMENT without adapters. */
LD_API ld_status ld_model_guidance(const ld_model* model, double* out);
LD_API ld_status ld_model_base_hash(const ld_model* model, char** out);

/* ---- distillation ----------------------------------------------------- */

typedef struct ld_distill_summary {
  uint64_t steps;
  uint64_t adapted_layers;
  uint64_t trainable_params;
  uint64_t expected_adapter_params; /* closed-form r * (in + out) count */
  double guidance;
  double initial_agreement_mse;
  double final_agreement_mse;
} ld_distill_summary;

/* Attaches adapters to the teacher and distills. log_csv_path may be NULL. */
LD_API ld_status ld_distill(ld_model* model, const ld_config* config, const char* log_csv_path,
                            ld_distill_summary* summary);

/* ---- sampling --------------------------------------------------------- */

typedef enum ld_sampler_mode { LD_SAMPLER_ANCESTRAL = 0, LD_SAMPLER_DETERMINISTIC = 1 } ld_sampler_mode;

typedef struct ld_sample_options {
  int label; /* 1..K, or 0 for the null condition */
  uint64_t n;
  uint64_t steps;
  ld_sampler_mode mode;
  uint64_t seed;
  int use_adapters; /* nonzero: one-pass student; zero: two-pass guided teacher */
  double guidance;  /* teacher only */
} ld_sample_options;

typedef struct ld_sample_summary {
  uint64_t nfe;
  double wall_clock_s;
} ld_sample_summary;

/* Writes "x0 x1 y" lines to out_path (NULL skips the file). */
LD_API ld_status ld_sample(const ld_model* model, const ld_sample_options* options, const char* out_path,
                           ld_sample_summary* summary);

/* ---- reports ---------------------------------------------------------- */

/* Four-row memory table for the config. With a live model, also checks the
 * in-memory census against the analytic counts and returns LD_ERR_MISMATCH
 * (text still filled) when they diverge. Outputs may be NULL. */
LD_API ld_status ld_report_memory(const ld_config* config, const ld_model* live, char** text_out, char** csv_out);

typedef struct ld_eval_summary {
  double agreement_mse;
  int quality_preserved;
  int all_finite;
} ld_eval_summary;

/* Evaluates teacher vs student at the given guidance using the config's eval.*
 * settings. Writes the CSV report to out_csv (NULL skips). */
LD_API ld_status ld_eval(const ld_model* model, const ld_config* config, double guidance, const char* out_csv,
                         ld_eval_summary* summary, char** text_out);

#ifdef __cplusplus
}
#endif

#endif /* LDISTILL_C_API_H */
