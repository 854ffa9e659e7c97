/* Copyright 2026 The Codistill Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the codistill library. Every function returns a cd_status;
 * on failure cd_last_error() describes the problem for the calling thread.
 * Strings returned through char** are owned by the caller and released with
 * cd_string_free. */

#ifndef CODISTILL_CODISTILL_H_
#define CODISTILL_CODISTILL_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CD_API __declspec(dllexport)
#else
#define CD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cd_status {
  CD_OK = 0,
  CD_ERR_ARGUMENT = 1,   /* null pointer or malformed argument */
  CD_ERR_CONFIG = 2,     /* invalid configuration or request */
  CD_ERR_SHAPE = 3,      /* incompatible tensor shapes */
  CD_ERR_DOMAIN = 4,     /* value outside an operation's domain */
  CD_ERR_NUMERIC = 5,    /* non-finite value, e.g. divergence */
  CD_ERR_FORMAT = 6,     /* malformed file contents */
  CD_ERR_IO = 7,         /* file system failure */
  CD_ERR_VERIFY = 8,     /* a verification check exceeded its threshold */
  CD_ERR_INTERNAL = 9
} cd_status;

typedef struct cd_config cd_config;
typedef struct cd_model cd_model;

CD_API const char* cd_version(void);
/* Message of the last failing call on this thread, or "" after success. */
CD_API const char* cd_last_error(void);
CD_API void cd_string_free(char* text);

/* Configuration */
CD_API cd_status cd_config_load(const char* path, cd_config** out);
CD_API cd_status cd_config_parse(const char* text, cd_config** out);
CD_API cd_status cd_config_set_out(cd_config* config, const char* dir);
CD_API cd_status cd_config_set_seeds(cd_config* config, const uint64_t* seeds, size_t count);
/* Fully resolved config text; parses back to an equal config. */
CD_API cd_status cd_config_echo(const cd_config* config, char** text);
CD_API void cd_config_free(cd_config* config);

/* Commands. Result texts are CSV with a header row. */

/* One run per configured seed. Result columns:
 * seed,dir,diverged,head,loss,top1,top5,gap,map (final holdout metrics). */
CD_API cd_status cd_train(const cd_config* config, char** result);
/* Continues the run saved in `checkpoint`, writing into `out_dir`. */
CD_API cd_status cd_train_resume(const char* checkpoint, const char* out_dir, char** result);
/* Evaluates a checkpoint; `data_csv` may be NULL to use its holdout split.
 * When `out_csv` is not NULL the report is also written there. Result
 * columns: head,loss,top1,top5,gap,map,params,flops. */
CD_API cd_status cd_eval(const char* checkpoint, const char* data_csv, const char* out_csv,
                         char** result);
/* `axis` is "lambda" or "mu". `threads` of 0 reads CODISTILL_THREADS.
 * Result is the per-value summary CSV. */
CD_API cd_status cd_sweep(const cd_config* config, const char* axis, const double* values,
                          size_t count, size_t threads, char** result);
/* `passed` receives 1 when every check is within its threshold. Result
 * columns: check,value,threshold,status. Returns CD_ERR_VERIFY on failure. */
CD_API cd_status cd_verify(size_t trials, uint64_t seed, int* passed, char** result);
/* Writes the configured dataset to <dir>/data.csv; `path` receives the file. */
CD_API cd_status cd_gen_data(const cd_config* config, const char* dir, char** path);

/* Trained models */
CD_API cd_status cd_model_load(const char* checkpoint, cd_model** out);
CD_API size_t cd_model_input_dim(const cd_model* model);
CD_API size_t cd_model_classes(const cd_model* model);
CD_API size_t cd_model_branches(const cd_model* model);
CD_API size_t cd_model_param_count(const cd_model* model);
/* Ensemble scores for `rows` examples of `input_dim` features each, written
 * row-major into `scores` (rows * classes). Frame-pooling models are not
 * supported here. */
CD_API cd_status cd_model_predict(const cd_model* model, const double* features, size_t rows,
                                  double* scores);
CD_API void cd_model_free(cd_model* model);

/* Helpers */
CD_API cd_status cd_mean_uncertainty(const double* runs, size_t count, double* mean,
                                     double* uncertainty);
CD_API cd_status cd_equivalence_max_diff(size_t branches, size_t trials, uint64_t seed,
                                         double* max_diff);

#ifdef __cplusplus
}
#endif

#endif /* CODISTILL_CODISTILL_H_ */
