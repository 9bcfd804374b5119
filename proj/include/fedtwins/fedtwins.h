/* C interface to the fedtwins library.
 *
 * Every object is an opaque handle created by a ftw_*_create/load/... call and
 * released with the matching ftw_*_free. Functions returning ftw_status report
 * failures through the status code; ftw_last_error() then describes the most
 * recent failure on the calling thread.
 */
#ifndef FEDTWINS_H
#define FEDTWINS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FTW_API __declspec(dllexport)
#else
#define FTW_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ftw_status {
  FTW_OK = 0,
  FTW_ERR_DIMENSION = 1,
  FTW_ERR_SHAPE = 2,
  FTW_ERR_NUMERIC_DOMAIN = 3,
  FTW_ERR_CONTRACT = 4,
  FTW_ERR_FORMAT = 5,
  FTW_ERR_RANGE = 6,
  FTW_ERR_DEGENERATE_BATCH = 7,
  FTW_ERR_DEGENERATE_DATA = 8,
  FTW_ERR_DEGENERATE_WEIGHTS = 9,
  FTW_ERR_EMPTY_SUBSET = 10,
  FTW_ERR_SPLIT = 11,
  FTW_ERR_FEDERATION_STALL = 12,
  FTW_ERR_CONFIG = 13,
  FTW_ERR_IO = 14,
  FTW_ERR_INVALID_ARGUMENT = 15, /* null handle or out-pointer, bad enum value */
  FTW_ERR_INTERNAL = 16
} ftw_status;

typedef struct ftw_dataset ftw_dataset;
typedef struct ftw_model ftw_model;
typedef struct ftw_spec ftw_spec;
typedef struct ftw_results ftw_results;

FTW_API const char* ftw_version(void);
FTW_API const char* ftw_status_name(ftw_status status);
/* Message of the last failure on this thread ("" if none). Valid until the next call on this thread. */
FTW_API const char* ftw_last_error(void);

/* ---- datasets --------------------------------------------------------- */

/* Synthetic windows for every (condition, regime) pair using the default profile. */
FTW_API ftw_status ftw_dataset_generate(double seconds, uint64_t seed, int sample_rate, ftw_dataset** out);
FTW_API ftw_status ftw_dataset_load(const char* path, ftw_dataset** out);
FTW_API ftw_status ftw_dataset_import_csv(const char* csv_path, const char* metadata_path, ftw_dataset** out);
FTW_API ftw_status ftw_dataset_save(const ftw_dataset* ds, const char* path);
FTW_API size_t ftw_dataset_size(const ftw_dataset* ds);
/* Condition code (0..7) and regime code (0..3) of window i. */
FTW_API ftw_status ftw_dataset_label(const ftw_dataset* ds, size_t i, int* condition, int* regime);
FTW_API void ftw_dataset_free(ftw_dataset* ds);

/* Writes the default synthetic profile as key=value text. */
FTW_API ftw_status ftw_profile_write(const char* path);

/* ---- models ------------------------------------------------------------ */

/* Freshly initialized backbone. */
FTW_API ftw_status ftw_model_init_backbone(uint64_t seed, ftw_model** out);
FTW_API ftw_status ftw_model_load(const char* path, ftw_model** out);
FTW_API ftw_status ftw_model_save(const ftw_model* model, const char* path);
FTW_API size_t ftw_model_parameter_count(const ftw_model* model);
FTW_API uint64_t ftw_model_checksum(const ftw_model* model);
FTW_API void ftw_model_free(ftw_model* model);

/* Splits `ds` (stratified, `split_fraction` for training), trains a linear probe
 * on the frozen backbone features of the training part and evaluates it on the
 * rest. When out_dir is non-null, writes metrics.json and confusion.csv there. */
FTW_API ftw_status ftw_probe_evaluate(const ftw_model* backbone, const ftw_dataset* ds, double split_fraction,
                                      uint64_t split_seed, size_t epochs, uint64_t seed, const char* out_dir,
                                      double* accuracy);

/* ---- experiment specs -------------------------------------------------- */

/* preset: "paper" or "desk"; kind: "tl" or "fl". */
FTW_API ftw_status ftw_spec_preset(const char* preset, const char* kind, ftw_spec** out);
FTW_API ftw_status ftw_spec_load(const char* path, ftw_spec** out);
FTW_API ftw_status ftw_spec_parse(const char* text, ftw_spec** out);
FTW_API ftw_status ftw_spec_set_seeds(ftw_spec* spec, const uint64_t* seeds, size_t count);
FTW_API ftw_status ftw_spec_set_data_seed(ftw_spec* spec, uint64_t seed);
/* "tl" or "fl". */
FTW_API const char* ftw_spec_kind(const ftw_spec* spec);
FTW_API size_t ftw_spec_run_count(const ftw_spec* spec);
FTW_API size_t ftw_spec_runs_per_method(const ftw_spec* spec);
FTW_API ftw_status ftw_spec_data_settings(const ftw_spec* spec, double* seconds, uint64_t* seed, int* sample_rate);
FTW_API void ftw_spec_free(ftw_spec* spec);

/* ---- suites and reports ------------------------------------------------ */

typedef void (*ftw_progress_fn)(size_t done, size_t total, const char* run_label, double wall_seconds, void* user);

/* Runs every (method, set, seed) of the spec on `threads` workers. `progress` may be null. */
FTW_API ftw_status ftw_suite_run(const ftw_spec* spec, size_t threads, ftw_progress_fn progress, void* user,
                                 ftw_results** out);
FTW_API ftw_status ftw_results_write(const ftw_results* results, const char* out_dir);
FTW_API size_t ftw_results_row_count(const ftw_results* results);

typedef struct ftw_result_row {
  const char* method;
  const char* domain;
  const char* condition_set;
  const char* client; /* "" for transfer learning */
  size_t n_conditions;
  uint64_t seed;
  double accuracy;
} ftw_result_row;

/* String fields stay valid while `results` is alive. */
FTW_API ftw_status ftw_results_row(const ftw_results* results, size_t i, ftw_result_row* row);
FTW_API void ftw_results_free(ftw_results* results);

/* Rewrites summary.csv and plot.csv in out_dir from an existing results.csv. */
FTW_API ftw_status ftw_report_from_results(const char* results_csv, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* FEDTWINS_H */
