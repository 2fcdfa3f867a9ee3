#ifndef METACSI_METACSI_H
#define METACSI_METACSI_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(METACSI_BUILDING)
#    define METACSI_API __declspec(dllexport)
#  else
#    define METACSI_API __declspec(dllimport)
#  endif
#else
#  define METACSI_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes for the config/data/numeric classes. */
typedef enum mcsi_status {
    MCSI_OK = 0,
    MCSI_ERR_ARGUMENT = 1,
    MCSI_ERR_CONFIG = 2,
    MCSI_ERR_DATA = 3,
    MCSI_ERR_NUMERIC = 4,
    MCSI_ERR_INTERNAL = 5
} mcsi_status;

typedef struct mcsi_config mcsi_config;
typedef struct mcsi_dataset mcsi_dataset;
typedef struct mcsi_model mcsi_model;
typedef struct mcsi_report mcsi_report;

typedef enum mcsi_label_kind { MCSI_LABEL_COUNT = 0, MCSI_LABEL_SECTOR = 1, MCSI_LABEL_COORDS = 2 } mcsi_label_kind;

typedef struct mcsi_dataset_info {
    size_t n_records;
    size_t n_subcarriers; /* K */
    size_t n_links;       /* M */
    size_t n_people;      /* coordinate labels only */
    int preprocessed;     /* 0 raw CSI, 1 preprocessed triples */
    int label_kind;       /* mcsi_label_kind */
} mcsi_dataset_info;

typedef struct mcsi_complexity_inputs {
    double n_epoch, n_train, n_gr, n_adpt, n_test;
    double n_ker, q, n_f, l, n_d;
    double n_pck, m, k;
} mcsi_complexity_inputs;

/* Message of the last failed call on this thread ("" if none). */
METACSI_API const char* mcsi_last_error(void);
METACSI_API const char* mcsi_version(void);

/* Configuration: flat "section.key = value" text. */
METACSI_API mcsi_status mcsi_config_new(mcsi_config** out);
METACSI_API mcsi_status mcsi_config_load(const char* path, mcsi_config** out);
METACSI_API mcsi_status mcsi_config_set(mcsi_config* cfg, const char* key, const char* value);
/* Value of a key as set by the user (no defaults); MCSI_ERR_CONFIG if unset. */
METACSI_API mcsi_status mcsi_config_get(const mcsi_config* cfg, const char* key, char* buf, size_t size,
                                        size_t* needed);
/* Removes a key; removing an absent key is not an error. */
METACSI_API mcsi_status mcsi_config_unset(mcsi_config* cfg, const char* key);
/* Effective configuration (defaults filled in), validated. Writes at most
 * `size` bytes including the terminator; `needed` receives the full length + 1. */
METACSI_API mcsi_status mcsi_config_effective(const mcsi_config* cfg, char* buf, size_t size, size_t* needed);
METACSI_API mcsi_status mcsi_config_defaults(char* buf, size_t size, size_t* needed);
METACSI_API void mcsi_config_free(mcsi_config* cfg);

/* Datasets. */
METACSI_API mcsi_status mcsi_generate(const mcsi_config* cfg, uint64_t seed, mcsi_dataset** out);
METACSI_API mcsi_status mcsi_dataset_read(const char* path, mcsi_dataset** out);
/* ".jsonl" paths are written as JSON lines, anything else as binary. */
METACSI_API mcsi_status mcsi_dataset_write(const mcsi_dataset* ds, const char* path);
METACSI_API mcsi_status mcsi_dataset_info_get(const mcsi_dataset* ds, mcsi_dataset_info* out);
/* Raw CSI of record i as K*M interleaved (re, im) pairs, row-major (k outer). */
METACSI_API mcsi_status mcsi_dataset_raw(const mcsi_dataset* ds, size_t i, int64_t* index, double* re_im,
                                         size_t len);
/* Offset removal and normalization of a raw dataset. `reference_subcarrier`
 * is one-based; 0 takes the value from `cfg` (or 1 when cfg is NULL).
 * Rejected packets are left out and counted in `n_rejected`. */
METACSI_API mcsi_status mcsi_preprocess(const mcsi_dataset* raw, const mcsi_config* cfg, int reference_subcarrier,
                                        mcsi_dataset** out, size_t* n_rejected);
/* Raw |h|, Re h, Im h matrices with no offset removal. */
METACSI_API mcsi_status mcsi_raw_features(const mcsi_dataset* raw, mcsi_dataset** out);
METACSI_API void mcsi_dataset_free(mcsi_dataset* ds);

/* Training over the configured split layout. `method` is "pre", "tl" or
 * "meta"; "tl" trains like "pre". `log_csv` may be NULL. */
METACSI_API mcsi_status mcsi_train(const mcsi_config* cfg, const mcsi_dataset* ds, const char* method, uint64_t seed,
                                   const char* log_csv, mcsi_model** out);
/* Adapts on the first n_adapt samples of the held-out adaptation pool. */
METACSI_API mcsi_status mcsi_adapt(const mcsi_config* cfg, const mcsi_model* model, const mcsi_dataset* ds,
                                   const char* method, int n_adapt, mcsi_model** out);
METACSI_API mcsi_status mcsi_model_save(const mcsi_model* model, const char* path);
METACSI_API mcsi_status mcsi_model_load(const char* path, mcsi_model** out);
METACSI_API mcsi_status mcsi_model_param_count(const mcsi_model* model, size_t* out);
METACSI_API void mcsi_model_free(mcsi_model* model);

/* Evaluation on the held-out test set. */
METACSI_API mcsi_status mcsi_evaluate(const mcsi_config* cfg, const mcsi_model* model, const mcsi_dataset* ds,
                                      mcsi_report** out);
/* Metric values; NaN when not applicable to the head. */
METACSI_API mcsi_status mcsi_report_metrics(const mcsi_report* report, double* accuracy, double* rmse_m,
                                            double* error_q90_m, size_t* n_samples);
/* Writes metrics.csv plus confusion.csv or cdf.csv into `dir`. */
METACSI_API mcsi_status mcsi_report_write(const mcsi_report* report, const char* dir);
METACSI_API void mcsi_report_free(mcsi_report* report);

/* Full sweep (methods x preprocessing x N_adpt x seeds); writes CSV reports
 * and a manifest into out_dir. Progress lines go to stderr when verbose. */
METACSI_API mcsi_status mcsi_run_experiment(const mcsi_config* cfg, const char* out_dir, int verbose);

/* Analytic operation-count estimate; scheme is "meta", "pre", "tl" or "preproc". */
METACSI_API mcsi_status mcsi_complexity(const char* scheme, const mcsi_complexity_inputs* in, double* out);
METACSI_API mcsi_status mcsi_complexity_defaults(mcsi_complexity_inputs* out);

#ifdef __cplusplus
}
#endif

#endif
