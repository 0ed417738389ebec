/* C API for the dasn suppression-training laboratory.
 *
 * Conventions:
 *   - Functions returning int give 0 (DASN_OK) on success; on failure the
 *     message for the calling thread is available via
 *     dasn_last_error_message().
 *   - Functions returning a pointer give NULL on failure.
 *   - Handles are opaque; release them with the matching *_free function.
 *
 * Kept in sync by hand with crates/dasn-ffi/src/lib.rs; the layout mirrors
 * that file.
 */

#ifndef DASN_H
#define DASN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define DASN_OK 0
#define DASN_ERR_RUNTIME 1     /* config, data, or numeric contract error */
#define DASN_ERR_IO 2          /* file system failure */
#define DASN_ERR_DIVERGENCE 3  /* training produced non-finite values */
#define DASN_ERR_INVALID_ARG 4 /* null pointer, bad UTF-8, wrong dims */
#define DASN_ERR_PANIC 5       /* internal invariant violation */

typedef struct DasnModelHandle DasnModelHandle;
typedef struct DasnDatasetHandle DasnDatasetHandle;

/* Copies the last error message on this thread into buf (NUL-terminated,
 * truncated to len bytes). Returns the full message length. buf may be
 * NULL to query the length only. */
size_t dasn_last_error_message(char *buf, size_t len);

/* --- model ------------------------------------------------------------ */

/* Loads a model checkpoint written by the trainer. NULL on failure. */
DasnModelHandle *dasn_model_load(const char *path);

void dasn_model_free(DasnModelHandle *model);

/* Input dimension the model expects; 0 if model is NULL. */
size_t dasn_model_input_dim(const DasnModelHandle *model);

/* Scores n_samples rows of input_dim features each (row-major in x) and
 * writes one genuine-probability per sample into out_scores. */
int dasn_model_infer(const DasnModelHandle *model, const double *x,
                     size_t n_samples, size_t input_dim, double *out_scores);

/* --- dataset ---------------------------------------------------------- */

/* Loads a dataset CSV produced by dasn_gen_data. NULL on failure. */
DasnDatasetHandle *dasn_dataset_load(const char *path);

void dasn_dataset_free(DasnDatasetHandle *dataset);

/* Number of samples; 0 if dataset is NULL. */
size_t dasn_dataset_len(const DasnDatasetHandle *dataset);

/* --- metrics ---------------------------------------------------------- */

/* Area under the ROC curve. labels: 1 = genuine, 0 = spoof. */
int dasn_auc(const double *scores, const uint8_t *labels, size_t n,
             double *out);

/* Half total error rate at the equal-error-rate threshold. out_hter and
 * out_threshold may be NULL to skip an output. */
int dasn_hter(const double *scores, const uint8_t *labels, size_t n,
              double *out_hter, double *out_threshold);

/* --- pipeline --------------------------------------------------------- */

/* Each takes a JSON run config (same schema as the CLI config file) and
 * writes its outputs to the directories named in the config. */
int dasn_gen_data(const char *config_json);
int dasn_train(const char *config_json);
int dasn_eval(const char *config_json, const char *checkpoint_path);

#ifdef __cplusplus
}
#endif

#endif /* DASN_H */
