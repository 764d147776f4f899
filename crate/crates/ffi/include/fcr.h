#ifndef FCR_H
#define FCR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum FcrStatus {
  FCR_STATUS_OK = 0,
  FCR_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8 or a size was inconsistent.
   */
  FCR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Bad configuration, file or dataset.
   */
  FCR_STATUS_VALIDATION = 3,
  /**
   * A computation failed, for example training diverged.
   */
  FCR_STATUS_RUNTIME = 4,
  FCR_STATUS_BUFFER_TOO_SMALL = 5,
  FCR_STATUS_PANIC = 6,
} FcrStatus;

/**
 * Opaque dataset handle.
 */
typedef struct FcrDataset FcrDataset;

/**
 * Opaque trained-model handle.
 */
typedef struct FcrModel FcrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *fcr_last_error(void);

/**
 * Simulates a synthetic dataset. `overrides` may be null.
 *
 * # Safety
 * `overrides` must be null or a valid C string; `out_dataset` must be writable.
 */
enum FcrStatus fcr_simulate(const char *overrides, struct FcrDataset **out_dataset);

/**
 * Loads a dataset directory containing `schema.toml`.
 *
 * # Safety
 * `dir` must be a valid C string; `out_dataset` must be writable.
 */
enum FcrStatus fcr_dataset_load(const char *dir, struct FcrDataset **out_dataset);

/**
 * Writes the cell and gene counts.
 *
 * # Safety
 * `dataset` must come from this library; outputs must be writable.
 */
enum FcrStatus fcr_dataset_shape(const struct FcrDataset *dataset,
                                 size_t *n_cells,
                                 size_t *n_genes);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void fcr_dataset_free(struct FcrDataset *dataset);

/**
 * Trains on the dataset with optional overrides and returns the best model.
 *
 * # Safety
 * Pointers must be valid as described for the other functions.
 */
enum FcrStatus fcr_train(const struct FcrDataset *dataset,
                         const char *overrides,
                         struct FcrModel **out_model);

/**
 * # Safety
 * `path` must be a valid C string; `out_model` must be writable.
 */
enum FcrStatus fcr_model_load(const char *path, struct FcrModel **out_model);

/**
 * # Safety
 * `model` must come from this library; `path` must be a valid C string.
 */
enum FcrStatus fcr_model_save(const struct FcrModel *model, const char *path);

/**
 * Writes the latent block widths.
 *
 * # Safety
 * `model` must come from this library; outputs must be writable.
 */
enum FcrStatus fcr_model_dims(const struct FcrModel *model, size_t *n_x, size_t *n_tx, size_t *n_t);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void fcr_model_free(struct FcrModel *model);

/**
 * Posterior means `[z_x, z_tx, z_t]` of every cell, row-major into
 * `buffer`, which must hold `n_cells × (n_x + n_tx + n_t)` values.
 *
 * # Safety
 * `buffer` must be writable for `len` doubles.
 */
enum FcrStatus fcr_encode(const struct FcrModel *model,
                          const struct FcrDataset *dataset,
                          double *buffer,
                          size_t len);

/**
 * Full metrics report as a JSON string on the test split of the
 * configured seed. Release it with [`fcr_string_free`].
 *
 * # Safety
 * Handles must come from this library; `out_json` must be writable.
 */
enum FcrStatus fcr_evaluate_json(const struct FcrModel *model,
                                 const struct FcrDataset *dataset,
                                 const char *overrides,
                                 char **out_json);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void fcr_string_free(char *s);

/**
 * Rank-based mean correlation coefficient between two row-major
 * `rows × cols` matrices after optimal column matching.
 *
 * # Safety
 * Both inputs must be readable for `rows × cols` doubles.
 */
enum FcrStatus fcr_mcc(const double *z_true,
                       const double *z_est,
                       size_t rows,
                       size_t cols,
                       double *out_mcc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FCR_H */
