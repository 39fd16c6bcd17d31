#ifndef FHA_H
#define FHA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum FhaStatus {
  FHA_STATUS_OK = 0,
  FHA_STATUS_NULL_POINTER = 1,
  FHA_STATUS_INVALID_ARGUMENT = 2,
  FHA_STATUS_INVALID_SPEC = 3,
  FHA_STATUS_PROTOCOL = 4,
  FHA_STATUS_INSUFFICIENT_DATA = 5,
  FHA_STATUS_FORMAT = 6,
  FHA_STATUS_SHAPE = 7,
  FHA_STATUS_NUMERICAL = 8,
  FHA_STATUS_MISSING_CLASS = 9,
  FHA_STATUS_QUALITY_GATE = 10,
  FHA_STATUS_CONFIG = 11,
  FHA_STATUS_IO = 12,
  FHA_STATUS_PANIC = 13,
} FhaStatus;

/**
 * A labeled dataset.
 */
typedef struct FhaDataset FhaDataset;

/**
 * `n_t` labeled target samples per class.
 */
typedef struct FhaFewShot FhaFewShot;

/**
 * A source hypothesis or an adapted target model.
 */
typedef struct FhaModel FhaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fha_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next `fha_*` call on the same thread.
 */
const char *fha_last_error(void);

/**
 * Generates `(source, target, target_test)` for a task. `task` is a preset
 * name such as `"rot40"` or a JSON task spec; `data_seed` replaces the
 * spec's seed.
 *
 * # Safety
 * `task` must be a valid C string; the out pointers must be writable.
 */
enum FhaStatus fha_task_generate(const char *task,
                                 uint64_t data_seed,
                                 struct FhaDataset **source_out,
                                 struct FhaDataset **target_out,
                                 struct FhaDataset **target_test_out);

/**
 * Builds a dataset from row-major `f32` features and `u32` labels.
 *
 * # Safety
 * `features` must hold `rows * dim` values and `labels` `rows` values.
 */
enum FhaStatus fha_dataset_new(const float *features,
                               const uint32_t *labels,
                               size_t rows,
                               size_t dim,
                               size_t num_classes,
                               struct FhaDataset **out);

/**
 * Reads an FHD1 dataset file.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum FhaStatus fha_dataset_load(const char *path, struct FhaDataset **out);

/**
 * Writes an FHD1 dataset file.
 *
 * # Safety
 * `dataset` must be a live handle; `path` a valid C string.
 */
enum FhaStatus fha_dataset_save(const struct FhaDataset *dataset, const char *path);

/**
 * Number of samples, feature dimension and number of classes. Any of the
 * out pointers may be NULL.
 *
 * # Safety
 * `dataset` must be a live handle; non-NULL out pointers must be writable.
 */
enum FhaStatus fha_dataset_shape(const struct FhaDataset *dataset,
                                 size_t *len,
                                 size_t *dim,
                                 size_t *num_classes);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void fha_dataset_free(struct FhaDataset *dataset);

/**
 * Draws exactly `n_t` (1..=7) samples per class from `target`.
 *
 * # Safety
 * `target` must be a live handle; `out` must be writable.
 */
enum FhaStatus fha_few_shot_sample(const struct FhaDataset *target,
                                   size_t n_t,
                                   uint64_t seed,
                                   struct FhaFewShot **out);

/**
 * The few-shot samples as a new dataset handle.
 *
 * # Safety
 * `few_shot` must be a live handle; `out` must be writable.
 */
enum FhaStatus fha_few_shot_samples(const struct FhaFewShot *few_shot, struct FhaDataset **out);

/**
 * # Safety
 * `few_shot` must be NULL or a handle not yet freed.
 */
void fha_few_shot_free(struct FhaFewShot *few_shot);

/**
 * Trains a source hypothesis. `config_json` is a source config object or
 * NULL for the defaults.
 *
 * # Safety
 * `source` must be a live handle; `config_json` NULL or a valid C string;
 * `out` writable.
 */
enum FhaStatus fha_source_train(const struct FhaDataset *source,
                                const char *config_json,
                                uint64_t seed,
                                struct FhaModel **out);

/**
 * Adapts a source hypothesis with one of `wa`, `ft`, `shot`, `sfada`,
 * `tfada`, `stfada`, `tohan`. `config_json` is an experiment config with
 * optional `source`, `finetune` and `tohan` sections, or NULL. `seed`
 * replaces the TOHAN seed.
 *
 * # Safety
 * Handles must be live; strings valid or NULL where allowed; `out` writable.
 */
enum FhaStatus fha_adapt(const struct FhaModel *source_model,
                         const struct FhaFewShot *few_shot,
                         const char *method,
                         const char *config_json,
                         uint64_t seed,
                         struct FhaModel **out);

/**
 * Fraction of `dataset` classified correctly.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum FhaStatus fha_model_accuracy(const struct FhaModel *model,
                                  const struct FhaDataset *dataset,
                                  double *out);

/**
 * Predicted class of each of `rows` row-major feature vectors.
 *
 * # Safety
 * `features` must hold `rows * dim` values and `labels_out` room for `rows`.
 */
enum FhaStatus fha_model_predict(const struct FhaModel *model,
                                 const float *features,
                                 size_t rows,
                                 size_t dim,
                                 uint32_t *labels_out);

/**
 * Writes the model in the JSON model format used by the `fha` tool.
 *
 * # Safety
 * `model` must be a live handle; `path` a valid C string.
 */
enum FhaStatus fha_model_save(const struct FhaModel *model, const char *path);

/**
 * Reads a model file. Files of kind `source` load as source hypotheses
 * usable with [`fha_adapt`].
 *
 * # Safety
 * `path` must be a valid C string; `out` writable.
 */
enum FhaStatus fha_model_load(const char *path, struct FhaModel **out);

/**
 * 1 for a source hypothesis, 0 for a target model.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum FhaStatus fha_model_is_source(const struct FhaModel *model, int32_t *out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void fha_model_free(struct FhaModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FHA_H */
