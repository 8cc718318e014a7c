/* C interface for the ades adversarial-training library. */

#ifndef ADES_H
#define ADES_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every API function.
 */
typedef enum AdesStatus {
  ADES_STATUS_OK = 0,
  ADES_STATUS_NULL_POINTER = 1,
  ADES_STATUS_INVALID_UTF8 = 2,
  ADES_STATUS_INVALID_ARGUMENT = 3,
  ADES_STATUS_CONFIG_ERROR = 4,
  ADES_STATUS_IO_ERROR = 5,
  ADES_STATUS_PARSE_ERROR = 6,
  ADES_STATUS_CONTRACT_ERROR = 7,
  ADES_STATUS_CHECKPOINT_ERROR = 8,
  ADES_STATUS_DIMENSION_ERROR = 9,
  ADES_STATUS_LABEL_ERROR = 10,
  ADES_STATUS_GRAD_CHECK_FAILED = 11,
  ADES_STATUS_PANIC = 12,
} AdesStatus;

/**
 * Opaque dataset handle.
 */
typedef struct AdesDataset AdesDataset;

/**
 * Opaque model handle: the classifier plus its budget scheduler.
 */
typedef struct AdesModel AdesModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static C string.
 */
const char *ades_version(void);

/**
 * Message for the most recent error on this thread, or null if none.
 */
const char *ades_last_error_message(void);

/**
 * Gaussian-blob dataset in the unit hypercube: class centers on a circle for
 * d = 2, hypercube corners otherwise.
 */
enum AdesStatus ades_dataset_blobs(uintptr_t n_per_class,
                                   uintptr_t k,
                                   uintptr_t d,
                                   double spread,
                                   uint64_t seed,
                                   struct AdesDataset **out);

/**
 * Load a CSV dataset: feature columns in [0,1] then an integer label.
 */
enum AdesStatus ades_dataset_load_csv(const char *path, uintptr_t k, struct AdesDataset **out);

uintptr_t ades_dataset_len(const struct AdesDataset *ds);

uintptr_t ades_dataset_dim(const struct AdesDataset *ds);

uintptr_t ades_dataset_classes(const struct AdesDataset *ds);

/**
 * Copy the features (row-major, len*dim) and labels out of a dataset.
 * Buffers must hold at least len*dim and len entries respectively.
 */
enum AdesStatus ades_dataset_copy(const struct AdesDataset *ds,
                                  double *features_out,
                                  uintptr_t *labels_out);

void ades_dataset_free(struct AdesDataset *ds);

/**
 * Fresh classifier + scheduler. `hidden` points to `n_hidden` hidden-layer
 * widths (may be 0 for a single affine layer).
 */
enum AdesStatus ades_model_new(uintptr_t input_dim,
                               const uintptr_t *hidden,
                               uintptr_t n_hidden,
                               uintptr_t num_classes,
                               double dropout,
                               uintptr_t scheduler_hidden,
                               uint64_t seed,
                               struct AdesModel **out);

enum AdesStatus ades_model_load_checkpoint(struct AdesModel *model, const char *path);

enum AdesStatus ades_model_save_checkpoint(const struct AdesModel *model, const char *path);

void ades_model_free(struct AdesModel *model);

/**
 * Clean accuracy plus robust accuracy per budget under PGD.
 * `robust_out` must hold `n_budgets` doubles.
 */
enum AdesStatus ades_model_evaluate(const struct AdesModel *model,
                                    const struct AdesDataset *ds,
                                    const double *budgets,
                                    uintptr_t n_budgets,
                                    uintptr_t steps,
                                    double alpha,
                                    bool random_start,
                                    uintptr_t batch_size,
                                    uint64_t seed,
                                    double *clean_out,
                                    double *robust_out);

/**
 * PGD on a raw batch: `features` is row-major b-by-d in [0,1], `eps` holds
 * one budget per sample, and `adv_out` receives b*d doubles.
 */
enum AdesStatus ades_attack_batch(const struct AdesModel *model,
                                  const double *features,
                                  const uintptr_t *labels,
                                  uintptr_t b,
                                  uintptr_t d,
                                  const double *eps,
                                  uintptr_t steps,
                                  double alpha,
                                  bool random_start,
                                  uint64_t seed,
                                  double *adv_out);

/**
 * Per-sample robustness cues for a raw batch. Both outputs are row-major
 * b-by-3 in (gradient norm, entropy, uncertainty) order: `raw_out` holds the
 * unnormalized signals, `normalized_out` the batch min-max scaled ones.
 */
enum AdesStatus ades_cues_batch(const struct AdesModel *model,
                                const double *features,
                                const uintptr_t *labels,
                                uintptr_t b,
                                uintptr_t d,
                                uintptr_t t_mc,
                                uint64_t seed,
                                double *raw_out,
                                double *normalized_out);

/**
 * Run a full experiment from a JSON config file; writes metrics, checkpoints
 * and a config snapshot under the configured output directory.
 */
enum AdesStatus ades_experiment_run(const char *config_path);

/**
 * Finite-difference verification of every op and the composed networks.
 * Writes the worst relative error to `max_err_out` (may be null) and returns
 * `GradCheckFailed` if any check exceeds its tolerance.
 */
enum AdesStatus ades_gradcheck(uint64_t seed, uintptr_t instances, double *max_err_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADES_H */
