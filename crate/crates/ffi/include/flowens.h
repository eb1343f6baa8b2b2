#ifndef FLOWENS_H
#define FLOWENS_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum FlowensStatus {
  FLOWENS_STATUS_OK = 0,
  FLOWENS_STATUS_NULL_POINTER = 1,
  FLOWENS_STATUS_INVALID_ARGUMENT = 2,
  FLOWENS_STATUS_SHAPE = 3,
  FLOWENS_STATUS_CONFIG = 4,
  FLOWENS_STATUS_IO = 5,
  FLOWENS_STATUS_FORMAT = 6,
  FLOWENS_STATUS_NUMERIC = 7,
  FLOWENS_STATUS_ESTIMATOR = 8,
  FLOWENS_STATUS_PANIC = 9,
} FlowensStatus;

// Input/output pairs collected from an environment.
typedef struct FlowensDataset FlowensDataset;

// A trained or freshly initialised model.
typedef struct FlowensModel FlowensModel;

// Uncertainty at one input, in nats.
typedef struct FlowensUncertainty {
  double total;
  double aleatoric;
  double epistemic;
  // Sample rows drawn by the estimator.
  uint64_t n_samples;
} FlowensUncertainty;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static nul-terminated string.
const char *flowens_version(void);

// Message of the last failed call on this thread, or NULL after a
// successful one. Valid until the next call on the same thread.
const char *flowens_last_error_message(void);

// Collects `n` rows from environment `env` ("hetero", "bimodal",
// "wet_chicken", "pendulum") under `policy` ("random", "heuristic").
//
// # Safety
// `env` and `policy` must be nul-terminated strings; `out` must be valid
// for one pointer write.
enum FlowensStatus flowens_dataset_generate(const char *env,
                                            const char *policy,
                                            size_t n,
                                            uint64_t seed,
                                            struct FlowensDataset **out);

// Builds a dataset from row-major arrays: `x` holds `n_rows * x_dim`
// values and `y` holds `n_rows * y_dim` values of environment `env`.
//
// # Safety
// `x` and `y` must point to arrays of the stated lengths; `out` must be
// valid for one pointer write.
enum FlowensStatus flowens_dataset_from_arrays(const char *env,
                                               const double *x,
                                               size_t x_len,
                                               const double *y,
                                               size_t y_len,
                                               size_t n_rows,
                                               struct FlowensDataset **out);

// Rows in the dataset, 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live dataset handle.
size_t flowens_dataset_len(const struct FlowensDataset *ds);

// Copies inputs and outputs into row-major buffers of exactly
// `len * x_dim` and `len * y_dim` values.
//
// # Safety
// `ds` must be a live dataset handle; buffers must hold the stated
// lengths.
enum FlowensStatus flowens_dataset_copy(const struct FlowensDataset *ds,
                                        double *x_out,
                                        size_t x_len,
                                        double *y_out,
                                        size_t y_len);

// # Safety
// `ds` must be NULL or a handle not yet freed.
void flowens_dataset_free(struct FlowensDataset *ds);

// Fresh model of `kind` ("nflows_out", "nflows_base", "nflows", "pne",
// "mc_dropout", "gp") with the default architecture for `env`.
//
// # Safety
// `kind` and `env` must be nul-terminated strings; `out` must be valid for
// one pointer write.
enum FlowensStatus flowens_model_new(const char *kind,
                                     const char *env,
                                     uint64_t seed,
                                     struct FlowensModel **out);

// Trains for `steps` minibatch steps (a full refit for Gaussian
// processes). The last minibatch loss goes to `final_loss` when it is not
// NULL (NaN when no steps ran).
//
// # Safety
// `m` and `ds` must be live handles; `final_loss` must be NULL or valid
// for one write.
enum FlowensStatus flowens_model_train(struct FlowensModel *m,
                                       const struct FlowensDataset *ds,
                                       size_t steps,
                                       size_t batch_size,
                                       double lr,
                                       uint64_t seed,
                                       double *final_loss);

// Input and output dimensions and component count, each written when
// its pointer is not NULL.
//
// # Safety
// `m` must be a live handle; non-NULL pointers must be valid for one
// write.
enum FlowensStatus flowens_model_dims(const struct FlowensModel *m,
                                      size_t *x_dim,
                                      size_t *y_dim,
                                      size_t *n_components);

// Mixture log-density of `n_rows` outputs (row-major in `y`) at input `x`.
// Fails on an unfitted Gaussian process.
//
// # Safety
// Arrays must hold the stated lengths; `out` must hold `n_rows` values.
enum FlowensStatus flowens_model_log_prob(const struct FlowensModel *m,
                                          const double *x,
                                          size_t x_len,
                                          const double *y,
                                          size_t y_len,
                                          size_t n_rows,
                                          double *out,
                                          size_t out_len);

// `n` mixture draws at input `x`, row-major into `out`
// (`n * y_dim` values).
//
// # Safety
// `x` must hold `x_len` values and `out` must hold `out_len` values.
enum FlowensStatus flowens_model_sample(const struct FlowensModel *m,
                                        const double *x,
                                        size_t x_len,
                                        size_t n,
                                        uint64_t seed,
                                        double *out,
                                        size_t out_len);

// Total, aleatoric and epistemic uncertainty at input `x` with the
// model's default estimator and sample budget.
//
// # Safety
// `x` must hold `x_len` values; `out` must be valid for one write.
enum FlowensStatus flowens_model_uncertainty(const struct FlowensModel *m,
                                             const double *x,
                                             size_t x_len,
                                             uint64_t seed,
                                             struct FlowensUncertainty *out);

// Writes a checkpoint to `path` (plus `path.manifest`).
//
// # Safety
// `m` must be a live handle and `path` a nul-terminated string.
enum FlowensStatus flowens_model_save(const struct FlowensModel *m, const char *path);

// # Safety
// `path` must be a nul-terminated string; `out` must be valid for one
// pointer write.
enum FlowensStatus flowens_model_load(const char *path, struct FlowensModel **out);

// # Safety
// `m` must be NULL or a handle not yet freed.
void flowens_model_free(struct FlowensModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWENS_H */
