#ifndef WPSGD_H
#define WPSGD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WpsgdAlgorithm {
  WPSGD_ALGORITHM_SEQUENTIAL = 0,
  WPSGD_ALGORITHM_SIMU_PARALLEL = 1,
  WPSGD_ALGORITHM_WPSGD = 2,
  WPSGD_ALGORITHM_DIRECT_AVERAGE = 3,
  WPSGD_ALGORITHM_PERIODIC_AVERAGE = 4,
  WPSGD_ALGORITHM_DELAY_WPSGD = 5,
} WpsgdAlgorithm;

/**
 * Result of every exported call.
 */
typedef enum WpsgdStatus {
  WPSGD_STATUS_OK = 0,
  WPSGD_STATUS_NULL_POINTER = 1,
  WPSGD_STATUS_INVALID_ARGUMENT = 2,
  WPSGD_STATUS_IO = 3,
  WPSGD_STATUS_PARSE = 4,
  WPSGD_STATUS_CONFIG = 5,
  /**
   * The run itself failed: non-finite weights, a stalled delay server.
   */
  WPSGD_STATUS_TRAINING = 6,
  WPSGD_STATUS_PANIC = 7,
} WpsgdStatus;

/**
 * Opaque dataset handle.
 */
typedef struct WpsgdDataset WpsgdDataset;

/**
 * Opaque model handle.
 */
typedef struct WpsgdModel WpsgdModel;

/**
 * Training parameters. Array pointers may be null when their length is
 * zero; `shares` may be null for equal data shares.
 */
typedef struct WpsgdTrainParams {
  enum WpsgdAlgorithm algorithm;
  double lambda;
  double eta;
  uint64_t iterations;
  uint64_t seed;
  double init_value;
  /**
   * Per-node delays; `k` entries, at least one zero. Ignored for
   * sequential training.
   */
  const uint64_t *delays;
  size_t k;
  const double *shares;
  uint64_t partition_seed;
  /**
   * Contracting rate in (0, 1]; 0 selects `1 - eta * lambda`.
   */
  double rate;
  /**
   * Averaging span for periodic averaging.
   */
  uint64_t span;
  size_t threads;
  /**
   * Maximum delay `M` for delay-wpsgd.
   */
  size_t max_delay;
  /**
   * Use the `M`-th root for every check instead of the per-update lag.
   */
  bool max_delay_root;
} WpsgdTrainParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *wpsgd_last_error(void);

/**
 * Reads a sparse text file. `dim` of 0 infers the dimension.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WpsgdStatus wpsgd_dataset_read(const char *path, size_t dim, struct WpsgdDataset **out);

/**
 * Generates the synthetic train/test pair.
 *
 * # Safety
 * `out_train` and `out_test` must be valid pointers.
 */
enum WpsgdStatus wpsgd_dataset_generate(size_t n_train,
                                        size_t n_test,
                                        size_t dim,
                                        size_t nnz_min,
                                        size_t nnz_max,
                                        uint64_t seed,
                                        bool normalize,
                                        struct WpsgdDataset **out_train,
                                        struct WpsgdDataset **out_test);

/**
 * # Safety
 * `d` must be a live dataset handle or null.
 */
size_t wpsgd_dataset_len(const struct WpsgdDataset *d);

/**
 * # Safety
 * `d` must be a live dataset handle or null.
 */
size_t wpsgd_dataset_dim(const struct WpsgdDataset *d);

/**
 * # Safety
 * `d` must come from this library and not be used afterwards. Null is ignored.
 */
void wpsgd_dataset_free(struct WpsgdDataset *d);

/**
 * Trains on `d` and returns the final (combined) model.
 *
 * # Safety
 * `d` must be a live dataset handle, `params` a valid pointer whose arrays
 * hold `k` entries, and `out` a valid pointer.
 */
enum WpsgdStatus wpsgd_train(const struct WpsgdDataset *d,
                             const struct WpsgdTrainParams *params,
                             struct WpsgdModel **out);

/**
 * Runs the experiment described by a config file (same format as the CLI),
 * writing its metrics and model files when configured.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer or null.
 */
enum WpsgdStatus wpsgd_run_config(const char *path, struct WpsgdModel **out);

/**
 * Reads a model file written by the CLI or [`wpsgd_model_write`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WpsgdStatus wpsgd_model_read(const char *path, struct WpsgdModel **out);

/**
 * # Safety
 * `m` must be a live model handle and `path` a NUL-terminated string.
 */
enum WpsgdStatus wpsgd_model_write(const struct WpsgdModel *m, const char *path);

/**
 * # Safety
 * `m` must be a live model handle or null.
 */
size_t wpsgd_model_dim(const struct WpsgdModel *m);

/**
 * # Safety
 * `m` must be a live model handle or null.
 */
uint64_t wpsgd_model_iterations(const struct WpsgdModel *m);

/**
 * Copies the weights into `out`, which must hold `len` values; `len` must
 * equal the model dimension.
 *
 * # Safety
 * `m` must be a live model handle and `out` valid for `len` writes.
 */
enum WpsgdStatus wpsgd_model_weights(const struct WpsgdModel *m, double *out, size_t len);

/**
 * Regularized hinge objective and error rate of `m` on `d`. Either out
 * pointer may be null.
 *
 * # Safety
 * Handles must be live; out pointers valid or null.
 */
enum WpsgdStatus wpsgd_model_evaluate(const struct WpsgdModel *m,
                                      const struct WpsgdDataset *d,
                                      double lambda,
                                      double *out_objective,
                                      double *out_error_rate);

/**
 * # Safety
 * `m` must come from this library and not be used afterwards. Null is ignored.
 */
void wpsgd_model_free(struct WpsgdModel *m);

/**
 * Combination weights `rate^{T_i} / Σ rate^{T_j}` written to `out`.
 *
 * # Safety
 * `delays` and `out` must be valid for `k` elements.
 */
enum WpsgdStatus wpsgd_compute_weights(const uint64_t *delays, size_t k, double rate, double *out);

/**
 * Whether `2 Σ rate^{T_i} > √k + k`.
 *
 * # Safety
 * `delays` must be valid for `k` elements and `out` a valid pointer.
 */
enum WpsgdStatus wpsgd_corollary4_holds(const uint64_t *delays, size_t k, double rate, bool *out);

/**
 * Whether `ηλ + η β²_max c* <= (1 − ηλ)^M`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum WpsgdStatus wpsgd_step_size_valid(double lambda,
                                       double eta,
                                       double beta_sq_max,
                                       double c_star,
                                       size_t max_delay,
                                       bool *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* WPSGD_H */
