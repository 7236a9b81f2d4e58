#ifndef QWYC_H
#define QWYC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum QwycStatus {
  QWYC_STATUS_OK = 0,
  QWYC_STATUS_NULL_POINTER = 1,
  QWYC_STATUS_INVALID_ARGUMENT = 2,
  QWYC_STATUS_PARSE = 3,
  QWYC_STATUS_IO = 4,
  QWYC_STATUS_INTERNAL = 5,
} QwycStatus;

/**
 * A fitted early-stopping policy (threshold cascade or Fan).
 */
typedef struct QwycPolicy QwycPolicy;

/**
 * Score matrix with its per-model costs and decision threshold.
 */
typedef struct QwycScoreMatrix QwycScoreMatrix;

/**
 * Aggregate metrics of a policy over a score matrix.
 */
typedef struct QwycMetrics {
  double mean_cost;
  double mean_models;
  double pct_diff;
  /**
   * Meaningful only when `has_accuracy` is non-zero.
   */
  double accuracy;
  int has_accuracy;
  size_t n_examples;
  size_t disagreements;
} QwycMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *qwyc_last_error(void);

/**
 * Loads a score CSV. `meta_path` may be null for unit costs and β = 0.
 *
 * # Safety
 * `csv_path` and a non-null `meta_path` must be nul-terminated strings;
 * `out` must be writable.
 */
enum QwycStatus qwyc_matrix_load(const char *csv_path,
                                 const char *meta_path,
                                 struct QwycScoreMatrix **out);

/**
 * Builds a matrix from `n_examples * n_models` row-major scores. `labels`
 * (one byte per example, non-zero = positive) and `costs` (one per model)
 * may be null; null costs mean unit costs.
 *
 * # Safety
 * Non-null pointers must reference arrays of the stated lengths; `out`
 * must be writable.
 */
enum QwycStatus qwyc_matrix_from_buffer(const double *scores,
                                        size_t n_examples,
                                        size_t n_models,
                                        const uint8_t *labels,
                                        const double *costs,
                                        double beta,
                                        struct QwycScoreMatrix **out);

/**
 * # Safety
 * `m` must be null or a live matrix handle.
 */
size_t qwyc_matrix_n_examples(const struct QwycScoreMatrix *m);

/**
 * # Safety
 * `m` must be null or a live matrix handle.
 */
size_t qwyc_matrix_n_models(const struct QwycScoreMatrix *m);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void qwyc_matrix_free(struct QwycScoreMatrix *m);

/**
 * Greedy joint ordering and thresholds with disagreement budget `alpha`.
 * `two_sided = 0` stops only negatives.
 *
 * # Safety
 * `m` must be a live matrix handle; `out` must be writable.
 */
enum QwycStatus qwyc_optimize(const struct QwycScoreMatrix *m,
                              double alpha,
                              int two_sided,
                              struct QwycPolicy **out);

/**
 * Optimal thresholds for the given model order.
 *
 * # Safety
 * `m` must be a live matrix handle, `order` must point to `len` indices and
 * `out` must be writable.
 */
enum QwycStatus qwyc_policy_for_order(const struct QwycScoreMatrix *m,
                                      const size_t *order,
                                      size_t len,
                                      double alpha,
                                      int two_sided,
                                      struct QwycPolicy **out);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum QwycStatus qwyc_policy_load(const char *path, struct QwycPolicy **out);

/**
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum QwycStatus qwyc_policy_from_json(const char *json, struct QwycPolicy **out);

/**
 * Serializes a policy. Release the string with [`qwyc_string_free`].
 *
 * # Safety
 * `p` must be a live policy handle; `out` must be writable.
 */
enum QwycStatus qwyc_policy_to_json(const struct QwycPolicy *p, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void qwyc_string_free(char *s);

/**
 * Number of base models the policy expects per row.
 *
 * # Safety
 * `p` must be null or a live policy handle.
 */
size_t qwyc_policy_n_models(const struct QwycPolicy *p);

/**
 * Classifies one example. `row` holds the `n_models` base-model scores in
 * model-index order. Writes the decision (1 positive, 0 negative) and the
 * number of models evaluated.
 *
 * # Safety
 * `p` must be a live policy handle, `row` must point to `n_models` values
 * and the out pointers must be writable.
 */
enum QwycStatus qwyc_policy_evaluate_row(const struct QwycPolicy *p,
                                         const double *row,
                                         size_t n_models,
                                         int *decision,
                                         size_t *stop_stage);

/**
 * Evaluates a policy on every row of a matrix against the full ensemble
 * at the matrix's β.
 *
 * # Safety
 * `p` and `m` must be live handles; `out` must be writable.
 */
enum QwycStatus qwyc_policy_evaluate(const struct QwycPolicy *p,
                                     const struct QwycScoreMatrix *m,
                                     struct QwycMetrics *out);

/**
 * # Safety
 * `p` must be null or a handle not yet freed.
 */
void qwyc_policy_free(struct QwycPolicy *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QWYC_H */
