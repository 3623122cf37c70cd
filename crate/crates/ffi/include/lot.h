#ifndef LOT_H
#define LOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LotStatus {
  LOT_STATUS_OK = 0,
  LOT_STATUS_NULL_POINTER = 1,
  LOT_STATUS_INVALID_ARGUMENT = 2,
  LOT_STATUS_CONFIG = 3,
  LOT_STATUS_DATA = 4,
  LOT_STATUS_CHECKPOINT = 5,
  LOT_STATUS_NUMERICAL = 6,
  LOT_STATUS_IO = 7,
  LOT_STATUS_BUFFER_TOO_SMALL = 8,
  LOT_STATUS_PANIC = 9,
} LotStatus;

typedef enum LotDivergence {
  LOT_DIVERGENCE_KL = 0,
  LOT_DIVERGENCE_JS = 1,
} LotDivergence;

typedef enum LotLossMode {
  LOT_LOSS_MODE_FULL = 0,
  LOT_LOSS_MODE_CONTRASTOR_ONLY = 1,
  LOT_LOSS_MODE_REINFORCER_ONLY = 2,
  LOT_LOSS_MODE_MLE_ONLY = 3,
} LotLossMode;

/**
 * Opaque model handle.
 */
typedef struct LotModel LotModel;

/**
 * Coefficients of the contrastive loss. `lot_loss_params_default` fills
 * the library defaults.
 */
typedef struct LotLossParams {
  double xi;
  double gamma;
  double lambda;
  enum LotDivergence divergence;
  enum LotLossMode mode;
  double kl_cap;
} LotLossParams;

/**
 * Per-term values of the contrastive loss, averaged over positions.
 */
typedef struct LotLossTerms {
  double total;
  double mle;
  double contrast;
  double reinforce;
  size_t positions;
  size_t clamped;
} LotLossTerms;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *lot_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lot_version(void);

/**
 * Freshly initialized model with role `base`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum LotStatus lot_model_init(size_t vocab,
                              size_t embed,
                              size_t hidden,
                              size_t window,
                              uint64_t seed,
                              struct LotModel **out);

/**
 * Reads a binary checkpoint.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out` valid for one write.
 */
enum LotStatus lot_model_load(const char *file, struct LotModel **out);

/**
 * Writes a binary checkpoint.
 *
 * # Safety
 * `m` must be a live handle; `file` a NUL-terminated string.
 */
enum LotStatus lot_model_save(const struct LotModel *m, const char *file);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void lot_model_free(struct LotModel *m);

/**
 * Vocabulary size, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t lot_model_vocab_size(const struct LotModel *m);

/**
 * Next-token distribution after `context` and the response `prefix`.
 * `probs` must hold `lot_model_vocab_size(m)` values.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum LotStatus lot_model_next_dist(const struct LotModel *m,
                                   const uint32_t *context,
                                   size_t context_len,
                                   const uint32_t *prefix,
                                   size_t prefix_len,
                                   double *probs,
                                   size_t probs_len);

/**
 * Decodes up to `max_len` tokens (EOS not included). A temperature of 0
 * means greedy; otherwise tokens are sampled with `seed`. On
 * `BufferTooSmall`, `written` holds the required length.
 *
 * # Safety
 * Pointers must be valid for the given lengths; `written` for one write.
 */
enum LotStatus lot_model_decode(const struct LotModel *m,
                                const uint32_t *context,
                                size_t context_len,
                                size_t max_len,
                                double temperature,
                                uint64_t seed,
                                uint32_t *tokens,
                                size_t tokens_cap,
                                size_t *written);

/**
 * Divergence in nats between two distributions of length `n`.
 *
 * # Safety
 * `p` and `q` must be valid for `n` reads; `out` for one write.
 */
enum LotStatus lot_divergence(enum LotDivergence which,
                              const double *p,
                              const double *q,
                              size_t n,
                              double *out);

/**
 * Gradient of the divergence with respect to `p`, written to `grad[0..n]`.
 *
 * # Safety
 * `p`, `q` valid for `n` reads; `grad` for `n` writes.
 */
enum LotStatus lot_divergence_grad(enum LotDivergence which,
                                   const double *p,
                                   const double *q,
                                   size_t n,
                                   double *grad);

struct LotLossParams lot_loss_params_default(void);

/**
 * Teacher-forced contrastive loss of `learner` on one (context, response)
 * pair against the frozen `tau` and `safe` models. EOS is appended to the
 * response internally.
 *
 * # Safety
 * Handles must be live; arrays valid for their lengths; `out` for one write.
 */
enum LotStatus lot_loss(const struct LotModel *learner,
                        const struct LotModel *tau,
                        const struct LotModel *safe,
                        const uint32_t *context,
                        size_t context_len,
                        const uint32_t *response,
                        size_t response_len,
                        const struct LotLossParams *params,
                        struct LotLossTerms *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOT_H */
