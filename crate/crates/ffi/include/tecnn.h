#ifndef TECNN_H
#define TECNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define TECNN_DIRECTION_FORWARD 0

#define TECNN_DIRECTION_BACKWARD 1

typedef enum tecnn_status {
  TECNN_STATUS_OK = 0,
  TECNN_STATUS_NULL_POINTER = 1,
  TECNN_STATUS_INVALID_ARGUMENT = 2,
  TECNN_STATUS_CONFIG = 3,
  TECNN_STATUS_SHAPE = 4,
  TECNN_STATUS_NON_FINITE = 5,
  TECNN_STATUS_ESTIMATOR_UNAVAILABLE = 6,
  TECNN_STATUS_LOAD = 7,
  TECNN_STATUS_CHECKPOINT = 8,
  TECNN_STATUS_IO = 9,
  TECNN_STATUS_PANIC = 10,
} tecnn_status;

/**
 * Sliding event windows for one source/destination layer pair.
 */
typedef struct tecnn_recorder tecnn_recorder;

/**
 * A network, its data and its training state, driven one epoch at a time.
 */
typedef struct tecnn_trainer tecnn_trainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. Valid until
 * the next call into this library on the same thread.
 */
const char *tecnn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tecnn_version(void);

/**
 * Transfer entropy `src -> dst` in bits over two equal-length 0/1 byte
 * series (any non-zero byte counts as 1).
 *
 * # Safety
 * `src` and `dst` must point to `len` readable bytes; `out` must be writable.
 */
enum tecnn_status tecnn_te_pair(const uint8_t *src, const uint8_t *dst, size_t len, double *out);

/**
 * Same quantity as [`tecnn_te_pair`] through conditional entropies.
 *
 * # Safety
 * As for [`tecnn_te_pair`].
 */
enum tecnn_status tecnn_te_pair_oracle(const uint8_t *src,
                                       const uint8_t *dst,
                                       size_t len,
                                       double *out);

/**
 * Creates a recorder with absolute thresholds `g_src` and `g_dst`.
 *
 * # Safety
 * `out` must be writable; on success it receives a handle owned by the
 * caller.
 */
enum tecnn_status tecnn_recorder_new(size_t n_src,
                                     size_t n_dst,
                                     size_t window,
                                     double g_src,
                                     double g_dst,
                                     struct tecnn_recorder **out);

/**
 * Appends `batch` samples. `src` is `batch x n_src` and `dst` is
 * `batch x n_dst`, both row-major.
 *
 * # Safety
 * `rec` must come from [`tecnn_recorder_new`]; the arrays must hold the
 * stated number of doubles.
 */
enum tecnn_status tecnn_recorder_record_batch(struct tecnn_recorder *rec,
                                              const double *src,
                                              const double *dst,
                                              size_t batch);

/**
 * Writes the full `n_src x n_dst` TE matrix (row-major, entry `[i][j]` is
 * source `i` to destination `j`) into `out`, which must hold `len` doubles.
 * All zeros while the windows are still filling.
 *
 * # Safety
 * `rec` must be a live recorder handle; `out` must hold `len` doubles.
 */
enum tecnn_status tecnn_recorder_te_matrix(const struct tecnn_recorder *rec,
                                           uint32_t direction_code,
                                           double *out,
                                           size_t len);

/**
 * # Safety
 * `rec` must be null or a handle from [`tecnn_recorder_new`] not yet freed.
 */
void tecnn_recorder_free(struct tecnn_recorder *rec);

/**
 * Builds a trainer from configuration text (`key = value` lines, same keys
 * as the command-line config file).
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` must be writable.
 */
enum tecnn_status tecnn_trainer_new(const char *config, struct tecnn_trainer **out);

/**
 * Runs one training epoch; mean train loss and top-1 go to the optional
 * output pointers.
 *
 * # Safety
 * `t` must be a live trainer handle; outputs may be null.
 */
enum tecnn_status tecnn_trainer_train_epoch(struct tecnn_trainer *t, double *loss, double *top1);

/**
 * Evaluates on the test split.
 *
 * # Safety
 * `t` must be a live trainer handle; outputs may be null.
 */
enum tecnn_status tecnn_trainer_evaluate(const struct tecnn_trainer *t, double *loss, double *top1);

/**
 * Number of completed epochs.
 *
 * # Safety
 * `t` must be a live trainer handle; `out` must be writable.
 */
enum tecnn_status tecnn_trainer_epoch(const struct tecnn_trainer *t, uint64_t *out);

/**
 * # Safety
 * `t` must be a live trainer handle; `path` a NUL-terminated UTF-8 path.
 */
enum tecnn_status tecnn_trainer_save_checkpoint(const struct tecnn_trainer *t, const char *path);

/**
 * Copies the per-batch metrics CSV recorded so far into `buf` (NUL
 * terminated). `needed` receives the size including the terminator; pass a
 * null `buf` to query it.
 *
 * # Safety
 * `t` must be a live trainer handle; `buf` must be null or hold `cap`
 * bytes; `needed` must be writable.
 */
enum tecnn_status tecnn_trainer_metrics_csv(const struct tecnn_trainer *t,
                                            char *buf,
                                            size_t cap,
                                            size_t *needed);

/**
 * # Safety
 * `t` must be null or a handle from [`tecnn_trainer_new`] not yet freed.
 */
void tecnn_trainer_free(struct tecnn_trainer *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TECNN_H */
