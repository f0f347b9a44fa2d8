#ifndef NVBENCH_H
#define NVBENCH_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NvbStatus {
  NVB_STATUS_OK = 0,
  NVB_STATUS_NULL_POINTER = 1,
  NVB_STATUS_INVALID_ARGUMENT = 2,
  NVB_STATUS_IO = 3,
  NVB_STATUS_DATA = 4,
  NVB_STATUS_CONFIG = 5,
  NVB_STATUS_SHAPE = 6,
  NVB_STATUS_BUFFER_TOO_SMALL = 7,
  NVB_STATUS_CHECK_FAILED = 8,
  NVB_STATUS_PANIC = 9,
} NvbStatus;

/**
 * A network in 64-bit precision.
 */
typedef struct NvbNetwork NvbNetwork;

/**
 * A binary slice sequence `[T, 2, H, W]`.
 */
typedef struct NvbSequence NvbSequence;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *nvb_version(void);

/**
 * Message of the calling thread's last failure; empty after a success. Valid until the
 * next call on the same thread.
 */
const char *nvb_last_error(void);

/**
 * Load an NVCK checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; the out pointer must be writable.
 */
enum NvbStatus nvb_network_load(const char *path, struct NvbNetwork **out_net);

/**
 * Build a freshly initialised network from a TOML network config (the `NetworkConfig`
 * fields: kind, structure, loss, input_height, input_width, steps, dt_us, [cell]).
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string; `out_net` must be writable.
 */
enum NvbStatus nvb_network_build(const char *config_toml,
                                 uint64_t seed,
                                 struct NvbNetwork **out_net);

/**
 * Save a network as an NVCK checkpoint.
 *
 * # Safety
 * `net` must come from this library; `path` must be a NUL-terminated string.
 */
enum NvbStatus nvb_network_save(const struct NvbNetwork *net, const char *path);

/**
 * # Safety
 * `net` must come from this library or be null.
 */
void nvb_network_free(struct NvbNetwork *net);

/**
 * Trainable parameter count, number of classes, and the input geometry `[T, H, W]`.
 *
 * # Safety
 * `net` must come from this library; the out pointers must be writable.
 */
enum NvbStatus nvb_network_info(const struct NvbNetwork *net,
                                uint64_t *num_params,
                                uint32_t *num_classes,
                                uint32_t *steps,
                                uint32_t *height,
                                uint32_t *width);

/**
 * Load an NVSL slice file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; the out pointer must be writable.
 */
enum NvbStatus nvb_sequence_load(const char *path, struct NvbSequence **out_seq);

/**
 * Copy a `[steps, 2, height, width]` binary tensor (bytes 0/1) into a new sequence.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out_seq` must be writable.
 */
enum NvbStatus nvb_sequence_from_data(uint32_t steps,
                                      uint32_t height,
                                      uint32_t width,
                                      uint32_t dt_us,
                                      const uint8_t *data,
                                      size_t len,
                                      struct NvbSequence **out_seq);

/**
 * # Safety
 * `seq` must come from this library or be null.
 */
void nvb_sequence_free(struct NvbSequence *seq);

/**
 * Shape `[T, H, W]` and label (`-1` when unlabelled).
 *
 * # Safety
 * `seq` must come from this library; the out pointers must be writable.
 */
enum NvbStatus nvb_sequence_info(const struct NvbSequence *seq,
                                 uint32_t *steps,
                                 uint32_t *height,
                                 uint32_t *width,
                                 int64_t *label);

/**
 * Class scores (the aggregate the network's loss classifies by) and predicted class.
 * `scores` must hold `capacity >= num_classes` values; pass null to skip them.
 *
 * # Safety
 * Handles must come from this library; `scores` must have `capacity` writable slots.
 */
enum NvbStatus nvb_network_classify(const struct NvbNetwork *net,
                                    const struct NvbSequence *seq,
                                    double *scores,
                                    size_t capacity,
                                    uint32_t *predicted);

/**
 * Temporal contrast matrix with window `k`, row-major `size x size` where
 * `size = T - k`. `size` is always written; values only when `capacity >= size^2`.
 *
 * # Safety
 * `seq` must come from this library; `values` must have `capacity` writable slots.
 */
enum NvbStatus nvb_contrast_matrix(const struct NvbSequence *seq,
                                   uint32_t k,
                                   double *values,
                                   size_t capacity,
                                   size_t *size);

/**
 * Run the gradient oracle suite over seeds `first .. first + count`. Returns
 * `CheckFailed` when an oracle disagrees or the reset-term mutant goes unnoticed.
 */
enum NvbStatus nvb_gradcheck(uint64_t first, uint64_t count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NVBENCH_H */
