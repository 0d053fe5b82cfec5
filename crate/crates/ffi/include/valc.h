#ifndef VALC_H
#define VALC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ValcAllocation {
  VALC_ALLOCATION_THI = 0,
  VALC_ALLOCATION_MDD = 1,
  VALC_ALLOCATION_FIXED = 2,
} ValcAllocation;

typedef enum ValcMixing {
  VALC_MIXING_FULL_COMPLEMENT = 0,
  VALC_MIXING_KEY_MEASURED = 1,
} ValcMixing;

typedef enum ValcReconstruction {
  VALC_RECONSTRUCTION_FAST = 0,
  /**
   * Iterative refinement with the built-in Haar shrinkage denoiser.
   */
  VALC_RECONSTRUCTION_IDA = 1,
} ValcReconstruction;

typedef enum ValcStatus {
  VALC_STATUS_OK = 0,
  VALC_STATUS_NULL_POINTER = 1,
  VALC_STATUS_INVALID_ARGUMENT = 2,
  VALC_STATUS_INVALID_CONFIG = 3,
  VALC_STATUS_MALFORMED_STREAM = 4,
  VALC_STATUS_IO = 5,
  VALC_STATUS_PLUGIN = 6,
  VALC_STATUS_NUMERIC = 7,
  VALC_STATUS_PANIC = 8,
} ValcStatus;

typedef struct ValcDecoded ValcDecoded;

typedef struct ValcEncoder ValcEncoder;

typedef struct ValcEncodeParams {
  uint32_t gop;
  uint32_t block_size;
  double delta_key;
  /**
   * Target GOP average; the non-key ratio is derived from it.
   */
  double delta_avg;
  /**
   * A [`ValcAllocation`] value.
   */
  uint32_t allocation;
} ValcEncodeParams;

/**
 * Byte buffer allocated by the library; release with [`valc_buffer_free`].
 */
typedef struct ValcBuffer {
  uint8_t *data;
  size_t len;
} ValcBuffer;

typedef struct ValcDecodeParams {
  /**
   * A [`ValcReconstruction`] value.
   */
  uint32_t reconstruction;
  uint32_t ida_iterations;
  double ida_damping;
  double ida_sigma;
  /**
   * Best-pixel threshold; negative selects the default for the
   * reconstruction mode.
   */
  double threshold;
  /**
   * A [`ValcMixing`] value.
   */
  uint32_t mixing;
} ValcDecodeParams;

typedef struct ValcFrameInfo {
  uint32_t index;
  /**
   * 1 for key frames, 0 otherwise.
   */
  uint8_t is_key;
  double delta_realized;
} ValcFrameInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *valc_last_error_message(void);

const char *valc_version(void);

enum ValcStatus valc_rate_split(double delta_avg, uint32_t gop, double delta_key, double *out);

enum ValcStatus valc_encoder_new(const struct ValcEncodeParams *params, struct ValcEncoder **out);

/**
 * Senses one frame. `stride` is the distance in bytes between rows.
 */
enum ValcStatus valc_encoder_push(struct ValcEncoder *encoder,
                                  const uint8_t *pixels,
                                  uint32_t width,
                                  uint32_t height,
                                  uint32_t stride);

/**
 * Serializes every frame pushed so far. The encoder stays usable.
 */
enum ValcStatus valc_encoder_finish(const struct ValcEncoder *encoder, struct ValcBuffer *out);

void valc_encoder_free(struct ValcEncoder *encoder);

void valc_buffer_free(struct ValcBuffer *buffer);

struct ValcDecodeParams valc_decode_params_default(void);

/**
 * Decodes a whole stream with linear interpolation between key frames.
 * `params` may be NULL for defaults.
 */
enum ValcStatus valc_decode(const uint8_t *data,
                            size_t len,
                            const struct ValcDecodeParams *params,
                            struct ValcDecoded **out);

size_t valc_decoded_count(const struct ValcDecoded *decoded);

enum ValcStatus valc_decoded_size(const struct ValcDecoded *decoded,
                                  uint32_t *width,
                                  uint32_t *height);

enum ValcStatus valc_decoded_info(const struct ValcDecoded *decoded,
                                  size_t index,
                                  struct ValcFrameInfo *out);

/**
 * Copies frame `index`, rounded to 8 bits, into `dst` with row stride
 * `stride`. `dst_len` must cover `stride * (height - 1) + width` bytes.
 */
enum ValcStatus valc_decoded_copy(const struct ValcDecoded *decoded,
                                  size_t index,
                                  uint8_t *dst,
                                  size_t dst_len,
                                  uint32_t stride);

void valc_decoded_free(struct ValcDecoded *decoded);

/**
 * PSNR in dB between two tightly packed 8-bit rasters; `+inf` when equal.
 */
enum ValcStatus valc_psnr(const uint8_t *reference,
                          const uint8_t *test,
                          uint32_t width,
                          uint32_t height,
                          double *out);

enum ValcStatus valc_ms_ssim(const uint8_t *reference,
                             const uint8_t *test,
                             uint32_t width,
                             uint32_t height,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VALC_H */
