#ifndef SPECTRAL_STYLE_H
#define SPECTRAL_STYLE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum AstStatus {
  AST_STATUS_OK = 0,
  AST_STATUS_NULL_POINTER = 1,
  AST_STATUS_INVALID_ARGUMENT = 2,
  AST_STATUS_IO = 3,
  AST_STATUS_FORMAT = 4,
  AST_STATUS_DIMENSION = 5,
  AST_STATUS_PANIC = 6,
} AstStatus;

typedef enum AstInitMode {
  AST_INIT_MODE_CONTENT = 0,
  AST_INIT_MODE_NOISE = 1,
  AST_INIT_MODE_CONTENT_PLUS_NOISE = 2,
} AstInitMode;

typedef enum AstPhaseMethod {
  AST_PHASE_METHOD_GRIFFIN_LIM = 0,
  AST_PHASE_METHOD_SPSI = 1,
  AST_PHASE_METHOD_SPSI_THEN_GRIFFIN_LIM = 2,
} AstPhaseMethod;

// Mono audio clip.
typedef struct AstAudio AstAudio;

// Log-magnitude spectrogram, plus the loss trace when produced by a transfer.
typedef struct AstSpectrogram AstSpectrogram;

// Feature network weights.
typedef struct AstWeights AstWeights;

// Transfer settings. `style_layers` points at `style_layer_count` 1-based block indices.
typedef struct AstTransferConfig {
  double alpha;
  double beta;
  size_t content_layer;
  const size_t *style_layers;
  size_t style_layer_count;
  size_t iterations;
  double step_size;
  enum AstInitMode init_mode;
  uint64_t noise_seed;
  double noise_level;
  size_t fft_size;
  size_t hop;
} AstTransferConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *ast_last_error(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AstStatus ast_audio_read_wav(const char *path, struct AstAudio **out);

// Copies `len` samples into a new clip.
//
// # Safety
// `samples` must point to `len` readable doubles; `out` must be valid.
enum AstStatus ast_audio_from_samples(const double *samples,
                                      size_t len,
                                      uint32_t sample_rate,
                                      struct AstAudio **out);

// Writes 16-bit PCM mono.
//
// # Safety
// `audio` must come from this library; `path` must be NUL-terminated.
enum AstStatus ast_audio_write_wav(const struct AstAudio *audio, const char *path);

// # Safety
// `audio` must be null or a live handle.
size_t ast_audio_len(const struct AstAudio *audio);

// # Safety
// `audio` must be null or a live handle.
uint32_t ast_audio_sample_rate(const struct AstAudio *audio);

// Borrowed view of the samples, valid while the handle lives.
//
// # Safety
// `audio` must be null or a live handle.
const double *ast_audio_samples(const struct AstAudio *audio);

// # Safety
// `audio` must be null or a handle not yet freed.
void ast_audio_free(struct AstAudio *audio);

// Seeded random feature network: `channel_count` conv blocks of the given
// widths over `in_channels` bins, each followed by ReLU and 2x max-pooling.
//
// # Safety
// `channels` must point to `channel_count` values; `out` must be valid.
enum AstStatus ast_weights_random(size_t in_channels,
                                  const size_t *channels,
                                  size_t channel_count,
                                  size_t kernel_width,
                                  uint64_t seed,
                                  struct AstWeights **out);

// # Safety
// `path` must be NUL-terminated; `out` must be valid.
enum AstStatus ast_weights_load(const char *path, struct AstWeights **out);

// # Safety
// `weights` must be a live handle; `path` must be NUL-terminated.
enum AstStatus ast_weights_save(const struct AstWeights *weights, const char *path);

// # Safety
// `weights` must be null or a live handle.
size_t ast_weights_block_count(const struct AstWeights *weights);

// # Safety
// `weights` must be null or a handle not yet freed.
void ast_weights_free(struct AstWeights *weights);

// Library defaults; `style_layers` points at static storage.
struct AstTransferConfig ast_transfer_config_default(void);

// Optimizes a spectrogram with the content of `content` and style of `style`.
//
// # Safety
// All handles must be live; `config` must be valid; `out` must be valid.
enum AstStatus ast_transfer_run(const struct AstAudio *content,
                                const struct AstAudio *style,
                                const struct AstWeights *weights,
                                const struct AstTransferConfig *config,
                                struct AstSpectrogram **out);

// Log-magnitude spectrogram of a clip.
//
// # Safety
// `audio` must be live; `out` must be valid.
enum AstStatus ast_spectrogram_from_audio(const struct AstAudio *audio,
                                          size_t fft_size,
                                          size_t hop,
                                          struct AstSpectrogram **out);

// # Safety
// `spec` must be null or a live handle.
size_t ast_spectrogram_bins(const struct AstSpectrogram *spec);

// # Safety
// `spec` must be null or a live handle.
size_t ast_spectrogram_frames(const struct AstSpectrogram *spec);

// Copies the bins x frames grid, row-major by bin, into `dst` of length `len`.
//
// # Safety
// `spec` must be live; `dst` must point to `len` writable doubles.
enum AstStatus ast_spectrogram_copy_data(const struct AstSpectrogram *spec,
                                         double *dst,
                                         size_t len);

// Number of recorded optimization steps (0 for spectrograms not produced by a transfer).
//
// # Safety
// `spec` must be null or a live handle.
size_t ast_spectrogram_loss_count(const struct AstSpectrogram *spec);

// Weighted loss terms at 0-based step `index`. Any output pointer may be null.
//
// # Safety
// `spec` must be live; non-null outputs must be writable.
enum AstStatus ast_spectrogram_loss(const struct AstSpectrogram *spec,
                                    size_t index,
                                    double *total,
                                    double *content,
                                    double *style);

// Inverts the spectrogram's magnitude to audio. `convergence` (nullable)
// receives the final spectral convergence.
//
// # Safety
// `spec` must be live; `out` must be valid; `convergence` null or writable.
enum AstStatus ast_reconstruct(const struct AstSpectrogram *spec,
                               enum AstPhaseMethod method,
                               size_t iterations,
                               struct AstAudio **out,
                               double *convergence);

// # Safety
// `spec` must be null or a handle not yet freed.
void ast_spectrogram_free(struct AstSpectrogram *spec);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECTRAL_STYLE_H */
