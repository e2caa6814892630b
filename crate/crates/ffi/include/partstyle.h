#ifndef PARTSTYLE_H
#define PARTSTYLE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  // A required pointer argument was null.
  PS_STATUS_NULL_ARGUMENT = 1,
  // Arguments violate a documented precondition (sizes, ranges, UTF-8).
  PS_STATUS_INVALID_ARGUMENT = 2,
  // Non-finite values appeared during computation.
  PS_STATUS_NUMERIC = 3,
  PS_STATUS_IO = 4,
  // Malformed file contents or a version mismatch.
  PS_STATUS_FORMAT = 5,
  // A clip length or layout the network cannot consume.
  PS_STATUS_SHAPE = 6,
  // An unexpected internal failure; the message holds details.
  PS_STATUS_INTERNAL = 7,
} PsStatus;

// A pose-feature clip of `frames × 21 × 15` values.
typedef struct PsClip PsClip;

// A loaded checkpoint: inference parameters plus normalization statistics.
typedef struct PsModel PsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ps_version(void);

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t ps_last_error(char *buf, size_t len);

// Loads a checkpoint; inference uses the averaged parameters when present.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PsStatus ps_model_load(const char *path, struct PsModel **out);

// # Safety
// `model` must be null or a handle from [`ps_model_load`] not yet freed.
void ps_model_free(struct PsModel *model);

// Number of scalar parameters, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t ps_model_num_parameters(const struct PsModel *model);

// Reads an `.mpz` clip.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PsStatus ps_clip_load(const char *path, struct PsClip **out);

// Builds a clip from `frames × 21 × 15` row-major features.
//
// # Safety
// `data` must point to `len` readable doubles; `out` must be writable.
enum PsStatus ps_clip_from_features(size_t frames,
                                    const double *data,
                                    size_t len,
                                    struct PsClip **out);

// Writes a clip as `.mpz`.
//
// # Safety
// `clip` must be a live handle; `path` a NUL-terminated string.
enum PsStatus ps_clip_save(const struct PsClip *clip, const char *path);

// Frame count, or 0 for a null handle.
//
// # Safety
// `clip` must be null or a live handle.
size_t ps_clip_frames(const struct PsClip *clip);

// Copies the features into `out`, which must hold exactly `frames × 21 × 15` doubles.
//
// # Safety
// `clip` must be a live handle; `out` must point to `len` writable doubles.
enum PsStatus ps_clip_features(const struct PsClip *clip, double *out, size_t len);

// # Safety
// `clip` must be null or a handle not yet freed.
void ps_clip_free(struct PsClip *clip);

// Stylizes `source` part by part.
//
// `styles` holds five clip pointers in part order (left leg, right leg, spine,
// left arm, right arm); a null entry, or a null `styles`, keeps the source style
// for that part. `alpha` is null (all 1) or five weights in [0, 1].
//
// # Safety
// All non-null pointers must be valid for the documented element counts.
enum PsStatus ps_stylize(const struct PsModel *model,
                         const struct PsClip *source,
                         const struct PsClip *const *styles,
                         const double *alpha,
                         struct PsClip **out);

// Encodes and decodes `source` with its own style.
//
// # Safety
// `model` and `source` must be live handles; `out` must be writable.
enum PsStatus ps_reconstruct(const struct PsModel *model,
                             const struct PsClip *source,
                             struct PsClip **out);

// Per-joint mean squared displacement (21 values) between the world
// trajectories of two equally long clips, normalized by the stock skeleton height.
//
// # Safety
// `a`, `b` must be live handles; `out` must point to 21 writable doubles.
enum PsStatus ps_msd(const struct PsClip *a, const struct PsClip *b, double *out);

// Fréchet distance between two sets of `dim`-dimensional row vectors.
//
// # Safety
// `a` must hold `na × dim` doubles, `b` `nb × dim`; `out` must be writable.
enum PsStatus ps_fmd(const double *a,
                     size_t na,
                     const double *b,
                     size_t nb,
                     size_t dim,
                     double *out);

// Values per frame of a clip (21 joints × 15 features).
size_t ps_frame_width(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARTSTYLE_H */
