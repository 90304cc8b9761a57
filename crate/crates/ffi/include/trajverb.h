#ifndef TRAJVERB_H
#define TRAJVERB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TvStatus {
  TV_STATUS_OK = 0,
  TV_STATUS_NULL_POINTER = 1,
  TV_STATUS_INVALID_ARGUMENT = 2,
  TV_STATUS_INVALID_CONFIG = 3,
  TV_STATUS_SIMULATION = 4,
  TV_STATUS_OUT_OF_RANGE = 5,
  TV_STATUS_NO_POSITIVES = 6,
  TV_STATUS_PANIC = 7,
} TvStatus;

/**
 * Opaque simulated episode.
 */
typedef struct TvEpisode TvEpisode;

/**
 * One simulation frame. `contact` is 0 none, 1 counter, 2 floor, 3 hand.
 */
typedef struct TvFrame {
  uint32_t t_index;
  double hand_pos[3];
  double obj_pos[3];
  /**
   * XYZW.
   */
  double obj_rot[4];
  double obj_vel[3];
  double obj_angvel[3];
  uint8_t contact;
} TvFrame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty if none. The
 * pointer stays valid until the next call on the same thread.
 */
const char *tv_last_error(void);

/**
 * Simulate one episode. `scene_json` may be null for the default scene or
 * hold a JSON object with any subset of the scene fields.
 *
 * # Safety
 * `scene_json` must be null or a NUL-terminated string; `out` must be a
 * valid pointer to writable storage for one handle.
 */
enum TvStatus tv_episode_generate(uint64_t seed, const char *scene_json, struct TvEpisode **out);

/**
 * Release an episode. Null is ignored.
 *
 * # Safety
 * `episode` must be null or a handle from [`tv_episode_generate`] that has
 * not been freed.
 */
void tv_episode_free(struct TvEpisode *episode);

/**
 * Number of frames in an episode.
 *
 * # Safety
 * `episode` must be a live handle and `out` a valid pointer.
 */
enum TvStatus tv_episode_frame_count(const struct TvEpisode *episode, size_t *out);

/**
 * Copy frame `index` into `out`.
 *
 * # Safety
 * `episode` must be a live handle and `out` a valid pointer.
 */
enum TvStatus tv_episode_frame(const struct TvEpisode *episode, size_t index, struct TvFrame *out);

/**
 * Oracle label (default thresholds) for `verb` on the 90-frame clip
 * starting at `start`. `verb` is a lowercase verb name such as `"fall"`.
 *
 * # Safety
 * `episode` must be a live handle, `verb` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum TvStatus tv_episode_label_clip(const struct TvEpisode *episode,
                                    size_t start,
                                    const char *verb,
                                    bool *out);

/**
 * Average precision of `n` scores against 0/1 labels; ties keep input order.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements and `out` to
 * writable storage.
 */
enum TvStatus tv_average_precision(const double *scores,
                                   const uint8_t *labels,
                                   size_t n,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJVERB_H */
