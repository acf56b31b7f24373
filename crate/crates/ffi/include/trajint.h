#ifndef TRAJINT_H
#define TRAJINT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TrajintPairReason {
  TRAJINT_PAIR_REASON_DISTANCE_PASS = 0,
  TRAJINT_PAIR_REASON_FILTERED_ONCOMING = 1,
  TRAJINT_PAIR_REASON_RETAINED_ONCOMING_LEFT_TURN = 2,
} TrajintPairReason;

typedef enum TrajintStatus {
  TRAJINT_STATUS_OK = 0,
  TRAJINT_STATUS_NULL_POINTER = 1,
  TRAJINT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed record or schema version mismatch.
   */
  TRAJINT_STATUS_PARSE = 3,
  /**
   * Input violates a data invariant (non-finite, too short, ...).
   */
  TRAJINT_STATUS_INVALID_DATA = 4,
  TRAJINT_STATUS_NOT_FOUND = 5,
  TRAJINT_STATUS_IO = 6,
  TRAJINT_STATUS_PANIC = 7,
} TrajintStatus;

/**
 * Opaque label-set handle.
 */
typedef struct TrajintLabels TrajintLabels;

/**
 * Opaque scene handle.
 */
typedef struct TrajintScene TrajintScene;

typedef struct TrajintLabelConfig {
  double d_th;
  size_t min_traj_len;
  double oncoming_angle;
  double turn_heading_delta;
  double waiting_speed;
  double lane_change_lateral;
} TrajintLabelConfig;

typedef struct TrajintPair {
  double d_min;
  bool oncoming;
  bool retained;
  enum TrajintPairReason reason;
} TrajintPair;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *trajint_version(void);

/**
 * Message of the last failure on this thread; empty after a success. The
 * pointer stays valid until the next library call on the same thread.
 */
const char *trajint_last_error_message(void);

struct TrajintLabelConfig trajint_label_config_default(void);

/**
 * Cross-time minimum distance between two trajectories given as `len`
 * interleaved points each.
 *
 * # Safety
 * `a` and `b` must point to `2 * a_len` and `2 * b_len` doubles; `out` must
 * be writable.
 */
enum TrajintStatus trajint_min_pairwise_distance(const double *a,
                                                 size_t a_len,
                                                 const double *b,
                                                 size_t b_len,
                                                 double *out);

/**
 * # Safety
 * `value` and `grad` must be writable.
 */
enum TrajintStatus trajint_smooth_l1(double pred, double target, double *value, double *grad);

/**
 * Cross-entropy of `n` logits against `label`; `grad` receives `n`
 * gradient entries and may be null.
 *
 * # Safety
 * `logits` must point to `n` doubles, `grad` to `n` writable doubles or
 * null, `value` must be writable.
 */
enum TrajintStatus trajint_cross_entropy(const double *logits,
                                         size_t n,
                                         size_t label,
                                         double *value,
                                         double *grad);

/**
 * Minimum final displacement error over `k` modes of `n` points each,
 * against an `n`-point ground truth.
 *
 * # Safety
 * `modes` must point to `k * n * 2` doubles, `gt` to `n * 2`, `out` must be
 * writable.
 */
enum TrajintStatus trajint_min_fde(const double *modes,
                                   size_t k,
                                   size_t n,
                                   const double *gt,
                                   double *out);

uint8_t trajint_closest_distance_bin(double d);

uint8_t trajint_direction_bin(double dir);

/**
 * Parses one scene record line (as written by the `gen`/`curate` stages).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum TrajintStatus trajint_scene_from_json(const char *json, struct TrajintScene **out);

/**
 * # Safety
 * `scene` must come from this library and not be used afterwards.
 */
void trajint_scene_free(struct TrajintScene *scene);

/**
 * # Safety
 * `scene` must be a live handle or null.
 */
size_t trajint_scene_agent_count(const struct TrajintScene *scene);

/**
 * Rewrites the scene into the target-centric frame.
 *
 * # Safety
 * `scene` must be a live handle.
 */
enum TrajintStatus trajint_scene_normalize(struct TrajintScene *scene);

/**
 * Labels the target's interacting pairs. `cfg` may be null for defaults.
 *
 * # Safety
 * `scene` must be a live handle, `cfg` valid or null, `out` writable.
 */
enum TrajintStatus trajint_label_scene(const struct TrajintScene *scene,
                                       const struct TrajintLabelConfig *cfg,
                                       struct TrajintLabels **out);

/**
 * # Safety
 * `labels` must come from this library and not be used afterwards.
 */
void trajint_labels_free(struct TrajintLabels *labels);

/**
 * Number of candidate pairs (retained and filtered).
 *
 * # Safety
 * `labels` must be a live handle or null.
 */
size_t trajint_labels_pair_count(const struct TrajintLabels *labels);

/**
 * # Safety
 * `labels` must be a live handle, `out` writable.
 */
enum TrajintStatus trajint_labels_pair(const struct TrajintLabels *labels,
                                       size_t index,
                                       struct TrajintPair *out);

/**
 * Other agent's id of pair `index`, owned by `labels`; null when out of
 * range.
 *
 * # Safety
 * `labels` must be a live handle or null.
 */
const char *trajint_labels_pair_other_id(const struct TrajintLabels *labels, size_t index);

/**
 * Serializes the label set as one record line. Release with
 * [`trajint_string_free`].
 *
 * # Safety
 * `labels` must be a live handle, `out` writable.
 */
enum TrajintStatus trajint_labels_to_json(const struct TrajintLabels *labels, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void trajint_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJINT_H */
