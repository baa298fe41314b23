#ifndef VOXGROUND_H
#define VOXGROUND_H

/* Generated by cbindgen from voxground-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. Anything but OK leaves a message for
 * [`vg_last_error`].
 */
typedef enum VgStatus {
  VG_STATUS_OK = 0,
  VG_STATUS_INVALID_ARGUMENT = 1,
  VG_STATUS_NUMERIC_FAILURE = 2,
  VG_STATUS_IO_FAILURE = 3,
  VG_STATUS_PARSE_FAILURE = 4,
  VG_STATUS_INTERNAL = 5,
} VgStatus;

/**
 * Opaque model handle: configuration, vocabulary and parameters.
 */
typedef struct VgModel VgModel;

/**
 * Axis-aligned box in meters.
 */
typedef struct VgBox {
  double center[3];
  double size[3];
} VgBox;

/**
 * Evaluation summary over a dataset directory.
 */
typedef struct VgEvalReport {
  double acc_at_25;
  double acc_at_50;
  double mean_forward_ms;
  uint64_t scenes;
} VgEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vg_version(void);

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to
 * `cap`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be NULL.
 */
uintptr_t vg_last_error(char *buf, uintptr_t cap);

/**
 * Creates a model. `config_path` may be NULL for the default
 * configuration; `seed` overrides the configured parameter seed.
 * Returns NULL on failure (see [`vg_last_error`]).
 *
 * # Safety
 * `config_path` must be NULL or a valid NUL-terminated string.
 */
struct VgModel *vg_model_new(const char *config_path, uint64_t seed);

/**
 * Releases a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a pointer from [`vg_model_new`] not yet freed.
 */
void vg_model_free(struct VgModel *model);

/**
 * Loads checkpointed parameters into the model.
 *
 * # Safety
 * `model` must come from [`vg_model_new`]; `path` must be a valid
 * NUL-terminated string.
 */
enum VgStatus vg_model_load_checkpoint(struct VgModel *model, const char *path);

/**
 * Saves the model parameters.
 *
 * # Safety
 * As for [`vg_model_load_checkpoint`].
 */
enum VgStatus vg_model_save_checkpoint(struct VgModel *model, const char *path);

/**
 * Trains for `steps` optimizer steps over the scene files in `dataset_dir`.
 *
 * # Safety
 * As for [`vg_model_load_checkpoint`].
 */
enum VgStatus vg_model_train(struct VgModel *model,
                             const char *dataset_dir,
                             uint64_t steps,
                             double lr);

/**
 * Grounds the description of one scene file; writes the predicted box.
 *
 * # Safety
 * `out_box` must point to writable memory for one `VgBox`; other
 * arguments as for [`vg_model_load_checkpoint`].
 */
enum VgStatus vg_model_infer_scene(struct VgModel *model,
                                   const char *scene_path,
                                   struct VgBox *out_box);

/**
 * Evaluates grounding accuracy over a dataset directory.
 *
 * # Safety
 * `out` must point to writable memory for one `VgEvalReport`; other
 * arguments as for [`vg_model_load_checkpoint`].
 */
enum VgStatus vg_model_evaluate(struct VgModel *model,
                                const char *dataset_dir,
                                struct VgEvalReport *out);

/**
 * Writes `count` seeded synthetic scene files into `out_dir`.
 *
 * # Safety
 * `out_dir` must be a valid NUL-terminated string.
 */
enum VgStatus vg_generate_scenes(const char *out_dir, uint64_t seed, uint64_t count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXGROUND_H */
