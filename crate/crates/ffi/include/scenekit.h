#ifndef SCENEKIT_H
#define SCENEKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SkStatus {
  SK_STATUS_OK = 0,
  SK_STATUS_NULL_ARGUMENT = 1,
  SK_STATUS_INVALID_UTF8 = 2,
  SK_STATUS_IO = 3,
  SK_STATUS_PARSE = 4,
  SK_STATUS_VALIDATION = 5,
  SK_STATUS_UNKNOWN_ID = 6,
  SK_STATUS_INVALID_ARGUMENT = 7,
  SK_STATUS_RENDER = 8,
  SK_STATUS_TRAIN = 9,
  SK_STATUS_PANIC = 10,
} SkStatus;

/**
 * A rendered image: row-major, interleaved channels, plus per-pixel opacity.
 */
typedef struct SkImage SkImage;

/**
 * A scene with its loaded fields.
 */
typedef struct SkScene SkScene;

/**
 * Pinhole camera at `eye` looking at `target`.
 */
typedef struct SkCamera {
  double eye[3];
  double target[3];
  double up[3];
  /**
   * Vertical field of view, radians.
   */
  double fov_y;
  uint32_t width;
  uint32_t height;
} SkCamera;

/**
 * `stratified == 0` samples interval midpoints; otherwise `seed` drives
 * stratified jitter.
 */
typedef struct SkRenderOptions {
  uint32_t n_samples;
  uint8_t stratified;
  uint64_t seed;
} SkRenderOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sk_last_error(void);

/**
 * Library version, a static string.
 */
const char *sk_version(void);

/**
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void sk_string_free(char *s);

/**
 * Loads a scene file; checkpoints resolve relative to its directory.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is valid for writes.
 */
enum SkStatus sk_scene_load(const char *path, struct SkScene **out);

/**
 * Parses scene JSON; `base_dir` (nullable, default ".") resolves relative paths.
 *
 * # Safety
 * `json` is a NUL-terminated string, `base_dir` is null or one; `out` is valid for writes.
 */
enum SkStatus sk_scene_from_json(const char *json, const char *base_dir, struct SkScene **out);

/**
 * The two-object template scene with freshly initialized fields.
 *
 * # Safety
 * `out` is valid for writes.
 */
enum SkStatus sk_scene_template(struct SkScene **out);

/**
 * # Safety
 * `scene` is null or a handle from this library that has not been freed.
 */
void sk_scene_free(struct SkScene *scene);

/**
 * Counts the violations in scene JSON without loading fields. Malformed
 * JSON is a parse error; a nonzero count is still `Ok`.
 *
 * # Safety
 * `json` is a NUL-terminated string; `n_violations` is valid for writes.
 */
enum SkStatus sk_scene_validate_json(const char *json, size_t *n_violations);

/**
 * # Safety
 * `scene` is a live handle; `out` is valid for writes.
 */
enum SkStatus sk_scene_to_json(const struct SkScene *scene, char **out);

/**
 * Number of proxies, or 0 for a null handle.
 *
 * # Safety
 * `scene` is null or a live handle.
 */
size_t sk_scene_proxy_count(const struct SkScene *scene);

/**
 * SHA-256 hex digest of every neural field's parameters.
 *
 * # Safety
 * `scene` is a live handle; `out` is valid for writes.
 */
enum SkStatus sk_scene_checksum(const struct SkScene *scene, char **out);

/**
 * Applies a move, remove or duplicate edit request given as JSON.
 *
 * # Safety
 * `scene` is a live handle; `edit_json` is a NUL-terminated string.
 */
enum SkStatus sk_scene_apply_edit(struct SkScene *scene, const char *edit_json);

/**
 * Writes `dir/scene.json` and `dir/checkpoints/<field>.stsf`.
 *
 * # Safety
 * `scene` is a live handle; `dir` is a NUL-terminated string.
 */
enum SkStatus sk_scene_save(const struct SkScene *scene, const char *dir);

/**
 * Composed render of every proxy. `options` may be null (64 midpoint samples).
 *
 * # Safety
 * `scene` and `camera` are valid; `options` is null or valid; `out` is valid for writes.
 */
enum SkStatus sk_render(const struct SkScene *scene,
                        const struct SkCamera *camera_,
                        const struct SkRenderOptions *options_,
                        struct SkImage **out);

/**
 * One field alone in its canonical frame.
 *
 * # Safety
 * As [`sk_render`]; `field_id` is a NUL-terminated string.
 */
enum SkStatus sk_render_object(const struct SkScene *scene,
                               const char *field_id,
                               const struct SkCamera *camera_,
                               const struct SkRenderOptions *options_,
                               struct SkImage **out);

/**
 * Trains the scene's fields in place. `config_json` (nullable) holds
 * training config overrides; `guidance` (nullable, default `none`) uses the
 * command-line form; `out_dir` (nullable) receives the event log.
 *
 * # Safety
 * `scene` is a live handle; string arguments are null or NUL-terminated;
 * `iters_done` is null or valid for writes.
 */
enum SkStatus sk_train(struct SkScene *scene,
                       const char *config_json,
                       const char *guidance,
                       const char *out_dir,
                       uint64_t *iters_done);

/**
 * # Safety
 * `image` is null or a handle from this library that has not been freed.
 */
void sk_image_free(struct SkImage *image);

/**
 * Width, height and channel count; any output pointer may be null.
 *
 * # Safety
 * `image` is a live handle; non-null outputs are valid for writes.
 */
enum SkStatus sk_image_shape(const struct SkImage *image,
                             uint32_t *width,
                             uint32_t *height,
                             uint32_t *channels);

/**
 * Borrowed color data, `width·height·channels` floats, valid until the
 * image is freed.
 *
 * # Safety
 * `image` is a live handle; `data` and `len` are valid for writes.
 */
enum SkStatus sk_image_data(const struct SkImage *image, const float **data, size_t *len);

/**
 * Borrowed opacity, `width·height` floats.
 *
 * # Safety
 * As [`sk_image_data`].
 */
enum SkStatus sk_image_opacity(const struct SkImage *image, const float **data, size_t *len);

/**
 * Writes PNG or PFM, chosen by the path's extension.
 *
 * # Safety
 * `image` is a live handle; `path` is a NUL-terminated string.
 */
enum SkStatus sk_image_write(const struct SkImage *image, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCENEKIT_H */
