/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef TSIT_H
#define TSIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define TSIT_OK 0

// A required pointer argument was null.
#define TSIT_ERR_NULL 1

#define TSIT_ERR_CONFIG 2

// Unreadable, corrupt or unsupported checkpoint.
#define TSIT_ERR_CHECKPOINT 3

// Input extents or buffer lengths do not fit the model.
#define TSIT_ERR_SHAPE 4

// Non-finite values or a failed numeric routine.
#define TSIT_ERR_NUMERIC 5

// Invalid input values, e.g. a class id out of range.
#define TSIT_ERR_DATA 6

#define TSIT_ERR_IO 7

#define TSIT_ERR_PANIC 8

// Argument not valid UTF-8 or otherwise malformed.
#define TSIT_ERR_ARGUMENT 9

// Opaque generator loaded from a checkpoint. Not safe for concurrent use;
// distinct handles may be used from distinct threads.
typedef struct TsitTranslator TsitTranslator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tsit_version(void);

// Message for the last failed call on this thread, or null after a success.
// Valid until the next `tsit_*` call on the same thread.
const char *tsit_last_error(void);

// Loads the generator from a checkpoint file. On success `*out` owns a new
// handle, released with `tsit_translator_free`; on failure `*out` is null.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
int32_t tsit_translator_load(const char *path, struct TsitTranslator **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `t` must be null or a handle from `tsit_translator_load` not yet freed.
void tsit_translator_free(struct TsitTranslator *t);

// Model geometry. `content_channels` is the class count for semantic models,
// whose content input is a label map. Height and width passed to
// `tsit_translate` must be multiples of `spatial_multiple`. Any out pointer
// may be null.
//
// # Safety
// `t` must be a live handle; non-null out pointers must be writable.
int32_t tsit_translator_info(const struct TsitTranslator *t,
                             uint32_t *content_channels,
                             uint32_t *style_channels,
                             uint32_t *spatial_multiple,
                             uint32_t *is_semantic);

// Translates one content image under one style image.
//
// `content` is planar `[content_channels][height][width]` in [-1, 1], except
// for semantic models where it is `[height][width]` class ids stored as
// floats. `style` is planar `[style_channels][height][width]`. `out` receives
// planar `[3][height][width]` and must hold `out_len` >= 3*height*width floats.
// The same inputs and `noise_seed` always give the same output.
//
// # Safety
// `t` must be a live handle; `content`, `style` and `out` must point to at
// least the lengths above.
int32_t tsit_translate(struct TsitTranslator *t,
                       const float *content,
                       const float *style,
                       uint32_t height,
                       uint32_t width,
                       uint64_t noise_seed,
                       float *out,
                       uintptr_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSIT_H */
