#ifndef MARNET_H
#define MARNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MARNET_OK 0

#define MARNET_ERR_CONFIG 2

#define MARNET_ERR_SHAPE 3

#define MARNET_ERR_NON_FINITE 4

#define MARNET_ERR_INVALID_ARGUMENT 5

#define MARNET_ERR_PARSE 6

#define MARNET_ERR_DATASET 7

#define MARNET_ERR_DIVERGED 8

#define MARNET_ERR_IO 9

#define MARNET_ERR_JSON 10

#define MARNET_ERR_CHECKPOINT_MAGIC 20

#define MARNET_ERR_CHECKPOINT_VERSION 21

#define MARNET_ERR_CHECKPOINT_TRUNCATED 22

#define MARNET_ERR_CHECKPOINT_DUPLICATE 23

#define MARNET_ERR_CHECKPOINT_ENTRY 24

#define MARNET_ERR_CHECKPOINT_MISSING 25

#define MARNET_ERR_NULL_POINTER 30

#define MARNET_ERR_UTF8 31

#define MARNET_ERR_BUFFER_TOO_SMALL 32

#define MARNET_ERR_PANIC 33

// What a model predicts.
typedef enum MarnetTask {
  MarnetTask_Classification = 0,
  MarnetTask_PartSegmentation = 1,
} MarnetTask;

// A model and its optimizer state.
typedef struct MarnetModel MarnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds a model from a JSON configuration with randomly initialized weights.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` a valid pointer.
int32_t marnet_model_build(const char *config_json, uint64_t seed, struct MarnetModel **out);

// Builds one of the named configurations: `classifier`, `lite`,
// `segmenter` or `lite_segmenter`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
int32_t marnet_model_build_preset(const char *name,
                                  size_t n_outputs,
                                  size_t n_groups,
                                  uint64_t seed,
                                  struct MarnetModel **out);

// Loads a model from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t marnet_model_load(const char *path, struct MarnetModel **out);

// Writes a model to a checkpoint file.
//
// # Safety
// `model` must come from this library and `path` be a NUL-terminated string.
int32_t marnet_model_save(const struct MarnetModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void marnet_model_free(struct MarnetModel *model);

// Classes for a classifier, parts for a segmenter; 0 for null.
//
// # Safety
// `model` must be null or come from this library.
size_t marnet_model_num_outputs(const struct MarnetModel *model);

// Trainable scalars; 0 for null.
//
// # Safety
// `model` must be null or come from this library.
size_t marnet_model_num_parameters(const struct MarnetModel *model);

// # Safety
// `model` must come from this library and `out` be a valid pointer.
int32_t marnet_model_task(const struct MarnetModel *model, enum MarnetTask *out);

// Eval-mode class logits for `n_clouds` clouds of `n_points` points each.
//
// `positions` and `normals` hold `n_clouds * n_points` xyz triples, cloud by
// cloud. `out` receives `n_clouds * n_outputs` logits.
//
// # Safety
// All pointers must be valid for the stated lengths.
int32_t marnet_classify(const struct MarnetModel *model,
                        const double *positions,
                        const double *normals,
                        size_t n_clouds,
                        size_t n_points,
                        float *out,
                        size_t out_len);

// Eval-mode per-point part logits. `out` receives
// `n_clouds * n_points * n_outputs` values, point by point.
//
// # Safety
// All pointers must be valid for the stated lengths.
int32_t marnet_segment(const struct MarnetModel *model,
                       const double *positions,
                       const double *normals,
                       size_t n_clouds,
                       size_t n_points,
                       float *out,
                       size_t out_len);

// Copies the last error message of this thread into `buf` (truncated and
// NUL-terminated) and returns the full message length plus one.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t marnet_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *marnet_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARNET_H */
