/* Generated by cbindgen from crates/ffi; do not edit. */

#ifndef IMPRINTLAB_H
#define IMPRINTLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ImlStatus {
  IML_STATUS_OK = 0,
  IML_STATUS_NULL_POINTER = 1,
  IML_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed or unsupported EMB1/HED1/CSV content.
   */
  IML_STATUS_FORMAT = 3,
  IML_STATUS_DIMENSION_MISMATCH = 4,
  /**
   * The head is in the wrong state for the method (raw vs normalized rows).
   */
  IML_STATUS_HEAD_STATE = 5,
  IML_STATUS_DUPLICATE_CLASS_NAME = 6,
  IML_STATUS_ZERO_VECTOR = 7,
  IML_STATUS_IO = 8,
  IML_STATUS_BUFFER_TOO_SMALL = 9,
  IML_STATUS_INDEX_OUT_OF_RANGE = 10,
  IML_STATUS_INTERNAL = 11,
} ImlStatus;

/**
 * A labeled set of embedding rows.
 */
typedef struct ImlEmbeddings ImlEmbeddings;

/**
 * A classifier head: `N` rows of length `M`, biases, class names, flags.
 */
typedef struct ImlHead ImlHead;

/**
 * Sorted reference weights and median bias of an original head.
 */
typedef struct ImlProfile ImlProfile;

/**
 * Headline numbers of an evaluation. Undefined rates are NaN.
 */
typedef struct ImlEvalSummary {
  uint64_t num_queries;
  double top1_accuracy;
  uint64_t original_total;
  double original_top1_accuracy;
  uint64_t interference_count;
  double interference_fraction;
} ImlEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *iml_last_error_message(void);

/**
 * Loads a head from a HED1 file (or a CSV fixture by `.csv` extension).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_head` must be writable.
 */
enum ImlStatus iml_head_read_file(const char *path, struct ImlHead **out_head);

/**
 * Parses a head from an in-memory HED1 buffer.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out_head` must be writable.
 */
enum ImlStatus iml_head_from_bytes(const uint8_t *data, size_t len, struct ImlHead **out_head);

/**
 * Writes a head as HED1, atomically replacing `path`.
 *
 * # Safety
 * `head` must be a live handle; `path` a NUL-terminated string.
 */
enum ImlStatus iml_head_write_file(const struct ImlHead *head, const char *path);

/**
 * Serializes a head as HED1 into `buf`. Call with `cap = 0` to learn the size.
 *
 * # Safety
 * `buf` must hold `cap` writable bytes; `out_len` must be writable.
 */
enum ImlStatus iml_head_to_bytes(const struct ImlHead *head,
                                 uint8_t *buf,
                                 size_t cap,
                                 size_t *out_len);

/**
 * Builds a head from row-major weights, biases, and NUL-terminated class names.
 *
 * # Safety
 * `weights` holds `num_classes * dim` values, `bias` and `names` hold `num_classes` entries.
 */
enum ImlStatus iml_head_new(size_t num_classes,
                            size_t dim,
                            const double *weights,
                            const double *bias,
                            const char *const *names,
                            uint32_t flags,
                            struct ImlHead **out_head);

/**
 * Releases a head handle. NULL is ignored.
 *
 * # Safety
 * `head` must come from this library and not be used afterwards.
 */
void iml_head_free(struct ImlHead *head);

/**
 * Number of classes `N`; 0 for NULL.
 *
 * # Safety
 * `head` must be NULL or a live handle.
 */
size_t iml_head_num_classes(const struct ImlHead *head);

/**
 * Row length `M`; 0 for NULL.
 *
 * # Safety
 * `head` must be NULL or a live handle.
 */
size_t iml_head_dim(const struct ImlHead *head);

/**
 * Flag bits: 1 = rows L2-normalized, 2 = bias ignored.
 *
 * # Safety
 * `head` must be NULL or a live handle.
 */
uint32_t iml_head_flags(const struct ImlHead *head);

/**
 * Copies row `class` (`dim` values) and its bias.
 *
 * # Safety
 * `out_row` holds `len` writable values; `out_bias` is NULL or writable.
 */
enum ImlStatus iml_head_row(const struct ImlHead *head,
                            size_t class_,
                            double *out_row,
                            size_t len,
                            double *out_bias);

/**
 * Copies the UTF-8 name of `class` (no terminator) into `buf`.
 *
 * # Safety
 * `buf` holds `cap` writable bytes; `out_len` must be writable.
 */
enum ImlStatus iml_head_class_name(const struct ImlHead *head,
                                   size_t class_,
                                   uint8_t *buf,
                                   size_t cap,
                                   size_t *out_len);

/**
 * Scores one embedding against every class. Cosine heads normalize `x` first.
 *
 * # Safety
 * `x` holds `dim` values; `out_logits` holds `len` writable values.
 */
enum ImlStatus iml_head_logits(const struct ImlHead *head,
                               const double *x,
                               size_t dim,
                               double *out_logits,
                               size_t len);

/**
 * Index of the highest-scoring class; ties go to the lowest index.
 *
 * # Safety
 * `x` holds `dim` values; `out_class` must be writable.
 */
enum ImlStatus iml_head_classify(const struct ImlHead *head,
                                 const double *x,
                                 size_t dim,
                                 size_t *out_class);

/**
 * Loads an embedding set from an EMB1 file (or CSV by `.csv` extension).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_set` must be writable.
 */
enum ImlStatus iml_embeddings_read_file(const char *path, struct ImlEmbeddings **out_set);

/**
 * Parses an embedding set from an in-memory EMB1 buffer.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out_set` must be writable.
 */
enum ImlStatus iml_embeddings_from_bytes(const uint8_t *data,
                                         size_t len,
                                         struct ImlEmbeddings **out_set);

/**
 * Releases an embedding set handle. NULL is ignored.
 *
 * # Safety
 * `set` must come from this library and not be used afterwards.
 */
void iml_embeddings_free(struct ImlEmbeddings *set);

/**
 * Number of rows; 0 for NULL.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
size_t iml_embeddings_len(const struct ImlEmbeddings *set);

/**
 * Row length; 0 for NULL.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
size_t iml_embeddings_dim(const struct ImlEmbeddings *set);

/**
 * Copies row `index` and its label.
 *
 * # Safety
 * `out_row` holds `len` writable values; `out_label` is NULL or writable.
 */
enum ImlStatus iml_embeddings_row(const struct ImlEmbeddings *set,
                                  size_t index,
                                  double *out_row,
                                  size_t len,
                                  uint32_t *out_label);

/**
 * Builds the reference profile of an original head.
 *
 * # Safety
 * `head` must be a live handle; `out_profile` must be writable.
 */
enum ImlStatus iml_profile_build(const struct ImlHead *head, struct ImlProfile **out_profile);

/**
 * Releases a profile handle. NULL is ignored.
 *
 * # Safety
 * `profile` must come from this library and not be used afterwards.
 */
void iml_profile_free(struct ImlProfile *profile);

/**
 * Number of reference values `M`; 0 for NULL.
 *
 * # Safety
 * `profile` must be NULL or a live handle.
 */
size_t iml_profile_dim(const struct ImlProfile *profile);

/**
 * Copies the sorted reference weights (largest first) and the median bias.
 *
 * # Safety
 * `out_weights` holds `len` writable values; `out_median_bias` is NULL or writable.
 */
enum ImlStatus iml_profile_values(const struct ImlProfile *profile,
                                  double *out_weights,
                                  size_t len,
                                  double *out_median_bias);

/**
 * Rank-remaps `x` onto the profile's reference values.
 *
 * # Safety
 * `x` holds `dim` values; `out_row` holds `len` writable values.
 */
enum ImlStatus iml_quantile_normalize(const struct ImlProfile *profile,
                                      const double *x,
                                      size_t dim,
                                      double *out_row,
                                      size_t len);

/**
 * Adds a class by quantile imprinting. A NULL `profile` means the head's own.
 *
 * # Safety
 * `x` holds `dim` values; `name` is NUL-terminated; `out_head` is writable.
 */
enum ImlStatus iml_add_class_done(const struct ImlHead *head,
                                  const struct ImlProfile *profile,
                                  const double *x,
                                  size_t dim,
                                  const char *name,
                                  struct ImlHead **out_head);

/**
 * Normalizes every row and drops the biases, as linear imprinting requires.
 *
 * # Safety
 * `head` must be a live handle; `out_head` must be writable.
 */
enum ImlStatus iml_qi_modify_head(const struct ImlHead *head, struct ImlHead **out_head);

/**
 * Adds a class by linear imprinting to a modified head.
 *
 * # Safety
 * `x` holds `dim` values; `name` is NUL-terminated; `out_head` is writable.
 */
enum ImlStatus iml_add_class_qi(const struct ImlHead *head,
                                const double *x,
                                size_t dim,
                                const char *name,
                                struct ImlHead **out_head);

/**
 * Classifies every query and summarizes accuracy and interference.
 * `new_classes` lists the head indices of added classes.
 *
 * # Safety
 * `new_classes` holds `num_new` values (may be NULL when 0); `out_summary` is writable.
 */
enum ImlStatus iml_evaluate(const struct ImlHead *head,
                            const struct ImlEmbeddings *queries,
                            const size_t *new_classes,
                            size_t num_new,
                            struct ImlEvalSummary *out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMPRINTLAB_H */
