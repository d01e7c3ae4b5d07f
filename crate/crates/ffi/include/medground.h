#ifndef MEDGROUND_H
#define MEDGROUND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Status codes returned by every fallible function.
typedef enum MgStatus {
  MG_OK = 0,
  MG_NULL_POINTER = 1,
  MG_INVALID_ARGUMENT = 2,
  MG_SHAPE_MISMATCH = 3,
  MG_IO_ERROR = 4,
  MG_PARSE_ERROR = 5,
  MG_ID_SPACE_MISMATCH = 6,
  MG_INTERNAL_ERROR = 7,
} MgStatus;

// Phrase aggregation rule.
typedef enum MgAggregation {
  MG_AGGREGATE_MEAN = 0,
  MG_AGGREGATE_MAX = 1,
} MgAggregation;

// Evaluation result.
typedef struct MgEvalResult MgEvalResult;

// Dense row-major matrix of doubles.
typedef struct MgMatrix MgMatrix;

// Prompt with its token sequence and phrase spans.
typedef struct MgSpanMap MgSpanMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mg_version(void);

// Message of the last failure on this thread, or NULL.
const char *mg_last_error_message(void);

// Release a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void mg_string_free(char *s);

// IoU of two `[x, y, w, h]` boxes.
//
// # Safety
// `a` and `b` must point to 4 doubles; `out` to one.
enum MgStatus mg_iou(const double *a, const double *b, double *out);

// Copy `rows * cols` doubles (row-major) into a new matrix.
//
// # Safety
// `data` must point to `rows * cols` doubles (or may be NULL when that is 0).
enum MgStatus mg_matrix_new(uintptr_t rows,
                            uintptr_t cols,
                            const double *data,
                            struct MgMatrix **out);

// Read a binary feature-matrix file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum MgStatus mg_matrix_read(const char *path, struct MgMatrix **out);

// # Safety
// `m` must be NULL or a live matrix handle.
void mg_matrix_free(struct MgMatrix *m);

// # Safety
// `m` must be a live matrix handle.
uintptr_t mg_matrix_rows(const struct MgMatrix *m);

// # Safety
// `m` must be a live matrix handle.
uintptr_t mg_matrix_cols(const struct MgMatrix *m);

// Copy the row-major values into `out`, which holds `len` doubles.
//
// # Safety
// `m` must be a live handle; `out` must hold `len` doubles.
enum MgStatus mg_matrix_copy(const struct MgMatrix *m, double *out, uintptr_t len);

// `σ(F · Tᵀ)`.
//
// # Safety
// All pointers must be valid; `out` receives a new handle.
enum MgStatus mg_alignment_scores(const struct MgMatrix *regions,
                                  const struct MgMatrix *tokens,
                                  struct MgMatrix **out);

// Build the `Detect:` prompt from `n` concepts and tokenize it. Padding
// tokens are appended up to `pad_to` (0 for none).
//
// # Safety
// `concepts` must point to `n` NUL-terminated strings.
enum MgStatus mg_prompt_tokenize(const char *const *concepts,
                                 uintptr_t n,
                                 uintptr_t pad_to,
                                 struct MgSpanMap **out);

// # Safety
// `m` must be NULL or a live span-map handle.
void mg_span_map_free(struct MgSpanMap *m);

// # Safety
// `m` must be a live handle.
uintptr_t mg_span_map_token_count(const struct MgSpanMap *m);

// # Safety
// `m` must be a live handle.
uintptr_t mg_span_map_phrase_count(const struct MgSpanMap *m);

// Prompt text; free with `mg_string_free`.
//
// # Safety
// `m` must be a live handle; `out` a valid pointer.
enum MgStatus mg_span_map_prompt(const struct MgSpanMap *m, char **out);

// Span map as JSON; free with `mg_string_free`.
//
// # Safety
// `m` must be a live handle; `out` a valid pointer.
enum MgStatus mg_span_map_to_json(const struct MgSpanMap *m, char **out);

// Phrase-level targets (N×c) to token-level targets (N×M).
//
// # Safety
// All pointers must be valid; `out` receives a new handle.
enum MgStatus mg_expand_targets(const struct MgMatrix *targets,
                                const struct MgSpanMap *spans,
                                struct MgMatrix **out);

// Token scores (N×M) to phrase probabilities (N×c).
//
// # Safety
// All pointers must be valid; `out` receives a new handle.
enum MgStatus mg_aggregate_phrase_probs(const struct MgMatrix *scores,
                                        const struct MgSpanMap *spans,
                                        enum MgAggregation how,
                                        struct MgMatrix **out);

// Mean binary cross-entropy of `input` (logits when `is_logits` is
// nonzero, else probabilities) against same-shaped `targets`.
//
// # Safety
// All pointers must be valid.
enum MgStatus mg_classification_loss(const struct MgMatrix *input,
                                     const struct MgMatrix *targets,
                                     int32_t is_logits,
                                     double *out);

// 101-point interpolated AP of `n` TP (nonzero) / FP (zero) labels in
// descending-confidence order, with `n_gt` ground truths.
//
// # Safety
// `labels` must point to `n` bytes (or may be NULL when `n` is 0).
enum MgStatus mg_average_precision(const uint8_t *labels, uintptr_t n, uintptr_t n_gt, double *out);

// Evaluate a prediction file against a grounding document.
//
// # Safety
// Paths must be NUL-terminated; `out` receives a new handle.
enum MgStatus mg_evaluate_files(const char *gt_path,
                                const char *pred_path,
                                struct MgEvalResult **out);

// Pooled AP and AP50, or a modality's when `modality` is non-NULL.
//
// # Safety
// `r` must be a live handle; `ap` and `ap50` valid pointers.
enum MgStatus mg_eval_result_ap(const struct MgEvalResult *r,
                                const char *modality,
                                double *ap,
                                double *ap50);

// Full result as JSON; free with `mg_string_free`.
//
// # Safety
// `r` must be a live handle; `out` a valid pointer.
enum MgStatus mg_eval_result_to_json(const struct MgEvalResult *r, char **out);

// # Safety
// `r` must be NULL or a live handle.
void mg_eval_result_free(struct MgEvalResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDGROUND_H */
