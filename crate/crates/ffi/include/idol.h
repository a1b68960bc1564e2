#ifndef IDOL_H
#define IDOL_H

/* Generated by cbindgen from the idol-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every C-ABI call.
typedef enum IdolStatus {
  IDOL_OK = 0,
  // A precondition on arguments or object state failed.
  IDOL_ERR_CONTRACT = 1,
  // A numerical routine failed to produce a finite result.
  IDOL_ERR_NUMERICAL = 2,
  // A file had the wrong format.
  IDOL_ERR_FORMAT = 3,
  // A theoretical assumption was violated by the inputs.
  IDOL_ERR_ASSUMPTION = 4,
  // The operating system reported an I/O failure.
  IDOL_ERR_IO = 5,
  // A required pointer argument was null.
  IDOL_ERR_NULL_ARGUMENT = 6,
  // A string argument was not valid UTF-8.
  IDOL_ERR_UTF8 = 7,
  // The call panicked; the library state is still consistent.
  IDOL_ERR_PANIC = 8,
} IdolStatus;

// A trained classifier bound to its topology.
typedef struct IdolClassifier IdolClassifier;

// A discovered domain sequence: an exact partition of the pool.
typedef struct IdolSequence IdolSequence;

// A source → intermediates → target shift stream.
typedef struct IdolStream IdolStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread. Never null; the
// pointer stays valid until the next failing call on the same thread.
const char *idol_last_error_message(void);

// Loads a shift stream from the CSV interchange format.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum IdolStatus idol_stream_load_csv(const char *path, struct IdolStream **out);

// Generates a rotated-Gaussians stream (see the `gen` CLI subcommand).
//
// # Safety
// `out` must be a valid pointer.
enum IdolStatus idol_stream_gen_rotated_gaussians(size_t num_classes,
                                                  size_t points_per_domain,
                                                  size_t num_domains,
                                                  double total_angle,
                                                  double noise_sd,
                                                  uint64_t seed,
                                                  struct IdolStream **out);

// Writes a stream in the CSV interchange format.
//
// # Safety
// `stream` must be a live handle and `path` a valid NUL-terminated string.
enum IdolStatus idol_stream_save_csv(const struct IdolStream *stream, const char *path);

// Number of examples in the unindexed intermediate pool.
//
// # Safety
// `stream` must be a live handle; null returns 0.
size_t idol_stream_pool_len(const struct IdolStream *stream);

// Releases a stream handle. Null is a no-op.
//
// # Safety
// `stream` must have come from this library and not been freed before.
void idol_stream_free(struct IdolStream *stream);

// Trains the source model: one hidden ReLU layer of `hidden_width` units
// (0 for logistic regression) under minibatch SGD.
//
// # Safety
// `stream` must be a live handle and `out` a valid pointer.
enum IdolStatus idol_classifier_train_source(const struct IdolStream *stream,
                                             size_t hidden_width,
                                             double lr,
                                             size_t epochs,
                                             size_t batch_size,
                                             uint64_t seed,
                                             struct IdolClassifier **out);

// Loads a classifier saved by `idol_classifier_save` or the CLI.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum IdolStatus idol_classifier_load(const char *path, struct IdolClassifier **out);

// Saves a classifier to the toolkit's parameter file format.
//
// # Safety
// `classifier` must be a live handle and `path` a valid string.
enum IdolStatus idol_classifier_save(const struct IdolClassifier *classifier, const char *path);

// Accuracy of the classifier on the stream's labeled target split.
//
// # Safety
// `classifier` and `stream` must be live handles; `out` a valid pointer.
enum IdolStatus idol_classifier_target_accuracy(const struct IdolClassifier *classifier,
                                                const struct IdolStream *stream,
                                                double *out);

// Releases a classifier handle. Null is a no-op.
//
// # Safety
// `classifier` must have come from this library and not been freed before.
void idol_classifier_free(struct IdolClassifier *classifier);

// Discovers a domain sequence in the stream's pool: coarse scoring with
// `scorer` ("confidence", "manifold", "discriminator", or "progressive"),
// then optional cycle-consistency refinement, using the default budgets.
//
// # Safety
// `stream` and `classifier` must be live handles, `scorer` a valid string,
// and `out` a valid pointer.
enum IdolStatus idol_discover_sequence(const struct IdolStream *stream,
                                       const struct IdolClassifier *classifier,
                                       const char *scorer,
                                       size_t num_domains,
                                       bool refine,
                                       uint64_t seed,
                                       struct IdolSequence **out);

// Loads a sequence file for a pool of `pool_len` examples.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum IdolStatus idol_sequence_load(const char *path, size_t pool_len, struct IdolSequence **out);

// Writes a sequence in the one-domain-per-line format.
//
// # Safety
// `sequence` must be a live handle and `path` a valid string.
enum IdolStatus idol_sequence_save(const struct IdolSequence *sequence, const char *path);

// Number of discovered domains. Null returns 0.
//
// # Safety
// `sequence` must be a live handle or null.
size_t idol_sequence_num_domains(const struct IdolSequence *sequence);

// Borrows the pool indices of domain `m` (0 = most source-like). The
// pointer stays valid until the sequence is freed.
//
// # Safety
// `sequence` must be a live handle; `ids` and `len` valid pointers.
enum IdolStatus idol_sequence_domain(const struct IdolSequence *sequence,
                                     size_t m,
                                     const size_t **ids,
                                     size_t *len);

// Releases a sequence handle. Null is a no-op.
//
// # Safety
// `sequence` must have come from this library and not been freed before.
void idol_sequence_free(struct IdolSequence *sequence);

// Gradually self-trains through the sequence and finally the target.
// Writes the adapted model to `out_model` and, when the stream has target
// labels, the final target accuracy to `out_accuracy`.
//
// # Safety
// All handles must be live; `out_model` and `out_accuracy` valid pointers.
enum IdolStatus idol_gda_walk(const struct IdolClassifier *classifier,
                              const struct IdolStream *stream,
                              const struct IdolSequence *sequence,
                              double keep_frac,
                              double lr,
                              size_t epochs,
                              size_t batch_size,
                              uint64_t seed,
                              struct IdolClassifier **out_model,
                              double *out_accuracy);

// Evaluates the gradual self-training error bound; rejects inputs that
// violate the gradual shift assumption.
//
// # Safety
// `out` must be a valid pointer.
enum IdolStatus idol_theory_bound(double source_loss,
                                  double data_bound,
                                  double norm_bound,
                                  double per_step_shift,
                                  size_t num_steps,
                                  size_t samples_per_domain,
                                  double delta,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IDOL_H */
