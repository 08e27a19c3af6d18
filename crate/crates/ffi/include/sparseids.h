#ifndef SPARSEIDS_H
#define SPARSEIDS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SpidStatus {
  SPID_STATUS_OK = 0,
  SPID_STATUS_NULL_POINTER = 1,
  SPID_STATUS_INVALID_UTF8 = 2,
  SPID_STATUS_IO = 3,
  SPID_STATUS_DATA = 4,
  SPID_STATUS_CHECKPOINT = 5,
  SPID_STATUS_TOPOLOGY = 6,
  SPID_STATUS_INVALID_ARGUMENT = 7,
  SPID_STATUS_DIVERGED = 8,
  SPID_STATUS_INTERNAL = 9,
  SPID_STATUS_PANIC = 10,
} SpidStatus;

typedef enum SpidPolicy {
  SPID_POLICY_RL = 0,
  SPID_POLICY_RANDOM = 1,
  SPID_POLICY_RELATIVE_FIRST_M = 2,
  SPID_POLICY_FIRST_M = 3,
  SPID_POLICY_EVERY_ITH = 4,
} SpidPolicy;

// A set of flows.
typedef struct SpidDataset SpidDataset;

// A trained checkpoint.
typedef struct SpidModel SpidModel;

// Tradeoff controller state.
typedef struct SpidSteering SpidSteering;

// Flow-level metrics of one evaluation.
typedef struct SpidMetrics {
  double accuracy;
  double precision;
  double recall;
  double specificity;
  double f1;
  double youden;
  double sparsity;
  uint64_t true_positives;
  uint64_t false_positives;
  uint64_t true_negatives;
  uint64_t false_negatives;
  uint64_t consumed_packets;
  uint64_t total_packets;
} SpidMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *spid_version(void);

// Message of the last failed call on this thread; empty if none. Valid
// until the next failing call on the same thread.
const char *spid_last_error(void);

// Load a per-packet flow CSV.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SpidStatus spid_dataset_load(const char *path, struct SpidDataset **out);

// Generate a synthetic dataset whose attacks differ from benign flows
// only at packet `signal_index`.
//
// # Safety
// `out` must be a valid pointer.
enum SpidStatus spid_dataset_synthetic(size_t flows,
                                       size_t max_len,
                                       size_t signal_index,
                                       uint64_t seed,
                                       struct SpidDataset **out);

// Number of flows; 0 for a null handle.
//
// # Safety
// `ds` must be null or a handle from this library.
size_t spid_dataset_len(const struct SpidDataset *ds);

// # Safety
// `ds` must be null or a handle from this library, not freed before.
void spid_dataset_free(struct SpidDataset *ds);

// Load a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SpidStatus spid_model_load(const char *path, struct SpidModel **out);

// # Safety
// `m` must be null or a handle from this library, not freed before.
void spid_model_free(struct SpidModel *m);

// Number of trainable scalars; 0 for a null handle.
//
// # Safety
// `m` must be null or a handle from this library.
size_t spid_model_param_count(const struct SpidModel *m);

// 1 if the model takes a tradeoff input (trained with uniform alpha).
//
// # Safety
// `m` must be null or a handle from this library.
int32_t spid_model_has_tradeoff(const struct SpidModel *m);

// Evaluate every flow of `ds` under `policy`. `rate` is ignored for the
// RL policy; `avg_len` is used by first-m, and a non-positive value means
// the mean flow length of `ds`. `tradeoff` is ignored by models without a
// tradeoff input.
//
// # Safety
// Handles must come from this library; `out` must be a valid pointer.
enum SpidStatus spid_evaluate(const struct SpidModel *m,
                              const struct SpidDataset *ds,
                              enum SpidPolicy policy,
                              double rate,
                              double avg_len,
                              double tradeoff,
                              uint64_t seed,
                              struct SpidMetrics *out);

// Run flow `index` of `ds` in deployment mode and report the final attack
// confidence and the number of packets consumed.
//
// # Safety
// Handles must come from this library; output pointers must be valid.
enum SpidStatus spid_classify_flow(const struct SpidModel *m,
                                   const struct SpidDataset *ds,
                                   size_t index,
                                   double tradeoff,
                                   double *confidence,
                                   size_t *consumed);

// New tradeoff controller starting at `tradeoff_max`.
//
// # Safety
// `out` must be a valid pointer.
enum SpidStatus spid_steering_new(double tradeoff_max,
                                  double step,
                                  double target,
                                  struct SpidSteering **out);

// Current tradeoff; NaN for a null handle.
//
// # Safety
// `s` must be null or a handle from this library.
double spid_steering_tradeoff(const struct SpidSteering *s);

// Feed the sparsity of a finished window. Returns 1 if the tradeoff was
// lowered, 0 if not, -1 for a null handle.
//
// # Safety
// `s` must be null or a handle from this library.
int32_t spid_steering_step(struct SpidSteering *s, double window_sparsity);

// # Safety
// `s` must be null or a handle from this library, not freed before.
void spid_steering_free(struct SpidSteering *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSEIDS_H */
