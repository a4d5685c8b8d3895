#ifndef CODED_ARQ_H
#define CODED_ARQ_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CarqStatus {
  CARQ_STATUS_OK = 0,
  CARQ_STATUS_NULL_POINTER = 1,
  CARQ_STATUS_DOMAIN = 2,
  CARQ_STATUS_DEGENERATE_CHAIN = 3,
  CARQ_STATUS_DIMENSION = 4,
  CARQ_STATUS_NON_CONVERGENT = 5,
  CARQ_STATUS_TRUNCATION = 6,
  CARQ_STATUS_IMPROPER_MGF = 7,
  CARQ_STATUS_GRAPH = 8,
  CARQ_STATUS_PANIC = 9,
} CarqStatus;

typedef enum CarqScheme {
  CARQ_SCHEME_UNCODED = 0,
  CARQ_SCHEME_HARQ = 1,
  CARQ_SCHEME_CODED = 2,
} CarqScheme;

// Opaque composite forward/reverse channel.
typedef struct CarqChannel CarqChannel;

// One direction of a Gilbert-Elliott channel.
typedef struct CarqGe {
  double r;
  double eps_g;
  double eps_b;
  // Average block-error rate.
  double eps;
} CarqGe;

typedef struct CarqParams {
  enum CarqScheme scheme;
  uint32_t k;
  uint32_t timeout;
  // Ignored unless `scheme` is coded.
  uint32_t frame_size;
  // Ignored unless `scheme` is coded.
  uint32_t dof;
  // Ignored unless `scheme` is HARQ.
  double gamma_over_rho;
} CarqParams;

typedef struct CarqMetrics {
  double throughput;
  double tau_mean;
  double delay_mean;
  double frame_tau_mean;
  double frame_delay_mean;
  double mgf_tau;
  double mgf_delay;
} CarqMetrics;

typedef struct CarqSimStats {
  double tau_mean;
  double tau_stderr;
  double delay_mean;
  double delay_stderr;
  double throughput;
  double throughput_stderr;
  uint64_t delivered;
  uint64_t slots_elapsed;
} CarqSimStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds a channel from forward and reverse parameters.
//
// # Safety
// `forward` and `reverse` must point to valid `CarqGe` values and `out` to writable
// storage for one pointer. On success `*out` owns a handle to release with
// [`carq_channel_free`].
enum CarqStatus carq_channel_new(const struct CarqGe *forward,
                                 const struct CarqGe *reverse,
                                 struct CarqChannel **out);

// # Safety
// `channel` must be null or a handle from [`carq_channel_new`] not yet freed.
void carq_channel_free(struct CarqChannel *channel);

// Forward block-error rate of the channel, or NaN for a null handle.
//
// # Safety
// `channel` must be null or a live handle.
double carq_channel_eps(const struct CarqChannel *channel);

// Analytic throughput and delay. Per-packet values for coded frames are the frame
// values divided by the frame size.
//
// # Safety
// `channel` must be a live handle, `params` valid and `out` writable.
enum CarqStatus carq_analyze(const struct CarqChannel *channel,
                             const struct CarqParams *params,
                             struct CarqMetrics *out);

// Runs one simulation of `horizon` delivered packets.
//
// # Safety
// `params`, `forward` and `reverse` must be valid and `out` writable.
enum CarqStatus carq_simulate(const struct CarqParams *params,
                              const struct CarqGe *forward,
                              const struct CarqGe *reverse,
                              uint64_t seed,
                              uint64_t horizon,
                              struct CarqSimStats *out);

// Message of the last failure on this thread, or null. The pointer stays valid until
// the next failing call on the same thread.
const char *carq_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CODED_ARQ_H */
