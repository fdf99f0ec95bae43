#ifndef BEAMFORGE_H
#define BEAMFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum BfStatus {
  BF_STATUS_OK = 0,
  BF_STATUS_NULL_POINTER = 1,
  BF_STATUS_INVALID_ARGUMENT = 2,
  BF_STATUS_IO = 3,
  BF_STATUS_FORMAT = 4,
  BF_STATUS_NO_WORK = 5,
  BF_STATUS_LOCK_TIMEOUT = 6,
  BF_STATUS_NOT_CLAIMANT = 7,
  BF_STATUS_BUFFER_TOO_SMALL = 8,
  BF_STATUS_PANIC = 9,
  BF_STATUS_ALREADY_CLAIMING = 10,
} BfStatus;

/**
 * A filterbank block.
 */
typedef struct BfBlock BfBlock;

/**
 * Ranked search candidates.
 */
typedef struct BfCandidates BfCandidates;

/**
 * A shared work-queue directory.
 */
typedef struct BfQueue BfQueue;

typedef struct BfObservation {
  uint32_t n_channels;
  double channel_bw_mhz;
  /**
   * Centre frequency of channel 0, the highest channel.
   */
  double f_highest_mhz;
  double t_samp_ms;
  uint64_t n_samples;
} BfObservation;

typedef struct BfPulsar {
  /**
   * A period of 0 means no pulsar.
   */
  double period_ms;
  double dm;
  double duty_cycle;
  double amplitude;
} BfPulsar;

typedef struct BfSearchOptions {
  size_t n_trials;
  double dm_min;
  double dm_max;
  double snr_threshold;
  size_t max_candidates;
} BfSearchOptions;

typedef struct BfCandidate {
  double snr;
  double period_ms;
  double freq_hz;
  double dm;
  uint64_t fourier_bin;
} BfCandidate;

typedef struct BfQueueCounts {
  uint64_t version;
  size_t available;
  size_t claimed;
  size_t done;
  size_t failed;
} BfQueueCounts;

typedef struct BfMedia {
  double capacity_gb;
  double unit_cost;
  double writer_cost;
  double other_costs;
} BfMedia;

typedef struct BfCostReport {
  double cost_per_gb_max;
  double cost_per_gb_actual;
  double fill_fraction;
  double total_cost;
} BfCostReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *bf_last_error(void);

/**
 * Static, NUL-terminated name of a status code.
 */
const char *bf_status_name(enum BfStatus status);

/**
 * Synthesize 1-bit noise, with a pulsar unless `pulsar` is NULL or has period 0.
 *
 * # Safety
 * `obs` must be valid; `pulsar` may be NULL; `out` must be writable.
 */
enum BfStatus bf_block_synthesize(const struct BfObservation *obs,
                                  const struct BfPulsar *pulsar,
                                  uint64_t seed,
                                  struct BfBlock **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BfStatus bf_block_read(const char *path, struct BfBlock **out);

/**
 * # Safety
 * `block` must come from this library; `path` must be NUL-terminated.
 */
enum BfStatus bf_block_write(const struct BfBlock *block, const char *path);

/**
 * # Safety
 * `block` must come from this library; `out` must be writable.
 */
enum BfStatus bf_block_decimate(const struct BfBlock *block,
                                size_t chan_factor,
                                size_t time_factor,
                                struct BfBlock **out);

/**
 * # Safety
 * `block` must come from this library; `obs` must be writable.
 */
enum BfStatus bf_block_info(const struct BfBlock *block, struct BfObservation *obs);

/**
 * # Safety
 * `block` must come from this library or be NULL; it is invalid afterwards.
 */
void bf_block_free(struct BfBlock *block);

/**
 * Defaults: 450 trials over DM 0 to 700, S/N 8, 50 candidates.
 */
struct BfSearchOptions bf_search_options_default(void);

/**
 * Dedisperse over the DM grid, search every trial and keep the best.
 *
 * # Safety
 * `block` must come from this library; `opts` valid; `out` writable.
 */
enum BfStatus bf_search(const struct BfBlock *block,
                        const struct BfSearchOptions *opts,
                        struct BfCandidates **out);

/**
 * Number of candidates; 0 for NULL.
 *
 * # Safety
 * `c` must come from this library or be NULL.
 */
size_t bf_candidates_len(const struct BfCandidates *c);

/**
 * # Safety
 * `c` must come from this library; `out` writable.
 */
enum BfStatus bf_candidates_get(const struct BfCandidates *c,
                                size_t index,
                                struct BfCandidate *out);

/**
 * # Safety
 * `c` must come from this library or be NULL; it is invalid afterwards.
 */
void bf_candidates_free(struct BfCandidates *c);

/**
 * Open a shared directory. The database need not exist yet.
 *
 * # Safety
 * `shared_dir` must be NUL-terminated; `out` writable.
 */
enum BfStatus bf_queue_open(const char *shared_dir, struct BfQueue **out);

/**
 * Create the database from `n` beam ids and data paths.
 *
 * # Safety
 * `q` from this library; `beam_ids` and `data_paths` hold `n` strings.
 */
enum BfStatus bf_queue_init(const struct BfQueue *q,
                            const char *const *beam_ids,
                            const char *const *data_paths,
                            size_t n,
                            bool overwrite);

/**
 * Claim the next available beam and copy its id into `beam_buf`.
 * Returns `NoWork` when nothing is available and `AlreadyClaiming` when
 * the client still holds a claim.
 *
 * # Safety
 * `q` from this library; `client_id` NUL-terminated; `beam_buf` holds `len` bytes.
 */
enum BfStatus bf_queue_claim_next(const struct BfQueue *q,
                                  const char *client_id,
                                  char *beam_buf,
                                  size_t len);

/**
 * # Safety
 * `q` from this library; strings NUL-terminated.
 */
enum BfStatus bf_queue_mark_done(const struct BfQueue *q,
                                 const char *client_id,
                                 const char *beam_id,
                                 const char *results_path);

/**
 * # Safety
 * `q` from this library; strings NUL-terminated.
 */
enum BfStatus bf_queue_mark_failed(const struct BfQueue *q,
                                   const char *client_id,
                                   const char *beam_id,
                                   const char *reason);

/**
 * # Safety
 * `q` from this library; `requeued` writable or NULL.
 */
enum BfStatus bf_queue_requeue_stale(const struct BfQueue *q,
                                     uint64_t stale_secs,
                                     size_t *requeued);

/**
 * # Safety
 * `q` from this library; `out` writable.
 */
enum BfStatus bf_queue_counts(const struct BfQueue *q, struct BfQueueCounts *out);

/**
 * # Safety
 * `q` must come from this library or be NULL; it is invalid afterwards.
 */
void bf_queue_free(struct BfQueue *q);

/**
 * J2000 (ra, dec) in degrees to Galactic (l, b) in degrees.
 *
 * # Safety
 * `l` and `b` must be writable.
 */
enum BfStatus bf_equatorial_to_galactic(double ra_deg, double dec_deg, double *l, double *b);

/**
 * Minimum detectable flux density (mJy) of the aggregated survey data;
 * infinity when the smeared pulse fills the period.
 *
 * # Safety
 * `smin_mjy` must be writable.
 */
enum BfStatus bf_min_flux_density(double period_ms, double dm, double *smin_mjy);

/**
 * # Safety
 * `media` valid; `out` writable.
 */
enum BfStatus bf_cost_report(double total_data_gb,
                             uint32_t n_units,
                             const struct BfMedia *media,
                             struct BfCostReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEAMFORGE_H */
