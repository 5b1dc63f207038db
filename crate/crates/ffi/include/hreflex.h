#ifndef HREFLEX_H
#define HREFLEX_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum HrxStatus {
  HRX_STATUS_OK = 0,
  HRX_STATUS_NULL_POINTER = 1,
  HRX_STATUS_INVALID_UTF8 = 2,
  HRX_STATUS_INVALID_ARGUMENT = 3,
  HRX_STATUS_PARSE_ERROR = 4,
  HRX_STATUS_IO = 5,
  HRX_STATUS_STORE = 6,
  HRX_STATUS_ANALYTICS = 7,
  HRX_STATUS_PANIC = 99,
} HrxStatus;

/**
 * State labels as integers. `HRX_STATE_TIE` is only produced by
 * [`hrx_majority_vote`].
 */
typedef enum HrxState {
  HRX_STATE_FATIGUE = 0,
  HRX_STATE_INJURY = 1,
  HRX_STATE_RECOVERY = 2,
  HRX_STATE_NORMAL = 3,
  HRX_STATE_TIE = -1,
} HrxState;

/**
 * Opaque handle to a parsed loss log.
 */
typedef struct HrxLossLog HrxLossLog;

/**
 * Opaque handle to a case store directory.
 */
typedef struct HrxStore HrxStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string. Do not free.
 */
const char *hrx_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Free with
 * [`hrx_string_free`].
 */
char *hrx_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void hrx_string_free(char *s);

/**
 * Parses one model output into assessment JSON.
 *
 * # Safety
 * `raw` and `source_model` must be NUL-terminated strings; `out_json` must be
 * a valid pointer.
 */
enum HrxStatus hrx_parse_assessment(const char *raw, const char *source_model, char **out_json);

/**
 * Parses a reasoning-model answer into `{"assessment": ..., "rationale": ...}`.
 *
 * # Safety
 * `raw` must be a NUL-terminated string; `out_json` must be a valid pointer.
 */
enum HrxStatus hrx_parse_consensus(const char *raw, char **out_json);

/**
 * Strict plurality over `len` state codes; writes `HRX_STATE_TIE` on a tie.
 *
 * # Safety
 * `states` must point to `len` readable `int32_t`; `out_state` must be valid.
 */
enum HrxStatus hrx_majority_vote(const int32_t *states, size_t len, enum HrxState *out_state);

/**
 * Fraction of unordered pairs with equal states (1.0 for one state).
 *
 * # Safety
 * `states` must point to `len` readable `int32_t`; `out_score` must be valid.
 */
enum HrxStatus hrx_agreement(const int32_t *states, size_t len, double *out_score);

/**
 * Partition sizes for `n` ids under integer weights `train:val:test`.
 *
 * # Safety
 * `out_sizes` must point to 3 writable `size_t`.
 */
enum HrxStatus hrx_split_sizes(size_t n,
                               uint32_t train,
                               uint32_t val,
                               uint32_t test,
                               size_t *out_sizes);

/**
 * Opens (creating if needed) a case store.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_store` must be valid.
 */
enum HrxStatus hrx_store_open(const char *path, struct HrxStore **out_store);

/**
 * # Safety
 * `store` must be NULL or a handle from [`hrx_store_open`] not yet freed.
 */
void hrx_store_free(struct HrxStore *store);

/**
 * Number of cases in the store.
 *
 * # Safety
 * `store` must be a live handle; `out_len` must be valid.
 */
enum HrxStatus hrx_store_len(const struct HrxStore *store, size_t *out_len);

/**
 * Ingests one case payload (JSON, same schema as `POST /cases`). Image
 * sources must be embedded `data`; paths are resolved against `base_dir`
 * when it is not NULL. Writes the assigned case id.
 *
 * # Safety
 * `store` must be a live handle; `payload_json` a NUL-terminated string;
 * `base_dir` NULL or a NUL-terminated string; `out_case_id` valid.
 */
enum HrxStatus hrx_store_ingest_json(struct HrxStore *store,
                                     const char *payload_json,
                                     const char *base_dir,
                                     char **out_case_id);

/**
 * Case record as JSON.
 *
 * # Safety
 * `store` must be a live handle; `case_id` a NUL-terminated string;
 * `out_json` valid.
 */
enum HrxStatus hrx_store_get_json(const struct HrxStore *store,
                                  const char *case_id,
                                  char **out_json);

/**
 * Splits every stored case with the default 4:1:1 weights, saves the split
 * in the store and writes it as JSON.
 *
 * # Safety
 * `store` must be a live handle; `out_json` valid.
 */
enum HrxStatus hrx_store_split(struct HrxStore *store, uint64_t seed, char **out_json);

/**
 * Parses loss-log text (line-delimited JSON).
 *
 * # Safety
 * `jsonl` must be a NUL-terminated string; `out_log` valid.
 */
enum HrxStatus hrx_loss_log_parse(const char *jsonl, struct HrxLossLog **out_log);

/**
 * Reads and parses a loss-log file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_log` valid.
 */
enum HrxStatus hrx_loss_log_open(const char *path, struct HrxLossLog **out_log);

/**
 * # Safety
 * `log` must be NULL or a handle from this library not yet freed.
 */
void hrx_loss_log_free(struct HrxLossLog *log);

/**
 * Signed area between validation and training curves.
 *
 * # Safety
 * `log` must be a live handle; `out_abc` valid.
 */
enum HrxStatus hrx_loss_log_abc(const struct HrxLossLog *log, double *out_abc);

/**
 * Full loss report as JSON.
 *
 * # Safety
 * `log` must be a live handle; `out_json` valid.
 */
enum HrxStatus hrx_loss_log_report_json(const struct HrxLossLog *log,
                                        size_t plateau_window,
                                        double plateau_rel_tol,
                                        size_t spike_window,
                                        double spike_threshold,
                                        char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HREFLEX_H */
