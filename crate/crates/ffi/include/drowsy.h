#ifndef DROWSY_H
#define DROWSY_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DwStatus {
  DW_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DW_STATUS_ERR_NULL = 1,
  /**
   * An argument was out of range or not valid UTF-8.
   */
  DW_STATUS_ERR_INVALID_ARG = 2,
  /**
   * A stream line or config could not be parsed.
   */
  DW_STATUS_ERR_PARSE = 3,
  DW_STATUS_ERR_IO = 4,
  /**
   * An event was older than the last one appended for its session.
   */
  DW_STATUS_ERR_ORDER = 5,
  /**
   * Internal failure, including a caught panic.
   */
  DW_STATUS_ERR_INTERNAL = 6,
} DwStatus;

/**
 * Opaque detector: fusion state machine plus landmark layout.
 */
typedef struct DwDetector DwDetector;

/**
 * Opaque handle on an append-only event log.
 */
typedef struct DwStore DwStore;

/**
 * Outcome of advancing a detector by one frame.
 */
typedef struct DwStep {
  bool sleepy_frame;
  bool yawn;
  bool alarm;
} DwStep;

/**
 * Running counts of emitted events.
 */
typedef struct DwTotals {
  uint64_t alarms;
  uint64_t yawns;
} DwTotals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
size_t dw_last_error_message(char *buf, size_t len);

double dw_sigmoid(double x);

double dw_swish(double x);

/**
 * Eye aspect ratio of six planar points `p1..p6`, given as
 * `[x1, y1, x2, y2, ..., x6, y6]`.
 *
 * # Safety
 * `xy` must point to 12 readable doubles and `out` to one writable double.
 */
enum DwStatus dw_compute_ear(const double *xy, double *out);

/**
 * Mouth aspect ratio of eight planar points `p1..p8`, given as
 * `[x1, y1, ..., x8, y8]`.
 *
 * # Safety
 * `xy` must point to 16 readable doubles and `out` to one writable double.
 */
enum DwStatus dw_compute_mar(const double *xy, double *out);

/**
 * Creates a detector from a TOML config (the same format the CLI reads),
 * or from defaults when `config_toml` is null.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` must be
 * writable. On success `*out` owns a handle to pass to [`dw_detector_free`].
 */
enum DwStatus dw_detector_new(const char *config_toml, struct DwDetector **out);

/**
 * # Safety
 * `det` must be null or a handle from [`dw_detector_new`] not yet freed.
 */
void dw_detector_free(struct DwDetector *det);

/**
 * Advances the detector by one stream line (a JSON frame record). The
 * line's `prob` field, when present, is the classifier probability.
 *
 * # Safety
 * `det` must be a live handle, `line` a NUL-terminated string, and `out`
 * null or writable.
 */
enum DwStatus dw_detector_step_line(struct DwDetector *det, const char *line, struct DwStep *out);

/**
 * Advances the detector with precomputed signals. A NaN or negative `ear`,
 * `mar` or `prob` marks that signal as unavailable for this frame.
 *
 * # Safety
 * `det` must be a live handle and `out` null or writable.
 */
enum DwStatus dw_detector_step_ratios(struct DwDetector *det,
                                      uint64_t t_ms,
                                      double ear,
                                      double mar,
                                      double prob,
                                      struct DwStep *out);

/**
 * Clears the frame counters; totals survive when `preserve_totals` is set.
 *
 * # Safety
 * `det` must be a live handle.
 */
enum DwStatus dw_detector_reset(struct DwDetector *det, bool preserve_totals);

/**
 * # Safety
 * `det` must be a live handle and `out` writable.
 */
enum DwStatus dw_detector_totals(const struct DwDetector *det, struct DwTotals *out);

/**
 * Opens an event log, creating it unless `read_only` is set.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable. On success
 * `*out` owns a handle to pass to [`dw_store_free`].
 */
enum DwStatus dw_store_open(const char *path, bool read_only, struct DwStore **out);

/**
 * # Safety
 * `store` must be null or a handle from [`dw_store_open`] not yet freed.
 */
void dw_store_free(struct DwStore *store);

/**
 * Appends one event. `kind` is `"yawn"` or `"alarm"`; `wall` is an RFC 3339
 * timestamp, or null to stamp the current time.
 *
 * # Safety
 * `store` must be a live handle; `kind` and `session` NUL-terminated
 * strings; `wall` null or NUL-terminated.
 */
enum DwStatus dw_store_append(struct DwStore *store,
                              const char *kind,
                              uint64_t t_ms,
                              const char *session,
                              const char *wall);

/**
 * Counts events in the log, restricted to `session` when it is non-null.
 *
 * # Safety
 * `store` must be a live handle, `session` null or NUL-terminated, and
 * `out` writable.
 */
enum DwStatus dw_store_summary(const struct DwStore *store,
                               const char *session,
                               struct DwTotals *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DROWSY_H */
