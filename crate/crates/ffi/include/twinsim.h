#ifndef TWINSIM_H
#define TWINSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible call.
typedef enum TwinsimStatus {
  TWINSIM_STATUS_OK = 0,
  TWINSIM_STATUS_NULL_POINTER = 1,
  TWINSIM_STATUS_INVALID_UTF8 = 2,
  TWINSIM_STATUS_CONFIG_ERROR = 3,
  TWINSIM_STATUS_IO_ERROR = 4,
  TWINSIM_STATUS_PANIC = 5,
  TWINSIM_STATUS_RUN_FAILED = 6,
} TwinsimStatus;

// Run parameters. Opaque.
typedef struct TwinsimConfig TwinsimConfig;

// A finished run. Opaque.
typedef struct TwinsimRun TwinsimRun;

// Headline metrics of a run. Optional values carry a `has_` flag; the
// value is 0 when the flag is false.
typedef struct TwinsimMetrics {
  bool has_avg_tx_latency;
  double avg_tx_latency;
  bool has_avg_inter_block_time;
  double avg_inter_block_time;
  double throughput;
  uint64_t blocks;
  uint64_t committed_txs;
  uint64_t generated_txs;
  double runtime;
  // Twin decisions logged; 0 outside dynamic mode.
  uint64_t decisions;
  // Decisions that switched protocol.
  uint64_t switches;
  uint64_t quorum_violations;
  uint64_t conflicts;
} TwinsimMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a
// success. Valid until the next call into this library on the same thread.
const char *twinsim_last_error(void);

// Library version as a static NUL-terminated string.
const char *twinsim_version(void);

// A config holding the default parameters. Never NULL.
struct TwinsimConfig *twinsim_config_default(void);

// Parse `key = value` config text into a new handle stored in `*out`.
//
// # Safety
// `text` must be NULL or a valid NUL-terminated string; `out` must be NULL
// or valid for writes.
enum TwinsimStatus twinsim_config_from_str(const char *text, struct TwinsimConfig **out);

// Read a config file into a new handle stored in `*out`.
//
// # Safety
// As for [`twinsim_config_from_str`], with `path` in place of `text`.
enum TwinsimStatus twinsim_config_from_file(const char *path, struct TwinsimConfig **out);

// Set one parameter from its textual form, as in a config file. The whole
// config is validated again when it is run.
//
// # Safety
// `cfg` must be NULL or a live handle; `key` and `value` must be NULL or
// valid NUL-terminated strings.
enum TwinsimStatus twinsim_config_set(struct TwinsimConfig *cfg,
                                      const char *key,
                                      const char *value);

// Check every invariant of the config.
//
// # Safety
// `cfg` must be NULL or a live handle.
enum TwinsimStatus twinsim_config_validate(const struct TwinsimConfig *cfg);

// # Safety
// `cfg` must be NULL or a handle not yet freed.
void twinsim_config_free(struct TwinsimConfig *cfg);

// Simulate `cfg` to completion and store the result in `*out`. Blocks the
// calling thread; independent runs may proceed on separate threads.
//
// # Safety
// `cfg` must be NULL or a live handle; `out` must be NULL or valid for
// writes.
enum TwinsimStatus twinsim_run(const struct TwinsimConfig *cfg, struct TwinsimRun **out);

// Fill `*out` with the run's metrics and counters.
//
// # Safety
// `run` must be NULL or a live handle; `out` must be NULL or valid for
// writes.
enum TwinsimStatus twinsim_run_metrics(const struct TwinsimRun *run, struct TwinsimMetrics *out);

// The twin's decision log as JSON lines, in a new string stored in `*out`
// and released with [`twinsim_string_free`]. Empty outside dynamic mode.
//
// # Safety
// `run` must be NULL or a live handle; `out` must be NULL or valid for
// writes.
enum TwinsimStatus twinsim_run_decisions_jsonl(const struct TwinsimRun *run, char **out);

// Write the run's artifacts (`metrics.csv`, `blocks.csv`, `summary.json`,
// and `decisions.jsonl` in dynamic mode) into directory `dir`.
//
// # Safety
// `run` must be NULL or a live handle; `dir` must be NULL or a valid
// NUL-terminated string.
enum TwinsimStatus twinsim_run_write_outputs(const struct TwinsimRun *run,
                                             const char *dir,
                                             bool dump_chain);

// # Safety
// `run` must be NULL or a handle not yet freed.
void twinsim_run_free(struct TwinsimRun *run);

// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void twinsim_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWINSIM_H */
