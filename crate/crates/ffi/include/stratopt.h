#ifndef STRATOPT_H
#define STRATOPT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StratoptStatus {
  STRATOPT_STATUS_OK = 0,
  STRATOPT_STATUS_NULL_POINTER = 1,
  STRATOPT_STATUS_INVALID_UTF8 = 2,
  STRATOPT_STATUS_INVALID_ARGUMENT = 3,
  STRATOPT_STATUS_BUDGET_EXCEEDED = 4,
  STRATOPT_STATUS_CONFIG = 10,
  STRATOPT_STATUS_COMPILE_REFUSED = 11,
  STRATOPT_STATUS_SCRIPT_GENERATION_FAILED = 12,
  STRATOPT_STATUS_PROVIDER_ABORT = 13,
  STRATOPT_STATUS_RUN_DIR_COLLISION = 14,
  STRATOPT_STATUS_FATAL = 15,
  STRATOPT_STATUS_PANIC = 99,
} StratoptStatus;

typedef enum StratoptToolClass {
  STRATOPT_TOOL_CLASS_REWRITE = 0,
  STRATOPT_TOOL_CLASS_LOWERING = 1,
  STRATOPT_TOOL_CLASS_INVALID = 2,
} StratoptToolClass;

/**
 * Run configuration handle.
 */
typedef struct StratoptConfig StratoptConfig;

/**
 * Budget ledger handle.
 */
typedef struct StratoptLedger StratoptLedger;

/**
 * Result of an optimization run.
 */
typedef struct StratoptResult StratoptResult;

typedef struct StratoptSpeedupStats {
  double geomean;
  double p25;
  double p50;
  double p75;
  double p99;
  size_t count;
} StratoptSpeedupStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Free with
 * `stratopt_string_free`.
 */
char *stratopt_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void stratopt_string_free(char *s);

enum StratoptToolClass stratopt_classify_tool(uint32_t domain, uint32_t range);

struct StratoptLedger *stratopt_ledger_new(uint64_t total);

/**
 * # Safety
 * `ledger` must be NULL or a live handle from `stratopt_ledger_new`.
 */
void stratopt_ledger_free(struct StratoptLedger *ledger);

/**
 * Charges one call of the level agent at `level_ordinal` (1..=3).
 *
 * # Safety
 * `ledger` must be a live handle.
 */
enum StratoptStatus stratopt_ledger_charge_agent(struct StratoptLedger *ledger,
                                                 uint32_t level_ordinal);

/**
 * # Safety
 * `ledger` must be a live handle.
 */
uint64_t stratopt_ledger_spent(const struct StratoptLedger *ledger);

/**
 * # Safety
 * `ledger` must be a live handle.
 */
uint64_t stratopt_ledger_remaining(const struct StratoptLedger *ledger);

/**
 * # Safety
 * `ledger` must be a live handle.
 */
bool stratopt_ledger_is_exhausted(const struct StratoptLedger *ledger);

/**
 * # Safety
 * `values` must point to `len` doubles; `out` must be writable.
 */
enum StratoptStatus stratopt_speedup_stats(const double *values,
                                           size_t len,
                                           struct StratoptSpeedupStats *out);

/**
 * # Safety
 * `runtimes` must point to `len` doubles (or be NULL with `len` 0).
 */
bool stratopt_variability_filter(const double *runtimes,
                                 size_t len,
                                 size_t min_programs,
                                 double threshold);

struct StratoptConfig *stratopt_config_default(void);

/**
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum StratoptStatus stratopt_config_from_toml(const char *toml, struct StratoptConfig **out);

/**
 * # Safety
 * `config` must be NULL or a live handle.
 */
void stratopt_config_free(struct StratoptConfig *config);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum StratoptStatus stratopt_config_set_budget(struct StratoptConfig *config, uint64_t budget);

/**
 * # Safety
 * `config` must be a live handle and `dir` a NUL-terminated string.
 */
enum StratoptStatus stratopt_config_set_run_dir(struct StratoptConfig *config, const char *dir);

/**
 * `mode` is one of `full`, `source-only`, `ir-only`, `assembly-only`.
 *
 * # Safety
 * `config` must be a live handle and `mode` a NUL-terminated string.
 */
enum StratoptStatus stratopt_config_set_mode(struct StratoptConfig *config, const char *mode);

/**
 * The configuration as TOML. Free with `stratopt_string_free`.
 *
 * # Safety
 * `config` must be a live handle.
 */
char *stratopt_config_to_toml(const struct StratoptConfig *config);

/**
 * Runs a full optimization of the C program `source` under `config`.
 *
 * # Safety
 * `config` must be a live handle, `source` a NUL-terminated string and
 * `out` writable.
 */
enum StratoptStatus stratopt_optimize(const struct StratoptConfig *config,
                                      const char *source,
                                      struct StratoptResult **out);

/**
 * # Safety
 * `result` must be NULL or a live handle.
 */
void stratopt_result_free(struct StratoptResult *result);

/**
 * # Safety
 * `result` must be a live handle.
 */
double stratopt_result_speedup(const struct StratoptResult *result);

/**
 * # Safety
 * `result` must be a live handle.
 */
uint64_t stratopt_result_budget_spent(const struct StratoptResult *result);

/**
 * The final assembly program. Free with `stratopt_string_free`.
 *
 * # Safety
 * `result` must be a live handle.
 */
char *stratopt_result_program(const struct StratoptResult *result);

/**
 * The whole result as JSON. Free with `stratopt_string_free`.
 *
 * # Safety
 * `result` must be a live handle.
 */
char *stratopt_result_json(const struct StratoptResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRATOPT_H */
