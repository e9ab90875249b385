#ifndef ADJUSTKIT_H
#define ADJUSTKIT_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit-code contract.
 */
typedef enum AkxStatus {
  /**
   * Success.
   */
  AKX_STATUS_OK = 0,
  /**
   * Null pointer or malformed UTF-8 argument.
   */
  AKX_STATUS_BAD_ARGUMENT = 1,
  /**
   * Configuration error.
   */
  AKX_STATUS_CONFIG = 2,
  /**
   * Data error.
   */
  AKX_STATUS_DATA = 3,
  /**
   * Estimation failure.
   */
  AKX_STATUS_ESTIMATION = 4,
} AkxStatus;

/**
 * A loaded trial dataset (opaque).
 */
typedef struct AkxDataset AkxDataset;

/**
 * A scenario report (opaque).
 */
typedef struct AkxReport AkxReport;

/**
 * An analysis result (opaque).
 */
typedef struct AkxResult AkxResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, or NULL if none. Valid until the
 * next failing call on the same thread.
 */
const char *akx_last_error_message(void);

/**
 * Parse a CSV dataset using a TOML schema declaration. On success writes a
 * new handle to `out`; free it with `akx_dataset_free`.
 *
 * # Safety
 * `csv` and `schema_toml` must be NUL-terminated UTF-8; `out` must be a
 * valid pointer.
 */
enum AkxStatus akx_dataset_from_csv(const char *csv,
                                    const char *schema_toml,
                                    struct AkxDataset **out);

/**
 * Load one of the built-in datasets: "appendix1", "appendix1_missing" or
 * "table2".
 *
 * # Safety
 * `name` must be NUL-terminated UTF-8; `out` must be a valid pointer.
 */
enum AkxStatus akx_dataset_builtin(const char *name, struct AkxDataset **out);

/**
 * Number of participants in the dataset.
 *
 * # Safety
 * `dataset` must be a live handle from this library.
 */
uintptr_t akx_dataset_len(const struct AkxDataset *dataset);

/**
 * # Safety
 * `dataset` must be a handle from this library or NULL; it is invalid
 * afterwards.
 */
void akx_dataset_free(struct AkxDataset *dataset);

/**
 * Run the analysis pipeline described by a TOML configuration (the CLI's
 * config format; the [schema] section is ignored here because the dataset
 * is already constructed). On success writes a new result handle to `out`.
 *
 * # Safety
 * `dataset` must be a live handle; `config_toml` NUL-terminated UTF-8;
 * `out` valid.
 */
enum AkxStatus akx_analyze(const struct AkxDataset *dataset,
                           const char *config_toml,
                           struct AkxResult **out);

/**
 * Point estimate on the estimation scale (log scale for ratio summaries).
 *
 * # Safety
 * `result` must be a live handle.
 */
double akx_result_estimate(const struct AkxResult *result);

/**
 * Standard error on the estimation scale.
 *
 * # Safety
 * `result` must be a live handle.
 */
double akx_result_se(const struct AkxResult *result);

/**
 * Confidence-interval bounds on the estimation scale.
 *
 * # Safety
 * `result` must be a live handle; `lower` and `upper` valid pointers.
 */
enum AkxStatus akx_result_ci(const struct AkxResult *result, double *lower, double *upper);

/**
 * Full result document as JSON. Owned by the result handle; valid until
 * `akx_result_free`.
 *
 * # Safety
 * `result` must be a live handle.
 */
const char *akx_result_json(const struct AkxResult *result);

/**
 * # Safety
 * `result` must be a handle from this library or NULL; invalid afterwards.
 */
void akx_result_free(struct AkxResult *result);

/**
 * Run a built-in demonstration scenario ("collapsibility", "appendix1",
 * "misspecification", "balance"); writes a report handle to `out`.
 *
 * # Safety
 * `name` must be NUL-terminated UTF-8; `out` valid.
 */
enum AkxStatus akx_demo(const char *name, struct AkxReport **out);

/**
 * 1 when every reference row of the report passed, else 0.
 *
 * # Safety
 * `report` must be a live handle.
 */
int32_t akx_report_all_pass(const struct AkxReport *report);

/**
 * Report as JSON; owned by the handle.
 *
 * # Safety
 * `report` must be a live handle.
 */
const char *akx_report_json(const struct AkxReport *report);

/**
 * # Safety
 * `report` must be a handle from this library or NULL; invalid afterwards.
 */
void akx_report_free(struct AkxReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADJUSTKIT_H */
