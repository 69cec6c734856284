#ifndef PREDMODEL_H
#define PREDMODEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_UTF8 = 2,
  PM_STATUS_INVALID_ARGUMENT = 3,
  PM_STATUS_IO = 4,
  PM_STATUS_FIT = 5,
  PM_STATUS_PANIC = 6,
} PmStatus;

/**
 * A generated or loaded benchmark instance.
 */
typedef struct PmBench PmBench;

/**
 * The result of one fit.
 */
typedef struct PmFit PmFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *pm_last_error_message(void);

/**
 * Generates a synthetic benchmark. `kind` is one of clustering,
 * timeseries, classification or hierarchy; `params_json` may be NULL.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
enum PmStatus pm_bench_generate(const char *kind,
                                const char *params_json,
                                uint64_t seed,
                                struct PmBench **out);

/**
 * Loads a benchmark directory written by `pm_bench_write` or `gen-bench`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum PmStatus pm_bench_load(const char *dir, const char *kind, struct PmBench **out);

/**
 * # Safety
 * `bench` must come from this library; `dir` must be NUL-terminated.
 */
enum PmStatus pm_bench_write(const struct PmBench *bench, const char *dir);

/**
 * Number of samples, or 0 for NULL.
 *
 * # Safety
 * `bench` must be NULL or come from this library.
 */
size_t pm_bench_len(const struct PmBench *bench);

/**
 * # Safety
 * `bench` must be NULL or come from this library, and not be used again.
 */
void pm_bench_free(struct PmBench *bench);

/**
 * Fits with oracle backends built from the benchmark's tag vocabulary.
 * `config_json` holds `FitConfig` fields (`K`, `S`, `seed`, ...) and may be NULL.
 *
 * # Safety
 * `bench` must come from this library; `out` must be writable.
 */
enum PmStatus pm_fit(const struct PmBench *bench, const char *config_json, struct PmFit **out);

/**
 * # Safety
 * `fit` must come from this library; `out` must be writable.
 */
enum PmStatus pm_fit_fitness(const struct PmFit *fit, double *out);

/**
 * Number of learned predicates, or 0 for NULL.
 *
 * # Safety
 * `fit` must be NULL or come from this library.
 */
size_t pm_fit_predicate_count(const struct PmFit *fit);

/**
 * Text of predicate `index`; release with `pm_string_free`.
 *
 * # Safety
 * `fit` must come from this library; `out` must be writable.
 */
enum PmStatus pm_fit_predicate(const struct PmFit *fit, size_t index, char **out);

/**
 * The full result as JSON; release with `pm_string_free`.
 *
 * # Safety
 * `fit` must come from this library; `out` must be writable.
 */
enum PmStatus pm_fit_to_json(const struct PmFit *fit, char **out);

/**
 * Mean matched F1 of the fit against the benchmark references.
 *
 * # Safety
 * Handles must come from this library; `mean_f1` must be writable.
 */
enum PmStatus pm_evaluate(const struct PmBench *bench, const struct PmFit *fit, double *mean_f1);

/**
 * # Safety
 * `fit` must be NULL or come from this library, and not be used again.
 */
void pm_fit_free(struct PmFit *fit);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void pm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREDMODEL_H */
