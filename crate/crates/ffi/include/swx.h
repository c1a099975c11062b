#ifndef SWX_H
#define SWX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  SWX_STATUS_OK = 0,
  SWX_STATUS_NULL_POINTER = 1,
  SWX_STATUS_INVALID_UTF8 = 2,
  SWX_STATUS_INVALID_DESIGN = 3,
  SWX_STATUS_INVALID_INPUT = 4,
  SWX_STATUS_DOMAIN = 5,
  SWX_STATUS_PARSE = 6,
  SWX_STATUS_PANIC = 7,
} SwxStatus;

/**
 * Opaque design handle.
 */
typedef struct SwxDesign SwxDesign;

/**
 * Monte Carlo settings. `two_sided` is 0 for the upper-tailed test.
 */
typedef struct {
  size_t draws;
  int32_t two_sided;
  uint64_t seed;
} SwxMcOptions;

/**
 * Summary of a randomization test. `degenerate` is 1 when no focal unit was
 * available, in which case `p_value` is 1.
 */
typedef struct {
  double statistic;
  double p_value;
  size_t focal_count;
  size_t sections_used;
  int32_t degenerate;
} SwxTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *swx_last_error(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void swx_string_free(char *s);

/**
 * Build a design from `n_blocks` 1-based switch times and block probabilities.
 *
 * # Safety
 * `switch_times` and `block_probs` must point to `n_blocks` values.
 */
SwxStatus swx_design_new(size_t horizon,
                         const size_t *switch_times,
                         const double *block_probs,
                         size_t n_blocks,
                         SwxDesign **out);

/**
 * The minimax design with `n_blocks` units of length `m` (T = n m).
 *
 * # Safety
 * `out` must be writable.
 */
SwxStatus swx_design_optimal(size_t n_blocks, size_t m, SwxDesign **out);

/**
 * Parse a design from JSON with keys `T`, `switch_times`, `block_probs`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
SwxStatus swx_design_from_json(const char *json, SwxDesign **out);

/**
 * Serialize a design to JSON. Free the result with [`swx_string_free`].
 *
 * # Safety
 * `design` must be a live handle and `out` writable.
 */
SwxStatus swx_design_to_json(const SwxDesign *design, char **out);

/**
 * Horizon T, or 0 for a null handle.
 *
 * # Safety
 * `design` must be null or a live handle.
 */
size_t swx_design_horizon(const SwxDesign *design);

/**
 * Number of blocks, or 0 for a null handle.
 *
 * # Safety
 * `design` must be null or a live handle.
 */
size_t swx_design_n_blocks(const SwxDesign *design);

/**
 * Draw an assignment path into `w` (T bytes of 0 or 1) from stream
 * (`seed`, `stream`).
 *
 * # Safety
 * `design` must be a live handle and `w` must hold `len` bytes.
 */
SwxStatus swx_design_sample(const SwxDesign *design,
                            uint64_t seed,
                            uint64_t stream,
                            uint8_t *w,
                            size_t len);

/**
 * Release a design. Null is ignored.
 *
 * # Safety
 * `design` must come from this library and not have been freed.
 */
void swx_design_free(SwxDesign *design);

/**
 * Total-effect CRT with greedy pooling at burn-in `m`. When `report_json` is
 * not null it receives the full report as JSON.
 *
 * # Safety
 * `y` and `w` must hold `len` values, `options` and `out` must be valid.
 */
SwxStatus swx_test_total(const SwxDesign *design,
                         const double *y,
                         const uint8_t *w,
                         size_t len,
                         size_t m,
                         const SwxMcOptions *options,
                         SwxTestResult *out,
                         char **report_json);

/**
 * m-carryover CRT on the greedy section family for `m`.
 *
 * # Safety
 * As for [`swx_test_total`].
 */
SwxStatus swx_test_carryover(const SwxDesign *design,
                             const double *y,
                             const uint8_t *w,
                             size_t len,
                             size_t m,
                             const SwxMcOptions *options,
                             SwxTestResult *out,
                             char **report_json);

/**
 * Non-anticipation test with a held-out prefix of `holdout` periods.
 *
 * # Safety
 * As for [`swx_test_total`].
 */
SwxStatus swx_test_anticipation(const SwxDesign *design,
                                const double *y,
                                const uint8_t *w,
                                size_t len,
                                size_t holdout,
                                const SwxMcOptions *options,
                                SwxTestResult *out,
                                char **report_json);

/**
 * Sequential estimate of the carryover horizon over levels `0..m_max`.
 *
 * # Safety
 * As for [`swx_test_total`]; `m_hat` must be writable.
 */
SwxStatus swx_sequential_m(const SwxDesign *design,
                           const double *y,
                           const uint8_t *w,
                           size_t len,
                           double alpha,
                           size_t m_max,
                           const SwxMcOptions *options,
                           size_t *m_hat,
                           char **report_json);

/**
 * Total-effect power from JSON inputs; the result is a JSON object.
 *
 * # Safety
 * `inputs_json` must be a NUL-terminated string and `out` writable.
 */
SwxStatus swx_power_total(const char *inputs_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWX_H */
