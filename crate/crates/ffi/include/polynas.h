#ifndef POLYNAS_H
#define POLYNAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PolynasStatus {
  POLYNAS_STATUS_OK = 0,
  POLYNAS_STATUS_NULL_POINTER = 1,
  POLYNAS_STATUS_INVALID_UTF8 = 2,
  POLYNAS_STATUS_CONFIG = 3,
  POLYNAS_STATUS_TRANSFORM = 4,
  POLYNAS_STATUS_LEGALITY = 5,
  POLYNAS_STATUS_NETWORK = 6,
  POLYNAS_STATUS_PANIC = 7,
} PolynasStatus;

typedef enum PolynasVerdict {
  POLYNAS_VERDICT_LEGAL = 0,
  POLYNAS_VERDICT_ILLEGAL = 1,
  POLYNAS_VERDICT_NOT_APPLICABLE = 2,
} PolynasVerdict;

/**
 * Opaque loop nest.
 */
typedef struct PolynasNest PolynasNest;

/**
 * Opaque network together with the batch its Fisher Potential is scored on.
 */
typedef struct PolynasNetwork PolynasNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or the reason behind a
 * non-legal verdict. Null after any other successful call. The pointer
 * stays valid until the next call into this library on the same thread; do
 * not free it.
 */
const char *polynas_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be freed twice.
 */
void polynas_string_free(char *s);

/**
 * Builds the convolution nest for the given sizes with unit groups and
 * bottleneck factor when those are passed as 0.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum PolynasStatus polynas_nest_from_conv(uintptr_t ci,
                                          uintptr_t co,
                                          uintptr_t h,
                                          uintptr_t w,
                                          uintptr_t kh,
                                          uintptr_t kw,
                                          uintptr_t pad,
                                          uintptr_t stride,
                                          uintptr_t groups,
                                          uintptr_t bottleneck,
                                          struct PolynasNest **out);

/**
 * Builds the convolution nest described by a spec TOML document.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` valid for a pointer write.
 */
enum PolynasStatus polynas_nest_from_toml(const char *toml, struct PolynasNest **out);

/**
 * Applies a transformation sequence written in the DSL and returns the
 * rewritten nest as a new handle. The input handle is unchanged.
 *
 * # Safety
 * `nest` must be a live handle, `sequence` a nul-terminated string and
 * `out` valid for a pointer write.
 */
enum PolynasStatus polynas_nest_apply(const struct PolynasNest *nest,
                                      const char *sequence,
                                      struct PolynasNest **out);

/**
 * Writes the textual dump of `nest`; free it with `polynas_string_free`.
 *
 * # Safety
 * `nest` must be a live handle and `out` valid for a pointer write.
 */
enum PolynasStatus polynas_nest_dump(const struct PolynasNest *nest, char **out);

/**
 * Counts the multiply-accumulates `nest` executes.
 *
 * # Safety
 * `nest` must be a live handle and `out` valid for a write.
 */
enum PolynasStatus polynas_nest_macs(const struct PolynasNest *nest, uint64_t *out);

/**
 * Checks that `transformed` preserves every dependence of `original`.
 * `max_instances` bounds the enumeration; 0 keeps the default cap. A
 * rejected rewrite is reported through `verdict`, not the status, with its
 * reason available from `polynas_last_error`.
 *
 * # Safety
 * Both handles must be live and `verdict` valid for a write.
 */
enum PolynasStatus polynas_nest_check_legality(const struct PolynasNest *original,
                                               const struct PolynasNest *transformed,
                                               uint64_t max_instances,
                                               enum PolynasVerdict *verdict);

/**
 * Releases a nest handle. Null is ignored.
 *
 * # Safety
 * `nest` must come from this library and must not be freed twice.
 */
void polynas_nest_free(struct PolynasNest *nest);

/**
 * Builds a network and its scoring batch from a network TOML document.
 * Batch files, if any, resolve relative to the working directory.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` valid for a pointer write.
 */
enum PolynasStatus polynas_network_from_toml(const char *toml, struct PolynasNetwork **out);

/**
 * Writes the Fisher Potential of the network at initialisation.
 *
 * # Safety
 * `network` must be a live handle and `out` valid for a write.
 */
enum PolynasStatus polynas_network_fisher(const struct PolynasNetwork *network, double *out);

/**
 * Releases a network handle. Null is ignored.
 *
 * # Safety
 * `network` must come from this library and must not be freed twice.
 */
void polynas_network_free(struct PolynasNetwork *network);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYNAS_H */
