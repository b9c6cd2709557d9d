/* SPDX-License-Identifier: Apache-2.0 */

#ifndef BSPB_H
#define BSPB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum BspbStatus {
  BSPB_STATUS_OK = 0,
  BSPB_STATUS_NULL_POINTER = -1,
  BSPB_STATUS_INVALID_ARGUMENT = -2,
  BSPB_STATUS_INPUT_DOMAIN = -3,
  BSPB_STATUS_CONSTRUCTION = -4,
  BSPB_STATUS_CONFIG = -5,
  BSPB_STATUS_CONTRACT = -6,
  BSPB_STATUS_FORMAT = -7,
  BSPB_STATUS_IO = -8,
  BSPB_STATUS_RUNTIME = -9,
  BSPB_STATUS_PANIC = -10,
} BspbStatus;

/**
 * Kernel selector, passed as `int32_t`.
 */
typedef enum BspbKernel {
  BSPB_KERNEL_V = 0,
  BSPB_KERNEL_VGL = 1,
  BSPB_KERNEL_VGH = 2,
} BspbKernel;

/**
 * Coefficient layout selector, passed as `int32_t`.
 */
typedef enum BspbLayout {
  BSPB_LAYOUT_AOS = 0,
  BSPB_LAYOUT_SOA = 1,
  BSPB_LAYOUT_AOSOA = 2,
} BspbLayout;

/**
 * Opaque coefficient table handle.
 */
typedef struct BspbTable BspbTable;

/**
 * Periodic grid: point counts and spacing per axis.
 */
typedef struct BspbGrid {
  size_t nx;
  size_t ny;
  size_t nz;
  double dx;
  double dy;
  double dz;
} BspbGrid;

/**
 * Benchmark parameters; fill with `bspb_bench_config_default` first.
 */
typedef struct BspbBenchConfig {
  size_t n_splines;
  struct BspbGrid grid;
  /**
   * A `BspbLayout` value.
   */
  int32_t layout;
  /**
   * Tile size for `BSPB_LAYOUT_AOSOA`, 0 otherwise.
   */
  size_t tile_size;
  /**
   * 0 selects `threads_total / threads_per_walker`.
   */
  size_t n_walkers;
  size_t samples_per_kernel;
  size_t iterations;
  size_t threads_total;
  size_t threads_per_walker;
  uint64_t seed;
  /**
   * Bit `k` enables the kernel with `BspbKernel` value `k`.
   */
  uint32_t kernel_mask;
  /**
   * Non-zero checks retained outputs against the double-precision oracle.
   */
  uint32_t verify;
} BspbBenchConfig;

/**
 * Timing of one kernel phase; all zero when the kernel did not run.
 */
typedef struct BspbKernelTiming {
  double seconds;
  double throughput;
  uint64_t invocations;
} BspbKernelTiming;

typedef struct BspbBenchSummary {
  size_t n_walkers;
  /**
   * Indexed by `BspbKernel`.
   */
  struct BspbKernelTiming timings[3];
  double generation_seconds;
  size_t table_bytes;
  bool outputs_disjoint;
  bool verified;
  bool verify_passed;
  double max_rel_error;
} BspbBenchSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bspb_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *bspb_last_error_message(void);

/**
 * Output streams written per spline by `kernel` (1, 5 or 10), 0 if unknown.
 */
size_t bspb_stream_count(int32_t kernel);

/**
 * Table with uniform random coefficients in [-1, 1) drawn from `seed`.
 *
 * # Safety
 * `grid` must be null or point to a valid `BspbGrid`; `out` must be null or
 * valid for writing one pointer.
 */
enum BspbStatus bspb_table_new_random(const struct BspbGrid *grid,
                                      size_t n_splines,
                                      uint64_t seed,
                                      int32_t layout,
                                      size_t tile_size,
                                      struct BspbTable **out);

/**
 * Table with every coefficient equal to `value`.
 *
 * # Safety
 * As for `bspb_table_new_random`.
 */
enum BspbStatus bspb_table_new_constant(const struct BspbGrid *grid,
                                        size_t n_splines,
                                        float value,
                                        int32_t layout,
                                        size_t tile_size,
                                        struct BspbTable **out);

/**
 * Table from caller coefficients stored spline-major, `[N][nx][ny][nz]`.
 *
 * # Safety
 * `data` must be null or valid for reading `len` floats; other pointers as
 * for `bspb_table_new_random`.
 */
enum BspbStatus bspb_table_from_aos(const struct BspbGrid *grid,
                                    size_t n_splines,
                                    const float *data,
                                    size_t len,
                                    int32_t layout,
                                    size_t tile_size,
                                    struct BspbTable **out);

/**
 * Loads a table saved by `bspb_table_save`. The file stores counts only, so
 * the spacing is passed as three doubles.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `spacing` null or valid for
 * reading three doubles; `out` as for `bspb_table_new_random`.
 */
enum BspbStatus bspb_table_load(const char *path,
                                const double *spacing,
                                int32_t layout,
                                size_t tile_size,
                                struct BspbTable **out);

/**
 * Saves the table in the binary SoA format. Tiled tables cannot be saved.
 *
 * # Safety
 * `table` must be null or a live handle; `path` null or NUL-terminated.
 */
enum BspbStatus bspb_table_save(const struct BspbTable *table, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `table` must be null or a handle not yet freed.
 */
void bspb_table_free(struct BspbTable *table);

/**
 * Number of splines, 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
size_t bspb_table_n_splines(const struct BspbTable *table);

/**
 * Layout of the table as a `BspbLayout` value, -1 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
int32_t bspb_table_layout(const struct BspbTable *table);

/**
 * Coefficient bytes held by the table (padding included), 0 for null.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
size_t bspb_table_footprint(const struct BspbTable *table);

/**
 * Evaluates `kernel` at `pos`. Streams are written back to back, each
 * `N` long: v; v gx gy gz lap; or v gx gy gz hxx hxy hxz hyy hyz hzz.
 *
 * # Safety
 * `table` null or live; `pos` null or valid for three reads; `out` null or
 * valid for `out_len` writes.
 */
enum BspbStatus bspb_table_eval(const struct BspbTable *table,
                                int32_t kernel,
                                const double *pos,
                                float *out,
                                size_t out_len);

/**
 * Double-precision reference evaluation, same stream order as
 * `bspb_table_eval`.
 *
 * # Safety
 * As for `bspb_table_eval`, with `out` valid for `out_len` doubles.
 */
enum BspbStatus bspb_table_eval_oracle(const struct BspbTable *table,
                                       int32_t kernel,
                                       const double *pos,
                                       double *out,
                                       size_t out_len);

/**
 * `4 N_g N`: coefficient bytes for `n_splines` on `grid`.
 *
 * # Safety
 * `grid` null or valid; `out` null or valid for one write.
 */
enum BspbStatus bspb_input_working_set_bytes(const struct BspbGrid *grid,
                                             size_t n_splines,
                                             size_t *out);

/**
 * `40 N_w N_b`: VGH output bytes for `n_walkers` walkers of `n_splines`.
 */
size_t bspb_vgh_output_bytes(size_t n_walkers, size_t n_splines);

/**
 * Flops per byte of the analytic traffic model, NaN for unknown values.
 */
double bspb_arithmetic_intensity(int32_t kernel, int32_t layout);

/**
 * Fills `cfg` with the library defaults.
 *
 * # Safety
 * `cfg` must be null or valid for one write.
 */
enum BspbStatus bspb_bench_config_default(struct BspbBenchConfig *cfg);

/**
 * Runs the walker benchmark described by `cfg`.
 *
 * # Safety
 * `cfg` null or valid; `summary` null or valid for one write.
 */
enum BspbStatus bspb_bench_run(const struct BspbBenchConfig *cfg, struct BspbBenchSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSPB_H */
