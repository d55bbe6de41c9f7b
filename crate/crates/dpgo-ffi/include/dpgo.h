#ifndef DPGO_H
#define DPGO_H

/* Generated by cbindgen from crates/dpgo-ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DpgoInit {
  DPGO_INIT_SPANNING_TREE = 0,
  DPGO_INIT_CHORDAL = 1,
  DPGO_INIT_RANDOM = 2,
} DpgoInit;

typedef enum DpgoSelection {
  DPGO_SELECTION_UNIFORM = 0,
  DPGO_SELECTION_IMPORTANCE = 1,
  DPGO_SELECTION_GREEDY = 2,
} DpgoSelection;

typedef enum DpgoStatus {
  DPGO_STATUS_OK = 0,
  DPGO_STATUS_NULL_ARGUMENT = 1,
  DPGO_STATUS_INVALID_UTF8 = 2,
  DPGO_STATUS_IO = 3,
  DPGO_STATUS_PARSE = 4,
  DPGO_STATUS_INVALID_INPUT = 5,
  DPGO_STATUS_NUMERICAL = 6,
  DPGO_STATUS_OUT_OF_RANGE = 7,
  DPGO_STATUS_PANIC = 8,
} DpgoStatus;

/**
 * Solver configuration.
 */
typedef struct DpgoConfig DpgoConfig;

/**
 * A pose graph with robot ownership.
 */
typedef struct DpgoGraph DpgoGraph;

/**
 * Outcome of a solve.
 */
typedef struct DpgoResult DpgoResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *dpgo_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *dpgo_version(void);

/**
 * Reads a g2o file and splits its poses among `robots` contiguous ranges.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DpgoStatus dpgo_graph_from_g2o_file(const char *path, size_t robots, struct DpgoGraph **out);

/**
 * Parses g2o text; see [`dpgo_graph_from_g2o_file`].
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DpgoStatus dpgo_graph_from_g2o_text(const char *text, size_t robots, struct DpgoGraph **out);

/**
 * Simulated multi-robot grid (`preset` is grid9, grid4, plane9 or a TOML path).
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DpgoStatus dpgo_graph_simulate(const char *preset, uint64_t seed, struct DpgoGraph **out);

/**
 * # Safety
 * `g` must be NULL or a live graph handle.
 */
size_t dpgo_graph_num_poses(const struct DpgoGraph *g);

/**
 * # Safety
 * `g` must be NULL or a live graph handle.
 */
size_t dpgo_graph_num_edges(const struct DpgoGraph *g);

/**
 * # Safety
 * `g` must be NULL or a live graph handle.
 */
size_t dpgo_graph_num_robots(const struct DpgoGraph *g);

/**
 * # Safety
 * `g` must be NULL or a live graph handle.
 */
size_t dpgo_graph_dimension(const struct DpgoGraph *g);

/**
 * # Safety
 * `g` must be NULL or a handle not yet freed.
 */
void dpgo_graph_free(struct DpgoGraph *g);

/**
 * Default configuration.
 */
struct DpgoConfig *dpgo_config_new(void);

/**
 * Configuration from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DpgoStatus dpgo_config_from_toml(const char *text, struct DpgoConfig **out);

/**
 * Seed of the solver and the block selection.
 *
 * # Safety
 * `c` must be a live configuration handle.
 */
enum DpgoStatus dpgo_config_set_seed(struct DpgoConfig *c, uint64_t seed);

/**
 * # Safety
 * `c` must be a live configuration handle.
 */
enum DpgoStatus dpgo_config_set_selection(struct DpgoConfig *c, enum DpgoSelection s);

/**
 * # Safety
 * `c` must be a live configuration handle.
 */
enum DpgoStatus dpgo_config_set_init(struct DpgoConfig *c, enum DpgoInit i);

/**
 * # Safety
 * `c` must be a live configuration handle.
 */
enum DpgoStatus dpgo_config_set_grad_tol(struct DpgoConfig *c, double tol);

/**
 * `accelerated = false` selects plain block-coordinate descent.
 *
 * # Safety
 * `c` must be a live configuration handle.
 */
enum DpgoStatus dpgo_config_set_accelerated(struct DpgoConfig *c, bool accelerated);

/**
 * Rank range of the staircase; `0` keeps the default.
 *
 * # Safety
 * `c` must be a live configuration handle.
 */
enum DpgoStatus dpgo_config_set_ranks(struct DpgoConfig *c, size_t r0, size_t r_max);

/**
 * # Safety
 * `c` must be NULL or a handle not yet freed.
 */
void dpgo_config_free(struct DpgoConfig *c);

/**
 * Solves and certifies. With `distributed`, robots run as simulated agents
 * exchanging messages; the result is identical.
 *
 * # Safety
 * `g` and `c` must be live handles; `c` may be NULL for the defaults.
 */
enum DpgoStatus dpgo_solve(const struct DpgoGraph *g,
                           const struct DpgoConfig *c,
                           bool distributed,
                           struct DpgoResult **out);

/**
 * # Safety
 * `r` must be NULL or a live result handle.
 */
bool dpgo_result_certified(const struct DpgoResult *r);

/**
 * `⟨Q, XᵀX⟩` at the final iterate; NaN for NULL.
 *
 * # Safety
 * `r` must be NULL or a live result handle.
 */
double dpgo_result_f_sdp(const struct DpgoResult *r);

/**
 * Cost of the rounded poses; NaN for NULL.
 *
 * # Safety
 * `r` must be NULL or a live result handle.
 */
double dpgo_result_f_rounded(const struct DpgoResult *r);

/**
 * # Safety
 * `r` must be NULL or a live result handle.
 */
double dpgo_result_lambda_min(const struct DpgoResult *r);

/**
 * # Safety
 * `r` must be NULL or a live result handle.
 */
size_t dpgo_result_final_rank(const struct DpgoResult *r);

/**
 * # Safety
 * `r` must be NULL or a live result handle.
 */
size_t dpgo_result_num_poses(const struct DpgoResult *r);

/**
 * Copies pose `i`: `d·d` rotation entries (row-major) and `d` translation entries.
 *
 * # Safety
 * `rotation` must hold `d·d` and `translation` `d` doubles, where `d` is the
 * graph dimension.
 */
enum DpgoStatus dpgo_result_pose(const struct DpgoResult *r,
                                 size_t i,
                                 double *rotation,
                                 double *translation);

/**
 * Full report as JSON; free with [`dpgo_string_free`]. NULL on failure.
 *
 * # Safety
 * `r` must be NULL or a live result handle.
 */
char *dpgo_result_report_json(const struct DpgoResult *r);

/**
 * # Safety
 * `r` must be NULL or a handle not yet freed.
 */
void dpgo_result_free(struct DpgoResult *r);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void dpgo_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPGO_H */
