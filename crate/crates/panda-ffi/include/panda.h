#ifndef PANDA_H
#define PANDA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code for every fallible call.
 */
typedef enum PandaStatus {
  /**
   * Operation succeeded.
   */
  PandaStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  PandaStatus_NullPointer = 1,
  /**
   * A numeric or string argument was out of range or unrecognized.
   */
  PandaStatus_InvalidArgument = 2,
  /**
   * A string argument was not valid UTF-8.
   */
  PandaStatus_InvalidUtf8 = 3,
  /**
   * Instance generation or parsing failed.
   */
  PandaStatus_ModelError = 4,
  /**
   * The solver rejected its inputs or aborted.
   */
  PandaStatus_SolverError = 5,
  /**
   * The output buffer was too small.
   */
  PandaStatus_BufferTooSmall = 6,
} PandaStatus;

/**
 * Opaque problem-instance handle.
 */
typedef struct PandaInstance PandaInstance;

/**
 * Opaque run-trace handle.
 */
typedef struct PandaTrace PandaTrace;

/**
 * Generate a random least-squares instance. On success writes a handle to
 * `out`; free it with `panda_instance_free`.
 */
enum PandaStatus panda_instance_generate(uintptr_t n,
                                         uintptr_t p,
                                         double cond_cap,
                                         uint64_t seed,
                                         struct PandaInstance **out);

/**
 * Parse an instance from its text serialization (NUL-terminated).
 */
enum PandaStatus panda_instance_from_text(const char *text, struct PandaInstance **out);

/**
 * Number of agents, or 0 for a null handle.
 */
uintptr_t panda_instance_agents(const struct PandaInstance *instance);

/**
 * Local variable dimension, or 0 for a null handle.
 */
uintptr_t panda_instance_dimension(const struct PandaInstance *instance);

void panda_instance_free(struct PandaInstance *instance);

/**
 * Run an algorithm on an instance over an i.i.d. link-failure graph
 * sequence derived from `graph_seed`. `algorithm` is one of "panda",
 * "panda-accel", "diging" or "exact-avg". On success writes a trace handle
 * to `out`; free it with `panda_trace_free`.
 */
enum PandaStatus panda_run(const struct PandaInstance *instance,
                           const char *algorithm,
                           double step_size,
                           double diging_step,
                           double eta,
                           double removal_prob,
                           uint64_t graph_seed,
                           uint64_t iters,
                           struct PandaTrace **out);

/**
 * Number of recorded residuals (rounds completed plus one), or 0 for null.
 */
uintptr_t panda_trace_len(const struct PandaTrace *trace);

/**
 * 1 when the divergence guard stopped the run, 0 otherwise or on null.
 */
int32_t panda_trace_diverged(const struct PandaTrace *trace);

/**
 * Copy the relative residual sequence into `buf` (capacity `len` doubles).
 */
enum PandaStatus panda_trace_residuals(const struct PandaTrace *trace, double *buf, uintptr_t len);

/**
 * Copy the cumulative message counts (one entry per completed round,
 * `panda_trace_len - 1` values) into `buf`.
 */
enum PandaStatus panda_trace_messages(const struct PandaTrace *trace, uint64_t *buf, uintptr_t len);

void panda_trace_free(struct PandaTrace *trace);

#endif  /* PANDA_H */
