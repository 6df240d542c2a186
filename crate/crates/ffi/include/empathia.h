#ifndef EMPATHIA_H
#define EMPATHIA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EmpStatus {
  EMP_STATUS_OK = 0,
  EMP_STATUS_NULL_ARGUMENT = 1,
  EMP_STATUS_INVALID_UTF8 = 2,
  EMP_STATUS_IO = 3,
  EMP_STATUS_CHECKPOINT = 4,
  EMP_STATUS_INVALID_INPUT = 5,
  EMP_STATUS_METRIC = 6,
  EMP_STATUS_INTERNAL = 7,
  EMP_STATUS_PANIC = 8,
} EmpStatus;

/**
 * Loaded models, template bank and decoding settings.
 */
typedef struct EmpEngine EmpEngine;

/**
 * One conversation driven by an engine.
 */
typedef struct EmpSession EmpSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *emp_last_error(void);

/**
 * Library version as a static string.
 */
const char *emp_version(void);

/**
 * Load an engine from two checkpoints. `templates` may be null for the
 * built-in bank.
 *
 * # Safety
 * String arguments must be null or valid NUL-terminated strings; `out`
 * must be a valid pointer.
 */
enum EmpStatus emp_engine_load(const char *emotion_ckpt,
                               const char *generator_ckpt,
                               const char *templates,
                               struct EmpEngine **out);

/**
 * Engine backed by keyword rules and canned replies, for wiring tests.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EmpStatus emp_engine_scripted(struct EmpEngine **out);

/**
 * # Safety
 * `engine` must come from an `emp_engine_*` constructor and not be freed twice.
 */
void emp_engine_free(struct EmpEngine *engine);

/**
 * Start a session. Sessions keep the engine alive independently.
 *
 * # Safety
 * `engine` must be a live handle, `id` a valid string, `out` a valid pointer.
 */
enum EmpStatus emp_session_new(const struct EmpEngine *engine,
                               const char *id,
                               uint64_t seed,
                               struct EmpSession **out);

/**
 * # Safety
 * `session` must come from `emp_session_new` and not be freed twice.
 */
void emp_session_free(struct EmpSession *session);

/**
 * Advance the session by one user turn. On success `*reply_json` receives
 * `{"text": …, "meta": {label, probs, cause, strategy, phase, source}}`.
 *
 * # Safety
 * `session` must be a live handle; `text` a valid string; `reply_json` a
 * valid pointer.
 */
enum EmpStatus emp_session_step(struct EmpSession *session, const char *text, char **reply_json);

/**
 * Number of utterances recorded in the session.
 *
 * # Safety
 * `session` must be a live handle or null.
 */
size_t emp_session_turns(const struct EmpSession *session);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void emp_string_free(char *s);

/**
 * `(up − down) / (up + down)`; fails with `Metric` when there are no votes.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EmpStatus emp_nsv(uint64_t up, uint64_t down, double *out);

/**
 * Pooled distinct-n over `count` response strings, tokenized internally.
 *
 * # Safety
 * `responses` must point to `count` valid strings; `out` must be valid.
 */
enum EmpStatus emp_distinct_n(const char *const *responses, size_t count, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMPATHIA_H */
