#ifndef DUALCHAIN_H
#define DUALCHAIN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every call.
 */
typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_UTF8 = 2,
  DC_STATUS_IO = 3,
  DC_STATUS_FORMAT = 4,
  DC_STATUS_UNKNOWN_NAME = 5,
  DC_STATUS_OUT_OF_RANGE = 6,
  DC_STATUS_MISSING_DESCRIPTION = 7,
  DC_STATUS_NON_FINITE = 8,
  DC_STATUS_INVALID_ARGUMENT = 9,
  DC_STATUS_PANIC = 10,
} DcStatus;

/**
 * Which side of a query is missing.
 */
typedef enum DcSide {
  DC_SIDE_HEAD = 0,
  DC_SIDE_TAIL = 1,
} DcSide;

/**
 * Opaque model handle.
 */
typedef struct DcModel DcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file. On success `*out` receives a new handle.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum DcStatus dc_model_load(const char *path, struct DcModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dc_model_load`] and not be used afterwards.
 */
void dc_model_free(struct DcModel *model);

/**
 * Reads entity descriptions (`entity<TAB>text` lines) for models that
 * score by description. Lines for unknown entities are skipped.
 *
 * # Safety
 * `model` must be a live handle and `path` a valid C string.
 */
enum DcStatus dc_model_load_descriptions(struct DcModel *model, const char *path);

/**
 * Writes 1 to `*out` when the model scores by description.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum DcStatus dc_model_needs_descriptions(const struct DcModel *model, uint8_t *out);

/**
 * Number of entities and relations known to the model.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DcStatus dc_model_counts(const struct DcModel *model,
                              uintptr_t *entities,
                              uintptr_t *relations);

/**
 * Looks up an entity id by name.
 *
 * # Safety
 * `model` must be a live handle, `name` a valid C string, `out` valid.
 */
enum DcStatus dc_entity_id(const struct DcModel *model, const char *name, uintptr_t *out);

/**
 * Looks up a relation id by name.
 *
 * # Safety
 * `model` must be a live handle, `name` a valid C string, `out` valid.
 */
enum DcStatus dc_relation_id(const struct DcModel *model, const char *name, uintptr_t *out);

/**
 * Name of an entity id as a C string owned by the handle; valid while the
 * handle lives.
 *
 * # Safety
 * `model` must be a live handle and `out` valid.
 */
enum DcStatus dc_entity_name(const struct DcModel *model, uintptr_t id, const char **out);

/**
 * Scores `n` triplets given as parallel id arrays; higher is more
 * plausible. Scores lie in (0, 1).
 *
 * # Safety
 * `heads`, `relations`, `tails` and `out` must each hold `n` elements.
 */
enum DcStatus dc_score(const struct DcModel *model,
                       const uintptr_t *heads,
                       const uintptr_t *relations,
                       const uintptr_t *tails,
                       uintptr_t n,
                       double *out);

/**
 * Ranks every entity as the missing `side` of (`entity`, `relation`) and
 * writes the best `k` ids and scores, best first. `*written` receives the
 * number of entries filled, at most `k`.
 *
 * # Safety
 * `ids` and `scores` must hold `k` elements; `written` must be valid.
 */
enum DcStatus dc_predict(const struct DcModel *model,
                         enum DcSide side,
                         uintptr_t entity,
                         uintptr_t relation,
                         uintptr_t k,
                         uintptr_t *ids,
                         double *scores,
                         uintptr_t *written);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * is valid until the next call on this thread.
 */
const char *dc_last_error(void);

/**
 * Library version as a static C string.
 */
const char *dc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALCHAIN_H */
