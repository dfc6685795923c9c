#ifndef GPC_ITR_H
#define GPC_ITR_H

#include <stddef.h>
#include <stdint.h>

typedef enum GpcStatus {
  GPC_STATUS_OK = 0,
  GPC_STATUS_NULL_POINTER = 1,
  GPC_STATUS_INVALID_ARGUMENT = 2,
  GPC_STATUS_VALIDATION = 3,
  GPC_STATUS_RUNTIME = 4,
  GPC_STATUS_PANIC = 5,
} GpcStatus;

typedef enum GpcOutcomeKind {
  GPC_OUTCOME_KIND_BINARY = 0,
  GPC_OUTCOME_KIND_CONTINUOUS = 1,
  GPC_OUTCOME_KIND_ORDINAL = 2,
} GpcOutcomeKind;

typedef enum GpcDirection {
  GPC_DIRECTION_HIGHER_IS_BETTER = 0,
  GPC_DIRECTION_LOWER_IS_BETTER = 1,
} GpcDirection;

/*
 Two-arm trial with numeric covariates and outcomes.
 */
typedef struct GpcDataset GpcDataset;

/*
 Fitted treatment rule.
 */
typedef struct GpcModel GpcModel;

/*
 Outcome hierarchy used to compare two subjects.
 */
typedef struct GpcScoreSpec GpcScoreSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *gpc_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *gpc_version(void);

/*
 Builds an outcome hierarchy from `n_levels` parallel arrays, highest
 priority first. Thresholds must be zero for binary and ordinal levels.

 # Safety
 Each array must hold `n_levels` elements; `out` must be writable.
 */
enum GpcStatus gpc_score_spec_new(const enum GpcOutcomeKind *kinds,
                                  const enum GpcDirection *directions,
                                  const double *thresholds,
                                  uintptr_t n_levels,
                                  struct GpcScoreSpec **out);

/*
 # Safety
 `spec` must come from [`gpc_score_spec_new`] or be null.
 */
void gpc_score_spec_free(struct GpcScoreSpec *spec);

/*
 Pairwise score of outcome vector `v` (experimental) against `y` (control):
 +1, 0 or -1.

 # Safety
 `y` and `v` must hold `n_levels` elements; `out` must be writable.
 */
enum GpcStatus gpc_score(const struct GpcScoreSpec *spec,
                         const double *y,
                         const double *v,
                         uintptr_t n_levels,
                         int8_t *out);

/*
 Builds a trial from row-major matrices: `control_x` is `m x d`,
 `control_y` is `m x k`, `experimental_u` is `n x d` and `experimental_v`
 is `n x k`.

 # Safety
 Each matrix must hold the stated number of elements; `out` must be writable.
 */
enum GpcStatus gpc_dataset_new(const double *control_x,
                               const double *control_y,
                               uintptr_t m,
                               const double *experimental_u,
                               const double *experimental_v,
                               uintptr_t n,
                               uintptr_t d,
                               uintptr_t k,
                               struct GpcDataset **out);

/*
 # Safety
 `data` must come from [`gpc_dataset_new`] or be null.
 */
void gpc_dataset_free(struct GpcDataset *data);

/*
 Net benefit: mean pairwise score over all control/experimental pairs.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum GpcStatus gpc_net_benefit(const struct GpcDataset *data,
                               const struct GpcScoreSpec *spec,
                               double *out);

/*
 Nearest-neighbour rule with `c` control and `e` experimental neighbours;
 zero selects the default count for that arm.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum GpcStatus gpc_fit_knn(const struct GpcDataset *data,
                           const struct GpcScoreSpec *spec,
                           uintptr_t c,
                           uintptr_t e,
                           struct GpcModel **out);

/*
 Random forest on every control/experimental pair. Zero for `n_trees`,
 `mtry` or `min_leaf` selects the default.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum GpcStatus gpc_fit_forest(const struct GpcDataset *data,
                              const struct GpcScoreSpec *spec,
                              uintptr_t n_trees,
                              uintptr_t mtry,
                              uintptr_t min_leaf,
                              uint64_t seed,
                              struct GpcModel **out);

/*
 Bagged forests on matched-pair subsamples. `q <= 0` selects the default
 subsampling probability; zero `bags` selects the default bag count.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum GpcStatus gpc_fit_bagged(const struct GpcDataset *data,
                              const struct GpcScoreSpec *spec,
                              uintptr_t bags,
                              double q,
                              uintptr_t n_trees,
                              uintptr_t mtry,
                              uintptr_t min_leaf,
                              uint64_t seed,
                              struct GpcModel **out);

/*
 Number of covariates the model expects.

 # Safety
 `model` must be live; `out` must be writable.
 */
enum GpcStatus gpc_model_dim(const struct GpcModel *model, uintptr_t *out);

/*
 Individualized pairwise benefit for each row of the `n_rows x d` matrix.

 # Safety
 `x` must hold `n_rows * d` elements and `out` `n_rows`.
 */
enum GpcStatus gpc_model_ipb(const struct GpcModel *model,
                             const double *x,
                             uintptr_t n_rows,
                             uintptr_t d,
                             double *out);

/*
 Recommended arm (1 experimental, 0 control) for each row.

 # Safety
 `x` must hold `n_rows * d` elements and `out` `n_rows`.
 */
enum GpcStatus gpc_model_rule(const struct GpcModel *model,
                              const double *x,
                              uintptr_t n_rows,
                              uintptr_t d,
                              uint8_t *out);

/*
 # Safety
 `model` must be live; `path` a NUL-terminated UTF-8 string.
 */
enum GpcStatus gpc_model_save(const struct GpcModel *model, const char *path);

/*
 # Safety
 `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum GpcStatus gpc_model_load(const char *path, struct GpcModel **out);

/*
 # Safety
 `model` must come from a fit or load function, or be null.
 */
void gpc_model_free(struct GpcModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPC_ITR_H */
