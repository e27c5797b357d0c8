#ifndef ICP_RESILIENCE_H
#define ICP_RESILIENCE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum IcrStatus {
  ICR_STATUS_OK = 0,
  ICR_STATUS_NULL_POINTER = 1,
  ICR_STATUS_INVALID_ARGUMENT = 2,
  ICR_STATUS_IO = 3,
  ICR_STATUS_PARSE = 4,
  /**
   * The scan does not constrain every pose component.
   */
  ICR_STATUS_DEGENERATE = 5,
  ICR_STATUS_INTERNAL = 6,
} IcrStatus;

typedef enum IcrScene {
  ICR_SCENE_CORRIDOR = 0,
  ICR_SCENE_ROOM = 1,
  ICR_SCENE_INTERSECTION = 2,
} IcrScene;

typedef enum IcrSearchMode {
  ICR_SEARCH_MODE_TOPK = 0,
  ICR_SEARCH_MODE_EXHAUSTIVE = 1,
  ICR_SEARCH_MODE_CONTIGUOUS = 2,
} IcrSearchMode;

/**
 * Opaque map handle.
 */
typedef struct IcrMap IcrMap;

/**
 * Certification parameters. Fill with `icr_certify_options_default`.
 */
typedef struct IcrCertifyOptions {
  double d;
  double sigma;
  uint32_t n_sectors;
  uint32_t scan_points;
  double max_range;
  double p_safe;
  /**
   * Safety radius per component (x, y, z, roll, pitch, yaw); values <= 0
   * leave the component unconstrained.
   */
  double radius[6];
  /**
   * An `IcrSearchMode` value.
   */
  uint32_t mode;
  uint64_t seed;
} IcrCertifyOptions;

typedef struct IcrPoseResult {
  /**
   * Degree of resilience in [0, 1].
   */
  double resilience;
  /**
   * First hazardous sector count, or -1 when no count was hazardous.
   */
  int32_t breaking_k;
  bool degenerate;
  double point_fraction;
  /**
   * Normal-matrix condition number; NaN when unavailable.
   */
  double condition;
} IcrPoseResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *icr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *icr_version(void);

/**
 * Loads a map from a `.csv` or `.ply` file. Normals are estimated from 10
 * neighbours when the file has none.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IcrStatus icr_map_load(const char *path, struct IcrMap **out);

/**
 * Builds a map from `n` points (`xyz`, 3n doubles) and unit normals
 * (`normals`, 3n doubles).
 *
 * # Safety
 * `xyz` and `normals` must point to `3 * n` readable doubles; `out` must be valid.
 */
enum IcrStatus icr_map_from_points(const double *xyz,
                                   const double *normals,
                                   size_t n,
                                   struct IcrMap **out);

/**
 * Generates a built-in synthetic scene (an `IcrScene` value) with its
 * default dimensions.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum IcrStatus icr_map_make_scene(uint32_t kind, uint64_t seed, struct IcrMap **out);

/**
 * Number of points in the map; 0 for NULL.
 *
 * # Safety
 * `map` must be NULL or a live handle.
 */
size_t icr_map_len(const struct IcrMap *map);

/**
 * Releases a map. NULL is ignored.
 *
 * # Safety
 * `map` must be NULL or a handle not yet freed.
 */
void icr_map_free(struct IcrMap *map);

/**
 * d = 0.30 m, sigma = 0.10 m, 30 sectors, 1000 scan points, 30 m range,
 * p_safe = 0.99, r_x = r_y = 0.20 m, top-k search, seed 0.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum IcrStatus icr_certify_options_default(struct IcrCertifyOptions *out);

/**
 * Certifies one pose given as (x, y, z, yaw, pitch, roll). `pose_id` seeds
 * the simulated scan together with `options->seed`, exactly as the CLI does.
 * Degenerate geometry is not an error: it returns `Ok` with `degenerate` set
 * and zero resilience.
 *
 * # Safety
 * `map` must be a live handle, `pose` must point to 6 doubles, `pose_id` must
 * be a NUL-terminated string, `options` and `out` valid pointers.
 */
enum IcrStatus icr_certify_pose(const struct IcrMap *map,
                                const double *pose,
                                const char *pose_id,
                                const struct IcrCertifyOptions *options,
                                struct IcrPoseResult *out);

/**
 * Probability that |e| exceeds `r` when e ~ N(±mu, sigma²). NaN on invalid input.
 */
double icr_hazard_probability(double mu, double sigma, double r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICP_RESILIENCE_H */
