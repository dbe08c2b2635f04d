#ifndef CRYOALIGN_H
#define CRYOALIGN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result status of every fallible call.
 */
typedef enum CryoStatus {
  /**
   * Success.
   */
  CryoOk = 0,
  /**
   * File could not be read, written, or parsed.
   */
  CryoErrIo = 1,
  /**
   * An argument was null, out of range, or otherwise invalid.
   */
  CryoErrInvalidArgument = 2,
  /**
   * The pipeline ran but found no solution (empty cloud, no keypoints,
   * or coarse alignment failure).
   */
  CryoErrNoSolution = 3,
  /**
   * An internal invariant failed; the library state is still sound.
   */
  CryoErrInternal = 4,
} CryoStatus;

/**
 * Opaque alignment-result handle.
 */
typedef struct CryoAlignment CryoAlignment;

/**
 * Opaque density-map handle.
 */
typedef struct CryoMap CryoMap;

/**
 * Pipeline knobs. Zero/negative fields fall back to the defaults derived
 * from `sampling_interval` (itself defaulting to 5 Å when unset).
 */
typedef struct CryoConfig {
  /**
   * Lattice spacing of the uniform sampling (Å).
   */
  double sampling_interval;
  /**
   * Kernel bandwidth σ (Å); default 2 × interval.
   */
  double bandwidth;
  /**
   * Keypoint clustering radius (Å); default = interval.
   */
  double dbscan_eps;
  /**
   * Minimum cluster size; default 2.
   */
  uint32_t dbscan_min_pts;
  /**
   * Descriptor support radius (Å); default 3 × interval.
   */
  double descriptor_radius;
  /**
   * Coarse inlier bound ε (Å); default = interval.
   */
  double noise_bound;
  /**
   * Lp exponent in (0, 1); default 0.4.
   */
  double p_exponent;
  /**
   * Fine-stage correspondence cutoff (Å); default 3 × interval.
   */
  double max_corr_dist;
  /**
   * Fine-stage outer iteration cap; default 50.
   */
  uint32_t fine_max_iters;
  /**
   * Vector-agreement dot threshold in (0, 1); default 0.5.
   */
  double dot_threshold;
  /**
   * Score pairing radius (Å); default interval/2 + 1e-6.
   */
  double pair_radius;
  /**
   * Occupancy histogram cell (Å); default = interval.
   */
  double grid_cell;
  /**
   * Seed for randomized choices; 0 is a valid seed.
   */
  uint64_t seed;
} CryoConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent error on this thread ("" when none). The
 * pointer remains valid until the next failing call on the same thread.
 */
const char *cryo_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cryo_version(void);

/**
 * Fills `out` with the default configuration (5 Å sampling interval).
 */
enum CryoStatus cryo_config_default(struct CryoConfig *out);

/**
 * Reads an MRC density map from `path` into a new handle.
 */
enum CryoStatus cryo_map_read(const char *path, struct CryoMap **out);

/**
 * Writes a map handle to `path` in MRC format (mode 2, little endian).
 */
enum CryoStatus cryo_map_write(const struct CryoMap *map, const char *path);

/**
 * Synthesizes a Gaussian-blob map: `centers_xyz` is `n` packed (x, y, z)
 * triples; `weights` may be null for uniform weights.
 */
enum CryoStatus cryo_map_synthesize(const double *centers_xyz,
                                    const double *weights,
                                    uintptr_t n,
                                    double resolution,
                                    double voxel_size,
                                    double padding,
                                    struct CryoMap **out);

/**
 * Releases a map handle. Null is ignored.
 */
void cryo_map_free(struct CryoMap *map);

/**
 * Voxel counts of the map along x, y, z.
 */
enum CryoStatus cryo_map_dims(const struct CryoMap *map, uint32_t *out_dims);

/**
 * Contour level of the map (the sampling threshold).
 */
enum CryoStatus cryo_map_contour(const struct CryoMap *map, float *out_level);

/**
 * Overrides the map's contour level.
 */
enum CryoStatus cryo_map_set_contour(struct CryoMap *map, float level);

/**
 * Runs the two-stage global alignment of `src` onto `tgt`. `config` may be
 * null for defaults.
 */
enum CryoStatus cryo_align_global(const struct CryoMap *src,
                                  const struct CryoMap *tgt,
                                  const struct CryoConfig *config,
                                  struct CryoAlignment **out);

/**
 * Releases an alignment handle. Null is ignored.
 */
void cryo_alignment_free(struct CryoAlignment *alignment);

/**
 * Copies the alignment's rigid transform into `out_matrix` as a row-major
 * 4×4 homogeneous matrix (16 doubles).
 */
enum CryoStatus cryo_alignment_matrix(const struct CryoAlignment *alignment, double *out_matrix);

/**
 * Similarity score of the alignment in [0, 1].
 */
enum CryoStatus cryo_alignment_score(const struct CryoAlignment *alignment, double *out_score);

/**
 * Scores a caller-provided transform (row-major 4×4) of `src` against
 * `tgt` without running the pipeline. `config` may be null for defaults.
 */
enum CryoStatus cryo_score_transform(const struct CryoMap *src,
                                     const struct CryoMap *tgt,
                                     const double *matrix,
                                     const struct CryoConfig *config,
                                     double *out_score);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CRYOALIGN_H */
