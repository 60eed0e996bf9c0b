#ifndef SIGNFL_H
#define SIGNFL_H

#include <stddef.h>
#include <stdint.h>

typedef enum SignflStatus {
  SIGNFL_STATUS_OK = 0,
  SIGNFL_STATUS_NULL_POINTER = 1,
  SIGNFL_STATUS_INVALID_ARGUMENT = 2,
  SIGNFL_STATUS_CONFIG = 3,
  SIGNFL_STATUS_IO = 4,
  SIGNFL_STATUS_BUFFER_TOO_SMALL = 5,
  SIGNFL_STATUS_UNAVAILABLE = 6,
  SIGNFL_STATUS_PANIC = 7,
} SignflStatus;

/**
 * A seeded stochastic sign compressor.
 */
typedef struct SignflCompressor SignflCompressor;

/**
 * A validated experiment with its task built.
 */
typedef struct SignflExperiment SignflExperiment;

/**
 * Per-round records and the final model of one run.
 */
typedef struct SignflTrajectory SignflTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *signfl_last_error(void);

/**
 * Probability that the compressor emits `+1` for coordinate value `g`.
 *
 * # Safety
 * `out` must be null or valid for one write.
 */
enum SignflStatus signfl_prob_plus_one(double g, double clip_bound, double beta, double *out);

/**
 * Worst-case per-round ε for dimension `dim`; `+inf` when `beta = 0`.
 *
 * # Safety
 * `out` must be null or valid for one write.
 */
enum SignflStatus signfl_epsilon_worst_case(double clip_bound,
                                            double beta,
                                            size_t dim,
                                            double *out);

/**
 * Majority vote over a row-major `rows × cols` matrix of `±1` entries.
 * Writes `cols` values in `{-1, 0, +1}` to `out`.
 *
 * # Safety
 * `matrix` must hold `rows * cols` values and `out` room for `cols`.
 */
enum SignflStatus signfl_aggregate_majority(const int8_t *matrix,
                                            size_t rows,
                                            size_t cols,
                                            int8_t *out);

/**
 * # Safety
 * `out` must be null or valid for one write.
 */
enum SignflStatus signfl_compressor_new(double clip_bound,
                                        double beta,
                                        uint64_t seed,
                                        struct SignflCompressor **out);

/**
 * Compresses `dim` coordinates of `g` into `out` (values `±1`).
 *
 * # Safety
 * `c` must come from [`signfl_compressor_new`]; `g` and `out` must hold
 * `dim` values.
 */
enum SignflStatus signfl_compressor_compress(struct SignflCompressor *c,
                                             const double *g,
                                             size_t dim,
                                             int8_t *out);

/**
 * # Safety
 * `c` must be null or come from [`signfl_compressor_new`], and not be used
 * afterwards.
 */
void signfl_compressor_free(struct SignflCompressor *c);

/**
 * Builds an experiment from a JSON config. Relative data paths resolve
 * against the working directory.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` valid for one write.
 */
enum SignflStatus signfl_experiment_new(const char *config_json, struct SignflExperiment **out);

/**
 * Model dimension `d`, or 0 for a null handle.
 *
 * # Safety
 * `e` must be null or a live experiment handle.
 */
size_t signfl_experiment_dim(const struct SignflExperiment *e);

/**
 * Convergence bound for the experiment's config, evaluated at its initial
 * point.
 *
 * # Safety
 * `e` must be a live experiment handle; `out` valid for one write.
 */
enum SignflStatus signfl_experiment_bound(const struct SignflExperiment *e, double *out);

/**
 * Runs all rounds and returns the trajectory.
 *
 * # Safety
 * `e` must be a live experiment handle; `out` valid for one write.
 */
enum SignflStatus signfl_experiment_run(const struct SignflExperiment *e,
                                        struct SignflTrajectory **out);

/**
 * # Safety
 * `e` must be null or a live experiment handle, not used afterwards.
 */
void signfl_experiment_free(struct SignflExperiment *e);

/**
 * Number of recorded rounds, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live trajectory handle.
 */
size_t signfl_trajectory_rounds(const struct SignflTrajectory *t);

/**
 * Copies `F(w(t))` for every round into `buf`.
 *
 * # Safety
 * `t` must be a live trajectory handle and `buf` hold `len` values.
 */
enum SignflStatus signfl_trajectory_losses(const struct SignflTrajectory *t,
                                           double *buf,
                                           size_t len);

/**
 * Copies `‖∇F(w(t))‖₁` for every round into `buf`.
 *
 * # Safety
 * `t` must be a live trajectory handle and `buf` hold `len` values.
 */
enum SignflStatus signfl_trajectory_grad_norms(const struct SignflTrajectory *t,
                                               double *buf,
                                               size_t len);

/**
 * Copies the final model into `buf`.
 *
 * # Safety
 * `t` must be a live trajectory handle and `buf` hold `len` values.
 */
enum SignflStatus signfl_trajectory_final_w(const struct SignflTrajectory *t,
                                            double *buf,
                                            size_t len);

/**
 * The trajectory as CSV. Release the string with [`signfl_string_free`].
 *
 * # Safety
 * `t` must be a live trajectory handle; `out` valid for one write.
 */
enum SignflStatus signfl_trajectory_csv(const struct SignflTrajectory *t, char **out);

/**
 * # Safety
 * `t` must be null or a live trajectory handle, not used afterwards.
 */
void signfl_trajectory_free(struct SignflTrajectory *t);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not used
 * afterwards.
 */
void signfl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIGNFL_H */
