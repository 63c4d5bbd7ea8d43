#ifndef PCSF_H
#define PCSF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit-code contract, plus FFI-specific
 * argument errors.
 */
typedef enum PcsfStatus {
  PcsfStatus_Ok = 0,
  PcsfStatus_NumericalError = 1,
  PcsfStatus_InvalidParameter = 2,
  PcsfStatus_IoError = 3,
  PcsfStatus_NullPointer = 4,
  PcsfStatus_Panic = 5,
} PcsfStatus;

/**
 * Opaque truncated Fourier curvature state.
 */
typedef struct PcsfState PcsfState;

/**
 * Opaque integration result: sampled trajectory plus blow-up estimate.
 */
typedef struct PcsfTrajectory PcsfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buffer` (always
 * NUL-terminated, truncated to `length` bytes). Returns the full message
 * length in bytes, excluding the terminator.
 */
uintptr_t pcsf_last_error_message(char *buffer, uintptr_t length);

/**
 * Constant curvature `value` on mode radius `n_modes` (a round circle of
 * radius `1/value`).
 */
enum PcsfStatus pcsf_state_new_round(double value, uintptr_t n_modes, struct PcsfState **out);

/**
 * Build a state from a support-function spec in JSON:
 * `{"base": float, "harmonics": {"n": [a, b], ...}}`.
 */
enum PcsfStatus pcsf_state_from_support_json(const char *json,
                                             uintptr_t n_modes,
                                             struct PcsfState **out);

void pcsf_state_free(struct PcsfState *state);

/**
 * Mode radius N of the state.
 */
enum PcsfStatus pcsf_state_radius(const struct PcsfState *state, uintptr_t *out);

/**
 * Coefficient of wavenumber `n`, `|n| <= N`.
 */
enum PcsfStatus pcsf_state_coeff(const struct PcsfState *state, int64_t n, double *re, double *im);

/**
 * Flow time stamp of the state.
 */
enum PcsfStatus pcsf_state_time(const struct PcsfState *state, double *out);

/**
 * Integrate the flow with exponent `p` from `initial` until the mean
 * curvature coefficient reaches `blowup_cap` (pass 0 or a negative value
 * for the default cap), then estimate the blow-up time. `rel_tol <= 0`
 * selects the default 1e-10.
 */
enum PcsfStatus pcsf_integrate_blowup(const struct PcsfState *initial,
                                      uint32_t p,
                                      double rel_tol,
                                      double blowup_cap,
                                      struct PcsfTrajectory **out);

void pcsf_trajectory_free(struct PcsfTrajectory *trajectory);

/**
 * Number of retained samples.
 */
enum PcsfStatus pcsf_trajectory_len(const struct PcsfTrajectory *trajectory, uintptr_t *out);

/**
 * Copy of sample `index` as a fresh state handle.
 */
enum PcsfStatus pcsf_trajectory_sample(const struct PcsfTrajectory *trajectory,
                                       uintptr_t index,
                                       struct PcsfState **out);

/**
 * Estimated blow-up time and its least-squares uncertainty.
 */
enum PcsfStatus pcsf_trajectory_blowup_time(const struct PcsfTrajectory *trajectory,
                                            double *t_blowup,
                                            double *uncertainty);

/**
 * Closed-form predicted rates for exponent `p`: convergence rate `3p - 1`
 * (in normalized time), generic mode decay `(3p-2)/(p+1)` and blow-up
 * exponent `1/(p+1)` (in `T - t`), and the mean-offset rate `6p - 2`.
 */
enum PcsfStatus pcsf_predicted_rates(uint32_t p,
                                     double *convergence_rate,
                                     double *mode_decay,
                                     double *blowup_exponent,
                                     double *mean_offset_rate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCSF_H */
