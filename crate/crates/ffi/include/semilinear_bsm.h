#ifndef SEMILINEAR_BSM_H
#define SEMILINEAR_BSM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SBSM_OK 0

#define SBSM_ERR_NULL 1

#define SBSM_ERR_INVALID_ARGUMENT 2

#define SBSM_ERR_DOMAIN 3

#define SBSM_ERR_SOLVER 4

#define SBSM_ERR_BUFFER_TOO_SMALL 5

#define SBSM_ERR_PANIC 6

/**
 * Symbolic expression.
 */
typedef struct SbsmExpr SbsmExpr;

/**
 * Closed-form barrier solution.
 */
typedef struct SbsmSolution SbsmSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *sbsm_last_error(void);

const char *sbsm_version(void);

/**
 * Reference parameter set of a variant (`quadratic_c3_nonzero`, `quadratic_c3_zero`,
 * `log_lambda_nonzero`, `log_lambda_zero`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t sbsm_solution_reference(const char *name, struct SbsmSolution **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t sbsm_solution_quadratic(double sigma,
                                double r,
                                double alpha,
                                double beta,
                                double lambda,
                                double kappa,
                                double a,
                                bool c3_zero,
                                struct SbsmSolution **out);

/**
 * `lambda_zero` selects the second log family, which takes `c` and ignores `lambda`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t sbsm_solution_log(double sigma,
                          double r,
                          double alpha,
                          double beta,
                          double gamma,
                          double delta,
                          double lambda,
                          double mu,
                          double kappa,
                          double a,
                          double c,
                          bool lambda_zero,
                          struct SbsmSolution **out);

/**
 * # Safety
 * `s` must come from a constructor above and not be freed already. Null is ignored.
 */
void sbsm_solution_free(struct SbsmSolution *s);

/**
 * # Safety
 * `s` must be a live handle, `out` a valid pointer.
 */
int32_t sbsm_solution_eval_u(const struct SbsmSolution *s, double x, double t, double *out);

/**
 * Barrier `H(t)`.
 *
 * # Safety
 * `s` must be a live handle, `out` a valid pointer.
 */
int32_t sbsm_solution_barrier(const struct SbsmSolution *s, double t, double *out);

/**
 * Rebate `R(t)`.
 *
 * # Safety
 * `s` must be a live handle, `out` a valid pointer.
 */
int32_t sbsm_solution_rebate(const struct SbsmSolution *s, double t, double *out);

/**
 * `|u(H(t), t) - R(t)|`.
 *
 * # Safety
 * `s` must be a live handle, `out` a valid pointer.
 */
int32_t sbsm_solution_boundary_gap(const struct SbsmSolution *s, double t, double *out);

/**
 * Central-difference residual of the equation, relative to its largest term.
 *
 * # Safety
 * `s` must be a live handle, `out` a valid pointer.
 */
int32_t sbsm_solution_pde_residual(const struct SbsmSolution *s,
                                   double x,
                                   double t,
                                   double h,
                                   double *out);

/**
 * Solve the barrier problem seeded with the closed form on `z` in `[0, z_max]`,
 * `t` in `[0, terminal_time]`, and report the maximum error.
 *
 * # Safety
 * `s` must be a live handle, `l_inf` a valid pointer.
 */
int32_t sbsm_solution_compare(const struct SbsmSolution *s,
                              uint32_t n_space,
                              uint32_t n_time,
                              double z_max,
                              double terminal_time,
                              double *l_inf);

/**
 * Parse the prefix form printed by `sbsm_expr_to_string`, e.g. `(+ x (* 2 u))`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t sbsm_expr_parse(const char *text, struct SbsmExpr **out);

/**
 * # Safety
 * `e` must come from this library and not be freed already. Null is ignored.
 */
void sbsm_expr_free(struct SbsmExpr *e);

/**
 * # Safety
 * `e` must be a live handle, `symbol` a NUL-terminated string, `out` a valid pointer.
 */
int32_t sbsm_expr_differentiate(const struct SbsmExpr *e,
                                const char *symbol,
                                struct SbsmExpr **out);

/**
 * Evaluate with `names[i] = values[i]` for `i < n`.
 *
 * # Safety
 * `names` and `values` must hold `n` entries; `out` must be valid.
 */
int32_t sbsm_expr_evaluate(const struct SbsmExpr *e,
                           const char *const *names,
                           const double *values,
                           size_t n,
                           double *out);

/**
 * Print into `buf`; with a short or null buffer returns `SBSM_ERR_BUFFER_TOO_SMALL`
 * and stores the required size (including the NUL) in `needed`.
 *
 * # Safety
 * `buf` must hold `len` bytes; `needed` may be null.
 */
int32_t sbsm_expr_to_string(const struct SbsmExpr *e, char *buf, size_t len, size_t *needed);

/**
 * Run the symmetry checks for one case, or all five when `case_name` is null.
 * Parameters passed as NaN take the defaults. `failed` receives the number of
 * counted checks that failed.
 *
 * # Safety
 * `case_name` is null or a NUL-terminated string; `failed` must be valid.
 */
int32_t sbsm_verify_symmetries(const char *case_name,
                               double alpha,
                               double beta,
                               double gamma,
                               double delta,
                               uint64_t seed,
                               uint32_t *failed);

/**
 * Boundary, residual and reduction sweeps over the four closed-form variants.
 *
 * # Safety
 * `failed` must be a valid pointer.
 */
int32_t sbsm_verify_solutions(uint64_t seed, uint32_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMILINEAR_BSM_H */
