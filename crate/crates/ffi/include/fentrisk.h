#ifndef FENTRISK_H
#define FENTRISK_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FrStatus {
  FR_STATUS_OK = 0,
  FR_STATUS_NULL_POINTER = 1,
  FR_STATUS_INVALID_ARGUMENT = 2,
  FR_STATUS_IO = 3,
  FR_STATUS_BUFFER_TOO_SMALL = 4,
  // A Rust panic was caught at the boundary.
  FR_STATUS_PANIC = 5,
} FrStatus;

typedef enum FrDivergence {
  // CVaR: only the density-ratio cap.
  FR_DIVERGENCE_NONE = 0,
  // KL budget on top of the cap.
  FR_DIVERGENCE_KL = 1,
} FrDivergence;

typedef enum FrBoundKind {
  FR_BOUND_KIND_SUBGROUPS_SQRT = 0,
  FR_BOUND_KIND_SUBGROUPS_KL = 1,
  FR_BOUND_KIND_ONE_EXAMPLE_DIS = 2,
  FR_BOUND_KIND_ONE_EXAMPLE_CLASSICAL = 3,
  FR_BOUND_KIND_MHAMMEDI_ESTIMATE = 4,
} FrBoundKind;

// A saved model loaded from a checkpoint file.
typedef struct FrModel FrModel;

// Maximizing weights and value of a risk measure.
typedef struct FrRiskSolution FrRiskSolution;

// Inputs of [`fr_bound_evaluate`].
//
// Subgroup kinds read `n`, `m_a` and `pi`; `m` is ignored and `lambda` is
// fixed at 1. Per-example kinds read `m` and `lambda` and ignore the
// subgroup arrays. `kl_term` is the disintegrated log-density ratio for
// the disintegrated kinds and the closed-form KL for the classical ones.
typedef struct FrBoundInput {
  enum FrBoundKind kind;
  double empirical_risk;
  double kl_term;
  double delta;
  double alpha;
  double lambda;
  size_t n_priors;
  size_t m;
  size_t n;
  const size_t *m_a;
  const double *pi;
} FrBoundInput;

typedef struct FrBoundOutput {
  double empirical_risk;
  double complexity;
  // Raw formula value, may exceed 1.
  double bound;
  // `min(bound, 1)`.
  double certificate;
  bool vacuous;
  // Set when the value replaces an expectation over the posterior by
  // one sample.
  bool estimate;
} FrBoundOutput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fr_version(void);

// Message of the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on this thread.
const char *fr_last_error(void);

// Solves the risk measure over `n` subgroups.
//
// `pi` may be null for the uniform reference. With `FrDivergence::Kl` a
// NaN `beta` selects the default budget `-ln(alpha)`.
//
// # Safety
// `losses` must point to `n` doubles, `pi` to `n` doubles or be null, and
// `out` must be writable. On success `*out` owns a handle to release with
// [`fr_risk_solution_free`].
enum FrStatus fr_risk_solve(const double *losses,
                            const double *pi,
                            size_t n,
                            double alpha,
                            enum FrDivergence divergence,
                            double beta,
                            struct FrRiskSolution **out);

// Risk value, or NaN for a null handle.
//
// # Safety
// `sol` must be null or a live handle from [`fr_risk_solve`].
double fr_risk_solution_value(const struct FrRiskSolution *sol);

// Upper bound on the solver's optimality gap, or NaN for a null handle.
//
// # Safety
// `sol` must be null or a live handle from [`fr_risk_solve`].
double fr_risk_solution_dual_gap(const struct FrRiskSolution *sol);

// Number of subgroups, or 0 for a null handle.
//
// # Safety
// `sol` must be null or a live handle from [`fr_risk_solve`].
size_t fr_risk_solution_len(const struct FrRiskSolution *sol);

// Copies the maximizing weights into `out`, which holds `len` doubles.
//
// # Safety
// `sol` must be a live handle and `out` must point to `len` writable doubles.
enum FrStatus fr_risk_solution_weights(const struct FrRiskSolution *sol, double *out, size_t len);

// # Safety
// `sol` must be null or a handle from [`fr_risk_solve`] not freed before.
void fr_risk_solution_free(struct FrRiskSolution *sol);

// `kl(a‖b)` if `a ≤ b`, else 0. Infinite at `kl(0‖1)`.
//
// # Safety
// `out` must be writable.
enum FrStatus fr_kl_plus(double a, double b, double *out);

// Largest `b` in `[a, 1]` with `kl⁺(a‖b) ≤ eps`.
//
// # Safety
// `out` must be writable.
enum FrStatus fr_kl_inverse(double a, double eps, double *out);

// Evaluates one bound.
//
// # Safety
// `input` must be readable; for subgroup kinds `m_a` and `pi` must point
// to `n` values each. `out` must be writable.
enum FrStatus fr_bound_evaluate(const struct FrBoundInput *input, struct FrBoundOutput *out);

// Loads a checkpoint written by `fentrisk run --checkpoints`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable. On success
// `*out` owns a handle to release with [`fr_model_free`].
enum FrStatus fr_model_load(const char *path, struct FrModel **out);

// # Safety
// `model` must be null or a handle from [`fr_model_load`] not freed before.
void fr_model_free(struct FrModel *model);

// Input width, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t fr_model_input_dim(const struct FrModel *model);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t fr_model_n_classes(const struct FrModel *model);

// Class probabilities of one standardized input.
//
// # Safety
// `model` must be a live handle, `x` must point to `dim` doubles and
// `out` to `len` writable doubles.
enum FrStatus fr_model_predict_proba(const struct FrModel *model,
                                     const double *x,
                                     size_t dim,
                                     double *out,
                                     size_t len);

// Most probable class of one standardized input.
//
// # Safety
// `model` must be a live handle, `x` must point to `dim` doubles and
// `class_out` must be writable.
enum FrStatus fr_model_predict(const struct FrModel *model,
                               const double *x,
                               size_t dim,
                               size_t *class_out);

// Certifies the model on a CSV dataset with CVaR over class subgroups and
// class-ratio reference, as `fentrisk bound` does with its defaults.
//
// # Safety
// `model` must be a live handle, `csv_path` and `label_column`
// NUL-terminated strings, and `out` writable.
enum FrStatus fr_model_certify(const struct FrModel *model,
                               const char *csv_path,
                               const char *label_column,
                               enum FrBoundKind kind,
                               double alpha,
                               double delta,
                               double lambda,
                               struct FrBoundOutput *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FENTRISK_H */
