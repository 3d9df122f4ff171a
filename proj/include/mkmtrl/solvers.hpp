#pragma once

#include <span>

#include "mkmtrl/common.hpp"
#include "mkmtrl/kernel_bank.hpp"

namespace mkmtrl {

enum class SolverKind { svm, krr };

struct SolverConfig {
  double C = 1.0;       // SVM box
  double lambda = 1.0;  // KRR ridge
  double tol = 1e-4;    // maximal KKT violation at exit
  long max_passes = 10000;  // iteration cap is max_passes * n
  bool check_psd = true;    // eigenvalue check of K before solving

  void validate() const;
};

/// Dual solution of one task. For svm, 0 <= alpha <= C and alpha'y = 0; the
/// decision function is sum_j alpha_j y_j k(x, x_j) + bias. For krr, alpha
/// solves (K + lambda I) alpha = y, bias is 0 and dual_objective holds the
/// fit residual |K alpha - y|^2.
struct DualSolution {
  Vector alpha;
  double bias = 0.0;
  double dual_objective = 0.0;
  SolverKind kind = SolverKind::svm;
  long iterations = 0;
  bool converged = true;
};

/// SMO: pairwise coordinate ascent on max 1'a - a'YKYa/2 subject to
/// 0 <= a <= C, a'y = 0, with the maximal-violating-pair working set.
DualSolution svm_dual_solve(const Matrix& K, const Vector& y, const SolverConfig& cfg);

DualSolution krr_solve(const Matrix& K, const Vector& y, const SolverConfig& cfg);

/// Dispatch on kind.
DualSolution solve_task(SolverKind kind, const Matrix& K, const Vector& y, const SolverConfig& cfg);

/// Squared RKHS norm of each per-kernel component: beta_k^2 a'Y K_k Y a for
/// svm, beta_k^2 a' K_k a for krr.
Vector rkhs_norms(std::span<const GramMatrix> bank_row, const Vector& beta_t, const DualSolution& sol,
                  const Vector& y);

/// Scores for the rows of the cross grams (test x train).
Vector predict_scores(std::span<const GramMatrix> cross, const Vector& beta_t, const DualSolution& sol,
                      const Vector& y_train);

/// Scores from an already combined (test x train) kernel.
Vector decision_values(const Matrix& K_cross, const DualSolution& sol, const Vector& y_train);

/// 1'a - a'YKYa/2.
double svm_dual_objective(const Matrix& K, const Vector& y, const Vector& alpha);

}  // namespace mkmtrl
