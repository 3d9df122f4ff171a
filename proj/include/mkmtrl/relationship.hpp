#pragma once

#include "mkmtrl/common.hpp"

namespace mkmtrl {

/// Per-task base-kernel weights, K x T; column t is task t's weight vector.
struct KernelWeights {
  Matrix B;

  Eigen::Index num_kernels() const { return B.rows(); }
  Eigen::Index num_tasks() const { return B.cols(); }
  Vector beta(Eigen::Index t) const { return B.col(t); }

  static KernelWeights uniform(Eigen::Index kernels, Eigen::Index tasks);
  void validate() const;  // nonnegative, finite
};

/// T x T task relationship: symmetric PSD with trace <= 1.
struct TaskRelationship {
  Matrix omega;

  Eigen::Index num_tasks() const { return omega.rows(); }

  static TaskRelationship scaled_identity(Eigen::Index tasks);  // I / T
  /// Throws NumericError when symmetry (1e-10), PSD (-1e-8) or trace
  /// (<= 1 + 1e-10) is violated.
  void validate() const;
};

/// Floor applied to kernel weights inside the fixed-point updates.
inline constexpr double kWeightFloor = 1e-8;

struct FixedPointOptions {
  double damping = 0.5;
  double floor = kWeightFloor;
  double tol = 1e-8;        // relative Frobenius change
  int max_iter = 200;
  double max_residual = 1e-4;  // allowed residual at the iteration cap
};

/// Symmetric square root by eigendecomposition with negative eigenvalues
/// clipped to zero.
Matrix psd_sqrt(const Matrix& M);

/// Omega = (B'B)^{1/2} / tr((B'B)^{1/2}).
TaskRelationship update_relationship(const KernelWeights& weights);

/// Fixed point of B = (1/mu) (W o B^-2) Omega by damped iteration.
KernelWeights update_weights_mu(const Matrix& W, const TaskRelationship& omega, double mu,
                                const KernelWeights& init, const FixedPointOptions& opts = {});

/// Fixed point of B = (W o B^-2) Omega / sqrt(tr((W o B^-2) Omega (W o B^-2)')),
/// i.e. the penalty eliminated in favour of tr(B Omega^+ B') = 1.
KernelWeights update_weights_normalized(const Matrix& W, const TaskRelationship& omega, const KernelWeights& init,
                                        const FixedPointOptions& opts = {});

/// One application of the normalized map (without damping), floored.
Matrix normalized_weight_map(const Matrix& W, const Matrix& omega, const Matrix& B, double floor = kWeightFloor);

KernelWeights project_nonneg(const Matrix& B);

/// tr(B Omega^+ B') with the Moore-Penrose pseudoinverse.
double trace_pinv_quadratic(const Matrix& B, const Matrix& omega);

Matrix pseudo_inverse_symmetric(const Matrix& M, double rel_tol = 1e-10);

}  // namespace mkmtrl
