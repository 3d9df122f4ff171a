#include "mkmtrl/relationship.hpp"

#include <cmath>
#include <limits>

#include "mkmtrl/kernel_bank.hpp"

namespace mkmtrl {
namespace {

bool is_diagonal(const Matrix& M) {
  for (Eigen::Index j = 0; j < M.cols(); ++j)
    for (Eigen::Index i = 0; i < M.rows(); ++i)
      if (i != j && M(i, j) != 0.0) return false;
  return true;
}

Matrix inverse_square_weighted(const Matrix& W, const Matrix& B) {
  return W.cwiseQuotient(B.cwiseProduct(B));
}

void check_inputs(const Matrix& W, const Matrix& omega, const Matrix& B) {
  if (W.rows() != B.rows() || W.cols() != B.cols())
    throw DimensionError("norm matrix and weight matrix shapes differ");
  if (omega.rows() != W.cols() || omega.cols() != W.cols())
    throw DimensionError("relationship matrix must be T x T");
  if ((W.array() < 0).any() || !W.allFinite()) throw NumericError("RKHS norms must be finite and nonnegative");
}

template <class Map>
KernelWeights damped_fixed_point(const Matrix& start, const FixedPointOptions& opts, Map&& map,
                                 const char* what) {
  Matrix B = start.cwiseMax(opts.floor);
  double change = 0.0;
  for (int it = 0; it < opts.max_iter; ++it) {
    const Matrix next = (1.0 - opts.damping) * B + opts.damping * map(B);
    const double denom = std::max(next.norm(), 1e-300);
    change = (next - B).norm() / denom;
    B = next;
    if (change <= opts.tol) return KernelWeights{B.cwiseMax(0.0)};
  }
  if (change > opts.max_residual) throw ConvergenceError(std::string(what) + " did not converge", change);
  return KernelWeights{B.cwiseMax(0.0)};
}

}  // namespace

KernelWeights KernelWeights::uniform(Eigen::Index kernels, Eigen::Index tasks) {
  return KernelWeights{Matrix::Constant(kernels, tasks, 1.0 / static_cast<double>(kernels))};
}

void KernelWeights::validate() const {
  if (!B.allFinite()) throw NumericError("kernel weights are not finite");
  if ((B.array() < 0).any()) throw NumericError("kernel weights must be nonnegative");
}

TaskRelationship TaskRelationship::scaled_identity(Eigen::Index tasks) {
  return TaskRelationship{Matrix::Identity(tasks, tasks) / static_cast<double>(tasks)};
}

void TaskRelationship::validate() const {
  if (omega.rows() != omega.cols()) throw DimensionError("relationship matrix is not square");
  if (!omega.allFinite()) throw NumericError("relationship matrix is not finite");
  if ((omega - omega.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw NumericError("relationship matrix is not symmetric");
  if (min_eigenvalue(omega) < -1e-8) throw NumericError("relationship matrix is not PSD");
  if (omega.trace() > 1.0 + 1e-10) throw NumericError("relationship matrix trace exceeds 1");
}

Matrix psd_sqrt(const Matrix& M) {
  if (M.rows() != M.cols()) throw DimensionError("psd_sqrt needs a square matrix");
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) throw NumericError("psd_sqrt: matrix is not symmetric");
  if (is_diagonal(M)) {
    Matrix S = Matrix::Zero(M.rows(), M.cols());
    for (Eigen::Index i = 0; i < M.rows(); ++i) S(i, i) = std::sqrt(std::max(0.0, M(i, i)));
    return S;
  }
  const Matrix sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("psd_sqrt: eigendecomposition failed");
  // Eigenvalues at rounding-noise level are zero in exact arithmetic; their
  // square roots would otherwise inject O(sqrt(eps)) noise.
  const double cutoff = static_cast<double>(M.rows()) * std::numeric_limits<double>::epsilon() *
                        es.eigenvalues().cwiseAbs().maxCoeff();
  const Vector root =
      es.eigenvalues().unaryExpr([cutoff](double v) { return v > cutoff ? std::sqrt(v) : 0.0; });
  const Matrix& V = es.eigenvectors();
  Matrix S = V * root.asDiagonal() * V.transpose();
  return 0.5 * (S + S.transpose());
}

TaskRelationship update_relationship(const KernelWeights& weights) {
  const Matrix& B = weights.B;
  if (B.size() == 0 || (B.array() == 0).all()) throw NumericError("update_relationship: B is zero");
  const Matrix S = psd_sqrt(B.transpose() * B);
  double tr = 0.0;
  for (Eigen::Index i = 0; i < S.rows(); ++i) tr += S(i, i);
  if (!(tr > 0)) throw NumericError("update_relationship: zero trace");
  return TaskRelationship{S / tr};
}

KernelWeights update_weights_mu(const Matrix& W, const TaskRelationship& omega, double mu, const KernelWeights& init,
                                const FixedPointOptions& opts) {
  if (!(mu > 0)) throw ConfigError("mu must be positive");
  check_inputs(W, omega.omega, init.B);
  const Matrix& Om = omega.omega;
  return damped_fixed_point(
      init.B, opts,
      [&](const Matrix& B) { return Matrix(((inverse_square_weighted(W, B) * Om) / mu).cwiseMax(opts.floor)); },
      "kernel weight update (penalty form)");
}

Matrix normalized_weight_map(const Matrix& W, const Matrix& omega, const Matrix& B, double floor) {
  const Matrix M = inverse_square_weighted(W, B);
  const Matrix MO = M * omega;
  const double denom2 = (MO * M.transpose()).trace();
  if (!(denom2 > 0) || !std::isfinite(denom2))
    throw NumericError("kernel weight update: normalizer tr((W o B^-2) Omega (W o B^-2)') is not positive");
  return (MO / std::sqrt(denom2)).cwiseMax(floor);
}

KernelWeights update_weights_normalized(const Matrix& W, const TaskRelationship& omega, const KernelWeights& init,
                                        const FixedPointOptions& opts) {
  check_inputs(W, omega.omega, init.B);
  if ((W.array() == 0).all()) throw NumericError("kernel weight update: all RKHS norms are zero");
  const Matrix& Om = omega.omega;
  return damped_fixed_point(
      init.B, opts, [&](const Matrix& B) { return normalized_weight_map(W, Om, B, opts.floor); },
      "kernel weight update (normalized form)");
}

KernelWeights project_nonneg(const Matrix& B) { return KernelWeights{B.cwiseMax(0.0)}; }

Matrix pseudo_inverse_symmetric(const Matrix& M, double rel_tol) {
  const Matrix sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  const Vector& ev = es.eigenvalues();
  const double cutoff = rel_tol * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Vector inv(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = std::abs(ev(i)) > cutoff ? 1.0 / ev(i) : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

double trace_pinv_quadratic(const Matrix& B, const Matrix& omega) {
  if (omega.rows() != B.cols()) throw DimensionError("trace_pinv_quadratic: shape mismatch");
  return (B * pseudo_inverse_symmetric(omega) * B.transpose()).trace();
}

}  // namespace mkmtrl
