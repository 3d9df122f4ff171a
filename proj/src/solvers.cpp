#include "mkmtrl/solvers.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

namespace mkmtrl {
namespace {

constexpr double kTau = 1e-12;

void check_square(const Matrix& K, const Vector& y) {
  if (K.rows() != K.cols()) throw DimensionError("kernel matrix is not square");
  if (K.rows() != y.size())
    throw DimensionError("kernel has " + std::to_string(K.rows()) + " rows but " + std::to_string(y.size()) +
                         " labels");
  if (K.rows() == 0) throw DimensionError("empty problem");
  if (!K.allFinite()) throw NumericError("non-finite kernel entry");
}

void check_psd(const Matrix& K) {
  const double scale = std::max(1.0, K.diagonal().cwiseAbs().maxCoeff());
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) throw SolverError("kernel matrix is not symmetric");
  if (min_eigenvalue(K) < -1e-8 * scale) throw SolverError("kernel matrix is not positive semidefinite");
}

}  // namespace

void SolverConfig::validate() const {
  if (!(C > 0)) throw ConfigError("C must be positive");
  if (!(lambda > 0)) throw ConfigError("lambda must be positive");
  if (!(tol > 0)) throw ConfigError("solver tolerance must be positive");
  if (max_passes < 1) throw ConfigError("max_passes must be positive");
}

double svm_dual_objective(const Matrix& K, const Vector& y, const Vector& alpha) {
  const Vector v = alpha.cwiseProduct(y);
  return alpha.sum() - 0.5 * v.dot(K * v);
}

DualSolution svm_dual_solve(const Matrix& K, const Vector& y, const SolverConfig& cfg) {
  cfg.validate();
  check_square(K, y);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y(i) != 1.0 && y(i) != -1.0) throw SolverError("svm labels must be ±1");
  if ((y.array() > 0).all() || (y.array() < 0).all()) throw SolverError("svm needs both classes present");
  if (cfg.check_psd) check_psd(K);

  const Eigen::Index n = K.rows();
  const double C = cfg.C;
  Vector alpha = Vector::Zero(n);
  Vector grad = -Vector::Ones(n);  // gradient of a'Qa/2 - 1'a, Q = YKY
  const long max_iter = cfg.max_passes * std::max<long>(n, 1);

  auto in_up = [&](Eigen::Index t) { return y(t) > 0 ? alpha(t) < C : alpha(t) > 0; };
  auto in_low = [&](Eigen::Index t) { return y(t) > 0 ? alpha(t) > 0 : alpha(t) < C; };

  DualSolution sol;
  sol.kind = SolverKind::svm;
  sol.converged = false;
#ifndef NDEBUG
  double last_obj = 0.0;
#endif
  long iter = 0;
  for (; iter < max_iter; ++iter) {
    Eigen::Index i = -1, j = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      const double v = -y(t) * grad(t);
      if (in_up(t) && v > gmax) {
        gmax = v;
        i = t;
      }
      if (in_low(t) && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    if (i < 0 || j < 0 || gmax - gmin < cfg.tol) {
      sol.converged = true;
      break;
    }

    const double old_ai = alpha(i), old_aj = alpha(j);
    const double kij = K(i, j);
    if (y(i) != y(j)) {
      double quad = K(i, i) + K(j, j) - 2.0 * kij;
      if (quad <= 0) quad = kTau;
      const double delta = (-grad(i) - grad(j)) / quad;
      const double diff = alpha(i) - alpha(j);
      alpha(i) += delta;
      alpha(j) += delta;
      if (diff > 0) {
        if (alpha(j) < 0) {
          alpha(j) = 0;
          alpha(i) = diff;
        }
      } else if (alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = -diff;
      }
      if (diff > 0) {
        if (alpha(i) > C) {
          alpha(i) = C;
          alpha(j) = C - diff;
        }
      } else if (alpha(j) > C) {
        alpha(j) = C;
        alpha(i) = C + diff;
      }
    } else {
      double quad = K(i, i) + K(j, j) - 2.0 * kij;
      if (quad <= 0) quad = kTau;
      const double delta = (grad(i) - grad(j)) / quad;
      const double sum = alpha(i) + alpha(j);
      alpha(i) -= delta;
      alpha(j) += delta;
      if (sum > C) {
        if (alpha(i) > C) {
          alpha(i) = C;
          alpha(j) = sum - C;
        }
      } else if (alpha(j) < 0) {
        alpha(j) = 0;
        alpha(i) = sum;
      }
      if (sum > C) {
        if (alpha(j) > C) {
          alpha(j) = C;
          alpha(i) = sum - C;
        }
      } else if (alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = sum;
      }
    }

    const double di = alpha(i) - old_ai, dj = alpha(j) - old_aj;
    // grad += Q_i di + Q_j dj, Q_ab = y_a y_b K_ab
    grad.noalias() += (y(i) * di) * y.cwiseProduct(K.col(i)) + (y(j) * dj) * y.cwiseProduct(K.col(j));

#ifndef NDEBUG
    if (n > 0 && iter % n == 0) {
      const double obj = svm_dual_objective(K, y, alpha);
      assert(obj >= last_obj - 1e-9 * std::max(1.0, std::abs(obj)));
      last_obj = obj;
    }
#endif
  }
  sol.iterations = iter;

  // Bias from free support vectors; otherwise the midpoint of the KKT bounds.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  long nfree = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y(t) * grad(t);
    if (alpha(t) >= C) {
      if (y(t) < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (alpha(t) <= 0) {
      if (y(t) > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++nfree;
      sum_free += yg;
    }
  }
  const double rho = nfree > 0 ? sum_free / static_cast<double>(nfree) : 0.5 * (ub + lb);
  sol.bias = -rho;
  sol.alpha = std::move(alpha);
  sol.dual_objective = svm_dual_objective(K, y, sol.alpha);
  return sol;
}

DualSolution krr_solve(const Matrix& K, const Vector& y, const SolverConfig& cfg) {
  cfg.validate();
  check_square(K, y);
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, K.cwiseAbs().maxCoeff()))
    throw SolverError("kernel matrix is not symmetric");
  Matrix A = K;
  A.diagonal().array() += cfg.lambda;
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) throw SolverError("K + lambda I is not positive definite");
  DualSolution sol;
  sol.kind = SolverKind::krr;
  sol.alpha = llt.solve(y);
  // One step of iterative refinement keeps the residual at working precision.
  sol.alpha += llt.solve(y - A * sol.alpha);
  sol.bias = 0.0;
  sol.dual_objective = (K * sol.alpha - y).squaredNorm();
  return sol;
}

DualSolution solve_task(SolverKind kind, const Matrix& K, const Vector& y, const SolverConfig& cfg) {
  return kind == SolverKind::svm ? svm_dual_solve(K, y, cfg) : krr_solve(K, y, cfg);
}

Vector rkhs_norms(std::span<const GramMatrix> bank_row, const Vector& beta_t, const DualSolution& sol,
                  const Vector& y) {
  const auto K = static_cast<Eigen::Index>(bank_row.size());
  if (beta_t.size() != K) throw DimensionError("rkhs_norms: weight vector length differs from bank row");
  if (sol.alpha.size() != y.size()) throw DimensionError("rkhs_norms: alpha and label lengths differ");
  const Vector v = sol.kind == SolverKind::svm ? Vector(sol.alpha.cwiseProduct(y)) : sol.alpha;
  Vector out(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Matrix& G = bank_row[static_cast<std::size_t>(k)].values;
    if (G.rows() != v.size() || G.cols() != v.size()) throw DimensionError("rkhs_norms: gram shape mismatch");
    const double b = beta_t(k);
    out(k) = b == 0.0 ? 0.0 : b * b * v.dot(G * v);
  }
  return out;
}

Vector decision_values(const Matrix& K_cross, const DualSolution& sol, const Vector& y_train) {
  if (K_cross.cols() != sol.alpha.size()) throw DimensionError("cross kernel columns differ from training size");
  if (sol.kind == SolverKind::svm) {
    if (y_train.size() != sol.alpha.size()) throw DimensionError("label length differs from alpha");
    return (K_cross * sol.alpha.cwiseProduct(y_train)).array() + sol.bias;
  }
  return K_cross * sol.alpha;
}

Vector predict_scores(std::span<const GramMatrix> cross, const Vector& beta_t, const DualSolution& sol,
                      const Vector& y_train) {
  return decision_values(combine_weighted(cross, beta_t), sol, y_train);
}

}  // namespace mkmtrl
