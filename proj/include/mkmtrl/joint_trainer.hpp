#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mkmtrl/common.hpp"
#include "mkmtrl/data_io.hpp"
#include "mkmtrl/kernel_bank.hpp"
#include "mkmtrl/relationship.hpp"
#include "mkmtrl/solvers.hpp"

namespace mkmtrl {

struct TrainConfig {
  double C = 1.0;
  /// Set: penalty form with explicit mu. Unset: normalized (constraint) form.
  std::optional<double> mu;
  int max_outer = 50;
  int max_inner = 20;
  double tol_B = 1e-4;  // relative Frobenius change of B
  SolverKind kind = SolverKind::svm;
  double lambda = 1.0;  // krr ridge
  double solver_tol = 1e-6;
  int workers = 1;
  /// Keeps the relationship fixed at this matrix (no relationship updates).
  std::optional<Matrix> fixed_omega;

  SolverConfig solver() const;
  void validate() const;
};

/// Snapshot after one outer iteration.
struct IterationRecord {
  int outer = 0;
  int inner_steps = 0;
  double objective = 0.0;
  double change_B = 0.0;  // relative to the start of the outer iteration
  Matrix B;
  Matrix omega;
};

struct MkMtrlModel {
  KernelWeights weights;
  TaskRelationship relationship;
  std::vector<DualSolution> models;
  std::vector<KernelSpec> specs;
  Matrix trace_scales;  // T x K train trace factors
  SolverKind kind = SolverKind::svm;
  std::vector<IterationRecord> history;
  /// Training data, kept so that new points can be scored from raw features.
  std::vector<Matrix> train_features;
  std::vector<Vector> train_labels;
  /// Optional per-task input transforms applied by predict_features; the
  /// stored training features are already transformed.
  std::vector<ZScore> normalization;
};

/// Labels of every task in bank order.
std::vector<Vector> labels_of(const DatasetBundle& bundle);

/// Solves every task's dual on its combined kernel sum_k B(k,t) K_tk.
std::vector<DualSolution> solve_all(const KernelBank& bank, const std::vector<Vector>& labels, const Matrix& B,
                                    const TrainConfig& cfg);

/// K x T matrix of squared RKHS norms for the current solutions.
Matrix rkhs_norm_matrix(const KernelBank& bank, const std::vector<Vector>& labels, const Matrix& B,
                        const std::vector<DualSolution>& models);

double relative_change(const Matrix& next, const Matrix& prev);

/// Alternating minimization over (alpha | B | Omega). B starts uniform (1/K),
/// Omega at I/T. The inner loop alternates T dual solves with the B update
/// until B stops changing; each outer iteration then refreshes Omega.
MkMtrlModel fit_joint(const KernelBank& bank, const std::vector<Vector>& labels, const TrainConfig& cfg);

/// sum_t (1/2 sum_k |w_tk|^2 / beta_tk + loss_t) [+ mu/2 tr(B Omega^+ B')].
/// loss_t is C * sum of hinge slacks for svm and |y - f|^2 / (2 lambda) for krr.
double objective(const KernelBank& bank, const std::vector<Vector>& labels, const Matrix& B, const Matrix& omega,
                 const std::vector<DualSolution>& models, const TrainConfig& cfg);

/// Per-task scores for the cross grams (test x train) of `cross`.
std::vector<Vector> predict(const MkMtrlModel& model, const KernelBank& cross);
std::vector<Vector> predict(const MkMtrlModel& model, const std::vector<std::vector<GramMatrix>>& cross);

/// Scores raw feature rows of each task using the stored training data.
std::vector<Vector> predict_features(const MkMtrlModel& model, const std::vector<Matrix>& features);

/// JSON document; every floating-point value is stored as a hex float.
void save_model(const MkMtrlModel& model, const std::filesystem::path& path);
MkMtrlModel load_model(const std::filesystem::path& path);
std::string serialize_model(const MkMtrlModel& model);
MkMtrlModel deserialize_model(const std::string& text);

}  // namespace mkmtrl
