#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mkmtrl/data_io.hpp"
#include "mkmtrl/joint_trainer.hpp"
#include "mkmtrl/kernel_bank.hpp"
#include "mkmtrl/online_trainer.hpp"

namespace mkmtrl {

enum class MetricKind { auc, mse, nmse, explained_variance, accuracy };

const char* to_string(MetricKind kind);
MetricKind metric_kind_from_string(const std::string& s);
/// Larger is better for auc, explained_variance and accuracy.
bool higher_is_better(MetricKind kind);

struct MetricReport {
  Vector per_task;  // metric of each task (averaged over runs or folds)
  double mean = 0.0;
  double std_over_runs = 0.0;
  MetricKind metric_kind = MetricKind::auc;
};

/// Rank statistic with midranks for ties; needs both classes.
double auc(const Vector& scores, const Vector& labels);
double mse(const Vector& pred, const Vector& truth);
/// Uses the population variance of truth; constant truth is an error.
double nmse(const Vector& pred, const Vector& truth);
double explained_variance(const Vector& pred, const Vector& truth);
/// Fraction of sign(score) == label; a zero score counts as +1.
double accuracy(const Vector& scores, const Vector& labels);
double evaluate_metric(MetricKind kind, const Vector& scores, const Vector& truth);

/// Independent per-task solves on a single kernel of the bank.
std::vector<DualSolution> fit_stl(const KernelBank& bank, const std::vector<Vector>& labels, const TrainConfig& cfg,
                                  std::size_t kernel_index = 0);

enum class ImklMode { penalty, constraint };

inline constexpr double kInfiniteNorm = std::numeric_limits<double>::infinity();

struct ImklResult {
  KernelWeights weights;
  std::vector<DualSolution> models;
  std::vector<std::string> warnings;
  int steps = 0;
};

/// Per-task lp-norm MKL. penalty: beta_k = (W_k / mu)^(1/3) with cfg.mu.
/// constraint: beta_k = W_k^(1/(p+1)) / (sum_j W_j^(p/(p+1)))^(1/p), and all
/// ones for p = kInfiniteNorm. Steps alternate with the dual solves until the
/// relative change of B is at most cfg.tol_B, for at most
/// cfg.max_outer * cfg.max_inner steps.
ImklResult fit_imkl(const KernelBank& bank, const std::vector<Vector>& labels, const TrainConfig& cfg, double p,
                    ImklMode mode = ImklMode::constraint);

/// One closed-form update of a task's weights from its RKHS norms.
Vector imkl_constraint_update(const Vector& W, double p);
Vector imkl_penalty_update(const Vector& W, double mu);

inline const std::vector<double> kDefaultPGrid = {2.0, 3.0, 4.0, 6.0, 8.67};

enum class Algorithm { stl, imkl, mkmtrl, mkmtrl_online };

const char* to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

/// One grid point. mu unset selects the normalized form for mkmtrl and the
/// constraint form for imkl; `kernel` is the bank index used by stl.
struct HyperParams {
  double C = 1.0;
  std::optional<double> mu;
  double lambda = 1.0;
  double p = 2.0;
  std::size_t kernel = 0;

  std::string to_string() const;
};

/// Cartesian product; an empty mu list means "mu unset". kernels only
/// matters for stl (pass {0} otherwise).
std::vector<HyperParams> make_grid(const std::vector<double>& Cs, const std::vector<double>& mus,
                                   const std::vector<double>& lambdas, const std::vector<double>& ps,
                                   const std::vector<std::size_t>& kernels = {0});

struct AlgorithmSettings {
  Algorithm algorithm = Algorithm::mkmtrl;
  TrainConfig train;     // C, mu, lambda and p are overridden per grid point
  OnlineConfig online;   // mkmtrl_online stage one; mu comes from the grid point
};

/// Fits one algorithm on a prebuilt train bank. Every algorithm's result is
/// expressed as a model with kernel weights so that prediction is shared.
/// `train` is only read by mkmtrl_online.
MkMtrlModel fit_algorithm(const DatasetBundle& train, const KernelBank& bank, const AlgorithmSettings& settings,
                          const HyperParams& params, std::vector<std::string>* warnings = nullptr);

struct CvResult {
  HyperParams best;
  MetricReport validation;  // std_over_runs holds the spread across folds
  std::vector<double> grid_scores;  // mean validation metric per grid point
};

/// Stratified per-task k-fold CV. Scores are AUC for classification and
/// explained variance for regression, averaged unweighted over tasks. The
/// best score wins; ties go to the earlier point after ordering by C, then mu.
CvResult cross_validate(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs,
                        const AlgorithmSettings& settings, const std::vector<HyperParams>& grid, int folds,
                        std::uint64_t seed, int workers = 1);

}  // namespace mkmtrl
