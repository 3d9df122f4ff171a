#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "mkmtrl/data_io.hpp"
#include "mkmtrl/joint_trainer.hpp"
#include "mkmtrl/kernel_bank.hpp"
#include "mkmtrl/relationship.hpp"

namespace mkmtrl {

/// One example of the pairwise instance space: z holds the K normalized
/// base-kernel values of a pair of task-t examples, l is +1 when the two
/// labels agree and -1 otherwise.
struct PairExample {
  Vector z;
  double l = 1.0;
  int task = 0;
};

struct OnlineState {
  KernelWeights weights;
  TaskRelationship relationship;
  long round = 0;
  long mistakes = 0;
  std::uint64_t rng_seed = 0;
};

/// margin: update when l * (beta'z) < 1. sign: update when l * (beta'z) <= 0.
enum class MistakePredicate { margin, sign };

MistakePredicate predicate_from_string(const std::string& s);

struct OnlineConfig {
  long rounds = 100000;
  double mu = 1.0;
  int omega_period = 100;  // relationship refresh every this many mistakes
  MistakePredicate predicate = MistakePredicate::margin;
  std::uint64_t seed = 0;
  long log_every = 10000;
  std::ostream* log = nullptr;  // progress lines, one per log_every rounds
  std::size_t probe_pairs = 200;  // per task, for the progress diagnostic

  void validate() const;
};

/// Diagnostics collected during stage one.
struct OnlineTrace {
  struct Refresh {
    long round = 0;
    double asymmetry = 0.0;
    double min_eigenvalue = 0.0;
    double trace = 0.0;
  };
  std::vector<long> probe_rounds;
  std::vector<double> probe_loss;  // task-averaged pair hinge on the probe set
  std::vector<Refresh> refreshes;
  double min_weight = 0.0;  // smallest entry of B seen after any step
  double stage_one_seconds = 0.0;
  double stage_two_seconds = 0.0;
  std::uint64_t grams_built_in_stage_one = 0;
};

/// T x K train trace factors, computed from the diagonals only.
Matrix online_trace_scales(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs);

PairExample make_pair_example(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs,
                              const Matrix& trace_scales, int task, Eigen::Index i, Eigen::Index i2);

/// Applies one round. On a mistake every task's weights move by
/// (1/mu) l Omega(t, t') z and are projected onto B >= 0; every
/// omega_period-th mistake refreshes Omega from B (skipped while B = 0).
OnlineState online_step(const OnlineState& state, const PairExample& ex, double mu, int omega_period,
                        MistakePredicate predicate = MistakePredicate::margin);

/// In-place form of online_step; returns true when the relationship was refreshed.
bool online_step_inplace(OnlineState& state, const PairExample& ex, double mu, int omega_period,
                         MistakePredicate predicate = MistakePredicate::margin);

/// Stage one (R rounds of uniform task, then uniform pair i <= i') followed by
/// stage two: per-task solves on the combined kernels of the learned B.
MkMtrlModel fit_online(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs, const OnlineConfig& online,
                       const TrainConfig& cfg, OnlineTrace* trace = nullptr);

/// Stage one only; never forms a gram matrix.
OnlineState learn_weights_online(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs,
                                 const Matrix& trace_scales, const OnlineConfig& online,
                                 OnlineTrace* trace = nullptr);

/// Normalized pair hinge of task t: mean over all i <= i' of [1 - l beta_t'z]_+.
double pair_hinge_loss(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs, const Matrix& B, int task,
                       const Matrix& trace_scales);
double pair_hinge_loss(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs, const Matrix& B, int task);

/// Decodes a uniform index in [0, n(n+1)/2) into the pair (i, i') with i <= i'.
std::pair<Eigen::Index, Eigen::Index> triangular_pair(std::uint64_t idx, Eigen::Index n);

}  // namespace mkmtrl
