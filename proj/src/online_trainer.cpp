#include "mkmtrl/online_trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "mkmtrl/rng.hpp"

namespace mkmtrl {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct ProbePair {
  int task;
  Eigen::Index i, i2;
};

// Kernel values for a fixed probe set, evaluated once (K values per pair).
struct ProbeSet {
  std::vector<ProbePair> pairs;
  std::vector<PairExample> examples;

  double loss(const Matrix& B, std::size_t tasks) const {
    std::vector<double> sum(tasks, 0.0);
    std::vector<long> count(tasks, 0);
    for (const auto& ex : examples) {
      const double margin = ex.l * B.col(ex.task).dot(ex.z);
      sum[static_cast<std::size_t>(ex.task)] += std::max(0.0, 1.0 - margin);
      ++count[static_cast<std::size_t>(ex.task)];
    }
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t t = 0; t < tasks; ++t)
      if (count[t] > 0) {
        total += sum[t] / static_cast<double>(count[t]);
        ++used;
      }
    return used > 0 ? total / static_cast<double>(used) : 0.0;
  }
};

}  // namespace

MistakePredicate predicate_from_string(const std::string& s) {
  if (s == "margin") return MistakePredicate::margin;
  if (s == "sign") return MistakePredicate::sign;
  throw ConfigError("unknown mistake predicate '" + s + "'");
}

void OnlineConfig::validate() const {
  if (rounds < 0) throw ConfigError("online rounds must be >= 0");
  if (!(mu > 0)) throw ConfigError("mu must be positive");
  if (omega_period < 1) throw ConfigError("omega_period must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

std::pair<Eigen::Index, Eigen::Index> triangular_pair(std::uint64_t idx, Eigen::Index n) {
  // Pairs are ordered by i': (0,0), (0,1), (1,1), (0,2), ...
  auto j = static_cast<std::uint64_t>((std::sqrt(8.0 * static_cast<double>(idx) + 1.0) - 1.0) / 2.0);
  while (j * (j + 1) / 2 > idx) --j;
  while ((j + 1) * (j + 2) / 2 <= idx) ++j;
  const std::uint64_t i = idx - j * (j + 1) / 2;
  if (static_cast<Eigen::Index>(j) >= n) throw DimensionError("pair index out of range");
  return {static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)};
}

Matrix online_trace_scales(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs) {
  Matrix out(static_cast<Eigen::Index>(bundle.tasks.size()), static_cast<Eigen::Index>(specs.size()));
  for (std::size_t t = 0; t < bundle.tasks.size(); ++t)
    for (std::size_t k = 0; k < specs.size(); ++k) {
      const double tr = gram_trace(specs[k], bundle.tasks[t].features);
      if (!(tr > 0)) throw NumericError("kernel " + specs[k].to_string() + " has zero trace on task " + std::to_string(t));
      out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = tr;
    }
  return out;
}

PairExample make_pair_example(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs,
                              const Matrix& trace_scales, int task, Eigen::Index i, Eigen::Index i2) {
  if (task < 0 || static_cast<std::size_t>(task) >= bundle.tasks.size())
    throw DimensionError("task index " + std::to_string(task) + " out of range");
  const TaskDataset& data = bundle.tasks[static_cast<std::size_t>(task)];
  if (i < 0 || i >= data.size() || i2 < 0 || i2 >= data.size())
    throw DimensionError("example index out of range for task " + std::to_string(task));
  const Vector x = data.features.row(i).transpose();
  const Vector x2 = data.features.row(i2).transpose();
  PairExample ex;
  ex.task = task;
  ex.l = data.labels(i) == data.labels(i2) ? 1.0 : -1.0;
  ex.z.resize(static_cast<Eigen::Index>(specs.size()));
  for (std::size_t k = 0; k < specs.size(); ++k)
    ex.z(static_cast<Eigen::Index>(k)) =
        kernel_eval(specs[k], x, x2, trace_scales(task, static_cast<Eigen::Index>(k)));
  return ex;
}

bool online_step_inplace(OnlineState& state, const PairExample& ex, double mu, int omega_period,
                         MistakePredicate predicate) {
  Matrix& B = state.weights.B;
  const double predicted = B.col(ex.task).dot(ex.z);
  const double margin = ex.l * predicted;
  const bool mistake = predicate == MistakePredicate::margin ? margin < 1.0 : margin <= 0.0;
  ++state.round;
  if (!mistake) return false;
  const Eigen::Index T = B.cols();
  const double step = ex.l / mu;
  for (Eigen::Index t = 0; t < T; ++t) {
    const double w = state.relationship.omega(ex.task, t);
    if (w != 0.0) B.col(t) = (B.col(t) + (step * w) * ex.z).cwiseMax(0.0);
  }
  ++state.mistakes;
  if (state.mistakes % omega_period == 0 && T > 1 && (B.array() != 0).any()) {
    state.relationship = update_relationship(state.weights);
    return true;
  }
  return false;
}

OnlineState online_step(const OnlineState& state, const PairExample& ex, double mu, int omega_period,
                        MistakePredicate predicate) {
  OnlineState next = state;
  online_step_inplace(next, ex, mu, omega_period, predicate);
  return next;
}

OnlineState learn_weights_online(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs,
                                 const Matrix& trace_scales, const OnlineConfig& online, OnlineTrace* trace) {
  online.validate();
  bundle.validate();
  const auto T = static_cast<Eigen::Index>(bundle.tasks.size());
  const auto K = static_cast<Eigen::Index>(specs.size());
  if (K == 0) throw ConfigError("no kernel specs");
  const auto grams_before = gram_computations();
  const auto start = Clock::now();

  OnlineState state;
  state.weights.B = Matrix::Zero(K, T);
  state.relationship = TaskRelationship::scaled_identity(T);
  state.rng_seed = online.seed;

  const bool want_probe = trace != nullptr || online.log != nullptr;
  ProbeSet probe;
  if (want_probe && online.probe_pairs > 0) {
    Rng probe_rng(derive_seed(online.seed, 0x9be));
    for (Eigen::Index t = 0; t < T; ++t) {
      const Eigen::Index n = bundle.tasks[static_cast<std::size_t>(t)].size();
      const auto total = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n + 1) / 2;
      for (std::size_t p = 0; p < online.probe_pairs; ++p) {
        const auto [i, i2] = triangular_pair(probe_rng.index(total), n);
        probe.examples.push_back(make_pair_example(bundle, specs, trace_scales, static_cast<int>(t), i, i2));
      }
    }
  }

  Rng rng(online.seed);
  double min_weight = 0.0;
  for (long r = 1; r <= online.rounds; ++r) {
    const auto t = static_cast<int>(rng.index(static_cast<std::uint64_t>(T)));
    const Eigen::Index n = bundle.tasks[static_cast<std::size_t>(t)].size();
    const auto total = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n + 1) / 2;
    const auto [i, i2] = triangular_pair(rng.index(total), n);
    const PairExample ex = make_pair_example(bundle, specs, trace_scales, t, i, i2);
    const bool refreshed = online_step_inplace(state, ex, online.mu, online.omega_period, online.predicate);
    if (trace) {
      min_weight = std::min(min_weight, state.weights.B.minCoeff());
      if (refreshed) {
        const Matrix& om = state.relationship.omega;
        trace->refreshes.push_back({state.round, (om - om.transpose()).cwiseAbs().maxCoeff(), min_eigenvalue(om),
                                    om.trace()});
      }
    }
    if (want_probe && r % online.log_every == 0) {
      const double loss = probe.loss(state.weights.B, static_cast<std::size_t>(T));
      if (trace) {
        trace->probe_rounds.push_back(r);
        trace->probe_loss.push_back(loss);
      }
      if (online.log)
        *online.log << "{\"round\": " << r << ", \"mistakes\": " << state.mistakes << ", \"probe_hinge\": " << loss
                    << "}\n";
    }
  }
  if (trace) {
    trace->min_weight = min_weight;
    trace->stage_one_seconds = seconds_since(start);
    trace->grams_built_in_stage_one = gram_computations() - grams_before;
  }
  return state;
}

MkMtrlModel fit_online(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs, const OnlineConfig& online,
                       const TrainConfig& cfg, OnlineTrace* trace) {
  online.validate();
  cfg.validate();
  const Matrix scales = online_trace_scales(bundle, specs);
  OnlineState state = learn_weights_online(bundle, specs, scales, online, trace);
  if ((state.weights.B.array() == 0).all())
    throw NumericError("no mistakes driven learning: kernel weights are identically zero (mu too large or degenerate data)");

  const auto start = Clock::now();
  KernelBank bank = build_bank(bundle, specs, nullptr, cfg.workers);
  const std::vector<Vector> labels = labels_of(bundle);
  MkMtrlModel model;
  model.models = solve_all(bank, labels, state.weights.B, cfg);
  model.weights = std::move(state.weights);
  model.relationship = std::move(state.relationship);
  model.specs = specs;
  model.trace_scales = bank.trace_scales();
  model.kind = cfg.kind;
  model.train_labels = labels;
  for (const auto& t : bundle.tasks) model.train_features.push_back(t.features);
  if (trace) trace->stage_two_seconds = seconds_since(start);
  return model;
}

double pair_hinge_loss(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs, const Matrix& B, int task,
                       const Matrix& trace_scales) {
  if (task < 0 || static_cast<std::size_t>(task) >= bundle.tasks.size()) throw DimensionError("task out of range");
  if (B.rows() != static_cast<Eigen::Index>(specs.size())) throw DimensionError("B has the wrong number of rows");
  const Eigen::Index n = bundle.tasks[static_cast<std::size_t>(task)].size();
  const Vector beta = B.col(task);
  double sum = 0.0;
  for (Eigen::Index i2 = 0; i2 < n; ++i2)
    for (Eigen::Index i = 0; i <= i2; ++i) {
      const PairExample ex = make_pair_example(bundle, specs, trace_scales, task, i, i2);
      sum += std::max(0.0, 1.0 - ex.l * beta.dot(ex.z));
    }
  return sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0 + static_cast<double>(n));
}

double pair_hinge_loss(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs, const Matrix& B, int task) {
  return pair_hinge_loss(bundle, specs, B, task, online_trace_scales(bundle, specs));
}

}  // namespace mkmtrl
