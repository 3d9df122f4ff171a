#include "mkmtrl/baselines_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mkmtrl {
namespace {

void check_lengths(const Vector& a, const Vector& b, const char* what) {
  if (a.size() != b.size())
    throw DimensionError(std::string(what) + ": lengths differ (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  if (a.size() < 2) throw DimensionError(std::string(what) + ": needs at least two values");
}

double population_variance(const Vector& v) {
  const double m = v.mean();
  return (v.array() - m).square().mean();
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Orders grid points for tie-breaking: smaller C, then smaller mu (unset first).
bool tie_precedes(const HyperParams& a, const HyperParams& b) {
  if (a.C != b.C) return a.C < b.C;
  if (a.mu.has_value() != b.mu.has_value()) return !a.mu.has_value();
  if (a.mu && *a.mu != *b.mu) return *a.mu < *b.mu;
  return false;
}

}  // namespace

const char* to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::auc: return "auc";
    case MetricKind::mse: return "mse";
    case MetricKind::nmse: return "nmse";
    case MetricKind::explained_variance: return "explained_variance";
    case MetricKind::accuracy: return "accuracy";
  }
  return "?";
}

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "auc") return MetricKind::auc;
  if (s == "mse") return MetricKind::mse;
  if (s == "nmse") return MetricKind::nmse;
  if (s == "explained_variance" || s == "ev") return MetricKind::explained_variance;
  if (s == "accuracy") return MetricKind::accuracy;
  throw ConfigError("unknown metric '" + s + "'");
}

bool higher_is_better(MetricKind kind) {
  return kind == MetricKind::auc || kind == MetricKind::explained_variance || kind == MetricKind::accuracy;
}

double auc(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) < scores(static_cast<Eigen::Index>(b));
  });
  double rank_sum = 0.0;  // midranks are multiples of 1/2, so this sum is exact
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores(static_cast<Eigen::Index>(order[j + 1])) == scores(static_cast<Eigen::Index>(order[i])))
      ++j;
    const double midrank = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) {
      const double l = labels(static_cast<Eigen::Index>(order[k]));
      if (l != 1.0 && l != -1.0) throw DimensionError("auc: labels must be +1 or -1");
      if (l > 0) {
        rank_sum += midrank;
        ++pos;
      }
    }
    i = j + 1;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw NumericError("auc: both classes must be present");
  const double u = rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
  const double pairs = static_cast<double>(pos) * static_cast<double>(neg);
  // Dividing the smaller of U and pairs - U keeps auc(s) + auc(-s) == 1 exactly.
  if (2.0 * u <= pairs) return u / pairs;
  return 1.0 - (pairs - u) / pairs;
}

double mse(const Vector& pred, const Vector& truth) {
  check_lengths(pred, truth, "mse");
  return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

double nmse(const Vector& pred, const Vector& truth) {
  check_lengths(pred, truth, "nmse");
  const double var = population_variance(truth);
  if (!(var > 0)) throw NumericError("nmse: ground truth is constant");
  return mse(pred, truth) / var;
}

double explained_variance(const Vector& pred, const Vector& truth) { return 1.0 - nmse(pred, truth); }

double accuracy(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw DimensionError("accuracy: scores and labels differ in length");
  if (scores.size() == 0) throw DimensionError("accuracy: empty input");
  Eigen::Index hit = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) hit += ((scores(i) >= 0 ? 1.0 : -1.0) == labels(i));
  return static_cast<double>(hit) / static_cast<double>(scores.size());
}

double evaluate_metric(MetricKind kind, const Vector& scores, const Vector& truth) {
  switch (kind) {
    case MetricKind::auc: return auc(scores, truth);
    case MetricKind::mse: return mse(scores, truth);
    case MetricKind::nmse: return nmse(scores, truth);
    case MetricKind::explained_variance: return explained_variance(scores, truth);
    case MetricKind::accuracy: return accuracy(scores, truth);
  }
  throw ConfigError("unknown metric");
}

std::vector<DualSolution> fit_stl(const KernelBank& bank, const std::vector<Vector>& labels, const TrainConfig& cfg,
                                  std::size_t kernel_index) {
  cfg.validate();
  if (kernel_index >= bank.num_kernels())
    throw ConfigError("stl kernel index " + std::to_string(kernel_index) + " out of range");
  if (labels.size() != bank.num_tasks()) throw DimensionError("stl: one label vector per task required");
  const SolverConfig scfg = cfg.solver();
  std::vector<DualSolution> out(bank.num_tasks());
  parallel_for(
      bank.num_tasks(),
      [&](std::size_t t) {
        try {
          out[t] = solve_task(cfg.kind, bank.grams[t][kernel_index].values, labels[t], scfg);
        } catch (const Error& e) {
          throw SolverError(e.what(), static_cast<int>(t));
        }
      },
      cfg.workers);
  return out;
}

Vector imkl_constraint_update(const Vector& W, double p) {
  if (std::isinf(p)) return Vector::Ones(W.size());
  if (!(p >= 1)) throw ConfigError("imkl: p must be >= 1");
  Vector num(W.size());
  double denom = 0.0;
  for (Eigen::Index k = 0; k < W.size(); ++k) {
    num(k) = std::pow(W(k), 1.0 / (p + 1.0));
    denom += std::pow(W(k), p / (p + 1.0));
  }
  return num / std::pow(denom, 1.0 / p);
}

Vector imkl_penalty_update(const Vector& W, double mu) {
  if (!(mu > 0)) throw ConfigError("imkl: mu must be positive");
  Vector out(W.size());
  for (Eigen::Index k = 0; k < W.size(); ++k) out(k) = std::max(kWeightFloor, std::cbrt(W(k) / mu));
  return out;
}

ImklResult fit_imkl(const KernelBank& bank, const std::vector<Vector>& labels, const TrainConfig& cfg, double p,
                    ImklMode mode) {
  cfg.validate();
  if (bank.num_kernels() < 1) throw ConfigError("imkl needs at least one kernel");
  if (mode == ImklMode::penalty && !cfg.mu) throw ConfigError("imkl penalty mode needs mu");
  if (mode == ImklMode::constraint && !std::isinf(p) && !(p >= 1)) throw ConfigError("imkl: p must be >= 1");
  const auto T = static_cast<Eigen::Index>(bank.num_tasks());
  const auto K = static_cast<Eigen::Index>(bank.num_kernels());

  ImklResult res;
  res.weights = KernelWeights::uniform(K, T);
  std::vector<bool> warned(static_cast<std::size_t>(T), false);
  res.models = solve_all(bank, labels, res.weights.B, cfg);
  const int cap = (mode == ImklMode::constraint && std::isinf(p)) ? 1 : cfg.max_outer * cfg.max_inner;
  for (int step = 1; step <= cap; ++step) {
    const Matrix W = rkhs_norm_matrix(bank, labels, res.weights.B, res.models);
    Matrix next(K, T);
    for (Eigen::Index t = 0; t < T; ++t) {
      if ((W.col(t).array() <= 0).all()) {
        next.col(t) = mode == ImklMode::penalty
                          ? Vector::Constant(K, 1.0 / static_cast<double>(K))
                          : Vector::Constant(K, std::pow(static_cast<double>(K), std::isinf(p) ? 0.0 : -1.0 / p));
        if (!warned[static_cast<std::size_t>(t)]) {
          res.warnings.push_back("task " + std::to_string(t) + ": all kernel norms are zero, using uniform weights");
          warned[static_cast<std::size_t>(t)] = true;
        }
        continue;
      }
      next.col(t) = mode == ImklMode::penalty ? imkl_penalty_update(W.col(t), *cfg.mu)
                                              : imkl_constraint_update(W.col(t), p);
    }
    const double change = relative_change(next, res.weights.B);
    res.weights.B = std::move(next);
    res.models = solve_all(bank, labels, res.weights.B, cfg);
    res.steps = step;
    if (change <= cfg.tol_B) break;
  }
  res.weights.validate();
  return res;
}

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::stl: return "stl";
    case Algorithm::imkl: return "imkl";
    case Algorithm::mkmtrl: return "mkmtrl";
    case Algorithm::mkmtrl_online: return "mkmtrl_online";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "stl") return Algorithm::stl;
  if (s == "imkl") return Algorithm::imkl;
  if (s == "mkmtrl") return Algorithm::mkmtrl;
  if (s == "mkmtrl_online") return Algorithm::mkmtrl_online;
  throw ConfigError("unknown algorithm '" + s + "'");
}

std::string HyperParams::to_string() const {
  std::ostringstream os;
  os << "C=" << C << " mu=";
  if (mu)
    os << *mu;
  else
    os << "-";
  os << " lambda=" << lambda << " p=" << p << " kernel=" << kernel;
  return os.str();
}

std::vector<HyperParams> make_grid(const std::vector<double>& Cs, const std::vector<double>& mus,
                                   const std::vector<double>& lambdas, const std::vector<double>& ps,
                                   const std::vector<std::size_t>& kernels) {
  const std::vector<double> Cv = Cs.empty() ? std::vector<double>{1.0} : Cs;
  const std::vector<double> lv = lambdas.empty() ? std::vector<double>{1.0} : lambdas;
  const std::vector<double> pv = ps.empty() ? std::vector<double>{2.0} : ps;
  const std::vector<std::size_t> kv = kernels.empty() ? std::vector<std::size_t>{0} : kernels;
  std::vector<std::optional<double>> mv;
  if (mus.empty()) mv.emplace_back();
  for (double m : mus) mv.emplace_back(m);
  std::vector<HyperParams> grid;
  for (double C : Cv)
    for (const auto& mu : mv)
      for (double lambda : lv)
        for (double p : pv)
          for (std::size_t k : kv) grid.push_back({C, mu, lambda, p, k});
  return grid;
}

MkMtrlModel fit_algorithm(const DatasetBundle& train, const KernelBank& bank, const AlgorithmSettings& settings,
                          const HyperParams& params, std::vector<std::string>* warnings) {
  TrainConfig cfg = settings.train;
  cfg.C = params.C;
  cfg.lambda = params.lambda;
  cfg.mu = params.mu;
  const std::vector<Vector> labels = labels_of(train);
  const auto T = static_cast<Eigen::Index>(bank.num_tasks());
  const auto K = static_cast<Eigen::Index>(bank.num_kernels());

  MkMtrlModel model;
  switch (settings.algorithm) {
    case Algorithm::mkmtrl:
      return fit_joint(bank, labels, cfg);
    case Algorithm::stl: {
      model.models = fit_stl(bank, labels, cfg, params.kernel);
      model.weights.B = Matrix::Zero(K, T);
      model.weights.B.row(static_cast<Eigen::Index>(params.kernel)).setOnes();
      break;
    }
    case Algorithm::imkl: {
      ImklResult res = fit_imkl(bank, labels, cfg, params.p, params.mu ? ImklMode::penalty : ImklMode::constraint);
      if (warnings) warnings->insert(warnings->end(), res.warnings.begin(), res.warnings.end());
      model.weights = std::move(res.weights);
      model.models = std::move(res.models);
      break;
    }
    case Algorithm::mkmtrl_online: {
      OnlineConfig online = settings.online;
      if (params.mu) online.mu = *params.mu;
      OnlineState state = learn_weights_online(train, bank.specs, bank.trace_scales(), online);
      if ((state.weights.B.array() == 0).all())
        throw NumericError("no mistakes driven learning: kernel weights are identically zero");
      cfg.mu.reset();
      model.models = solve_all(bank, labels, state.weights.B, cfg);
      model.weights = std::move(state.weights);
      model.relationship = std::move(state.relationship);
      break;
    }
  }
  if (model.relationship.omega.size() == 0) model.relationship = TaskRelationship::scaled_identity(T);
  model.specs = bank.specs;
  model.trace_scales = bank.trace_scales();
  model.kind = cfg.kind;
  model.train_labels = labels;
  return model;
}

CvResult cross_validate(const DatasetBundle& bundle, const std::vector<KernelSpec>& specs,
                        const AlgorithmSettings& settings, const std::vector<HyperParams>& grid, int folds,
                        std::uint64_t seed, int workers) {
  bundle.validate();
  if (grid.empty()) throw ConfigError("cross-validation grid is empty");
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  const TaskKind kind = bundle.kind();
  const bool classification = kind == TaskKind::classification;
  const MetricKind metric = classification ? MetricKind::auc : MetricKind::explained_variance;
  const auto fold_ids = assign_folds(bundle, folds, seed, classification);
  const std::size_t T = bundle.num_tasks();

  AlgorithmSettings local = settings;
  local.train.kind = classification ? SolverKind::svm : SolverKind::krr;
  local.train.workers = 1;

  struct Fold {
    DatasetBundle train, val;
    KernelBank bank;
  };
  std::vector<Fold> fs(static_cast<std::size_t>(folds));
  for (int f = 0; f < folds; ++f) {
    Fold& fold = fs[static_cast<std::size_t>(f)];
    fold.train.dim = fold.val.dim = bundle.dim;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<Eigen::Index> tr, va;
      for (std::size_t i = 0; i < fold_ids[t].size(); ++i)
        (fold_ids[t][i] == f ? va : tr).push_back(static_cast<Eigen::Index>(i));
      if (va.empty() || tr.empty())
        throw ConfigError("task " + std::to_string(t) + " has too few rows for " + std::to_string(folds) + " folds");
      if (!classification && va.size() < 2)
        throw ConfigError("task " + std::to_string(t) + ": every regression fold needs at least 2 rows");
      fold.train.tasks.push_back(bundle.tasks[t].subset(tr));
      fold.val.tasks.push_back(bundle.tasks[t].subset(va));
    }
  }
  parallel_for(
      fs.size(), [&](std::size_t f) { fs[f].bank = build_bank(fs[f].train, specs, &fs[f].val, 1); }, workers);

  // scores[g][f * T + t]; NaN marks a grid point whose fit failed.
  const std::size_t jobs = grid.size() * fs.size();
  std::vector<std::vector<double>> scores(grid.size(), std::vector<double>(fs.size() * T, 0.0));
  std::vector<std::string> failures(grid.size());
  parallel_for(
      jobs,
      [&](std::size_t job) {
        const std::size_t g = job / fs.size();
        const std::size_t f = job % fs.size();
        const Fold& fold = fs[f];
        try {
          const MkMtrlModel model = fit_algorithm(fold.train, fold.bank, local, grid[g]);
          const std::vector<Vector> pred = predict(model, fold.bank.cross);
          for (std::size_t t = 0; t < T; ++t)
            scores[g][f * T + t] = evaluate_metric(metric, pred[t], fold.val.tasks[t].labels);
        } catch (const Error& e) {
          for (std::size_t t = 0; t < T; ++t) scores[g][f * T + t] = std::nan("");
          if (f == 0) failures[g] = e.what();
        }
      },
      workers);

  CvResult out;
  out.grid_scores.resize(grid.size());
  std::optional<std::size_t> best;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& s = scores[g];
    double total = 0.0;
    bool failed = false;
    for (double v : s) {
      failed = failed || std::isnan(v);
      total += v;
    }
    out.grid_scores[g] = failed ? std::nan("") : total / static_cast<double>(s.size());
    if (failed) continue;
    if (!best || out.grid_scores[g] > out.grid_scores[*best] ||
        (out.grid_scores[g] == out.grid_scores[*best] && tie_precedes(grid[g], grid[*best])))
      best = g;
  }
  if (!best) {
    std::string msg = "every grid point failed during cross-validation";
    for (const auto& f : failures)
      if (!f.empty()) {
        msg += ": " + f;
        break;
      }
    throw Error(msg);
  }

  out.best = grid[*best];
  MetricReport& rep = out.validation;
  rep.metric_kind = metric;
  rep.per_task = Vector::Zero(static_cast<Eigen::Index>(T));
  std::vector<double> fold_means;
  for (std::size_t f = 0; f < fs.size(); ++f) {
    std::vector<double> task_scores;
    for (std::size_t t = 0; t < T; ++t) {
      const double v = scores[*best][f * T + t];
      rep.per_task(static_cast<Eigen::Index>(t)) += v / static_cast<double>(fs.size());
      task_scores.push_back(v);
    }
    fold_means.push_back(mean_of(task_scores));
  }
  rep.mean = out.grid_scores[*best];
  rep.std_over_runs = std_of(fold_means);
  return out;
}

}  // namespace mkmtrl
