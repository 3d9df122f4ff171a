#include "mkmtrl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mkmtrl/rng.hpp"

namespace mkmtrl {
namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not an integer");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"data", {"path", "format", "kind", "label_col", "task_col", "header", "dim", "normalize"}},
      {"kernels", {"specs", "polynomial", "rbf", "univariate_rbf", "linear"}},
      {"experiment",
       {"algorithms", "train_per_task", "runs", "seed", "folds", "metric", "protocol", "C", "workers", "save_models"}},
      {"hyper", {"C", "mu", "lambda", "p"}},
      {"train", {"max_outer", "max_inner", "tol_B", "solver_tol"}},
      {"online", {"rounds", "omega_period", "predicate", "mu", "log_every"}},
      {"output", {"dir"}},
  };
  return keys;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<HyperParams> grid_for(const ExperimentConfig& cfg, Algorithm algo, std::size_t num_kernels) {
  const bool regression = cfg.kind == TaskKind::regression;
  const std::vector<double> Cs = cfg.fixed_C ? std::vector<double>{*cfg.fixed_C}
                                 : regression ? std::vector<double>{1.0}
                                              : cfg.Cs;
  const std::vector<double> lambdas = regression ? cfg.lambdas : std::vector<double>{1.0};
  switch (algo) {
    case Algorithm::stl: {
      std::vector<std::size_t> kernels(num_kernels);
      for (std::size_t k = 0; k < num_kernels; ++k) kernels[k] = k;
      return make_grid(Cs, {}, lambdas, {2.0}, kernels);
    }
    case Algorithm::imkl:
      return make_grid(Cs, {}, lambdas, cfg.ps);
    case Algorithm::mkmtrl:
      return make_grid(Cs, cfg.mus, lambdas, {2.0});
    case Algorithm::mkmtrl_online:
      return make_grid(Cs, cfg.mus.empty() ? std::vector<double>{cfg.online.mu} : cfg.mus, lambdas, {2.0});
  }
  return {};
}

// Largest usable fold count: classification needs every class in every fold,
// regression needs two rows per validation fold.
int feasible_folds(const DatasetBundle& train, int wanted) {
  int folds = wanted;
  for (const auto& t : train.tasks) {
    if (t.kind == TaskKind::classification)
      folds = std::min<int>(folds, static_cast<int>(std::min(t.count_label(1.0), t.count_label(-1.0))));
    else
      folds = std::min<int>(folds, static_cast<int>(t.size() / 2));
  }
  return folds;
}

}  // namespace

bool KernelTemplates::empty() const {
  return explicit_specs.empty() && polynomial == 0 && rbf == 0 && univariate_rbf == 0 && !linear;
}

std::vector<KernelSpec> KernelTemplates::expand(const DatasetBundle& train) const {
  std::vector<KernelSpec> out = explicit_specs;
  Eigen::Index rows = 0;
  for (const auto& t : train.tasks) rows += t.size();
  Matrix pooled(rows, train.dim);
  Eigen::Index at = 0;
  for (const auto& t : train.tasks) {
    pooled.middleRows(at, t.size()) = t.features;
    at += t.size();
  }
  if (linear) out.push_back(KernelSpec::linear());
  if (polynomial > 0)
    for (const auto& s : grid_specs(KernelKind::polynomial, pooled, polynomial)) out.push_back(s);
  if (rbf > 0)
    for (const auto& s : grid_specs(KernelKind::rbf, pooled, rbf)) out.push_back(s);
  if (univariate_rbf > 0)
    for (const auto& s : grid_specs(KernelKind::univariate_rbf, pooled, univariate_rbf)) out.push_back(s);
  return out;
}

MetricKind ExperimentConfig::report_metric() const {
  if (metric) return *metric;
  return kind == TaskKind::classification ? MetricKind::auc : MetricKind::nmse;
}

void ExperimentConfig::validate() const {
  if (data_path.empty()) throw ConfigError("[data] path is required");
  if (format != "csv" && format != "sparse") throw ConfigError("[data] format must be csv or sparse");
  if (kernels.empty()) throw ConfigError("[kernels] no kernels configured");
  for (const auto& s : kernels.explicit_specs) s.validate();
  if (algorithms.empty()) throw ConfigError("[experiment] algorithms is required");
  if (train_per_task.empty()) throw ConfigError("[experiment] train_per_task is required");
  for (auto n : train_per_task)
    if (n < 2) throw ConfigError("[experiment] train_per_task values must be >= 2");
  if (runs < 1) throw ConfigError("[experiment] runs must be >= 1");
  if (folds < 2) throw ConfigError("[experiment] folds must be >= 2");
  if (kind == TaskKind::classification && Cs.empty() && !fixed_C) throw ConfigError("[hyper] C grid is empty");
  for (double c : Cs)
    if (!(c > 0)) throw ConfigError("[hyper] C values must be positive");
  for (double m : mus)
    if (!(m > 0)) throw ConfigError("[hyper] mu values must be positive");
  for (double l : lambdas)
    if (!(l > 0)) throw ConfigError("[hyper] lambda values must be positive");
  if (kind == TaskKind::regression && lambdas.empty()) throw ConfigError("[hyper] lambda grid is empty");
  const bool has_imkl = std::find(algorithms.begin(), algorithms.end(), Algorithm::imkl) != algorithms.end();
  if (has_imkl && ps.empty()) throw ConfigError("[hyper] p grid is empty");
  for (double p : ps)
    if (!(p >= 1)) throw ConfigError("[hyper] p values must be >= 1");
  const bool has_online =
      std::find(algorithms.begin(), algorithms.end(), Algorithm::mkmtrl_online) != algorithms.end();
  if (has_online) online.validate();
  if (has_online && kind == TaskKind::regression)
    throw ConfigError("mkmtrl_online needs classification labels (pair labels compare classes)");
  if (metric) {
    const bool cls_metric = *metric == MetricKind::auc || *metric == MetricKind::accuracy;
    if (cls_metric != (kind == TaskKind::classification))
      throw ConfigError(std::string("[experiment] metric ") + to_string(*metric) + " does not fit the task kind");
  }
  train.validate();
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const auto& known = known_keys();
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    if (it == known.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
  }
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(key, '.'))) return trim(*v);
    return std::nullopt;
  };

  ExperimentConfig cfg;
  if (auto v = get("data.path")) cfg.data_path = *v;
  if (!cfg.data_path.empty() && cfg.data_path.is_relative()) cfg.data_path = base_dir / cfg.data_path;
  if (auto v = get("data.format")) cfg.format = *v;
  if (auto v = get("data.kind")) cfg.kind = task_kind_from_string(*v);
  cfg.csv.kind = cfg.kind;
  if (auto v = get("data.label_col")) cfg.csv.label_col = static_cast<int>(to_long("data.label_col", *v));
  if (auto v = get("data.task_col")) cfg.csv.task_col = static_cast<int>(to_long("data.task_col", *v));
  if (auto v = get("data.header")) cfg.csv.header = to_bool("data.header", *v);
  if (auto v = get("data.dim")) cfg.dim = to_long("data.dim", *v);
  if (auto v = get("data.normalize")) cfg.normalize = to_bool("data.normalize", *v);

  if (auto v = get("kernels.specs"))
    for (const auto& s : split_list(*v)) cfg.kernels.explicit_specs.push_back(KernelSpec::parse(s));
  if (auto v = get("kernels.polynomial")) cfg.kernels.polynomial = static_cast<int>(to_long("kernels.polynomial", *v));
  if (auto v = get("kernels.rbf")) cfg.kernels.rbf = static_cast<int>(to_long("kernels.rbf", *v));
  if (auto v = get("kernels.univariate_rbf"))
    cfg.kernels.univariate_rbf = static_cast<int>(to_long("kernels.univariate_rbf", *v));
  if (auto v = get("kernels.linear")) cfg.kernels.linear = to_bool("kernels.linear", *v);

  if (auto v = get("experiment.algorithms"))
    for (const auto& s : split_list(*v)) cfg.algorithms.push_back(algorithm_from_string(s));
  if (auto v = get("experiment.train_per_task"))
    for (const auto& s : split_list(*v)) cfg.train_per_task.push_back(to_long("experiment.train_per_task", s));
  if (auto v = get("experiment.runs")) cfg.runs = static_cast<int>(to_long("experiment.runs", *v));
  if (auto v = get("experiment.seed")) cfg.seed = static_cast<std::uint64_t>(to_long("experiment.seed", *v));
  if (auto v = get("experiment.folds")) cfg.folds = static_cast<int>(to_long("experiment.folds", *v));
  if (auto v = get("experiment.metric")) cfg.metric = metric_kind_from_string(*v);
  if (auto v = get("experiment.C")) cfg.fixed_C = to_double("experiment.C", *v);
  if (auto v = get("experiment.protocol")) {
    if (*v == "object_recognition") {
      if (!cfg.fixed_C) cfg.fixed_C = 1000.0;
    } else if (*v != "default") {
      throw ConfigError("experiment.protocol: unknown protocol '" + *v + "'");
    }
  }
  if (auto v = get("experiment.workers")) cfg.workers = static_cast<int>(to_long("experiment.workers", *v));
  if (auto v = get("experiment.save_models")) cfg.save_models = to_bool("experiment.save_models", *v);

  if (auto v = get("hyper.C")) cfg.Cs = to_doubles("hyper.C", *v);
  if (auto v = get("hyper.mu")) cfg.mus = to_doubles("hyper.mu", *v);
  if (auto v = get("hyper.lambda")) cfg.lambdas = to_doubles("hyper.lambda", *v);
  if (auto v = get("hyper.p")) {
    cfg.ps.clear();
    for (const auto& s : split_list(*v)) cfg.ps.push_back(s == "inf" ? kInfiniteNorm : to_double("hyper.p", s));
  }

  if (auto v = get("train.max_outer")) cfg.train.max_outer = static_cast<int>(to_long("train.max_outer", *v));
  if (auto v = get("train.max_inner")) cfg.train.max_inner = static_cast<int>(to_long("train.max_inner", *v));
  if (auto v = get("train.tol_B")) cfg.train.tol_B = to_double("train.tol_B", *v);
  if (auto v = get("train.solver_tol")) cfg.train.solver_tol = to_double("train.solver_tol", *v);
  cfg.train.kind = cfg.kind == TaskKind::classification ? SolverKind::svm : SolverKind::krr;

  if (auto v = get("online.rounds")) cfg.online.rounds = to_long("online.rounds", *v);
  if (auto v = get("online.omega_period"))
    cfg.online.omega_period = static_cast<int>(to_long("online.omega_period", *v));
  if (auto v = get("online.predicate")) cfg.online.predicate = predicate_from_string(*v);
  if (auto v = get("online.mu")) cfg.online.mu = to_double("online.mu", *v);
  if (auto v = get("online.log_every")) cfg.online.log_every = to_long("online.log_every", *v);

  if (auto v = get("output.dir")) {
    cfg.output_dir = *v;
    if (cfg.output_dir.is_relative()) cfg.output_dir = base_dir / cfg.output_dir;
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

DatasetBundle load_experiment_data(const ExperimentConfig& cfg) {
  if (!std::filesystem::exists(cfg.data_path)) throw ConfigError("data path does not exist: " + cfg.data_path.string());
  CsvOptions csv = cfg.csv;
  csv.kind = cfg.kind;
  DatasetBundle bundle = cfg.format == "csv" ? load_csv(cfg.data_path, csv)
                                             : load_sparse_text(cfg.data_path, cfg.kind, cfg.dim);
  bundle.validate();
  return bundle;
}

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  struct Acc {
    double total = 0.0;
    long count = 0;
    std::map<int, std::pair<double, long>> per_run;
  };
  std::vector<std::pair<Algorithm, Eigen::Index>> order;
  std::map<std::pair<int, Eigen::Index>, Acc> acc;
  for (const auto& r : rows) {
    const auto key = std::make_pair(static_cast<int>(r.algorithm), r.train_size);
    if (!acc.count(key)) order.emplace_back(r.algorithm, r.train_size);
    Acc& a = acc[key];
    a.total += r.value;
    ++a.count;
    auto& run = a.per_run[r.run];
    run.first += r.value;
    ++run.second;
  }
  std::vector<SummaryRow> out;
  for (const auto& [algo, size] : order) {
    const Acc& a = acc.at({static_cast<int>(algo), size});
    std::vector<double> run_means;
    for (const auto& [run, s] : a.per_run) run_means.push_back(s.first / static_cast<double>(s.second));
    out.push_back({algo, size, a.total / static_cast<double>(a.count), sample_std(run_means),
                   static_cast<int>(a.per_run.size())});
  }
  return out;
}

void emit_report(const ExperimentResult& result, const std::filesystem::path& output_dir, bool partial,
                 const std::string& error) {
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  if (ec) throw Error("cannot create output directory " + output_dir.string() + ": " + ec.message());
  auto open = [&](const char* name) {
    std::ofstream out(output_dir / name);
    if (!out) throw Error("cannot write " + (output_dir / name).string());
    return out;
  };
  const char* metric = to_string(result.metric);
  {
    auto out = open("report.csv");
    out << "algorithm,train_size,run,task,metric,value\n";
    for (const auto& r : result.rows)
      out << to_string(r.algorithm) << ',' << r.train_size << ',' << r.run << ',' << r.task << ',' << metric << ','
          << fmt(r.value) << '\n';
  }
  {
    auto out = open("summary.csv");
    out << "algorithm,train_size,metric,mean,std,runs\n";
    for (const auto& s : result.summary)
      out << to_string(s.algorithm) << ',' << s.train_size << ',' << metric << ',' << fmt(s.mean) << ','
          << fmt(s.std) << ',' << s.runs << '\n';
  }
  {
    auto out = open("curves.csv");
    out << "algorithm,train_size,mean,std\n";
    std::vector<SummaryRow> sorted = result.summary;
    std::stable_sort(sorted.begin(), sorted.end(), [](const SummaryRow& a, const SummaryRow& b) {
      if (a.algorithm != b.algorithm) return static_cast<int>(a.algorithm) < static_cast<int>(b.algorithm);
      return a.train_size < b.train_size;
    });
    for (const auto& s : sorted)
      out << to_string(s.algorithm) << ',' << s.train_size << ',' << fmt(s.mean) << ',' << fmt(s.std) << '\n';
  }
  {
    auto out = open("status.json");
    std::string escaped;
    for (char c : error) {
      if (c == '"' || c == '\\') escaped += '\\';
      escaped += (c == '\n' ? ' ' : c);
    }
    out << "{\"status\": \"" << (partial ? "partial" : "complete") << "\", \"partial\": " << (partial ? "true" : "false")
        << ", \"rows\": " << result.rows.size() << ", \"error\": \"" << escaped << "\"}\n";
  }
}

int run_experiment(const ExperimentConfig& cfg) {
  DatasetBundle bundle;
  try {
    cfg.validate();
    bundle = load_experiment_data(cfg);
    if ((bundle.kind() == TaskKind::classification) != (cfg.kind == TaskKind::classification))
      throw ConfigError("data labels do not match [data] kind");
  } catch (const Error& e) {
    std::cerr << "mkmtrl: " << e.what() << '\n';
    return 2;
  }

  struct Item {
    Eigen::Index size;
    int run;
  };
  std::vector<Item> items;
  for (auto size : cfg.train_per_task)
    for (int run = 0; run < cfg.runs; ++run) items.push_back({size, run});

  struct Outcome {
    bool done = false;
    std::vector<ReportRow> rows;
    std::vector<std::string> warnings;
  };
  std::vector<Outcome> outcomes(items.size());
  std::mutex log_mutex;
  const MetricKind metric = cfg.report_metric();
  const bool classification = cfg.kind == TaskKind::classification;
  const std::filesystem::path model_dir = cfg.output_dir / "model";

  auto run_item = [&](std::size_t idx) {
    const Item& item = items[idx];
    Outcome& outcome = outcomes[idx];
    const auto run_seed = static_cast<std::uint64_t>(item.run);
    auto [train, test] = split(bundle, {item.size, derive_seed(cfg.seed, run_seed), classification});
    std::vector<ZScore> transforms;
    if (cfg.normalize) {
      NormalizedSplit ns = zscore_normalize(train, test);
      train = std::move(ns.train);
      test = std::move(ns.test);
      transforms = std::move(ns.transforms);
    }
    const std::vector<KernelSpec> specs = cfg.kernels.expand(train);
    const KernelBank bank = build_bank(train, specs, &test, 1);
    const int folds = feasible_folds(train, cfg.folds);
    if (folds < 2) throw ConfigError("training split too small for cross-validation at size " +
                                     std::to_string(item.size));
    if (folds < cfg.folds)
      outcome.warnings.push_back("size " + std::to_string(item.size) + " run " + std::to_string(item.run) +
                                 ": using " + std::to_string(folds) + " folds");

    for (std::size_t a = 0; a < cfg.algorithms.size(); ++a) {
      const Algorithm algo = cfg.algorithms[a];
      AlgorithmSettings settings;
      settings.algorithm = algo;
      settings.train = cfg.train;
      settings.train.kind = classification ? SolverKind::svm : SolverKind::krr;
      settings.train.workers = 1;
      settings.online = cfg.online;
      settings.online.seed = derive_seed(cfg.seed, run_seed, 2);
      settings.online.log = nullptr;
      const auto grid = grid_for(cfg, algo, specs.size());
      const CvResult cv = cross_validate(train, specs, settings, grid, folds,
                                         derive_seed(cfg.seed, run_seed, 1), 1);
      MkMtrlModel model = fit_algorithm(train, bank, settings, cv.best, &outcome.warnings);
      const std::vector<Vector> scores = predict(model, bank.cross);
      for (std::size_t t = 0; t < scores.size(); ++t)
        outcome.rows.push_back({algo, item.size, item.run, static_cast<int>(t),
                                evaluate_metric(metric, scores[t], test.tasks[t].labels)});
      if (cfg.save_models) {
        for (const auto& task : train.tasks) model.train_features.push_back(task.features);
        model.normalization = transforms;
        std::filesystem::create_directories(model_dir);
        save_model(model, model_dir / (std::string(to_string(algo)) + "_n" + std::to_string(item.size) + "_run" +
                                       std::to_string(item.run) + ".json"));
      }
      std::lock_guard lock(log_mutex);
      std::cerr << "[" << to_string(algo) << " n=" << item.size << " run=" << item.run << "] " << cv.best.to_string()
                << " cv=" << cv.validation.mean << '\n';
    }
    outcome.done = true;
  };

  ExperimentResult result;
  result.metric = metric;
  std::string error;
  try {
    parallel_for(items.size(), run_item, cfg.workers > 0 ? cfg.workers : default_workers());
  } catch (const std::exception& e) {
    error = e.what();
  }
  // Rows grouped by algorithm, then size, run and task, independent of scheduling.
  for (const Algorithm algo : cfg.algorithms)
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!outcomes[i].done) continue;
      for (const auto& r : outcomes[i].rows)
        if (r.algorithm == algo) result.rows.push_back(r);
    }
  for (const auto& o : outcomes) result.warnings.insert(result.warnings.end(), o.warnings.begin(), o.warnings.end());
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  result.summary = summarize(result.rows);
  try {
    emit_report(result, cfg.output_dir, !error.empty(), error);
  } catch (const Error& e) {
    std::cerr << "mkmtrl: " << e.what() << '\n';
    return 1;
  }
  if (!error.empty()) {
    std::cerr << "mkmtrl: " << error << '\n';
    return 1;
  }
  return 0;
}

int run_experiment(const std::filesystem::path& config_path) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment_config(config_path);
  } catch (const Error& e) {
    std::cerr << "mkmtrl: " << e.what() << '\n';
    return 2;
  }
  return run_experiment(cfg);
}

}  // namespace mkmtrl
