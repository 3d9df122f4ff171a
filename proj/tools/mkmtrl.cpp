// Command-line front end: run / validate experiments and score new data.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mkmtrl/experiment.hpp"

namespace fs = std::filesystem;
using namespace mkmtrl;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> output;

  void apply(ExperimentConfig& cfg) const {
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    if (output) cfg.output_dir = *output;
  }
};

fs::path resolve_model_file(const fs::path& p) {
  if (!fs::is_directory(p)) return p;
  if (fs::exists(p / "model.json")) return p / "model.json";
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(p))
    if (e.path().extension() == ".json") found.push_back(e.path());
  if (found.size() != 1)
    throw ConfigError(p.string() + " holds " + std::to_string(found.size()) +
                      " model files; name one explicitly");
  return found.front();
}

int cmd_validate(const fs::path& config, const Overrides& ov) {
  try {
    ExperimentConfig cfg = load_experiment_config(config);
    ov.apply(cfg);
    cfg.validate();
    const DatasetBundle data = load_experiment_data(cfg);
    Eigen::Index smallest = data.tasks.front().size();
    for (const auto& t : data.tasks) smallest = std::min(smallest, t.size());
    for (auto n : cfg.train_per_task)
      if (n >= smallest)
        throw ConfigError("train_per_task " + std::to_string(n) + " leaves no test rows in a task of " +
                          std::to_string(smallest));
    std::cout << "ok: " << data.num_tasks() << " tasks, " << data.dim << " features, " << cfg.algorithms.size()
              << " algorithms, " << cfg.train_per_task.size() << " sizes x " << cfg.runs << " runs\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "mkmtrl: " << e.what() << '\n';
    return 2;
  }
}

int cmd_predict(const fs::path& model_path, const fs::path& data_path, const std::string& format,
                const CsvOptions& csv, const std::optional<std::string>& output) {
  MkMtrlModel model;
  DatasetBundle data;
  try {
    model = load_model(resolve_model_file(model_path));
    const TaskKind kind = model.kind == SolverKind::svm ? TaskKind::classification : TaskKind::regression;
    if (!fs::exists(data_path)) throw ConfigError("data path does not exist: " + data_path.string());
    if (format == "csv") {
      CsvOptions opts = csv;
      opts.kind = kind;
      data = load_csv(data_path, opts);
    } else {
      const Eigen::Index dim = model.train_features.empty() ? 0 : model.train_features.front().cols();
      data = load_sparse_text(data_path, kind, dim);
    }
  } catch (const Error& e) {
    std::cerr << "mkmtrl: " << e.what() << '\n';
    return 2;
  }
  try {
    std::vector<Matrix> features;
    for (const auto& t : data.tasks) features.push_back(t.features);
    const std::vector<Vector> scores = predict_features(model, features);
    std::ofstream file;
    if (output) {
      file.open(*output);
      if (!file) throw Error("cannot write " + *output);
    }
    std::ostream& out = output ? file : std::cout;
    out.precision(17);
    out << "task,row,score,label\n";
    for (std::size_t t = 0; t < scores.size(); ++t)
      for (Eigen::Index i = 0; i < scores[t].size(); ++i)
        out << data.tasks[t].task_id << ',' << i << ',' << scores[t](i) << ',' << data.tasks[t].labels(i) << '\n';
    for (std::size_t t = 0; t < scores.size(); ++t) {
      const auto& y = data.tasks[t].labels;
      try {
        if (model.kind == SolverKind::svm)
          std::cerr << "task " << data.tasks[t].task_id << ": auc " << auc(scores[t], y) << '\n';
        else
          std::cerr << "task " << data.tasks[t].task_id << ": nmse " << nmse(scores[t], y) << '\n';
      } catch (const Error&) {
        // labels absent or degenerate; scores are still written
      }
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "mkmtrl: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multitask multiple kernel relationship learning"};
  app.require_subcommand(1);

  Overrides ov;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string output;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Master seed (overrides the config)");
    sub->add_option("--workers", workers, "Worker threads (default: MKMTRL_WORKERS or all cores)");
    sub->add_option("--output", output, "Output directory (overrides the config)");
  };

  std::string config;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config, "Experiment config")->required();
  add_overrides(run);

  auto* validate = app.add_subcommand("validate", "Check a config file and its data");
  validate->add_option("config", config, "Experiment config")->required();
  add_overrides(validate);

  std::string model_path, data_path, format = "csv";
  CsvOptions csv;
  auto* predict = app.add_subcommand("predict", "Score a dataset with a saved model");
  predict->add_option("model", model_path, "Model file, or a directory holding one")->required();
  predict->add_option("data", data_path, "Data file with the model's tasks")->required();
  predict->add_option("--format", format, "csv or sparse")->check(CLI::IsMember({"csv", "sparse"}));
  predict->add_option("--label-col", csv.label_col, "CSV label column");
  predict->add_option("--task-col", csv.task_col, "CSV task column (-1: single task)");
  predict->add_flag("--header", csv.header, "CSV has a header row");
  predict->add_option("--output", output, "Write scores to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto* sub : {run, validate}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) ov.seed = seed;
    if (sub->count("--workers")) ov.workers = workers;
    if (sub->count("--output")) ov.output = output;
  }
  if (ov.workers && *ov.workers < 1) {
    std::cerr << "mkmtrl: --workers must be >= 1\n";
    return 2;
  }

  if (validate->parsed()) return cmd_validate(config, ov);
  if (predict->parsed())
    return cmd_predict(model_path, data_path, format, csv,
                       predict->count("--output") ? std::optional<std::string>(output) : std::nullopt);

  ExperimentConfig cfg;
  try {
    cfg = load_experiment_config(config);
  } catch (const Error& e) {
    std::cerr << "mkmtrl: " << e.what() << '\n';
    return 2;
  }
  ov.apply(cfg);
  return run_experiment(cfg);
}
