#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mkmtrl/baselines_eval.hpp"

namespace mkmtrl {

/// Kernel templates: explicit spec strings plus data-driven grids.
struct KernelTemplates {
  std::vector<KernelSpec> explicit_specs;
  int polynomial = 0;      // degrees 1..polynomial
  int rbf = 0;             // grid count around the median distance
  int univariate_rbf = 0;  // grid count per feature
  bool linear = false;

  bool empty() const;
  /// Expands the templates; data-driven anchors use the pooled rows of `train`.
  std::vector<KernelSpec> expand(const DatasetBundle& train) const;
};

/// Declarative experiment description, read from an INI-style file with
/// [data], [kernels], [experiment], [hyper], [train], [online] and [output]
/// sections. Relative paths resolve against the config file's directory.
struct ExperimentConfig {
  // [data]
  std::filesystem::path data_path;
  std::string format = "csv";  // csv | sparse
  TaskKind kind = TaskKind::classification;
  CsvOptions csv;
  std::optional<Eigen::Index> dim;
  bool normalize = true;

  KernelTemplates kernels;

  // [experiment]
  std::vector<Algorithm> algorithms;
  std::vector<Eigen::Index> train_per_task;
  int runs = 10;
  std::uint64_t seed = 0;
  int folds = 5;
  std::optional<MetricKind> metric;  // default: auc / nmse by task kind
  /// The object-recognition protocol pins C instead of cross-validating it.
  std::optional<double> fixed_C;
  int workers = 0;  // 0: default_workers()
  bool save_models = true;

  // [hyper]
  std::vector<double> Cs = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  std::vector<double> mus;
  std::vector<double> lambdas = {1.0};
  std::vector<double> ps = kDefaultPGrid;

  TrainConfig train;
  OnlineConfig online;

  std::filesystem::path output_dir = "mkmtrl-out";

  MetricKind report_metric() const;
  /// Throws ConfigError naming the first missing or inconsistent field.
  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

DatasetBundle load_experiment_data(const ExperimentConfig& cfg);

struct ReportRow {
  Algorithm algorithm;
  Eigen::Index train_size = 0;
  int run = 0;
  int task = 0;
  double value = 0.0;
};

struct SummaryRow {
  Algorithm algorithm;
  Eigen::Index train_size = 0;
  double mean = 0.0;  // mean over every (run, task) row
  double std = 0.0;   // sample std of the per-run task means
  int runs = 0;
};

struct ExperimentResult {
  std::vector<ReportRow> rows;
  std::vector<SummaryRow> summary;
  MetricKind metric = MetricKind::auc;
  std::vector<std::string> warnings;
};

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows);

/// Writes report.csv, summary.csv, curves.csv and status.json; models go to
/// model/ when given. partial marks a report cut short by an error.
void emit_report(const ExperimentResult& result, const std::filesystem::path& output_dir, bool partial = false,
                 const std::string& error = {});

/// Runs every (train size, run) setting and writes the report. Exit codes:
/// 0 success, 1 failure after the run started (partial report kept), 2
/// invalid configuration or missing data.
int run_experiment(const ExperimentConfig& cfg);
int run_experiment(const std::filesystem::path& config_path);

}  // namespace mkmtrl
