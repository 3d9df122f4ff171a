#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "mkmtrl/common.hpp"

namespace mkmtrl {

/// One task's training examples. Classification labels are +1/-1.
struct TaskDataset {
  int task_id = 0;
  Matrix features;  // n x d
  Vector labels;    // n
  TaskKind kind = TaskKind::classification;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Throws if the invariants (n >= 1, matching lengths, +-1 labels) fail.
  void validate() const;

  TaskDataset subset(const std::vector<Eigen::Index>& rows) const;
  Eigen::Index count_label(double label) const;
};

struct DatasetBundle {
  std::vector<TaskDataset> tasks;
  Eigen::Index dim = 0;

  std::size_t num_tasks() const { return tasks.size(); }
  TaskKind kind() const;
  void validate() const;
};

struct SplitSpec {
  Eigen::Index train_per_task = 1;
  std::uint64_t seed = 0;
  bool stratified = true;
};

/// Reads a sparse `label idx:val ...` file (1-based indices). A file whose
/// lines are all non-numeric single tokens is treated as a manifest listing
/// one task file per line, relative to the manifest's directory.
DatasetBundle load_sparse_text(const std::filesystem::path& path,
                               TaskKind kind = TaskKind::classification,
                               std::optional<Eigen::Index> dim = std::nullopt);

DatasetBundle load_sparse_manifest(const std::filesystem::path& manifest,
                                   TaskKind kind = TaskKind::classification,
                                   std::optional<Eigen::Index> dim = std::nullopt);

struct CsvOptions {
  int label_col = 0;
  int task_col = -1;  // -1: every row belongs to task 0
  bool header = false;
  TaskKind kind = TaskKind::classification;
};

/// Rows are grouped by the task column (ascending task value), preserving
/// row order within each task. Every other column is a feature.
DatasetBundle load_csv(const std::filesystem::path& path, const CsvOptions& opts);

/// Per-task split into (train, test); exactly train_per_task rows per task
/// go to train. Stratified splits keep class proportions and at least one
/// example of each class on both sides whenever the counts allow.
std::pair<DatasetBundle, DatasetBundle> split(const DatasetBundle& bundle, const SplitSpec& spec);

/// Task-level split into k folds for cross-validation; returns for every
/// task the fold id of each row.
std::vector<std::vector<int>> assign_folds(const DatasetBundle& bundle, int folds,
                                           std::uint64_t seed, bool stratified);

struct SyntheticBundle {
  DatasetBundle bundle;
  std::vector<int> cluster_of;  // ground-truth cluster of each task
  Matrix separators;            // d x T, unit columns
};

/// Clustered linear classification tasks: cluster separators are drawn
/// uniformly from the unit sphere, each task perturbs its cluster's separator
/// by `noise`, and labels are sign(w_t^T x + noise * e) with x, e standard
/// normal. Tasks are assigned to clusters in contiguous blocks.
SyntheticBundle synth_clustered_tasks(int tasks, int clusters, Eigen::Index n_per_task,
                                      Eigen::Index d, double noise, std::uint64_t seed);

/// Clustered additive regression tasks. Each cluster owns a random subset of
/// `active` features and a smooth nonlinear response on them; tasks rescale
/// that response by a perturbed per-task coefficient and add N(0, noise^2).
SyntheticBundle synth_clustered_regression(int tasks, int clusters, Eigen::Index n_per_task,
                                           Eigen::Index d, Eigen::Index active, double noise,
                                           std::uint64_t seed);

struct ZScore {
  Vector mean;
  Vector scale;  // 1 for constant features

  static ZScore fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
};

struct NormalizedSplit {
  DatasetBundle train;
  DatasetBundle test;
  std::vector<ZScore> transforms;  // one per task
};

/// Per-task z-scoring with statistics from the training rows only.
NormalizedSplit zscore_normalize(const DatasetBundle& train, const DatasetBundle& test);
DatasetBundle zscore_normalize(const DatasetBundle& train);

}  // namespace mkmtrl
