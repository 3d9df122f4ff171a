#include "mkmtrl/data_io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mkmtrl/rng.hpp"

namespace mkmtrl {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return errno == 0 && end == tok.c_str() + tok.size();
}

bool parse_index(const std::string& tok, long& out) {
  if (tok.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtol(tok.c_str(), &end, 10);
  return errno == 0 && end == tok.c_str() + tok.size();
}

void check_label(double label, TaskKind kind, std::size_t line) {
  if (!std::isfinite(label)) throw ParseError("non-finite label", line);
  if (kind == TaskKind::classification && label != 1.0 && label != -1.0)
    throw ParseError("labels must be ±1", line);
}

void shuffle(std::vector<Eigen::Index>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.index(i));
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<Eigen::Index> rows_with_label(const TaskDataset& task, double label) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < task.size(); ++i)
    if (task.labels(i) == label) rows.push_back(i);
  return rows;
}

struct SparseRows {
  std::vector<double> labels;
  std::vector<std::vector<std::pair<long, double>>> entries;
  long max_index = 0;
};

SparseRows read_sparse_rows(const std::filesystem::path& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  SparseRows rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    double label;
    if (!parse_double(tok, label)) throw ParseError("bad label '" + tok + "'", lineno);
    check_label(label, kind, lineno);
    std::vector<std::pair<long, double>> entries;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw ParseError("expected idx:val, got '" + tok + "'", lineno);
      long idx;
      double val;
      if (!parse_index(tok.substr(0, colon), idx) || idx < 1)
        throw ParseError("bad feature index in '" + tok + "'", lineno);
      if (!parse_double(tok.substr(colon + 1), val) || !std::isfinite(val))
        throw ParseError("bad feature value in '" + tok + "'", lineno);
      rows.max_index = std::max(rows.max_index, idx);
      entries.emplace_back(idx, val);
    }
    rows.labels.push_back(label);
    rows.entries.push_back(std::move(entries));
  }
  if (rows.labels.empty()) throw ParseError("no examples in " + path.string());
  return rows;
}

TaskDataset densify(const SparseRows& rows, Eigen::Index dim, TaskKind kind, int task_id) {
  TaskDataset task;
  task.task_id = task_id;
  task.kind = kind;
  const auto n = static_cast<Eigen::Index>(rows.labels.size());
  task.features = Matrix::Zero(n, dim);
  task.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    task.labels(i) = rows.labels[static_cast<std::size_t>(i)];
    for (const auto& [idx, val] : rows.entries[static_cast<std::size_t>(i)])
      task.features(i, idx - 1) = val;
  }
  return task;
}

bool looks_like_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  bool any = false;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_of(" \t") != std::string::npos) return false;
    double v;
    if (parse_double(line, v) || line.find(':') != std::string::npos) return false;
    any = true;
  }
  return any;
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t lineno) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) throw ParseError("unterminated quote", lineno);
  cells.push_back(trim(cell));
  return cells;
}

}  // namespace

void TaskDataset::validate() const {
  if (size() < 1) throw DimensionError("task " + std::to_string(task_id) + " has no examples");
  if (labels.size() != size())
    throw DimensionError("task " + std::to_string(task_id) + ": label count does not match rows");
  if (!features.allFinite()) throw NumericError("task " + std::to_string(task_id) + ": non-finite feature");
  if (kind == TaskKind::classification) {
    for (Eigen::Index i = 0; i < labels.size(); ++i)
      if (labels(i) != 1.0 && labels(i) != -1.0)
        throw ParseError("task " + std::to_string(task_id) + ": labels must be ±1");
  }
}

TaskDataset TaskDataset::subset(const std::vector<Eigen::Index>& rows) const {
  TaskDataset out;
  out.task_id = task_id;
  out.kind = kind;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.features.resize(n, dim());
  out.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.features.row(i) = features.row(rows[static_cast<std::size_t>(i)]);
    out.labels(i) = labels(rows[static_cast<std::size_t>(i)]);
  }
  return out;
}

Eigen::Index TaskDataset::count_label(double label) const {
  return (labels.array() == label).count();
}

TaskKind DatasetBundle::kind() const {
  return tasks.empty() ? TaskKind::classification : tasks.front().kind;
}

void DatasetBundle::validate() const {
  if (tasks.empty()) throw DimensionError("bundle has no tasks");
  for (const auto& t : tasks) {
    if (t.dim() != dim) throw DimensionError("task " + std::to_string(t.task_id) + " has dimension " +
                                             std::to_string(t.dim()) + ", expected " + std::to_string(dim));
    t.validate();
  }
}

DatasetBundle load_sparse_text(const std::filesystem::path& path, TaskKind kind,
                               std::optional<Eigen::Index> dim) {
  if (!std::filesystem::exists(path)) throw ParseError("no such file: " + path.string());
  if (looks_like_manifest(path)) return load_sparse_manifest(path, kind, dim);
  const SparseRows rows = read_sparse_rows(path, kind);
  if (dim && rows.max_index > *dim)
    throw DimensionError("feature index " + std::to_string(rows.max_index) + " exceeds dimension " +
                         std::to_string(*dim));
  DatasetBundle bundle;
  bundle.dim = dim.value_or(rows.max_index);
  bundle.tasks.push_back(densify(rows, bundle.dim, kind, 0));
  return bundle;
}

DatasetBundle load_sparse_manifest(const std::filesystem::path& manifest, TaskKind kind,
                                   std::optional<Eigen::Index> dim) {
  std::ifstream in(manifest);
  if (!in) throw ParseError("cannot open " + manifest.string());
  std::vector<SparseRows> per_task;
  std::string line;
  long max_index = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::filesystem::path p = line;
    if (p.is_relative()) p = manifest.parent_path() / p;
    per_task.push_back(read_sparse_rows(p, kind));
    max_index = std::max(max_index, per_task.back().max_index);
  }
  if (per_task.empty()) throw ParseError("no examples: manifest lists no task files");
  if (dim && max_index > *dim)
    throw DimensionError("feature index " + std::to_string(max_index) + " exceeds dimension " +
                         std::to_string(*dim));
  DatasetBundle bundle;
  bundle.dim = dim.value_or(max_index);
  for (std::size_t t = 0; t < per_task.size(); ++t)
    bundle.tasks.push_back(densify(per_task[t], bundle.dim, kind, static_cast<int>(t)));
  return bundle;
}

DatasetBundle load_csv(const std::filesystem::path& path, const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::size_t ncols = 0;
  std::map<long, std::vector<std::vector<double>>> groups;
  std::map<long, std::vector<double>> labels;
  bool skipped_header = !opts.header;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      ncols = split_csv_line(line, lineno).size();
      continue;
    }
    const auto cells = split_csv_line(line, lineno);
    if (ncols == 0) ncols = cells.size();
    if (cells.size() != ncols)
      throw ParseError("ragged row: " + std::to_string(cells.size()) + " cells, expected " + std::to_string(ncols),
                       lineno);
    if (opts.label_col < 0 || static_cast<std::size_t>(opts.label_col) >= ncols)
      throw ConfigError("label column " + std::to_string(opts.label_col) + " out of range");
    if (opts.task_col >= 0 && static_cast<std::size_t>(opts.task_col) >= ncols)
      throw ConfigError("task column " + std::to_string(opts.task_col) + " out of range");
    if (opts.task_col == opts.label_col) throw ConfigError("label and task columns coincide");
    std::vector<double> row;
    double label = 0.0;
    long task = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v;
      if (!parse_double(cells[c], v) || !std::isfinite(v))
        throw ParseError("non-numeric cell '" + cells[c] + "' in column " + std::to_string(c), lineno);
      if (static_cast<int>(c) == opts.label_col) {
        label = v;
      } else if (static_cast<int>(c) == opts.task_col) {
        if (v != std::floor(v)) throw ParseError("task id must be an integer", lineno);
        task = static_cast<long>(v);
      } else {
        row.push_back(v);
      }
    }
    check_label(label, opts.kind, lineno);
    groups[task].push_back(std::move(row));
    labels[task].push_back(label);
  }
  if (groups.empty()) throw ParseError("no examples in " + path.string());
  DatasetBundle bundle;
  bundle.dim = static_cast<Eigen::Index>(groups.begin()->second.front().size());
  for (const auto& [task, rows] : groups) {
    TaskDataset t;
    t.task_id = static_cast<int>(task);
    t.kind = opts.kind;
    const auto n = static_cast<Eigen::Index>(rows.size());
    t.features.resize(n, bundle.dim);
    t.labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < bundle.dim; ++j)
        t.features(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      t.labels(i) = labels[task][static_cast<std::size_t>(i)];
    }
    bundle.tasks.push_back(std::move(t));
  }
  return bundle;
}

std::pair<DatasetBundle, DatasetBundle> split(const DatasetBundle& bundle, const SplitSpec& spec) {
  DatasetBundle train, test;
  train.dim = test.dim = bundle.dim;
  for (std::size_t t = 0; t < bundle.tasks.size(); ++t) {
    const TaskDataset& task = bundle.tasks[t];
    const Eigen::Index n = task.size();
    const Eigen::Index m = spec.train_per_task;
    if (m < 1 || m >= n)
      throw ConfigError("split: train_per_task=" + std::to_string(m) + " invalid for task " +
                        std::to_string(task.task_id) + " with " + std::to_string(n) + " examples");
    Rng rng(derive_seed(spec.seed, t));
    std::vector<Eigen::Index> chosen;
    if (spec.stratified && task.kind == TaskKind::classification) {
      auto pos = rows_with_label(task, 1.0);
      auto neg = rows_with_label(task, -1.0);
      const auto p = static_cast<Eigen::Index>(pos.size());
      const auto q = static_cast<Eigen::Index>(neg.size());
      // Keep both classes on both sides where the counts permit it.
      Eigen::Index lo = std::max<Eigen::Index>(p > 0 ? 1 : 0, m - (q >= 2 ? q - 1 : q));
      Eigen::Index hi = std::min<Eigen::Index>(p >= 2 ? p - 1 : p, m - (q > 0 ? 1 : 0));
      if (lo > hi) {
        lo = std::max<Eigen::Index>(0, m - q);
        hi = std::min(p, m);
      }
      const auto ideal = static_cast<Eigen::Index>(
          std::llround(static_cast<double>(m) * static_cast<double>(p) / static_cast<double>(n)));
      const Eigen::Index take_pos = std::clamp(ideal, lo, hi);
      shuffle(pos, rng);
      shuffle(neg, rng);
      chosen.assign(pos.begin(), pos.begin() + take_pos);
      chosen.insert(chosen.end(), neg.begin(), neg.begin() + (m - take_pos));
    } else {
      std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
      shuffle(all, rng);
      chosen.assign(all.begin(), all.begin() + m);
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<bool> in_train(static_cast<std::size_t>(n), false);
    for (auto i : chosen) in_train[static_cast<std::size_t>(i)] = true;
    std::vector<Eigen::Index> rest;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!in_train[static_cast<std::size_t>(i)]) rest.push_back(i);
    train.tasks.push_back(task.subset(chosen));
    test.tasks.push_back(task.subset(rest));
  }
  return {std::move(train), std::move(test)};
}

std::vector<std::vector<int>> assign_folds(const DatasetBundle& bundle, int folds, std::uint64_t seed,
                                           bool stratified) {
  if (folds < 2) throw ConfigError("need at least 2 folds");
  std::vector<std::vector<int>> out;
  for (std::size_t t = 0; t < bundle.tasks.size(); ++t) {
    const TaskDataset& task = bundle.tasks[t];
    Rng rng(derive_seed(seed, t, 0xf01d));
    std::vector<int> fold(static_cast<std::size_t>(task.size()), 0);
    std::vector<std::vector<Eigen::Index>> strata;
    if (stratified && task.kind == TaskKind::classification) {
      strata.push_back(rows_with_label(task, 1.0));
      strata.push_back(rows_with_label(task, -1.0));
      for (const auto& s : strata)
        if (static_cast<int>(s.size()) < folds)
          throw ConfigError("task " + std::to_string(task.task_id) + " has fewer than " + std::to_string(folds) +
                            " examples of a class");
    } else {
      if (task.size() < folds)
        throw ConfigError("task " + std::to_string(task.task_id) + " has fewer than " + std::to_string(folds) +
                          " examples");
      std::vector<Eigen::Index> all(static_cast<std::size_t>(task.size()));
      for (Eigen::Index i = 0; i < task.size(); ++i) all[static_cast<std::size_t>(i)] = i;
      strata.push_back(std::move(all));
    }
    std::size_t offset = 0;
    for (auto& s : strata) {
      shuffle(s, rng);
      for (std::size_t i = 0; i < s.size(); ++i)
        fold[static_cast<std::size_t>(s[i])] = static_cast<int>((offset + i) % static_cast<std::size_t>(folds));
      offset += s.size();
    }
    out.push_back(std::move(fold));
  }
  return out;
}

SyntheticBundle synth_clustered_tasks(int tasks, int clusters, Eigen::Index n_per_task, Eigen::Index d,
                                      double noise, std::uint64_t seed) {
  if (d < 1) throw ConfigError("synthetic data needs d >= 1");
  if (tasks < 1 || clusters < 1 || clusters > tasks) throw ConfigError("need 1 <= clusters <= tasks");
  if (noise < 0) throw ConfigError("noise must be nonnegative");
  if (n_per_task < 1) throw ConfigError("n_per_task must be positive");
  Rng rng(derive_seed(seed, 0x5e7));
  auto unit = [&](Vector v) {
    const double norm = v.norm();
    return norm > 0 ? Vector(v / norm) : v;
  };
  Matrix centers(d, clusters);
  for (int c = 0; c < clusters; ++c) {
    Vector v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = rng.normal();
    centers.col(c) = unit(v);
  }
  SyntheticBundle out;
  out.bundle.dim = d;
  out.separators.resize(d, tasks);
  for (int t = 0; t < tasks; ++t) {
    const int c = static_cast<int>(static_cast<long>(t) * clusters / tasks);
    out.cluster_of.push_back(c);
    Vector w = centers.col(c);
    if (noise > 0) {
      Vector g(d);
      for (Eigen::Index j = 0; j < d; ++j) g(j) = rng.normal();
      w = unit(w + noise * g);
    }
    out.separators.col(t) = w;
    TaskDataset task;
    task.task_id = t;
    task.kind = TaskKind::classification;
    task.features.resize(n_per_task, d);
    task.labels.resize(n_per_task);
    for (Eigen::Index i = 0; i < n_per_task; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) task.features(i, j) = rng.normal();
      double response = task.features.row(i).dot(w);
      if (noise > 0) response += noise * rng.normal();
      task.labels(i) = response >= 0 ? 1.0 : -1.0;
    }
    out.bundle.tasks.push_back(std::move(task));
  }
  return out;
}

SyntheticBundle synth_clustered_regression(int tasks, int clusters, Eigen::Index n_per_task, Eigen::Index d,
                                           Eigen::Index active, double noise, std::uint64_t seed) {
  if (d < 1) throw ConfigError("synthetic data needs d >= 1");
  if (tasks < 1 || clusters < 1 || clusters > tasks) throw ConfigError("need 1 <= clusters <= tasks");
  if (active < 1 || active > d) throw ConfigError("need 1 <= active <= d");
  if (noise < 0) throw ConfigError("noise must be nonnegative");
  Rng rng(derive_seed(seed, 0x4e6));
  // Per cluster: active feature subset, amplitude and frequency per feature.
  std::vector<std::vector<Eigen::Index>> support(static_cast<std::size_t>(clusters));
  Matrix amplitude = Matrix::Zero(d, clusters);
  Matrix frequency = Matrix::Zero(d, clusters);
  for (int c = 0; c < clusters; ++c) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) perm[static_cast<std::size_t>(j)] = j;
    shuffle(perm, rng);
    perm.resize(static_cast<std::size_t>(active));
    std::sort(perm.begin(), perm.end());
    for (auto j : perm) {
      amplitude(j, c) = 0.5 + rng.uniform();
      frequency(j, c) = 0.75 + 0.75 * rng.uniform();
    }
    support[static_cast<std::size_t>(c)] = std::move(perm);
  }
  SyntheticBundle out;
  out.bundle.dim = d;
  out.separators = amplitude;
  for (int t = 0; t < tasks; ++t) {
    const int c = static_cast<int>(static_cast<long>(t) * clusters / tasks);
    out.cluster_of.push_back(c);
    const double scale = 1.0 + 0.2 * rng.normal();
    TaskDataset task;
    task.task_id = t;
    task.kind = TaskKind::regression;
    task.features.resize(n_per_task, d);
    task.labels.resize(n_per_task);
    for (Eigen::Index i = 0; i < n_per_task; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) task.features(i, j) = rng.normal();
      double y = 0.0;
      for (auto j : support[static_cast<std::size_t>(c)])
        y += amplitude(j, c) * std::sin(frequency(j, c) * task.features(i, j));
      task.labels(i) = scale * y + noise * rng.normal();
    }
    out.bundle.tasks.push_back(std::move(task));
  }
  return out;
}

ZScore ZScore::fit(const Matrix& x) {
  ZScore z;
  const auto n = static_cast<double>(x.rows());
  z.mean = x.colwise().mean().transpose();
  z.scale = Vector::Ones(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - z.mean(j)).square().sum() / n;
    if (var > 0) z.scale(j) = std::sqrt(var);
    else z.mean(j) = 0.0;  // constant feature: pass through untouched
  }
  return z;
}

Matrix ZScore::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw DimensionError("z-score transform dimension mismatch");
  return ((x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
}

NormalizedSplit zscore_normalize(const DatasetBundle& train, const DatasetBundle& test) {
  if (train.tasks.size() != test.tasks.size()) throw DimensionError("train/test task counts differ");
  NormalizedSplit out{train, test, {}};
  for (std::size_t t = 0; t < train.tasks.size(); ++t) {
    ZScore z = ZScore::fit(train.tasks[t].features);
    out.train.tasks[t].features = z.apply(train.tasks[t].features);
    out.test.tasks[t].features = z.apply(test.tasks[t].features);
    out.transforms.push_back(std::move(z));
  }
  return out;
}

DatasetBundle zscore_normalize(const DatasetBundle& train) {
  DatasetBundle out = train;
  for (auto& t : out.tasks) t.features = ZScore::fit(t.features).apply(t.features);
  return out;
}

}  // namespace mkmtrl
