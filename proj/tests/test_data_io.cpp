#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "mkmtrl/baselines_eval.hpp"
#include "mkmtrl/data_io.hpp"
#include "mkmtrl/rng.hpp"

using namespace mkmtrl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("mkmtrl_dataio_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path write(const std::string& name, const std::string& body) const {
    std::ofstream(path / name) << body;
    return path / name;
  }
};

TaskDataset make_task(int id, const Vector& labels) {
  TaskDataset t;
  t.task_id = id;
  t.labels = labels;
  t.features = Matrix(labels.size(), 2);
  for (Eigen::Index i = 0; i < labels.size(); ++i) t.features.row(i) << static_cast<double>(i), -static_cast<double>(i);
  return t;
}

DatasetBundle balanced_bundle(Eigen::Index n, int tasks = 1) {
  DatasetBundle b;
  b.dim = 2;
  for (int t = 0; t < tasks; ++t) {
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = i % 2 == 0 ? 1.0 : -1.0;
    b.tasks.push_back(make_task(t, y));
  }
  return b;
}

}  // namespace

TEST_CASE("sparse text decodes into a dense matrix") {
  TempDir dir;
  const auto file = dir.write("a.txt", "1 1:0.5\n-1 2:1.0\n");
  const DatasetBundle b = load_sparse_text(file);
  REQUIRE(b.num_tasks() == 1);
  CHECK(b.dim == 2);
  Matrix expected(2, 2);
  expected << 0.5, 0.0, 0.0, 1.0;
  CHECK(b.tasks[0].features == expected);
  CHECK(b.tasks[0].labels == Vector::Map(std::vector<double>{1.0, -1.0}.data(), 2));
}

TEST_CASE("sparse text rejects empty files and bad labels") {
  TempDir dir;
  CHECK_THROWS_WITH_AS(load_sparse_text(dir.write("e.txt", "")), doctest::Contains("no examples"), ParseError);
  try {
    load_sparse_text(dir.write("b.txt", "1 1:1\n2 1:0.5\n"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("labels must be ±1") != std::string::npos);
  }
  CHECK_THROWS_AS(load_sparse_text(dir.write("m.txt", "1 1:0.5 oops\n")), ParseError);
  CHECK_THROWS_AS(load_sparse_text(dir.write("d.txt", "1 5:1\n"), TaskKind::classification, Eigen::Index{3}),
                  DimensionError);
}

TEST_CASE("a manifest lists one task file per line") {
  TempDir dir;
  dir.write("t0.txt", "1 1:1\n-1 3:2\n");
  dir.write("t1.txt", "-1 2:4\n1 1:1\n1 1:3\n");
  const auto manifest = dir.write("all.list", "t0.txt\nt1.txt\n");
  const DatasetBundle b = load_sparse_text(manifest);
  REQUIRE(b.num_tasks() == 2);
  CHECK(b.dim == 3);
  CHECK(b.tasks[0].size() == 2);
  CHECK(b.tasks[1].size() == 3);
  CHECK(b.tasks[1].features(0, 1) == 4.0);
}

TEST_CASE("csv groups rows by task column") {
  TempDir dir;
  const auto file = dir.write("g.csv", "0,1,0.1\n0,-1,0.2\n1,1,0.3\n1,-1,0.4\n");
  CsvOptions opts;
  opts.task_col = 0;
  opts.label_col = 1;
  const DatasetBundle b = load_csv(file, opts);
  REQUIRE(b.num_tasks() == 2);
  CHECK(b.tasks[0].size() == 2);
  CHECK(b.tasks[1].size() == 2);
  CHECK(b.tasks[1].features(0, 0) == doctest::Approx(0.3));
  CHECK(b.tasks[1].features(1, 0) == doctest::Approx(0.4));

  const DatasetBundle one = load_csv(dir.write("one.csv", "1,2,3\n"), {});
  CHECK(one.num_tasks() == 1);
  CHECK(one.tasks[0].size() == 1);

  CHECK_THROWS_AS(load_csv(dir.write("r.csv", "1,2,3\n-1,2\n"), {}), ParseError);
  CHECK_THROWS_AS(load_csv(dir.write("n.csv", "1,abc,3\n"), {}), ParseError);
  CsvOptions bad;
  bad.label_col = 7;
  CHECK_THROWS_AS(load_csv(file, bad), ConfigError);
}

TEST_CASE("split takes exactly train_per_task rows and is deterministic") {
  const DatasetBundle b = balanced_bundle(100, 3);
  const auto [train, test] = split(b, {80, 7, true});
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(train.tasks[t].size() == 80);
    CHECK(test.tasks[t].size() == 20);
  }
  const auto [train2, test2] = split(b, {80, 7, true});
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(train.tasks[t].features == train2.tasks[t].features);
    CHECK(test.tasks[t].labels == test2.tasks[t].labels);
  }
  const auto [train3, test3] = split(b, {80, 8, true});
  bool differs = false;
  for (std::size_t t = 0; t < 3; ++t) differs = differs || train.tasks[t].features != train3.tasks[t].features;
  CHECK(differs);
}

TEST_CASE("stratified split keeps class balance") {
  const DatasetBundle b = balanced_bundle(100);
  const auto [train, test] = split(b, {50, 3, true});
  CHECK(train.tasks[0].count_label(1.0) == 25);
  CHECK(train.tasks[0].count_label(-1.0) == 25);
  CHECK_THROWS_AS(split(b, {100, 3, true}), ConfigError);
}

TEST_CASE("split partitions the rows of every task") {
  const DatasetBundle b = balanced_bundle(30, 2);
  const auto [train, test] = split(b, {11, 5, true});
  for (std::size_t t = 0; t < 2; ++t) {
    std::multiset<double> all, parts;
    for (Eigen::Index i = 0; i < b.tasks[t].size(); ++i) all.insert(b.tasks[t].features(i, 0));
    for (Eigen::Index i = 0; i < train.tasks[t].size(); ++i) parts.insert(train.tasks[t].features(i, 0));
    for (Eigen::Index i = 0; i < test.tasks[t].size(); ++i) parts.insert(test.tasks[t].features(i, 0));
    CHECK(all == parts);
  }
}

TEST_CASE("folds are stratified and need enough examples per class") {
  const DatasetBundle b = balanced_bundle(20, 2);
  const auto folds = assign_folds(b, 5, 1, true);
  for (std::size_t t = 0; t < 2; ++t) {
    std::vector<int> pos(5, 0), neg(5, 0);
    for (std::size_t i = 0; i < folds[t].size(); ++i)
      (b.tasks[t].labels(static_cast<Eigen::Index>(i)) > 0 ? pos : neg)[static_cast<std::size_t>(folds[t][i])]++;
    for (int f = 0; f < 5; ++f) {
      CHECK(pos[static_cast<std::size_t>(f)] == 2);
      CHECK(neg[static_cast<std::size_t>(f)] == 2);
    }
  }
  CHECK_THROWS_AS(assign_folds(balanced_bundle(6), 5, 1, true), ConfigError);
}

TEST_CASE("noise-free clusters share separators") {
  const SyntheticBundle s = synth_clustered_tasks(4, 2, 40, 5, 0.0, 11);
  REQUIRE(s.bundle.num_tasks() == 4);
  CHECK(s.cluster_of == std::vector<int>{0, 0, 1, 1});
  // Task 1's separator labels task 0's examples perfectly and vice versa.
  for (auto [a, b] : {std::pair{0, 1}, std::pair{1, 0}, std::pair{2, 3}, std::pair{3, 2}}) {
    const TaskDataset& task = s.bundle.tasks[static_cast<std::size_t>(a)];
    const Vector margins = (task.features * s.separators.col(b)).cwiseProduct(task.labels);
    CHECK(margins.minCoeff() > 0);
  }
  const SyntheticBundle one = synth_clustered_tasks(3, 1, 10, 4, 0.0, 2);
  CHECK((one.separators.col(0) - one.separators.col(2)).norm() < 1e-12);
  CHECK_THROWS_AS(synth_clustered_tasks(3, 1, 10, 0, 0.0, 2), ConfigError);
}

TEST_CASE("noise-free synthetic tasks are linearly separable") {
  const SyntheticBundle s = synth_clustered_tasks(4, 2, 30, 3, 0.0, 5);
  const KernelBank bank = build_bank(s.bundle, {KernelSpec::linear()});
  TrainConfig cfg;
  cfg.C = 1e5;
  const auto labels = labels_of(s.bundle);
  const auto models = fit_stl(bank, labels, cfg);
  for (std::size_t t = 0; t < 4; ++t) {
    const Vector scores = decision_values(bank.grams[t][0].values, models[t], labels[t]);
    CHECK(accuracy(scores, labels[t]) == 1.0);
  }
}

TEST_CASE("z-score uses training statistics") {
  DatasetBundle train, test;
  train.dim = test.dim = 2;
  TaskDataset t;
  t.features = Matrix(2, 2);
  t.features << 1, 5, 3, 5;
  t.labels = Vector::Ones(2);
  t.labels(1) = -1;
  train.tasks.push_back(t);
  TaskDataset u = t;
  u.features.resize(1, 2);
  u.features << 4, 7;
  u.labels = Vector::Ones(1);
  test.tasks.push_back(u);
  const NormalizedSplit ns = zscore_normalize(train, test);
  CHECK(ns.train.tasks[0].features(0, 0) == doctest::Approx(-1.0));
  CHECK(ns.train.tasks[0].features(1, 0) == doctest::Approx(1.0));
  CHECK(ns.train.tasks[0].features(0, 1) == 5.0);
  CHECK(ns.train.tasks[0].features(1, 1) == 5.0);
  // (4 - 2) / 1
  CHECK(ns.test.tasks[0].features(0, 0) == doctest::Approx(2.0));
  CHECK(ns.test.tasks[0].features(0, 1) == 7.0);
}

TEST_CASE("normalized training features have zero mean and unit variance") {
  Rng rng(9);
  DatasetBundle b;
  b.dim = 4;
  for (int t = 0; t < 3; ++t) {
    TaskDataset task;
    task.features = Matrix(25, 4);
    for (Eigen::Index i = 0; i < 25; ++i)
      for (Eigen::Index j = 0; j < 4; ++j) task.features(i, j) = 3.0 * rng.normal() + static_cast<double>(j);
    task.labels = Vector::Ones(25);
    task.labels(0) = -1;
    b.tasks.push_back(task);
  }
  const DatasetBundle n = zscore_normalize(b);
  for (const auto& task : n.tasks)
    for (Eigen::Index j = 0; j < 4; ++j) {
      const Vector c = task.features.col(j);
      CHECK(std::abs(c.mean()) < 1e-10);
      CHECK(std::abs((c.array() - c.mean()).square().mean() - 1.0) < 1e-10);
    }
}

TEST_CASE("regression generator produces clustered tasks") {
  const SyntheticBundle s = synth_clustered_regression(7, 2, 40, 8, 3, 0.1, 4);
  CHECK(s.bundle.num_tasks() == 7);
  CHECK(s.bundle.kind() == TaskKind::regression);
  CHECK(s.separators.rows() == 8);
  CHECK(s.separators.cols() == 2);
  const auto again = synth_clustered_regression(7, 2, 40, 8, 3, 0.1, 4);
  CHECK(again.bundle.tasks[3].labels == s.bundle.tasks[3].labels);
}
