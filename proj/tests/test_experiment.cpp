#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mkmtrl/experiment.hpp"

using namespace mkmtrl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mkmtrl_exp_" + std::to_string(getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// Rows are task,label,features...
void write_csv(const fs::path& p, const DatasetBundle& b) {
  std::ofstream out(p);
  out.precision(17);
  for (const auto& t : b.tasks)
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      out << t.task_id << ',' << t.labels(i);
      for (Eigen::Index j = 0; j < t.features.cols(); ++j) out << ',' << t.features(i, j);
      out << '\n';
    }
}

std::string config_text(const std::string& algorithms, const std::string& extra = "",
                        const std::string& hyper = "") {
  return "[data]\npath = data.csv\nlabel_col = 1\ntask_col = 0\n"
         "[kernels]\nlinear = true\npolynomial = 2\n"
         "[experiment]\nalgorithms = " + algorithms + "\ntrain_per_task = 12\nruns = 1\nseed = 5\nfolds = 3\n"
         "[hyper]\nC = 0.1, 10\n" + hyper + "[online]\nrounds = 3000\n" + extra;
}

fs::path setup(const std::string& name, const std::string& algorithms, const std::string& extra = "") {
  const fs::path dir = scratch(name);
  write_csv(dir / "data.csv", synth_clustered_tasks(3, 1, 30, 3, 0.2, 4).bundle);
  write_file(dir / "exp.ini", config_text(algorithms, extra + "[output]\ndir = out\n"));
  return dir;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MKMTRL_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig cfg = parse_experiment_config(config_text("stl, mkmtrl", "", "mu = 0.1,1\np = 2, inf\n"), "/base");
  CHECK(cfg.data_path == fs::path("/base/data.csv"));
  CHECK(cfg.algorithms.size() == 2);
  CHECK(cfg.train_per_task == std::vector<Eigen::Index>{12});
  CHECK(cfg.kernels.linear);
  CHECK(cfg.kernels.polynomial == 2);
  CHECK(cfg.Cs == std::vector<double>{0.1, 10});
  CHECK(cfg.mus == std::vector<double>{0.1, 1});
  CHECK(std::isinf(cfg.ps.back()));
  CHECK(cfg.report_metric() == MetricKind::auc);
  CHECK_NOTHROW(cfg.validate());

  const ExperimentConfig obj =
      parse_experiment_config("[data]\npath=x\n[kernels]\nlinear=true\n[experiment]\nalgorithms=stl\n"
                              "train_per_task=5\nprotocol=object_recognition\n");
  REQUIRE(obj.fixed_C.has_value());
  CHECK(*obj.fixed_C == 1000.0);
  CHECK(obj.runs == 10);
  CHECK(obj.ps == kDefaultPGrid);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_experiment_config("[nonsense]\na=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\ncolour=blue\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(config_text("stl", "[train]\nmax_outer = many\n")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(config_text("svm")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data\npath=x\n"), ConfigError);

  ExperimentConfig cfg = parse_experiment_config(config_text("stl"));
  cfg.algorithms.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = parse_experiment_config(config_text("stl"));
  cfg.runs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = parse_experiment_config(config_text("stl"));
  cfg.train_per_task.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = parse_experiment_config("[data]\npath=x\n[experiment]\nalgorithms=stl\ntrain_per_task=5\n");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // no kernels
}

TEST_CASE("missing data exits with code 2 and writes no report") {
  const fs::path dir = setup("missing", "stl");
  fs::remove(dir / "data.csv");
  CHECK(run_experiment(dir / "exp.ini") == 2);
  CHECK_FALSE(fs::exists(dir / "out" / "report.csv"));
  CHECK(run_experiment(dir / "absent.ini") == 2);
}

TEST_CASE("a fixed seed reproduces report.csv byte for byte") {
  const fs::path dir = setup("repro", "stl, imkl, mkmtrl, mkmtrl_online", "[experiment]\n");
  // The [experiment] section above is repeated on purpose: it must be rejected.
  CHECK(run_experiment(dir / "exp.ini") == 2);

  write_file(dir / "exp.ini", config_text("stl, imkl, mkmtrl, mkmtrl_online", "[output]\ndir = out\n"));
  REQUIRE(run_experiment(dir / "exp.ini") == 0);
  const std::string first = slurp(dir / "out" / "report.csv");

  ExperimentConfig cfg = load_experiment_config(dir / "exp.ini");
  cfg.workers = 4;
  cfg.output_dir = dir / "out2";
  REQUIRE(run_experiment(cfg) == 0);
  CHECK(slurp(dir / "out2" / "report.csv") == first);

  const auto rows = read_csv_rows(dir / "out" / "report.csv");
  REQUIRE(rows.size() == 1 + 4 * 3);
  CHECK(rows[0] == std::vector<std::string>{"algorithm", "train_size", "run", "task", "metric", "value"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double v = std::stod(rows[i][5]);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (const char* algo : {"stl", "imkl", "mkmtrl", "mkmtrl_online"})
    CHECK(fs::exists(dir / "out" / "model" / (std::string(algo) + "_n12_run0.json")));
  CHECK(slurp(dir / "out" / "status.json").find("\"partial\": false") != std::string::npos);
}

TEST_CASE("summary rows average the report rows") {
  const fs::path dir = setup("summary", "stl, mkmtrl", "");
  ExperimentConfig cfg = load_experiment_config(dir / "exp.ini");
  cfg.runs = 2;
  REQUIRE(run_experiment(cfg) == 0);
  const auto report = read_csv_rows(dir / "out" / "report.csv");
  const auto summary = read_csv_rows(dir / "out" / "summary.csv");
  REQUIRE(summary.size() == 3);
  CHECK(summary[0] == std::vector<std::string>{"algorithm", "train_size", "metric", "mean", "std", "runs"});
  for (std::size_t s = 1; s < summary.size(); ++s) {
    double sum = 0.0, run_sum[2] = {0, 0};
    int n = 0, run_n[2] = {0, 0};
    for (std::size_t r = 1; r < report.size(); ++r)
      if (report[r][0] == summary[s][0]) {
        const double v = std::stod(report[r][5]);
        sum += v;
        ++n;
        const int run = std::stoi(report[r][2]);
        run_sum[run] += v;
        ++run_n[run];
      }
    REQUIRE(n == 6);
    CHECK(std::abs(std::stod(summary[s][3]) - sum / n) <= 1e-12);
    const double m0 = run_sum[0] / run_n[0], m1 = run_sum[1] / run_n[1];
    CHECK(std::abs(std::stod(summary[s][4]) - std::abs(m0 - m1) / std::sqrt(2.0)) <= 1e-12);
    CHECK(summary[s][5] == "2");
  }
  const auto curves = read_csv_rows(dir / "out" / "curves.csv");
  CHECK(curves[0] == std::vector<std::string>{"algorithm", "train_size", "mean", "std"});
  CHECK(curves.size() == 3);
}

TEST_CASE("summaries of single runs have zero spread") {
  std::vector<ReportRow> rows;
  for (int t = 0; t < 3; ++t) rows.push_back({Algorithm::stl, 10, 0, t, 0.5 + 0.1 * t});
  rows.push_back({Algorithm::imkl, 10, 0, 0, 0.9});
  const auto s = summarize(rows);
  REQUIRE(s.size() == 2);
  CHECK(s[0].mean == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(s[0].std == 0.0);
  CHECK(s[0].runs == 1);
  CHECK(s[1].mean == 0.9);
}

TEST_CASE("command-line interface") {
  const fs::path dir = setup("cli", "mkmtrl");
  CHECK(run_cli("validate " + (dir / "exp.ini").string()) == 0);
  write_file(dir / "bad.ini", "[data]\nwhat=1\n");
  CHECK(run_cli("validate " + (dir / "bad.ini").string()) == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("") == 2);

  REQUIRE(run_cli("run " + (dir / "exp.ini").string() + " --output " + (dir / "cli_out").string()) == 0);
  REQUIRE(fs::exists(dir / "cli_out" / "report.csv"));

  const fs::path model = dir / "cli_out" / "model" / "mkmtrl_n12_run0.json";
  const fs::path scores = dir / "scores.csv";
  REQUIRE(run_cli("predict " + model.string() + " " + (dir / "data.csv").string() +
                  " --label-col 1 --task-col 0 > " + scores.string()) == 0);
  const auto rows = read_csv_rows(scores);
  REQUIRE(rows.size() == 1 + 90);
  CHECK(rows[0] == std::vector<std::string>{"task", "row", "score", "label"});

  // Scores through the CLI equal scores from the library.
  const MkMtrlModel m = load_model(model);
  CsvOptions opts;
  opts.label_col = 1;
  opts.task_col = 0;
  const DatasetBundle data = load_csv(dir / "data.csv", opts);
  std::vector<Matrix> feats;
  for (const auto& t : data.tasks) feats.push_back(t.features);
  const auto lib = predict_features(m, feats);
  CHECK(std::stod(rows[1][2]) == doctest::Approx(lib[0](0)).epsilon(1e-12));
  CHECK(std::stod(rows[90][2]) == doctest::Approx(lib[2](29)).epsilon(1e-12));

  CHECK(run_cli("predict " + (dir / "nothing.json").string() + " " + (dir / "data.csv").string()) != 0);
}
