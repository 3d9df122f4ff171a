#include "mkmtrl/joint_trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mkmtrl {
namespace {

using nlohmann::json;

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double from_hex(const json& j) {
  const std::string s = j.get<std::string>();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ParseError("bad hex float '" + s + "' in model file");
  return v;
}

json encode(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(hexfloat(m(i, j)));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

json encode(const Vector& v) {
  json data = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) data.push_back(hexfloat(v(i)));
  return data;
}

Matrix decode_matrix(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ParseError("matrix size mismatch in model file");
  Matrix m(rows, cols);
  std::size_t idx = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = from_hex(data[idx++]);
  return m;
}

Vector decode_vector(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = from_hex(j[i]);
  return v;
}

void check_bank_labels(const KernelBank& bank, const std::vector<Vector>& labels) {
  bank.validate();
  if (labels.size() != bank.num_tasks())
    throw DimensionError("bank has " + std::to_string(bank.num_tasks()) + " tasks but " +
                         std::to_string(labels.size()) + " label vectors were given");
  for (std::size_t t = 0; t < labels.size(); ++t)
    if (bank.grams[t].front().values.rows() != labels[t].size())
      throw DimensionError("task " + std::to_string(t) + ": gram size differs from label count");
}

KernelWeights update_B(const Matrix& W, const TaskRelationship& omega, const KernelWeights& B, const TrainConfig& cfg) {
  if (cfg.mu) return update_weights_mu(W, omega, *cfg.mu, B);
  return update_weights_normalized(W, omega, B);
}

}  // namespace

SolverConfig TrainConfig::solver() const {
  SolverConfig s;
  s.C = C;
  s.lambda = lambda;
  s.tol = solver_tol;
  s.check_psd = false;  // nonnegative combinations of PSD bank grams
  return s;
}

void TrainConfig::validate() const {
  if (!(C > 0)) throw ConfigError("C must be positive");
  if (mu && !(*mu > 0)) throw ConfigError("mu must be positive");
  if (max_outer < 1 || max_inner < 1) throw ConfigError("iteration caps must be >= 1");
  if (!(tol_B > 0)) throw ConfigError("tol_B must be positive");
  if (!(lambda > 0)) throw ConfigError("lambda must be positive");
  if (!(solver_tol > 0)) throw ConfigError("solver_tol must be positive");
}

std::vector<Vector> labels_of(const DatasetBundle& bundle) {
  std::vector<Vector> out;
  for (const auto& t : bundle.tasks) out.push_back(t.labels);
  return out;
}

double relative_change(const Matrix& next, const Matrix& prev) {
  const double denom = prev.norm();
  return denom > 0 ? (next - prev).norm() / denom : (next - prev).norm();
}

std::vector<DualSolution> solve_all(const KernelBank& bank, const std::vector<Vector>& labels, const Matrix& B,
                                    const TrainConfig& cfg) {
  const SolverConfig scfg = cfg.solver();
  std::vector<DualSolution> out(bank.num_tasks());
  parallel_for(
      bank.num_tasks(),
      [&](std::size_t t) {
        const Matrix K = combine_weighted(bank.grams[t], B.col(static_cast<Eigen::Index>(t)));
        try {
          out[t] = solve_task(cfg.kind, K, labels[t], scfg);
        } catch (const Error& e) {
          throw SolverError(e.what(), static_cast<int>(t));
        }
      },
      cfg.workers);
  return out;
}

Matrix rkhs_norm_matrix(const KernelBank& bank, const std::vector<Vector>& labels, const Matrix& B,
                        const std::vector<DualSolution>& models) {
  Matrix W(B.rows(), B.cols());
  for (std::size_t t = 0; t < bank.num_tasks(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    W.col(ti) = rkhs_norms(bank.grams[t], B.col(ti), models[t], labels[t]);
  }
  return W;
}

MkMtrlModel fit_joint(const KernelBank& bank, const std::vector<Vector>& labels, const TrainConfig& cfg) {
  cfg.validate();
  check_bank_labels(bank, labels);
  const auto T = static_cast<Eigen::Index>(bank.num_tasks());
  const auto K = static_cast<Eigen::Index>(bank.num_kernels());

  KernelWeights B = KernelWeights::uniform(K, T);
  TaskRelationship omega = cfg.fixed_omega ? TaskRelationship{*cfg.fixed_omega} : TaskRelationship::scaled_identity(T);
  if (omega.omega.rows() != T || omega.omega.cols() != T) throw DimensionError("fixed relationship must be T x T");

  MkMtrlModel model;
  model.specs = bank.specs;
  model.trace_scales = bank.trace_scales();
  model.kind = cfg.kind;
  model.train_labels = labels;

  std::vector<DualSolution> models = solve_all(bank, labels, B.B, cfg);
  for (int outer = 1; outer <= cfg.max_outer; ++outer) {
    const Matrix outer_start = B.B;
    int steps = 0;
    for (int inner = 1; inner <= cfg.max_inner; ++inner) {
      if (inner > 1) models = solve_all(bank, labels, B.B, cfg);
      const Matrix W = rkhs_norm_matrix(bank, labels, B.B, models);
      KernelWeights next = update_B(W, omega, B, cfg);
      const double change = relative_change(next.B, B.B);
      B = std::move(next);
      ++steps;
      if (change <= cfg.tol_B) break;
    }
    B.validate();
    models = solve_all(bank, labels, B.B, cfg);
    if (!cfg.fixed_omega && T > 1) {
      omega = update_relationship(B);
      omega.validate();
    }
    IterationRecord rec;
    rec.outer = outer;
    rec.inner_steps = steps;
    rec.change_B = relative_change(B.B, outer_start);
    rec.objective = objective(bank, labels, B.B, omega.omega, models, cfg);
    rec.B = B.B;
    rec.omega = omega.omega;
    model.history.push_back(std::move(rec));
    if (model.history.back().change_B <= cfg.tol_B) break;
  }

  model.weights = std::move(B);
  model.relationship = std::move(omega);
  model.models = std::move(models);
  return model;
}

double objective(const KernelBank& bank, const std::vector<Vector>& labels, const Matrix& B, const Matrix& omega,
                 const std::vector<DualSolution>& models, const TrainConfig& cfg) {
  check_bank_labels(bank, labels);
  if (B.cols() != static_cast<Eigen::Index>(bank.num_tasks()) ||
      B.rows() != static_cast<Eigen::Index>(bank.num_kernels()))
    throw DimensionError("objective: B has the wrong shape");
  if (models.size() != bank.num_tasks()) throw DimensionError("objective: one solution per task required");
  double total = 0.0;
  for (std::size_t t = 0; t < bank.num_tasks(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    const Vector beta = B.col(ti);
    const Vector W = rkhs_norms(bank.grams[t], beta, models[t], labels[t]);
    double reg = 0.0;
    for (Eigen::Index k = 0; k < beta.size(); ++k) {
      if (W(k) == 0.0) continue;
      if (beta(k) < kWeightFloor)
        throw NumericError("objective: kernel weight below floor with nonzero norm (task " + std::to_string(t) + ")");
      reg += W(k) / beta(k);
    }
    const Matrix Kt = combine_weighted(bank.grams[t], beta);
    const Vector scores = decision_values(Kt, models[t], labels[t]);
    double loss = 0.0;
    if (cfg.kind == SolverKind::svm) {
      for (Eigen::Index i = 0; i < scores.size(); ++i) loss += std::max(0.0, 1.0 - labels[t](i) * scores(i));
      loss *= cfg.C;
    } else {
      loss = (labels[t] - scores).squaredNorm() / (2.0 * cfg.lambda);
    }
    total += 0.5 * reg + loss;
  }
  if (cfg.mu) total += 0.5 * *cfg.mu * trace_pinv_quadratic(B, omega);
  return total;
}

std::vector<Vector> predict(const MkMtrlModel& model, const std::vector<std::vector<GramMatrix>>& cross) {
  const auto T = static_cast<std::size_t>(model.weights.num_tasks());
  if (cross.size() != T) throw DimensionError("predict: cross bank has the wrong number of tasks");
  std::vector<Vector> out;
  for (std::size_t t = 0; t < T; ++t) {
    if (cross[t].size() != model.specs.size()) throw DimensionError("predict: cross bank row has wrong length");
    for (std::size_t k = 0; k < model.specs.size(); ++k)
      if (!(cross[t][k].spec == model.specs[k])) throw ConfigError("predict: kernel specs differ from the model's");
    const Vector y = t < model.train_labels.size() ? model.train_labels[t] : Vector();
    out.push_back(predict_scores(cross[t], model.weights.beta(static_cast<Eigen::Index>(t)), model.models[t], y));
  }
  return out;
}

std::vector<Vector> predict(const MkMtrlModel& model, const KernelBank& cross) {
  if (cross.specs != model.specs) throw ConfigError("predict: kernel specs differ from the model's");
  if (cross.cross.empty()) throw DimensionError("predict: bank has no cross grams");
  return predict(model, cross.cross);
}

std::vector<Vector> predict_features(const MkMtrlModel& model, const std::vector<Matrix>& features) {
  if (model.train_features.size() != features.size())
    throw DimensionError("predict: expected " + std::to_string(model.train_features.size()) + " tasks");
  if (!model.normalization.empty() && model.normalization.size() != features.size())
    throw DimensionError("predict: model has the wrong number of input transforms");
  std::vector<std::vector<GramMatrix>> cross(features.size());
  for (std::size_t t = 0; t < features.size(); ++t) {
    if (features[t].cols() != model.train_features[t].cols())
      throw DimensionError("predict: task " + std::to_string(t) + " has " + std::to_string(features[t].cols()) +
                           " features, the model expects " + std::to_string(model.train_features[t].cols()));
    const Matrix x = model.normalization.empty() ? features[t] : model.normalization[t].apply(features[t]);
    for (std::size_t k = 0; k < model.specs.size(); ++k)
      cross[t].push_back(scale_cross(compute_gram(model.specs[k], model.train_features[t], x),
                                     model.trace_scales(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k))));
  }
  return predict(model, cross);
}

std::string serialize_model(const MkMtrlModel& model) {
  json doc;
  doc["format"] = "mkmtrl-model/1";
  doc["kind"] = model.kind == SolverKind::svm ? "svm" : "krr";
  json specs = json::array();
  for (const auto& s : model.specs) specs.push_back(s.to_string());
  doc["specs"] = std::move(specs);
  doc["B"] = encode(model.weights.B);
  doc["omega"] = encode(model.relationship.omega);
  doc["trace_scales"] = encode(model.trace_scales);
  json tasks = json::array();
  for (std::size_t t = 0; t < model.models.size(); ++t) {
    const auto& m = model.models[t];
    json task{{"alpha", encode(m.alpha)},
              {"bias", hexfloat(m.bias)},
              {"dual_objective", hexfloat(m.dual_objective)},
              {"iterations", m.iterations},
              {"converged", m.converged}};
    if (t < model.train_features.size()) task["train_features"] = encode(model.train_features[t]);
    if (t < model.train_labels.size()) task["train_labels"] = encode(model.train_labels[t]);
    if (t < model.normalization.size())
      task["normalization"] = {{"mean", encode(model.normalization[t].mean)},
                               {"scale", encode(model.normalization[t].scale)}};
    tasks.push_back(std::move(task));
  }
  doc["tasks"] = std::move(tasks);
  json history = json::array();
  for (const auto& h : model.history)
    history.push_back({{"outer", h.outer},
                       {"inner_steps", h.inner_steps},
                       {"objective", hexfloat(h.objective)},
                       {"change_B", hexfloat(h.change_B)}});
  doc["history"] = std::move(history);
  return doc.dump(1);
}

MkMtrlModel deserialize_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "mkmtrl-model/1") throw ParseError("unsupported model format");
    MkMtrlModel model;
    model.kind = doc.at("kind") == "svm" ? SolverKind::svm : SolverKind::krr;
    for (const auto& s : doc.at("specs")) model.specs.push_back(KernelSpec::parse(s.get<std::string>()));
    model.weights.B = decode_matrix(doc.at("B"));
    model.relationship.omega = decode_matrix(doc.at("omega"));
    model.trace_scales = decode_matrix(doc.at("trace_scales"));
    for (const auto& task : doc.at("tasks")) {
      DualSolution m;
      m.kind = model.kind;
      m.alpha = decode_vector(task.at("alpha"));
      m.bias = from_hex(task.at("bias"));
      m.dual_objective = from_hex(task.at("dual_objective"));
      m.iterations = task.at("iterations").get<long>();
      m.converged = task.at("converged").get<bool>();
      model.models.push_back(std::move(m));
      if (task.contains("train_features")) model.train_features.push_back(decode_matrix(task["train_features"]));
      if (task.contains("train_labels")) model.train_labels.push_back(decode_vector(task["train_labels"]));
      if (task.contains("normalization"))
        model.normalization.push_back(
            {decode_vector(task["normalization"].at("mean")), decode_vector(task["normalization"].at("scale"))});
    }
    for (const auto& h : doc.at("history")) {
      IterationRecord rec;
      rec.outer = h.at("outer").get<int>();
      rec.inner_steps = h.at("inner_steps").get<int>();
      rec.objective = from_hex(h.at("objective"));
      rec.change_B = from_hex(h.at("change_B"));
      model.history.push_back(std::move(rec));
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const MkMtrlModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file " + path.string());
  out << serialize_model(model) << '\n';
  if (!out) throw Error("failed writing model file " + path.string());
}

MkMtrlModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace mkmtrl
