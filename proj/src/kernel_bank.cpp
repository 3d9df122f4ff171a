#include "mkmtrl/kernel_bank.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mkmtrl {
namespace {

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("bad number '" + s + "' in kernel spec");
  return v;
}

long parse_int(const std::string& s) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("bad integer '" + s + "' in kernel spec");
  return v;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("truncated gram cache");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::atomic<std::uint64_t> g_gram_count{0};

void check_finite(const Matrix& x) {
  if (!x.allFinite()) throw NumericError("non-finite feature value in kernel input");
}

}  // namespace

KernelSpec KernelSpec::polynomial(int degree, double offset) {
  KernelSpec s;
  s.kind = KernelKind::polynomial;
  s.degree = degree;
  s.offset = offset;
  return s;
}

KernelSpec KernelSpec::rbf(double bandwidth) {
  KernelSpec s;
  s.kind = KernelKind::rbf;
  s.bandwidth = bandwidth;
  return s;
}

KernelSpec KernelSpec::univariate_rbf(Eigen::Index feature, double bandwidth) {
  KernelSpec s;
  s.kind = KernelKind::univariate_rbf;
  s.feature = feature;
  s.bandwidth = bandwidth;
  return s;
}

void KernelSpec::validate() const {
  switch (kind) {
    case KernelKind::linear:
      break;
    case KernelKind::polynomial:
      if (degree < 1) throw ConfigError("polynomial degree must be >= 1");
      if (!std::isfinite(offset) || offset < 0) throw ConfigError("polynomial offset must be >= 0");
      break;
    case KernelKind::univariate_rbf:
      if (feature < 0) throw ConfigError("univariate kernel feature index must be >= 0");
      [[fallthrough]];
    case KernelKind::rbf:
      if (!(bandwidth > 0) || !std::isfinite(bandwidth)) throw ConfigError("rbf bandwidth must be > 0");
      break;
  }
}

std::string KernelSpec::to_string() const {
  switch (kind) {
    case KernelKind::linear:
      return "linear";
    case KernelKind::polynomial:
      return offset == 1.0 ? "poly:" + std::to_string(degree)
                           : "poly:" + std::to_string(degree) + ":" + hex(offset);
    case KernelKind::rbf:
      return "rbf:" + hex(bandwidth);
    case KernelKind::univariate_rbf:
      return "urbf:" + std::to_string(feature) + ":" + hex(bandwidth);
  }
  return {};
}

KernelSpec KernelSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty kernel spec");
  KernelSpec s;
  const std::string& head = parts[0];
  if (head == "linear" && parts.size() == 1) {
    s = linear();
  } else if ((head == "poly" || head == "polynomial") && (parts.size() == 2 || parts.size() == 3)) {
    s = polynomial(static_cast<int>(parse_int(parts[1])), parts.size() == 3 ? parse_real(parts[2]) : 1.0);
  } else if (head == "rbf" && parts.size() == 2) {
    s = rbf(parse_real(parts[1]));
  } else if ((head == "urbf" || head == "univariate_rbf") && parts.size() == 3) {
    s = univariate_rbf(parse_int(parts[1]), parse_real(parts[2]));
  } else {
    throw ConfigError("cannot parse kernel spec '" + text + "'");
  }
  s.validate();
  return s;
}

std::uint64_t KernelSpec::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_string()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "linear") return KernelKind::linear;
  if (s == "poly" || s == "polynomial") return KernelKind::polynomial;
  if (s == "rbf") return KernelKind::rbf;
  if (s == "urbf" || s == "univariate_rbf") return KernelKind::univariate_rbf;
  throw ConfigError("unknown kernel kind '" + s + "'");
}

std::uint64_t gram_computations() { return g_gram_count.load(); }

GramMatrix compute_gram(const KernelSpec& spec, const Matrix& x, const std::optional<Matrix>& x2) {
  spec.validate();
  ++g_gram_count;
  if (x.rows() == 0) throw DimensionError("kernel input has no rows");
  check_finite(x);
  if (spec.kind == KernelKind::univariate_rbf && spec.feature >= x.cols())
    throw DimensionError("univariate kernel feature " + std::to_string(spec.feature) + " out of range");
  GramMatrix g;
  g.spec = spec;
  if (x2) {
    if (x2->cols() != x.cols())
      throw DimensionError("kernel inputs differ in dimension: " + std::to_string(x2->cols()) + " vs " +
                           std::to_string(x.cols()));
    check_finite(*x2);
    g.values.resize(x2->rows(), x.rows());
    for (Eigen::Index i = 0; i < x2->rows(); ++i)
      for (Eigen::Index j = 0; j < x.rows(); ++j) g.values(i, j) = kernel_value(spec, x2->row(i), x.row(j));
    return g;
  }
  const Eigen::Index n = x.rows();
  g.values.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j; i < n; ++i) {
      const double v = kernel_value(spec, x.row(i), x.row(j));
      g.values(i, j) = v;
      g.values(j, i) = v;
    }
  return g;
}

GramMatrix normalize_unit_trace(const GramMatrix& g) {
  if (g.values.rows() != g.values.cols()) throw DimensionError("unit-trace normalization needs a square gram");
  double tr = 0.0;  // sequential, to match gram_trace exactly
  for (Eigen::Index i = 0; i < g.values.rows(); ++i) tr += g.values(i, i);
  if (!(tr > 0) || !std::isfinite(tr))
    throw NumericError("gram trace " + std::to_string(tr) + " is not positive (degenerate kernel)");
  if (g.unit_trace && tr == 1.0) return g;
  GramMatrix out = g;
  out.values /= tr;
  out.unit_trace = true;
  out.trace_scale = g.trace_scale * tr;
  return out;
}

GramMatrix scale_cross(const GramMatrix& cross, double trace_scale) {
  if (!(trace_scale > 0)) throw NumericError("trace scale must be positive");
  GramMatrix out = cross;
  out.values /= trace_scale;
  out.unit_trace = true;
  out.trace_scale = trace_scale;
  return out;
}

Matrix combine_weighted(std::span<const GramMatrix> grams, const Vector& beta) {
  if (static_cast<Eigen::Index>(grams.size()) != beta.size())
    throw DimensionError("combine_weighted: " + std::to_string(grams.size()) + " grams but " +
                         std::to_string(beta.size()) + " weights");
  if (grams.empty()) throw DimensionError("combine_weighted: no grams");
  if ((beta.array() < 0).any()) throw NumericError("combine_weighted: negative kernel weight");
  Matrix out = Matrix::Zero(grams[0].values.rows(), grams[0].values.cols());
  for (std::size_t k = 0; k < grams.size(); ++k) {
    if (grams[k].values.rows() != out.rows() || grams[k].values.cols() != out.cols())
      throw DimensionError("combine_weighted: gram shapes differ");
    const double b = beta(static_cast<Eigen::Index>(k));
    if (b != 0.0) out.noalias() += b * grams[k].values;
  }
  return out;
}

double kernel_eval(const KernelSpec& spec, const Vector& x, const Vector& x2, double trace_scale) {
  if (x.size() != x2.size()) throw DimensionError("kernel_eval: vectors differ in dimension");
  if (spec.kind == KernelKind::univariate_rbf && spec.feature >= x.size())
    throw DimensionError("univariate kernel feature out of range");
  if (!(trace_scale > 0)) throw NumericError("kernel_eval: trace scale must be positive");
  return kernel_value(spec, x, x2) / trace_scale;
}

double gram_trace(const KernelSpec& spec, const Matrix& x) {
  double tr = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) tr += kernel_value(spec, x.row(i), x.row(i));
  return tr;
}

double median_pairwise_distance(const Matrix& x, std::optional<Eigen::Index> feature) {
  const Eigen::Index n = x.rows();
  const Eigen::Index cap = 500;
  std::vector<Eigen::Index> rows;
  if (n <= cap) {
    for (Eigen::Index i = 0; i < n; ++i) rows.push_back(i);
  } else {
    for (Eigen::Index i = 0; i < cap; ++i) rows.push_back(i * n / cap);
  }
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      if (feature) dist.push_back(std::abs(x(rows[a], *feature) - x(rows[b], *feature)));
      else dist.push_back((x.row(rows[a]) - x.row(rows[b])).norm());
    }
  if (dist.empty()) return 0.0;
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  if (dist.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(dist.begin(), mid);
  return 0.5 * (lower + upper);
}

std::vector<KernelSpec> grid_specs(KernelKind kind, const Matrix& x, int count) {
  if (count < 1) throw ConfigError("kernel grid count must be >= 1");
  std::vector<KernelSpec> specs;
  auto bandwidths = [count](double m) {
    std::vector<double> out;
    for (int i = 0; i < count; ++i) out.push_back(m * std::exp2(i - 0.5 * (count - 1)));
    return out;
  };
  switch (kind) {
    case KernelKind::linear:
      specs.push_back(KernelSpec::linear());
      break;
    case KernelKind::polynomial:
      for (int p = 1; p <= count; ++p) specs.push_back(KernelSpec::polynomial(p));
      break;
    case KernelKind::rbf: {
      const double m = median_pairwise_distance(x);
      if (!(m > 0)) throw NumericError("median pairwise distance is 0 (all rows identical)");
      for (double s : bandwidths(m)) specs.push_back(KernelSpec::rbf(s));
      break;
    }
    case KernelKind::univariate_rbf:
      for (Eigen::Index f = 0; f < x.cols(); ++f) {
        const double m = median_pairwise_distance(x, f);
        if (!(m > 0))
          throw NumericError("median distance of feature " + std::to_string(f) + " is 0 (constant feature)");
        for (double s : bandwidths(m)) specs.push_back(KernelSpec::univariate_rbf(f, s));
      }
      break;
  }
  return specs;
}

double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix KernelBank::trace_scales() const {
  Matrix out(static_cast<Eigen::Index>(grams.size()), static_cast<Eigen::Index>(specs.size()));
  for (std::size_t t = 0; t < grams.size(); ++t)
    for (std::size_t k = 0; k < specs.size(); ++k)
      out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = grams[t][k].trace_scale;
  return out;
}

void KernelBank::validate() const {
  if (grams.empty() || specs.empty()) throw DimensionError("kernel bank is empty");
  for (std::size_t t = 0; t < grams.size(); ++t) {
    if (grams[t].size() != specs.size()) throw DimensionError("bank row " + std::to_string(t) + " has wrong length");
    for (std::size_t k = 0; k < specs.size(); ++k)
      if (!(grams[t][k].spec == specs[k])) throw DimensionError("bank spec mismatch at task " + std::to_string(t));
  }
  if (!cross.empty() && cross.size() != grams.size()) throw DimensionError("cross bank has wrong task count");
}

KernelBank build_bank(const DatasetBundle& train, const std::vector<KernelSpec>& specs, const DatasetBundle* test,
                      int workers) {
  if (specs.empty()) throw ConfigError("no kernel specs");
  if (test && test->tasks.size() != train.tasks.size()) throw DimensionError("train/test task counts differ");
  KernelBank bank;
  bank.specs = specs;
  const std::size_t T = train.tasks.size();
  const std::size_t K = specs.size();
  bank.grams.assign(T, std::vector<GramMatrix>(K));
  if (test) bank.cross.assign(T, std::vector<GramMatrix>(K));
  parallel_for(
      T * K,
      [&](std::size_t idx) {
        const std::size_t t = idx / K, k = idx % K;
        GramMatrix g = normalize_unit_trace(compute_gram(specs[k], train.tasks[t].features));
#ifndef NDEBUG
        if (g.values.rows() <= 400 && min_eigenvalue(g.values) < -1e-8)
          throw NumericError("base gram is not PSD: " + specs[k].to_string());
#endif
        if (test)
          bank.cross[t][k] =
              scale_cross(compute_gram(specs[k], train.tasks[t].features, test->tasks[t].features), g.trace_scale);
        bank.grams[t][k] = std::move(g);
      },
      workers);
  return bank;
}

std::vector<std::vector<GramMatrix>> build_cross(const DatasetBundle& train, const DatasetBundle& test,
                                                 const std::vector<KernelSpec>& specs, const Matrix& trace_scales) {
  if (train.tasks.size() != test.tasks.size()) throw DimensionError("train/test task counts differ");
  if (trace_scales.rows() != static_cast<Eigen::Index>(train.tasks.size()) ||
      trace_scales.cols() != static_cast<Eigen::Index>(specs.size()))
    throw DimensionError("trace scale matrix has wrong shape");
  std::vector<std::vector<GramMatrix>> cross(train.tasks.size());
  for (std::size_t t = 0; t < train.tasks.size(); ++t)
    for (std::size_t k = 0; k < specs.size(); ++k)
      cross[t].push_back(scale_cross(compute_gram(specs[k], train.tasks[t].features, test.tasks[t].features),
                                     trace_scales(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k))));
  return cross;
}

void write_gram_cache(const std::filesystem::path& path, const GramMatrix& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write gram cache " + path.string());
  out.write("MKGRAM01", 8);
  put_u64(out, static_cast<std::uint64_t>(g.values.rows()));
  put_u64(out, static_cast<std::uint64_t>(g.values.cols()));
  put_u64(out, g.spec.hash());
  put_u64(out, std::bit_cast<std::uint64_t>(g.trace_scale));
  for (Eigen::Index i = 0; i < g.values.rows(); ++i)
    for (Eigen::Index j = 0; j < g.values.cols(); ++j) put_u64(out, std::bit_cast<std::uint64_t>(g.values(i, j)));
  if (!out) throw Error("failed writing gram cache " + path.string());
}

GramMatrix read_gram_cache(const std::filesystem::path& path, const KernelSpec& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open gram cache " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "MKGRAM01", 8) != 0) throw ParseError("not a gram cache file");
  const auto rows = static_cast<Eigen::Index>(get_u64(in));
  const auto cols = static_cast<Eigen::Index>(get_u64(in));
  if (get_u64(in) != expected.hash()) throw ConfigError("gram cache was built for a different kernel spec");
  GramMatrix g;
  g.spec = expected;
  g.trace_scale = std::bit_cast<double>(get_u64(in));
  g.unit_trace = g.trace_scale != 1.0;
  g.values.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) g.values(i, j) = std::bit_cast<double>(get_u64(in));
  return g;
}

}  // namespace mkmtrl
