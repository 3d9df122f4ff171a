#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mkmtrl/common.hpp"
#include "mkmtrl/data_io.hpp"

namespace mkmtrl {

enum class KernelKind { linear, polynomial, rbf, univariate_rbf };

/// A base kernel function. Polynomial is (offset + x'y)^degree, rbf is
/// exp(-|x-y|^2 / (2 sigma^2)); univariate_rbf applies rbf to one feature.
struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  int degree = 1;
  double bandwidth = 1.0;
  Eigen::Index feature = 0;
  double offset = 1.0;

  static KernelSpec linear() { return {}; }
  static KernelSpec polynomial(int degree, double offset = 1.0);
  static KernelSpec rbf(double bandwidth);
  static KernelSpec univariate_rbf(Eigen::Index feature, double bandwidth);

  void validate() const;
  /// Canonical text form, e.g. `poly:3`, `rbf:0x1.8p+0`, `urbf:2:0x1p-1`.
  /// Floating-point parameters are written as hex floats so parse() round-trips.
  std::string to_string() const;
  static KernelSpec parse(const std::string& text);
  std::uint64_t hash() const;

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

KernelKind kernel_kind_from_string(const std::string& s);

/// Unnormalized kernel value. compute_gram and kernel_eval both go through
/// this loop so that their results agree bit for bit.
template <class A, class B>
double kernel_value(const KernelSpec& spec, const A& x, const B& y) {
  switch (spec.kind) {
    case KernelKind::linear:
    case KernelKind::polynomial: {
      double dot = 0.0;
      for (Eigen::Index k = 0; k < x.size(); ++k) dot += x(k) * y(k);
      if (spec.kind == KernelKind::linear) return dot;
      const double base = spec.offset + dot;
      double v = 1.0;
      for (int p = 0; p < spec.degree; ++p) v *= base;
      return v;
    }
    case KernelKind::rbf: {
      double sq = 0.0;
      for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double diff = x(k) - y(k);
        sq += diff * diff;
      }
      return std::exp(-sq / (2.0 * spec.bandwidth * spec.bandwidth));
    }
    case KernelKind::univariate_rbf: {
      const double diff = x(spec.feature) - y(spec.feature);
      return std::exp(-(diff * diff) / (2.0 * spec.bandwidth * spec.bandwidth));
    }
  }
  return 0.0;
}

struct GramMatrix {
  Matrix values;
  KernelSpec spec;
  bool unit_trace = false;
  /// Total factor the raw kernel values were divided by (1 when raw).
  double trace_scale = 1.0;
};

/// Gram of X against itself (symmetric) or, when X2 is given, of X2's rows
/// against X's rows: entry (i, j) = k(x2_i, x_j), i.e. test x train.
GramMatrix compute_gram(const KernelSpec& spec, const Matrix& x, const std::optional<Matrix>& x2 = std::nullopt);

/// Process-wide count of compute_gram calls.
std::uint64_t gram_computations();

GramMatrix normalize_unit_trace(const GramMatrix& g);

/// Divides a cross (test x train) gram by the train gram's trace factor.
GramMatrix scale_cross(const GramMatrix& cross, double trace_scale);

/// sum_k beta_k * grams[k].
Matrix combine_weighted(std::span<const GramMatrix> grams, const Vector& beta);

/// k(x, x2) / trace_scale.
double kernel_eval(const KernelSpec& spec, const Vector& x, const Vector& x2, double trace_scale);

/// Trace of the unnormalized gram of X without forming it: sum_i k(x_i, x_i).
double gram_trace(const KernelSpec& spec, const Matrix& x);

/// Kernel grid around a data-driven anchor. Polynomial: degrees 1..count.
/// rbf: sigma = m * 2^j for j evenly spanning [-(count-1)/2, (count-1)/2],
/// m the median pairwise distance of a <= 500-row subsample. univariate_rbf:
/// the same per feature (d * count specs). linear: a single spec.
std::vector<KernelSpec> grid_specs(KernelKind kind, const Matrix& x, int count);

double median_pairwise_distance(const Matrix& x, std::optional<Eigen::Index> feature = std::nullopt);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Matrix& m);

/// T x K unit-trace train grams, optional test x train cross grams scaled by
/// the train trace, and the shared spec list.
struct KernelBank {
  std::vector<std::vector<GramMatrix>> grams;
  std::vector<std::vector<GramMatrix>> cross;
  std::vector<KernelSpec> specs;

  std::size_t num_tasks() const { return grams.size(); }
  std::size_t num_kernels() const { return specs.size(); }
  /// T x K matrix of train trace factors.
  Matrix trace_scales() const;
  void validate() const;
};

KernelBank build_bank(const DatasetBundle& train, const std::vector<KernelSpec>& specs,
                      const DatasetBundle* test = nullptr, int workers = 1);

/// Cross grams only (test x train), scaled with the given T x K trace factors.
std::vector<std::vector<GramMatrix>> build_cross(const DatasetBundle& train, const DatasetBundle& test,
                                                 const std::vector<KernelSpec>& specs, const Matrix& trace_scales);

/// Binary cache: "MKGRAM01", rows, cols, spec hash, trace scale, then
/// row-major float64 values; every field little-endian.
void write_gram_cache(const std::filesystem::path& path, const GramMatrix& g);
GramMatrix read_gram_cache(const std::filesystem::path& path, const KernelSpec& expected);

}  // namespace mkmtrl
