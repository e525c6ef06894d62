#pragma once

// Dense linear algebra, probability transforms and seeded randomness.
//
// All reductions run left-to-right over the logical index so that results are
// bit-reproducible across runs. Probability math is done in double precision
// with max-subtracted (log-space) softmax.

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doge/error.hpp"

namespace doge::num {

using RealVector = std::vector<double>;

class RealMatrix {
 public:
  RealMatrix() = default;
  RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  RealMatrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept;

  // Bitwise comparison of shape and entries.
  friend bool operator==(const RealMatrix&, const RealMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A probability vector: entries in [0,1] summing to 1 within 1e-12.
class ProbVector {
 public:
  ProbVector() = default;
  /// Validates the invariant; throws InvalidArgument otherwise.
  explicit ProbVector(std::vector<double> probs);

  /// Uniform distribution over `n` outcomes.
  static ProbVector uniform(std::size_t n);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  struct Unchecked {};
  ProbVector(Unchecked, std::vector<double> probs) : probs_(std::move(probs)) {}
  friend ProbVector softmax_temp(std::span<const double>, double);
  friend ProbVector mix_with_uniform(const ProbVector&, double);

  std::vector<double> probs_;
};

inline constexpr double kProbSumTolerance = 1e-12;

/// Counter-based generator keyed by (seed, stream label). The value sequence
/// depends only on the key and the draw index, so it is identical on every
/// platform and independent of how other streams are consumed.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::string_view stream_label);

  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& label() const noexcept { return label_; }

  /// Child stream whose label is `<label>/<child>`.
  SeededRng split(std::string_view child) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// softmax(logits / temp), max-subtracted.
ProbVector softmax_temp(std::span<const double> logits, double temp);

/// Writes log softmax(logits / temp) into `out`. No validation; hot path.
void log_softmax_into(std::span<const double> logits, double temp, std::span<double> out);

/// KL(p || q) = sum_k p_k (log p_k - log q_k), with 0 log 0 := 0.
double kl_divergence(const ProbVector& p, const ProbVector& q);

/// Total variation distance: half the L1 distance.
double total_variation(const ProbVector& p, const ProbVector& q);

/// weights * input + bias.
RealVector affine(const RealMatrix& weights, std::span<const double> bias, std::span<const double> input);

/// (1 - eps) p + eps * uniform. Used by the smoothing in the theory module.
ProbVector mix_with_uniform(const ProbVector& p, double eps);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace doge::num
