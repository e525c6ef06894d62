#include "doge/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace doge::num {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidArgument(std::string(what) + ": non-finite entry");
  }
}

}  // namespace

RealMatrix::RealMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

RealMatrix::RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  if (data_.size() != rows * cols) throw InvalidArgument("RealMatrix: entry count does not match shape");
}

RealMatrix::RealMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw InvalidArgument("RealMatrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

bool RealMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("ProbVector: entry outside [0,1]");
    sum += p;
  }
  if (probs_.empty() || std::abs(sum - 1.0) > kProbSumTolerance) {
    throw InvalidArgument("ProbVector: entries do not sum to 1");
  }
}

ProbVector ProbVector::uniform(std::size_t n) {
  if (n == 0) throw InvalidArgument("ProbVector::uniform: empty support");
  return ProbVector(Unchecked{}, std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

SeededRng::SeededRng(std::uint64_t seed, std::string_view stream_label)
    : seed_(seed), label_(stream_label), key_(mix64(mix64(seed) ^ fnv1a(stream_label))) {}

SeededRng SeededRng::split(std::string_view child) const {
  std::string lbl = label_;
  lbl += '/';
  lbl += child;
  return SeededRng(seed_, lbl);
}

std::uint64_t SeededRng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::uniform_index(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("uniform_index: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double SeededRng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void log_softmax_into(std::span<const double> logits, double temp, std::span<double> out) {
  double mx = -INFINITY;
  for (double z : logits) mx = std::max(mx, z / temp);
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = logits[k] / temp - mx;
    sum += std::exp(out[k]);
  }
  const double lse = std::log(sum);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] -= lse;
}

ProbVector softmax_temp(std::span<const double> logits, double temp) {
  if (!(temp > 0.0) || !std::isfinite(temp)) throw InvalidArgument("softmax_temp: temperature must be positive");
  if (logits.empty()) throw InvalidArgument("softmax_temp: empty logits");
  require_finite(logits, "softmax_temp");
  double mx = -INFINITY;
  for (double z : logits) mx = std::max(mx, z / temp);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] / temp - mx);
    sum += p[k];
  }
  for (double& x : p) x /= sum;
  return ProbVector(ProbVector::Unchecked{}, std::move(p));
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw InvalidArgument("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    if (q[k] == 0.0) throw DomainError("kl_divergence: q has zero mass where p is positive");
    kl += p[k] * (std::log(p[k]) - std::log(q[k]));
  }
  // Rounding can leave a tiny negative value when p == q up to the last ulp.
  return std::max(kl, 0.0);
}

double total_variation(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw InvalidArgument("total_variation: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - q[k]);
  return 0.5 * s;
}

RealVector affine(const RealMatrix& weights, std::span<const double> bias, std::span<const double> input) {
  if (weights.cols() != input.size() || weights.rows() != bias.size()) {
    throw InvalidArgument("affine: dimension mismatch");
  }
  RealVector out(weights.rows());
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    const auto w = weights.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < input.size(); ++c) acc += w[c] * input[c];
    out[r] = acc + bias[r];
  }
  return out;
}

ProbVector mix_with_uniform(const ProbVector& p, double eps) {
  const double u = 1.0 / static_cast<double>(p.size());
  std::vector<double> out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = (1.0 - eps) * p[k] + eps * u;
  return ProbVector(ProbVector::Unchecked{}, std::move(out));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace doge::num
