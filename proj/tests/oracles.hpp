#pragma once

// Reference computations for the tests. Written directly from the definitions,
// deliberately naive, and sharing no code with the library.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec softmax(const Vec& z, double temp) {
  Vec e(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i] / temp);
    s += e[i];
  }
  for (double& x : e) x /= s;
  return e;
}

inline double kl(const Vec& p, const Vec& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline double tv(const Vec& p, const Vec& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
  return 0.5 * s;
}

// y = W x + b with W given row-major (rows x cols), triple loop.
inline Vec matvec(const Vec& w, std::size_t rows, std::size_t cols, const Vec& x, const Vec& b) {
  Vec y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += w[r * cols + c] * x[c];
    y[r] = acc + b[r];
  }
  return y;
}

// Central difference of f at x[i].
inline double central_diff(const std::function<double()>& f, double& xi, double h) {
  const double keep = xi;
  xi = keep + h;
  const double up = f();
  xi = keep - h;
  const double down = f();
  xi = keep;
  return (up - down) / (2.0 * h);
}

// Relative error with an absolute floor so tiny gradients do not blow up.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

// Left-to-right evaluation of "a op b op c ..." modulo m over symbol tokens.
inline int eval_mod_expr(const std::vector<std::string>& toks, int m) {
  auto val = [](const std::string& s) { return std::stoi(s); };
  long acc = val(toks.at(0));
  for (std::size_t i = 1; i + 1 < toks.size(); i += 2) {
    const std::string& op = toks[i];
    const long b = val(toks[i + 1]);
    if (op == "+") acc = acc + b;
    else if (op == "-") acc = acc - b;
    else acc = acc * b;
    acc = ((acc % m) + m) % m;
  }
  return static_cast<int>(((acc % m) + m) % m);
}

inline Vec random_vec(std::mt19937_64& g, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vec v(n);
  for (double& x : v) x = nd(g);
  return v;
}

inline Vec random_simplex(std::mt19937_64& g, std::size_t n) {
  std::exponential_distribution<double> ed(1.0);
  Vec v(n);
  double s = 0.0;
  for (double& x : v) {
    x = ed(g);
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

}  // namespace oracle
