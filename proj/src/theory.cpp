#include "doge/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "doge/objective.hpp"

namespace doge::theory {

namespace {

std::vector<double> flatten(const model::HeadParams& head) {
  std::vector<double> out;
  out.reserve(head.parameter_count());
  for (auto t : head.tensors()) out.insert(out.end(), t.begin(), t.end());
  return out;
}

model::HeadParams unflatten(const model::HeadParams& shape, std::span<const double> flat) {
  model::HeadParams out = shape;
  std::size_t k = 0;
  for (auto t : out.tensors()) {
    for (double& x : t) x = flat[k++];
  }
  return out;
}

std::vector<double> diff(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

ProbVector row_dist(const DistMatrix& m, std::size_t r) {
  return ProbVector(std::vector<double>(m.row(r).begin(), m.row(r).end()));
}

void check_dists(const DistMatrix& r, const RealMatrix& contexts, std::size_t vocab) {
  if (r.rows() != contexts.rows() || r.cols() != vocab) {
    throw InvalidArgument("distribution matrix must have one row per context and one column per token");
  }
}

// KL that reports +inf instead of throwing when s has a zero under positive r.
double kl_or_inf(const ProbVector& r, const ProbVector& s) {
  try {
    return num::kl_divergence(r, s);
  } catch (const DomainError&) {
    return std::numeric_limits<double>::infinity();
  }
}

void record(InequalityCheck& c, double lhs, double rhs, double tol) {
  const double slack = rhs - lhs;
  if (c.trials == 0 || slack < c.min_slack) {
    c.min_slack = slack;
    c.worst_lhs = lhs;
    c.worst_rhs = rhs;
  }
  ++c.trials;
  if (lhs > rhs + tol) ++c.violations;
}

// Callers take several references in a row, so room is reserved up front to
// keep earlier references valid.
InequalityCheck& check_named(BoundReport& rep, const std::string& name, bool asserted = true) {
  for (auto& c : rep.checks) {
    if (c.name == name) return c;
  }
  if (rep.checks.capacity() < 32) rep.checks.reserve(32);
  rep.checks.push_back(InequalityCheck{name, 0, 0, 0.0, 0.0, 0.0, asserted});
  return rep.checks.back();
}

}  // namespace

void validate(const SmoothingConfig& cfg) {
  if (!(cfg.epsilon > 0.0 && cfg.epsilon < 0.5)) throw InvalidArgument("smoothing epsilon must lie in (0, 0.5)");
  if (!(cfg.alpha > 0.0)) throw InvalidArgument("alpha must be positive");
}

ProbVector smooth(const ProbVector& p, double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw InvalidArgument("smooth: epsilon must lie in (0, 0.5)");
  return num::mix_with_uniform(p, eps);
}

double bounded_divergence(std::span<const double> teacher_logits, const ProbVector& student,
                          const SmoothingConfig& cfg) {
  validate(cfg);
  if (teacher_logits.size() != student.size()) throw InvalidArgument("bounded_divergence: length mismatch");
  const ProbVector p = smooth(num::softmax_temp(teacher_logits, cfg.alpha), cfg.epsilon);
  return num::kl_divergence(p, smooth(student, cfg.epsilon));
}

double bounded_divergence_cap(std::size_t vocab, double eps) {
  const double v = static_cast<double>(vocab);
  return std::log(v) - std::log(eps * v);
}

DistMatrix student_distributions(const model::HeadParams& head, const RealMatrix& contexts) {
  DistMatrix out(contexts.rows(), head.vocab_size());
  for (std::size_t t = 0; t < contexts.rows(); ++t) {
    const auto p = num::softmax_temp(model::head_logits(head, contexts.row(t)), 1.0);
    std::copy(p.values().begin(), p.values().end(), out.row(t).begin());
  }
  return out;
}

double kd_loss(const model::HeadParams& head, const RealMatrix& contexts, const DistMatrix& r) {
  check_dists(r, contexts, head.vocab_size());
  if (contexts.rows() == 0) throw InvalidArgument("kd_loss: no contexts");
  const std::size_t v = head.vocab_size();
  std::vector<double> ls(v);
  double total = 0.0;
  for (std::size_t t = 0; t < contexts.rows(); ++t) {
    num::log_softmax_into(model::head_logits(head, contexts.row(t)), 1.0, ls);
    double s = 0.0;
    for (std::size_t y = 0; y < v; ++y) s -= r(t, y) * ls[y];
    total += s;
  }
  return total / static_cast<double>(contexts.rows());
}

std::vector<double> kd_gradient(const model::HeadParams& head, const RealMatrix& contexts, const DistMatrix& r) {
  check_dists(r, contexts, head.vocab_size());
  if (contexts.rows() == 0) throw InvalidArgument("kd_gradient: no contexts");
  const DistMatrix p = student_distributions(head, contexts);
  RealMatrix g(contexts.rows(), head.vocab_size());
  const double inv = 1.0 / static_cast<double>(contexts.rows());
  // E_{y ~ r}[p - e_y] = p - r for each context.
  for (std::size_t t = 0; t < contexts.rows(); ++t) {
    for (std::size_t y = 0; y < head.vocab_size(); ++y) g(t, y) = (p(t, y) - r(t, y)) * inv;
  }
  return flatten(objective::chain_to_head(head, contexts, g));
}

double token_gradient_norm(const model::HeadParams& head, std::span<const double> context, corpus::TokenId y) {
  const auto p = num::softmax_temp(model::head_logits(head, context), 1.0);
  RealMatrix g(1, head.vocab_size());
  for (std::size_t k = 0; k < p.size(); ++k) g(0, k) = p[k];
  g(0, static_cast<std::size_t>(y)) -= 1.0;
  RealMatrix ctx(1, context.size(), std::vector<double>(context.begin(), context.end()));
  return num::norm2(flatten(objective::chain_to_head(head, ctx, g)));
}

double estimate_G(const model::HeadParams& head, const RealMatrix& contexts) {
  if (contexts.rows() == 0) throw EstimationError("estimate_G: no contexts");
  double g = 0.0;
  for (std::size_t t = 0; t < contexts.rows(); ++t) {
    for (std::size_t y = 0; y < head.vocab_size(); ++y) {
      g = std::max(g, token_gradient_norm(head, contexts.row(t), static_cast<corpus::TokenId>(y)));
    }
  }
  return g;
}

double estimate_L(const model::HeadParams& head, const RealMatrix& contexts, std::span<const DistMatrix> dists,
                  num::SeededRng rng, const SmoothnessSampling& sampling,
                  std::span<const std::vector<double>> probe_directions) {
  if (contexts.rows() == 0) throw EstimationError("estimate_L: no contexts");
  if (dists.empty()) throw EstimationError("estimate_L: no reference distributions");
  const std::vector<double> theta = flatten(head);
  const std::size_t n = theta.size();
  std::vector<std::vector<double>> g0;
  for (const auto& r : dists) g0.push_back(kd_gradient(head, contexts, r));

  double best = 0.0;
  bool any = false;
  auto probe = [&](std::span<const double> dir, double scale) {
    const double dn = num::norm2(dir);
    if (!(dn > 0.0) || !std::isfinite(dn)) return;
    std::vector<double> moved(n);
    for (std::size_t i = 0; i < n; ++i) moved[i] = theta[i] + dir[i] * (scale / dn);
    const auto delta = diff(moved, theta);
    const double dist = num::norm2(delta);
    if (!(dist > 0.0)) return;
    const model::HeadParams other = unflatten(head, moved);
    for (std::size_t k = 0; k < dists.size(); ++k) {
      const double num = num::norm2(diff(kd_gradient(other, contexts, dists[k]), g0[k]));
      best = std::max(best, num / dist);
      any = true;
    }
  };

  const double scales[] = {1.0, 1e-1, 1e-2, 1e-3};
  std::vector<double> dir(n);
  for (std::size_t k = 0; k < sampling.random_pairs; ++k) {
    for (double& x : dir) x = rng.normal();
    probe(dir, sampling.radius * scales[k % 4]);
  }
  for (const auto& d : probe_directions) {
    if (d.size() != n) throw InvalidArgument("estimate_L: probe direction has the wrong length");
    std::vector<double> neg(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) neg[i] = -d[i];
    for (double s : scales) {
      probe(d, sampling.radius * s);
      probe(neg, sampling.radius * s);
    }
  }
  if (!any) throw EstimationError("estimate_L: every sampled pair was degenerate");
  return sampling.safety * best;
}

ConstantEstimate estimate_constants(const model::HeadParams& head, const RealMatrix& contexts,
                                    std::span<const DistMatrix> dists, num::SeededRng rng,
                                    const SmoothnessSampling& sampling) {
  return {estimate_G(head, contexts), estimate_L(head, contexts, dists, std::move(rng), sampling)};
}

double mean_kl(const DistMatrix& r, const DistMatrix& s) {
  if (r.rows() != s.rows() || r.cols() != s.cols() || r.rows() == 0) throw InvalidArgument("mean_kl: shape mismatch");
  double total = 0.0;
  for (std::size_t t = 0; t < r.rows(); ++t) total += kl_or_inf(row_dist(r, t), row_dist(s, t));
  return total / static_cast<double>(r.rows());
}

DiscrepancyEntry gradient_discrepancy_check(const DistMatrix& r, const DistMatrix& s, const model::HeadParams& head,
                                            const RealMatrix& contexts, double G_hat) {
  DiscrepancyEntry e;
  e.lhs = num::norm2(diff(kd_gradient(head, contexts, r), kd_gradient(head, contexts, s)));
  double sum_kl = 0.0, sum_sqrt = 0.0;
  for (std::size_t t = 0; t < r.rows(); ++t) {
    const ProbVector rt = row_dist(r, t);
    const ProbVector st = row_dist(s, t);
    const double kl = kl_or_inf(rt, st);
    if (num::total_variation(rt, st) > std::sqrt(kl / 2.0) + kBoundTolerance) e.pinsker_ok = false;
    sum_kl += kl;
    sum_sqrt += std::sqrt(kl);
  }
  const double c = static_cast<double>(r.rows());
  e.mean_kl = sum_kl / c;
  e.mean_sqrt_kl = sum_sqrt / c;
  e.jensen_ok = e.mean_sqrt_kl <= std::sqrt(e.mean_kl) + kBoundTolerance;
  e.rhs = G_hat * std::sqrt(2.0 * e.mean_kl);
  e.violation = e.lhs > e.rhs + kBoundTolerance;
  return e;
}

double progress_upper_bound(double gq_norm, double gp_norm, double G_hat, double L_hat, double eta, double D) {
  return -eta * gq_norm * gq_norm + eta * gq_norm * G_hat * std::sqrt(2.0 * D) +
         0.5 * L_hat * eta * eta * gp_norm * gp_norm;
}

double divergence_threshold(double gq_norm, double gp_norm, double G_hat, double L_hat, double eta) {
  if (!(G_hat > 0.0)) throw DomainError("divergence_threshold: G_hat must be positive");
  if (gq_norm == 0.0) {
    return L_hat * eta * gp_norm == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  return (gq_norm / (G_hat * std::sqrt(2.0))) * (1.0 - L_hat * eta * gp_norm * gp_norm / (2.0 * gq_norm * gq_norm));
}

OneStepEntry one_step_bound_check(const model::HeadParams& head, const RealMatrix& contexts, const DistMatrix& p,
                                  const DistMatrix& q, double eta, double L_hat, double G_hat) {
  if (!(eta >= 0.0)) throw InvalidArgument("one_step_bound_check: eta must be nonnegative");
  OneStepEntry e;
  e.eta = eta;
  const auto gp = kd_gradient(head, contexts, p);
  const auto gq = kd_gradient(head, contexts, q);
  e.gp_norm = num::norm2(gp);
  e.gq_norm = num::norm2(gq);
  e.alignment = num::dot(gq, gp);

  std::vector<double> theta = flatten(head);
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= eta * gp[i];
  e.loss_before = kd_loss(head, contexts, q);
  e.loss_after = kd_loss(unflatten(head, theta), contexts, q);
  e.descent_rhs = e.loss_before - eta * e.alignment + 0.5 * L_hat * eta * eta * e.gp_norm * e.gp_norm;
  e.master_rhs = e.loss_before + progress_upper_bound(e.gq_norm, e.gp_norm, G_hat, L_hat, eta, mean_kl(p, q));
  const double tol = kBoundTolerance * (1.0 + std::abs(e.loss_before));
  e.descent_violation = e.loss_after > e.descent_rhs + tol;
  e.master_violation = e.loss_after > e.master_rhs + tol;
  return e;
}

std::size_t BoundReport::asserted_violations() const {
  std::size_t n = 0;
  for (const auto& c : checks) {
    if (c.asserted) n += c.violations;
  }
  return n;
}

const InequalityCheck* BoundReport::find(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

namespace {

model::HeadParams random_head(num::SeededRng& rng, std::size_t v, std::size_t d, std::size_t hidden) {
  model::HeadParams h = model::HeadParams::zeros(v, d, hidden);
  for (auto t : h.tensors()) {
    for (double& x : t) x = rng.normal();
  }
  return h;
}

RealMatrix random_matrix(num::SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  RealMatrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal() * scale;
  return m;
}

// Softmax rows of Gaussian logits with a per-call spread drawn log-uniformly in [0.1, 10].
DistMatrix random_dists(num::SeededRng& rng, std::size_t rows, std::size_t v) {
  const double sigma = 0.1 * std::pow(100.0, rng.uniform());
  DistMatrix out(rows, v);
  std::vector<double> z(v);
  for (std::size_t t = 0; t < rows; ++t) {
    for (double& x : z) x = rng.normal() * sigma;
    const auto p = num::softmax_temp(z, 1.0);
    std::copy(p.values().begin(), p.values().end(), out.row(t).begin());
  }
  return out;
}

}  // namespace

void run_discrepancy_suite(const SuiteConfig& cfg, BoundReport& report) {
  InequalityCheck& lemma = check_named(report, "gradient_discrepancy");
  InequalityCheck& pinsker = check_named(report, "pinsker");
  InequalityCheck& jensen = check_named(report, "jensen");
  const num::SeededRng root(cfg.seed, "theory/discrepancy");
  for (std::size_t trial = 0; trial < cfg.lemma_trials; ++trial) {
    num::SeededRng rng = root.split(std::to_string(trial));
    const std::size_t hidden = trial % 4 == 3 ? cfg.mlp_hidden : 0;
    const auto head = random_head(rng, cfg.vocab, cfg.dim, hidden);
    const auto contexts = random_matrix(rng, cfg.contexts, cfg.dim, 1.0);
    DistMatrix r = random_dists(rng, cfg.contexts, cfg.vocab);
    DistMatrix s = random_dists(rng, cfg.contexts, cfg.vocab);
    if (trial == 0) {
      // Extreme case: one-hot against uniform.
      for (std::size_t t = 0; t < cfg.contexts; ++t) {
        for (std::size_t y = 0; y < cfg.vocab; ++y) {
          r(t, y) = y == t % cfg.vocab ? 1.0 : 0.0;
          s(t, y) = 1.0 / static_cast<double>(cfg.vocab);
        }
      }
    }
    const double G = estimate_G(head, contexts);
    const auto e = gradient_discrepancy_check(r, s, head, contexts, G);
    record(lemma, e.lhs, e.rhs, kBoundTolerance);
    for (std::size_t t = 0; t < cfg.contexts; ++t) {
      const ProbVector rt = row_dist(r, t);
      const ProbVector st = row_dist(s, t);
      record(pinsker, num::total_variation(rt, st), std::sqrt(kl_or_inf(rt, st) / 2.0), kBoundTolerance);
    }
    record(jensen, e.mean_sqrt_kl, std::sqrt(e.mean_kl), kBoundTolerance);
    report.G_hat = std::max(report.G_hat, G);
  }
}

void run_one_step_suite(const SuiteConfig& cfg, BoundReport& report) {
  validate(cfg.smoothing);
  InequalityCheck& descent = check_named(report, "one_step_descent");
  InequalityCheck& master = check_named(report, "one_step_master");
  InequalityCheck& natural = check_named(report, "threshold_consistency");
  InequalityCheck& boundary = check_named(report, "threshold_boundary");
  const num::SeededRng root(cfg.seed, "theory/one-step");
  double d_bar_sum = 0.0;
  for (std::size_t trial = 0; trial < cfg.step_trials; ++trial) {
    num::SeededRng rng = root.split(std::to_string(trial));
    const std::size_t hidden = trial % 4 == 3 ? cfg.mlp_hidden : 0;
    const auto head = random_head(rng, cfg.vocab, cfg.dim, hidden);
    const auto contexts = random_matrix(rng, cfg.contexts, cfg.dim, 1.0);

    // Teacher: smoothed tempered softmax of random logits. Reference: average of two proxies.
    const double spread = 0.1 * std::pow(100.0, rng.uniform());
    const RealMatrix z = random_matrix(rng, cfg.contexts, cfg.vocab, spread);
    DistMatrix p(cfg.contexts, cfg.vocab);
    for (std::size_t t = 0; t < cfg.contexts; ++t) {
      const auto pt = smooth(num::softmax_temp(z.row(t), cfg.smoothing.alpha), cfg.smoothing.epsilon);
      std::copy(pt.values().begin(), pt.values().end(), p.row(t).begin());
    }
    const DistMatrix q1 = random_dists(rng, cfg.contexts, cfg.vocab);
    const DistMatrix q2 = random_dists(rng, cfg.contexts, cfg.vocab);
    DistMatrix q(cfg.contexts, cfg.vocab);
    for (std::size_t k = 0; k < q.size(); ++k) q.data()[k] = 0.5 * (q1.data()[k] + q2.data()[k]);

    const double G = estimate_G(head, contexts);
    const std::vector<DistMatrix> refs{p, q};
    const std::vector<std::vector<double>> probes{kd_gradient(head, contexts, p), kd_gradient(head, contexts, q)};
    const double L = estimate_L(head, contexts, refs, rng.split("smoothness"), {}, probes);
    const double eta = cfg.eta_fraction / L * (1.0 - rng.uniform());

    const auto e = one_step_bound_check(head, contexts, p, q, eta, L, G);
    const double tol = kBoundTolerance * (1.0 + std::abs(e.loss_before));
    record(descent, e.loss_after, e.descent_rhs, tol);
    record(master, e.loss_after, e.master_rhs, tol);

    double d_bar = 0.0;
    for (std::size_t t = 0; t < cfg.contexts; ++t) {
      d_bar += bounded_divergence(z.row(t), row_dist(q, t), cfg.smoothing);
    }
    d_bar /= static_cast<double>(cfg.contexts);
    d_bar_sum += d_bar;
    const double thr = divergence_threshold(e.gq_norm, e.gp_norm, G, L, eta);
    if (std::sqrt(d_bar) >= thr) {
      record(natural, -progress_upper_bound(e.gq_norm, e.gp_norm, G, L, eta, d_bar), 0.0, kBoundTolerance);
    }
    // Divergence placed at or just above the threshold.
    const double at = std::max(thr, 0.0) * (1.0 + rng.uniform());
    record(boundary, -progress_upper_bound(e.gq_norm, e.gp_norm, G, L, eta, at * at), 0.0, kBoundTolerance);

    report.G_hat = std::max(report.G_hat, G);
    report.L_hat = std::max(report.L_hat, L);
    report.threshold = thr;
  }
  if (cfg.step_trials > 0) report.D_bar = d_bar_sum / static_cast<double>(cfg.step_trials);
  report.epsilon = cfg.smoothing.epsilon;
  report.alpha = cfg.smoothing.alpha;
}

void run_divergence_range_suite(const SuiteConfig& cfg, BoundReport& report) {
  // The stated cap log V - log(eps V) = -log eps is exceeded by sharp teachers
  // against students concentrated elsewhere, so it is reported, not asserted.
  InequalityCheck& upper = check_named(report, "bounded_divergence_range", false);
  InequalityCheck& lower = check_named(report, "bounded_divergence_nonnegative");
  InequalityCheck& corrected = check_named(report, "bounded_divergence_log_v_over_eps");
  const num::SeededRng root(cfg.seed, "theory/range");
  for (std::size_t trial = 0; trial < cfg.range_trials; ++trial) {
    num::SeededRng rng = root.split(std::to_string(trial));
    const std::size_t v = 2 + static_cast<std::size_t>(rng.uniform_index(63));
    SmoothingConfig sc;
    sc.epsilon = 0.5 * std::pow(1e-6, rng.uniform());
    if (!(sc.epsilon < 0.5)) sc.epsilon = 0.49;
    sc.alpha = 0.25 * std::pow(16.0, rng.uniform());
    const double spread = 0.1 * std::pow(1000.0, rng.uniform());
    std::vector<double> z(v), w(v);
    for (double& x : z) x = rng.normal() * spread;
    for (double& x : w) x = rng.normal() * spread;
    const double d = bounded_divergence(z, num::softmax_temp(w, 1.0), sc);
    record(upper, d, bounded_divergence_cap(v, sc.epsilon), kBoundTolerance);
    record(lower, 0.0, d, 0.0);
    record(corrected, d, std::log(static_cast<double>(v)) - std::log(sc.epsilon), kBoundTolerance);
  }
}

void run_instance_checks(const model::HeadParams& head, const RealMatrix& contexts, const RealMatrix& teacher_logits,
                         const DistMatrix& q, const SuiteConfig& cfg, BoundReport& report, const std::string& prefix) {
  validate(cfg.smoothing);
  check_dists(q, contexts, head.vocab_size());
  if (teacher_logits.rows() != contexts.rows() || teacher_logits.cols() != head.vocab_size()) {
    throw InvalidArgument("teacher logits must have one row per context and one column per token");
  }
  InequalityCheck& lemma = check_named(report, prefix + "gradient_discrepancy");
  InequalityCheck& descent = check_named(report, prefix + "one_step_descent");
  InequalityCheck& master = check_named(report, prefix + "one_step_master");
  InequalityCheck& natural = check_named(report, prefix + "threshold_consistency");

  DistMatrix p(contexts.rows(), head.vocab_size());
  for (std::size_t t = 0; t < contexts.rows(); ++t) {
    const auto pt = smooth(num::softmax_temp(teacher_logits.row(t), cfg.smoothing.alpha), cfg.smoothing.epsilon);
    std::copy(pt.values().begin(), pt.values().end(), p.row(t).begin());
  }
  const double G = estimate_G(head, contexts);
  const std::vector<DistMatrix> refs{p, q};
  const std::vector<std::vector<double>> probes{kd_gradient(head, contexts, p), kd_gradient(head, contexts, q)};
  const double L = estimate_L(head, contexts, refs, num::SeededRng(cfg.seed, "theory/instance"), {}, probes);
  const double eta = cfg.eta_fraction / L;

  const auto d = gradient_discrepancy_check(p, q, head, contexts, G);
  record(lemma, d.lhs, d.rhs, kBoundTolerance);
  const auto e = one_step_bound_check(head, contexts, p, q, eta, L, G);
  const double tol = kBoundTolerance * (1.0 + std::abs(e.loss_before));
  record(descent, e.loss_after, e.descent_rhs, tol);
  record(master, e.loss_after, e.master_rhs, tol);

  double d_bar = 0.0;
  for (std::size_t t = 0; t < contexts.rows(); ++t) {
    d_bar += bounded_divergence(teacher_logits.row(t), row_dist(q, t), cfg.smoothing);
  }
  d_bar /= static_cast<double>(contexts.rows());
  const double thr = divergence_threshold(e.gq_norm, e.gp_norm, G, L, eta);
  if (std::sqrt(d_bar) >= thr) {
    record(natural, -progress_upper_bound(e.gq_norm, e.gp_norm, G, L, eta, d_bar), 0.0, kBoundTolerance);
  }
  report.G_hat = G;
  report.L_hat = L;
  report.D_bar = d_bar;
  report.threshold = thr;
  report.epsilon = cfg.smoothing.epsilon;
  report.alpha = cfg.smoothing.alpha;
}

BoundReport run_all_suites(const SuiteConfig& cfg) {
  BoundReport rep;
  run_discrepancy_suite(cfg, rep);
  run_one_step_suite(cfg, rep);
  run_divergence_range_suite(cfg, rep);
  return rep;
}

}  // namespace doge::theory
