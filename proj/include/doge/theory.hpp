#pragma once

// Numerical checks of the smoothed-divergence analysis: bounded divergence,
// gradient-norm and smoothness constants of a student NLL, the gradient
// discrepancy bound, the one-step descent bound and the divergence threshold.
//
// A "student" here is a head evaluated on fixed context features (one row of
// `contexts` per token position). Gradients of the token NLL are exact
// expectations over the vocabulary.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "doge/model.hpp"
#include "doge/numerics.hpp"

namespace doge::theory {

using num::ProbVector;
using num::RealMatrix;

struct SmoothingConfig {
  double epsilon = 1e-3;
  double alpha = 2.0;
};

void validate(const SmoothingConfig& cfg);

/// (1 - eps) p + eps * uniform. Throws InvalidArgument unless 0 < eps < 1/2.
ProbVector smooth(const ProbVector& p, double eps);

/// KL(smooth(softmax(logits / alpha)) || smooth(student)).
double bounded_divergence(std::span<const double> teacher_logits, const ProbVector& student,
                          const SmoothingConfig& cfg);

/// log V - log(eps V), the upper end of the bounded-divergence range.
double bounded_divergence_cap(std::size_t vocab, double eps);

/// Per-context distributions, one row per context (C x V), each row a
/// probability vector.
using DistMatrix = RealMatrix;

/// Student token distributions p_S(. | c_t), one row per context.
DistMatrix student_distributions(const model::HeadParams& head, const RealMatrix& contexts);

/// L_KD(theta; r) = mean_t sum_y r_t(y) * (-log p_S(y | c_t)).
double kd_loss(const model::HeadParams& head, const RealMatrix& contexts, const DistMatrix& r);

/// g(r) = gradient of kd_loss with respect to every head parameter, flattened
/// in HeadParams::tensors() order.
std::vector<double> kd_gradient(const model::HeadParams& head, const RealMatrix& contexts, const DistMatrix& r);

/// ||grad_theta log p_S(y | c)|| for one context row and token.
double token_gradient_norm(const model::HeadParams& head, std::span<const double> context, corpus::TokenId y);

/// Raw maximum of token_gradient_norm over every context and every token.
/// Throws EstimationError on an empty context set.
double estimate_G(const model::HeadParams& head, const RealMatrix& contexts);

struct SmoothnessSampling {
  std::size_t random_pairs = 24;
  double radius = 1.0;      // scale of random perturbations
  double safety = 2.0;
};

/// Safety factor times the largest secant ratio ||g(theta) - g(theta')|| /
/// ||theta - theta'|| over sampled pairs. Perturbations are random directions
/// at geometric scales up to `radius`, plus each of `probe_directions` at the
/// same scales (both signs). The maximum runs over every distribution in
/// `dists`. Throws EstimationError when no pair has positive distance.
double estimate_L(const model::HeadParams& head, const RealMatrix& contexts, std::span<const DistMatrix> dists,
                  num::SeededRng rng, const SmoothnessSampling& sampling = {},
                  std::span<const std::vector<double>> probe_directions = {});

struct ConstantEstimate {
  double G_hat = 0.0;
  double L_hat = 0.0;
};

ConstantEstimate estimate_constants(const model::HeadParams& head, const RealMatrix& contexts,
                                    std::span<const DistMatrix> dists, num::SeededRng rng,
                                    const SmoothnessSampling& sampling = {});

/// mean_t KL(r_t || s_t).
double mean_kl(const DistMatrix& r, const DistMatrix& s);

struct DiscrepancyEntry {
  double lhs = 0.0;  // ||g(r) - g(s)||
  double rhs = 0.0;  // G * sqrt(2 mean KL)
  double mean_kl = 0.0;
  double mean_sqrt_kl = 0.0;
  bool violation = false;
  bool pinsker_ok = true;  // TV(r_t, s_t) <= sqrt(KL / 2) on every context
  bool jensen_ok = true;   // mean sqrt(KL) <= sqrt(mean KL)
};

inline constexpr double kBoundTolerance = 1e-12;

DiscrepancyEntry gradient_discrepancy_check(const DistMatrix& r, const DistMatrix& s, const model::HeadParams& head,
                                            const RealMatrix& contexts, double G_hat);

struct OneStepEntry {
  double eta = 0.0;
  double loss_before = 0.0;     // L_KD(theta; q)
  double loss_after = 0.0;      // L_KD(theta - eta g(p); q)
  double descent_rhs = 0.0;     // loss_before - eta g(q).g(p) + L/2 eta^2 ||g(p)||^2
  double master_rhs = 0.0;      // loss_before + progress bound with the discrepancy rhs
  double gq_norm = 0.0;
  double gp_norm = 0.0;
  double alignment = 0.0;       // g(q).g(p)
  bool descent_violation = false;
  bool master_violation = false;
};

/// One student step on p, measured on q.
OneStepEntry one_step_bound_check(const model::HeadParams& head, const RealMatrix& contexts, const DistMatrix& p,
                                  const DistMatrix& q, double eta, double L_hat, double G_hat);

/// Upper bound on L(theta+; q) - L(theta; q) as a function of a divergence D:
/// -eta ||g_q||^2 + eta ||g_q|| G sqrt(2 D) + L/2 eta^2 ||g_p||^2.
double progress_upper_bound(double gq_norm, double gp_norm, double G_hat, double L_hat, double eta, double D);

/// (||g_q|| / (G sqrt 2)) (1 - L eta ||g_p||^2 / (2 ||g_q||^2)). Throws
/// DomainError when G_hat is not positive.
double divergence_threshold(double gq_norm, double gp_norm, double G_hat, double L_hat, double eta);

struct InequalityCheck {
  std::string name;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double worst_lhs = 0.0;  // at the smallest slack
  double worst_rhs = 0.0;
  double min_slack = 0.0;  // min over trials of rhs - lhs
  bool asserted = true;
};

struct BoundReport {
  double G_hat = 0.0;
  double L_hat = 0.0;
  double D_bar = 0.0;
  double threshold = 0.0;
  double epsilon = 0.0;
  double alpha = 0.0;
  std::vector<InequalityCheck> checks;

  std::size_t asserted_violations() const;
  const InequalityCheck* find(std::string_view name) const;
};

struct SuiteConfig {
  std::uint64_t seed = 233;
  std::size_t lemma_trials = 1000;
  std::size_t step_trials = 500;
  std::size_t range_trials = 10000;
  std::size_t vocab = 6;
  std::size_t dim = 4;
  std::size_t contexts = 3;
  std::size_t mlp_hidden = 3;  // used for a quarter of the trials
  double eta_fraction = 0.1;   // eta <= eta_fraction / L_hat
  SmoothingConfig smoothing;
};

/// Randomized instances for the discrepancy bound with its Pinsker and Jensen
/// sub-checks, plus the one-hot versus uniform extreme.
void run_discrepancy_suite(const SuiteConfig& cfg, BoundReport& report);

/// Randomized one-step instances (descent bound asserted, master bound and
/// threshold consistency recorded).
void run_one_step_suite(const SuiteConfig& cfg, BoundReport& report);

/// Range of the bounded divergence over random inputs.
void run_divergence_range_suite(const SuiteConfig& cfg, BoundReport& report);

BoundReport run_all_suites(const SuiteConfig& cfg);

/// Discrepancy, one-step and threshold checks on one given instance: p is the
/// smoothed tempered softmax of `teacher_logits`, q the reference. Check names
/// get `prefix`. Overwrites the report's constants with the instance values.
void run_instance_checks(const model::HeadParams& head, const RealMatrix& contexts, const RealMatrix& teacher_logits,
                         const DistMatrix& q, const SuiteConfig& cfg, BoundReport& report,
                         const std::string& prefix = "instance_");

}  // namespace doge::theory
