#pragma once

// SFT cross-entropy, the adversarial negative-KL term against frozen proxy
// students, and the reasoning-masked combination of the two, all with
// closed-form gradients down to the head parameters.

#include <cstdint>
#include <span>
#include <vector>

#include "doge/corpus.hpp"
#include "doge/model.hpp"

namespace doge::objective {

using num::RealMatrix;
using num::RealVector;

struct LossAndGrad {
  double loss = 0.0;
  RealMatrix grad;  // same shape as the logits
};

/// Mean token cross-entropy of softmax(logits / temp) against `targets`, one
/// row per counted position. Gradient rows are
/// (softmax(logits / temp) - onehot) / (temp * rows). Throws InvalidArgument
/// on an empty batch or shape mismatch.
LossAndGrad sft_loss_and_grad(const RealMatrix& logits, std::span<const corpus::TokenId> targets, double temp = 1.0);

/// -(1/N) sum_i mean_t KL(softmax(teacher/alpha) || softmax(proxy_i/alpha)).
/// Returns the loss (<= 0) and its gradient with respect to the teacher logits.
LossAndGrad adversarial_loss_and_grad(const RealMatrix& teacher_logits, std::span<const RealMatrix> proxy_logits,
                                      double alpha);

struct AdvConfig {
  double lambda = 3e-5;
  double alpha = 2.0;
  std::vector<model::ModelBundle> proxies;
  // Divide teacher logits by alpha in the SFT term as well (the algorithm
  // listing's variant); off means SFT at temperature 1.
  bool alg1_shared_temp = false;
};

/// Throws ConfigError when proxies are missing for lambda > 0, when a proxy
/// vocabulary differs from `vocab`, or when alpha/lambda are out of range.
void validate(const AdvConfig& cfg, const corpus::Vocabulary& vocab);

/// Flattened training positions of a batch. Row p holds the hidden state that
/// predicts targets[p] (the state at the preceding sequence position), the
/// reasoning mask of that target and each proxy's logits for it.
struct PositionBatch {
  RealMatrix inputs;
  std::vector<corpus::TokenId> targets;
  std::vector<std::uint8_t> mask;
  std::vector<corpus::Segment> tags;
  std::vector<RealMatrix> proxy_logits;

  std::size_t size() const noexcept { return targets.size(); }
};

/// Builds a batch from whole sequences. Every position that is neither Prompt
/// nor Pad becomes a target. `hidden` holds base_forward of each sequence for
/// the trained model; proxy logits are computed from each proxy's own base.
PositionBatch make_position_batch(std::span<const corpus::TokenSequence> seqs,
                                  std::span<const corpus::SegmentMask> masks, std::span<const RealMatrix> hidden,
                                  std::span<const model::ModelBundle> proxies);

/// Teacher logits for every row of the batch (P x V).
RealMatrix batch_logits(const model::HeadParams& head, const RealMatrix& inputs);

struct LossBreakdown {
  double sft_loss = 0.0;
  double adv_loss = 0.0;  // <= 0, averaged over mask = 1 rows only
  double total_loss = 0.0;
  double masked_kl = 0.0;  // equals -adv_loss
  double lambda = 0.0;
  RealMatrix per_position_logit_grads;
  std::size_t positions_counted = 0;
  std::size_t masked_positions = 0;
};

struct HeadGradient {
  LossBreakdown breakdown;
  model::HeadParams grad;
};

/// Logit gradient per row is sft_t + lambda * m_t * adv_t, chained onto the
/// head parameters. Rows with lambda * m_t == 0 carry the SFT gradient
/// untouched, bit for bit.
HeadGradient masked_head_gradient(const model::HeadParams& head, const PositionBatch& batch, const AdvConfig& cfg);

/// Same losses without gradients.
LossBreakdown evaluate_loss(const model::HeadParams& head, const PositionBatch& batch, const AdvConfig& cfg);

/// Backpropagates per-row logit gradients through the head. Row order fixes
/// the summation order.
model::HeadParams chain_to_head(const model::HeadParams& head, const RealMatrix& inputs,
                                const RealMatrix& logit_grads);

}  // namespace doge::objective
