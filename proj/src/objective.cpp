#include "doge/objective.hpp"

#include <algorithm>
#include <cmath>

namespace doge::objective {

namespace {

using corpus::Segment;
using corpus::TokenId;

void check_targets(std::span<const TokenId> targets, std::size_t vocab) {
  for (TokenId t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) throw InvalidArgument("target token id out of range");
  }
}

}  // namespace

LossAndGrad sft_loss_and_grad(const RealMatrix& logits, std::span<const TokenId> targets, double temp) {
  if (targets.empty() || logits.rows() == 0) throw InvalidArgument("sft_loss_and_grad: empty batch");
  if (logits.rows() != targets.size()) throw InvalidArgument("sft_loss_and_grad: logits rows != target count");
  if (!(temp > 0.0)) throw InvalidArgument("sft_loss_and_grad: temperature must be positive");
  const std::size_t v = logits.cols();
  check_targets(targets, v);

  const double n = static_cast<double>(targets.size());
  const double scale = 1.0 / (temp * n);
  LossAndGrad out{0.0, RealMatrix(logits.rows(), v)};
  RealVector ls(v);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    num::log_softmax_into(logits.row(r), temp, ls);
    const auto y = static_cast<std::size_t>(targets[r]);
    out.loss -= ls[y];
    auto g = out.grad.row(r);
    for (std::size_t k = 0; k < v; ++k) g[k] = std::exp(ls[k]) * scale;
    g[y] -= scale;
  }
  out.loss /= n;
  return out;
}

LossAndGrad adversarial_loss_and_grad(const RealMatrix& teacher_logits, std::span<const RealMatrix> proxy_logits,
                                      double alpha) {
  if (proxy_logits.empty()) throw InvalidArgument("adversarial_loss_and_grad: empty proxy list");
  if (!(alpha > 0.0)) throw InvalidArgument("adversarial_loss_and_grad: alpha must be positive");
  for (const auto& p : proxy_logits) {
    if (p.rows() != teacher_logits.rows() || p.cols() != teacher_logits.cols()) {
      throw InvalidArgument("adversarial_loss_and_grad: proxy logits shape differs from teacher logits");
    }
  }
  const std::size_t rows = teacher_logits.rows();
  const std::size_t v = teacher_logits.cols();
  LossAndGrad out{0.0, RealMatrix(rows, v)};
  if (rows == 0) return out;

  const double n_proxies = static_cast<double>(proxy_logits.size());
  const double scale = -1.0 / (n_proxies * static_cast<double>(rows));
  RealVector lp(v), lq(v), p(v);
  double kl_sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    num::log_softmax_into(teacher_logits.row(r), alpha, lp);
    for (std::size_t k = 0; k < v; ++k) p[k] = std::exp(lp[k]);
    auto g = out.grad.row(r);
    for (const auto& proxy : proxy_logits) {
      num::log_softmax_into(proxy.row(r), alpha, lq);
      double kl = 0.0;
      for (std::size_t k = 0; k < v; ++k) kl += p[k] * (lp[k] - lq[k]);
      // d KL / d z_j = p_j (log p_j - log q_j - KL) / alpha
      for (std::size_t k = 0; k < v; ++k) g[k] += scale * p[k] * (lp[k] - lq[k] - kl) / alpha;
      kl_sum += std::max(kl, 0.0);
    }
  }
  out.loss = scale * kl_sum;
  return out;
}

void validate(const AdvConfig& cfg, const corpus::Vocabulary& vocab) {
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda)) throw ConfigError("lambda must be a nonnegative number");
  if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) throw ConfigError("alpha must be positive");
  if (cfg.lambda > 0.0 && cfg.proxies.empty()) throw ConfigError("lambda > 0 requires at least one proxy");
  for (const auto& p : cfg.proxies) {
    if (!(p.vocab == vocab) || p.head.vocab_size() != vocab.size()) {
      throw ConfigError("proxy '" + p.id + "' does not share the teacher vocabulary");
    }
  }
}

PositionBatch make_position_batch(std::span<const corpus::TokenSequence> seqs,
                                  std::span<const corpus::SegmentMask> masks, std::span<const RealMatrix> hidden,
                                  std::span<const model::ModelBundle> proxies) {
  if (seqs.size() != masks.size() || seqs.size() != hidden.size()) {
    throw InvalidArgument("make_position_batch: sequence, mask and hidden-state counts differ");
  }
  std::size_t count = 0;
  std::size_t dim = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    if (masks[s].size() != seq.size() || hidden[s].rows() != seq.size() || seq.tags.size() != seq.size()) {
      throw InvalidArgument("make_position_batch: mask or hidden states not aligned with sequence");
    }
    if (s == 0) dim = hidden[s].cols();
    if (hidden[s].cols() != dim) throw InvalidArgument("make_position_batch: inconsistent hidden dimension");
    for (std::size_t t = 1; t < seq.size(); ++t) {
      if (seq.tags[t] != Segment::Prompt && seq.tags[t] != Segment::Pad) ++count;
    }
  }

  PositionBatch b;
  b.inputs = RealMatrix(count, dim);
  b.targets.reserve(count);
  b.mask.reserve(count);
  b.tags.reserve(count);
  for (const auto& p : proxies) b.proxy_logits.emplace_back(count, p.head.vocab_size());

  RealVector act;
  std::size_t row = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    std::vector<RealMatrix> proxy_hidden;
    for (const auto& p : proxies) proxy_hidden.push_back(model::base_forward(*p.base, seq));
    for (std::size_t t = 1; t < seq.size(); ++t) {
      if (seq.tags[t] == Segment::Prompt || seq.tags[t] == Segment::Pad) continue;
      const auto h = hidden[s].row(t - 1);
      std::copy(h.begin(), h.end(), b.inputs.row(row).begin());
      b.targets.push_back(seq.tokens[t]);
      b.mask.push_back(masks[s].mask[t]);
      b.tags.push_back(seq.tags[t]);
      for (std::size_t i = 0; i < proxies.size(); ++i) {
        act.resize(proxies[i].head.hidden_units());
        model::head_logits_into(proxies[i].head, proxy_hidden[i].row(t - 1), b.proxy_logits[i].row(row), act);
      }
      ++row;
    }
  }
  return b;
}

RealMatrix batch_logits(const model::HeadParams& head, const RealMatrix& inputs) {
  model::validate(head);
  if (inputs.cols() != head.input_dim()) throw InvalidArgument("batch_logits: input dimension mismatch");
  RealMatrix out(inputs.rows(), head.vocab_size());
  RealVector act(head.hidden_units());
  for (std::size_t r = 0; r < inputs.rows(); ++r) model::head_logits_into(head, inputs.row(r), out.row(r), act);
  return out;
}

namespace {

struct Parts {
  LossAndGrad sft;
  LossAndGrad adv;
  std::vector<std::size_t> masked_rows;
};

Parts compute_parts(const model::HeadParams& head, const PositionBatch& batch, const AdvConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (cfg.lambda > 0.0 && cfg.proxies.empty() && batch.proxy_logits.empty()) {
    throw InvalidArgument("lambda > 0 requires at least one proxy");
  }
  if (batch.mask.size() != batch.size() || batch.inputs.rows() != batch.size()) {
    throw InvalidArgument("PositionBatch: inconsistent row counts");
  }
  const RealMatrix logits = batch_logits(head, batch.inputs);
  Parts parts;
  parts.sft = sft_loss_and_grad(logits, batch.targets, cfg.alg1_shared_temp ? cfg.alpha : 1.0);

  for (std::size_t r = 0; r < batch.size(); ++r) {
    if (batch.mask[r]) parts.masked_rows.push_back(r);
  }
  const std::size_t v = logits.cols();
  parts.adv.grad = RealMatrix(parts.masked_rows.size(), v);
  if (!batch.proxy_logits.empty() && !parts.masked_rows.empty()) {
    RealMatrix teacher(parts.masked_rows.size(), v);
    std::vector<RealMatrix> proxies(batch.proxy_logits.size(), RealMatrix(parts.masked_rows.size(), v));
    for (std::size_t m = 0; m < parts.masked_rows.size(); ++m) {
      const std::size_t r = parts.masked_rows[m];
      std::copy_n(logits.row(r).begin(), v, teacher.row(m).begin());
      for (std::size_t i = 0; i < proxies.size(); ++i) {
        if (batch.proxy_logits[i].cols() != v) throw InvalidArgument("proxy vocabulary differs from teacher");
        std::copy_n(batch.proxy_logits[i].row(r).begin(), v, proxies[i].row(m).begin());
      }
    }
    parts.adv = adversarial_loss_and_grad(teacher, proxies, cfg.alpha);
  }
  return parts;
}

LossBreakdown breakdown_of(const Parts& parts, const PositionBatch& batch, const AdvConfig& cfg) {
  LossBreakdown b;
  b.sft_loss = parts.sft.loss;
  b.adv_loss = parts.adv.loss;
  b.masked_kl = -parts.adv.loss;
  b.lambda = cfg.lambda;
  b.total_loss = b.sft_loss + cfg.lambda * b.adv_loss;
  b.positions_counted = batch.size();
  b.masked_positions = parts.masked_rows.size();
  return b;
}

}  // namespace

HeadGradient masked_head_gradient(const model::HeadParams& head, const PositionBatch& batch, const AdvConfig& cfg) {
  Parts parts = compute_parts(head, batch, cfg);
  HeadGradient out;
  out.breakdown = breakdown_of(parts, batch, cfg);

  RealMatrix g = std::move(parts.sft.grad);
  if (cfg.lambda != 0.0 && !batch.proxy_logits.empty()) {
    for (std::size_t m = 0; m < parts.masked_rows.size(); ++m) {
      auto row = g.row(parts.masked_rows[m]);
      const auto adv = parts.adv.grad.row(m);
      for (std::size_t k = 0; k < row.size(); ++k) row[k] += cfg.lambda * adv[k];
    }
  }
  out.grad = chain_to_head(head, batch.inputs, g);
  out.breakdown.per_position_logit_grads = std::move(g);
  return out;
}

LossBreakdown evaluate_loss(const model::HeadParams& head, const PositionBatch& batch, const AdvConfig& cfg) {
  return breakdown_of(compute_parts(head, batch, cfg), batch, cfg);
}

model::HeadParams chain_to_head(const model::HeadParams& head, const RealMatrix& inputs,
                                const RealMatrix& logit_grads) {
  model::validate(head);
  if (inputs.rows() != logit_grads.rows() || logit_grads.cols() != head.vocab_size() ||
      inputs.cols() != head.input_dim()) {
    throw InvalidArgument("chain_to_head: shape mismatch");
  }
  model::HeadParams grad = head.zeros_like();
  const std::size_t v = head.vocab_size();
  const std::size_t nh = head.hidden_units();
  const std::size_t d = inputs.cols();
  RealVector act(nh), upstream(nh);

  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    const auto x = inputs.row(r);
    const auto g = logit_grads.row(r);
    std::span<const double> feat = x;
    if (head.has_hidden()) {
      for (std::size_t i = 0; i < nh; ++i) {
        const auto w = head.hidden_weights.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += w[j] * x[j];
        acc += head.hidden_bias[i];
        act[i] = head.activation == model::Activation::Tanh ? std::tanh(acc) : acc;
      }
      feat = act;
    }
    for (std::size_t k = 0; k < v; ++k) {
      auto gw = grad.weights.row(k);
      for (std::size_t c = 0; c < feat.size(); ++c) gw[c] += g[k] * feat[c];
      grad.bias[k] += g[k];
    }
    if (head.has_hidden()) {
      for (std::size_t i = 0; i < nh; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < v; ++k) acc += head.weights(k, i) * g[k];
        if (head.activation == model::Activation::Tanh) acc *= 1.0 - act[i] * act[i];
        upstream[i] = acc;
      }
      for (std::size_t i = 0; i < nh; ++i) {
        auto gw = grad.hidden_weights.row(i);
        for (std::size_t j = 0; j < d; ++j) gw[j] += upstream[i] * x[j];
        grad.hidden_bias[i] += upstream[i];
      }
    }
  }
  return grad;
}

}  // namespace doge::objective
