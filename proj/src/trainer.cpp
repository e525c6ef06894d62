#include "doge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace doge::trainer {

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  if (cfg.batch_size == 0) fail("batch_size", "must be positive");
  if (!(cfg.peak_lr >= 0.0) || !std::isfinite(cfg.peak_lr)) fail("peak_lr", "must be a nonnegative number");
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda)) fail("lambda", "must be a nonnegative number");
  if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) fail("alpha", "must be positive");
  if (!(cfg.warmup_ratio >= 0.0 && cfg.warmup_ratio < 1.0)) fail("warmup_ratio", "must lie in [0, 1)");
  if (!(cfg.weight_decay >= 0.0)) fail("weight_decay", "must be nonnegative");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(cfg.adam_eps > 0.0)) fail("adam_eps", "must be positive");
  if (!(cfg.divergence_factor >= 0.0)) fail("divergence_factor", "must be nonnegative");
}

OptimizerState OptimizerState::for_head(const model::HeadParams& head) {
  return OptimizerState{head.zeros_like(), head.zeros_like(), 0};
}

void adamw_step(model::HeadParams& params, const model::HeadParams& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw InvalidArgument("adamw_step: parameter, gradient and moment shapes differ");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].size() != g[i].size() || p[i].size() != m[i].size() || p[i].size() != v[i].size()) {
      throw InvalidArgument("adamw_step: parameter, gradient and moment shapes differ");
    }
    for (double x : g[i]) {
      if (!std::isfinite(x)) throw TrainingDiverged(state.step, "non-finite gradient");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t k = 0; k < p[i].size(); ++k) {
      const double gk = g[i][k];
      p[i][k] *= decay;
      m[i][k] = cfg.beta1 * m[i][k] + (1.0 - cfg.beta1) * gk;
      v[i][k] = cfg.beta2 * v[i][k] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = m[i][k] / bc1;
      const double vhat = v[i][k] / bc2;
      p[i][k] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
  if (!params.all_finite()) throw TrainingDiverged(state.step - 1, "non-finite parameter after update");
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.steps) throw InvalidArgument("lr_at: step beyond schedule end");
  const auto warmup = static_cast<std::size_t>(std::floor(cfg.warmup_ratio * static_cast<double>(cfg.steps)));
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (cfg.steps == warmup) return cfg.peak_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(cfg.steps - warmup);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

corpus::SegmentMask make_mask(const corpus::TokenSequence& seq, const corpus::Vocabulary& vocab,
                              PositionCache::MaskSource source) {
  switch (source) {
    case PositionCache::MaskSource::Tags: return corpus::mask_from_tags(seq);
    case PositionCache::MaskSource::Delimiters: return corpus::mask_by_delimiters(seq, vocab);
    case PositionCache::MaskSource::Regex: return corpus::mask_by_regex(seq, vocab.answer_marker());
  }
  return corpus::mask_from_tags(seq);
}

PositionCache::PositionCache(std::shared_ptr<const model::FrozenBase> base, std::vector<model::ModelBundle> proxies,
                             std::span<const corpus::TokenSequence> seqs, const corpus::Vocabulary& vocab,
                             MaskSource source)
    : base_(std::move(base)),
      proxies_(std::move(proxies)),
      seqs_(seqs.begin(), seqs.end()),
      vocab_(vocab),
      source_(source),
      rows_(seqs_.size()) {
  if (!base_) throw InvalidArgument("PositionCache: missing base");
  if (seqs_.empty()) throw InvalidArgument("PositionCache: empty corpus");
}

const objective::PositionBatch& PositionCache::at(std::size_t i) {
  auto& slot = rows_.at(i);
  if (!slot) {
    const auto& seq = seqs_[i];
    const corpus::SegmentMask mask = make_mask(seq, vocab_, source_);
    const num::RealMatrix hidden = model::base_forward(*base_, seq);
    slot = objective::make_position_batch(std::span(&seq, 1), std::span(&mask, 1), std::span(&hidden, 1), proxies_);
  }
  return *slot;
}

objective::PositionBatch PositionCache::gather(std::span<const std::size_t> indices) {
  std::size_t rows = 0;
  for (std::size_t i : indices) rows += at(i).size();
  objective::PositionBatch out;
  out.inputs = num::RealMatrix(rows, base_->hidden_dim());
  out.targets.reserve(rows);
  out.mask.reserve(rows);
  out.tags.reserve(rows);
  for (const auto& p : proxies_) out.proxy_logits.emplace_back(rows, p.head.vocab_size());
  std::size_t r = 0;
  for (std::size_t i : indices) {
    const auto& b = at(i);
    for (std::size_t k = 0; k < b.size(); ++k, ++r) {
      std::copy_n(b.inputs.row(k).begin(), b.inputs.cols(), out.inputs.row(r).begin());
      for (std::size_t j = 0; j < proxies_.size(); ++j) {
        std::copy_n(b.proxy_logits[j].row(k).begin(), b.proxy_logits[j].cols(), out.proxy_logits[j].row(r).begin());
      }
    }
    out.targets.insert(out.targets.end(), b.targets.begin(), b.targets.end());
    out.mask.insert(out.mask.end(), b.mask.begin(), b.mask.end());
    out.tags.insert(out.tags.end(), b.tags.begin(), b.tags.end());
  }
  return out;
}

BatchSampler with_replacement(std::size_t n, std::size_t batch_size, num::SeededRng rng) {
  if (n == 0) throw InvalidArgument("with_replacement: empty population");
  return [n, batch_size, rng](std::size_t) mutable {
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_index(n));
    return idx;
  };
}

std::size_t steps_for_epochs(std::size_t n, std::size_t batch_size, std::size_t epochs) {
  if (batch_size == 0) throw InvalidArgument("steps_for_epochs: batch_size must be positive");
  return epochs * ((n + batch_size - 1) / batch_size);
}

BatchSampler epoch_passes(std::size_t n, std::size_t batch_size, num::SeededRng rng) {
  if (n == 0) throw InvalidArgument("epoch_passes: empty population");
  const std::size_t per_epoch = steps_for_epochs(n, batch_size, 1);
  std::vector<std::size_t> order(n);
  return [=](std::size_t step) mutable {
    if (step % per_epoch == 0) {
      // Fisher-Yates on a fresh identity permutation, one child stream per epoch.
      num::SeededRng r = rng.split("epoch/" + std::to_string(step / per_epoch));
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[r.uniform_index(i + 1)]);
    }
    const std::size_t begin = (step % per_epoch) * batch_size;
    const std::size_t end = std::min(begin + batch_size, n);
    return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
  };
}

TrainResult train_head(const model::HeadParams& init, PositionCache& cache, const TrainConfig& cfg,
                       const objective::AdvConfig& adv, std::string_view label, const StepObserver& observer,
                       const StopCheck& stop) {
  return train_head(init, cache, cfg, adv,
                    with_replacement(cache.size(), cfg.batch_size, num::SeededRng(cfg.seed, std::string(label) + "/batches")),
                    observer, stop);
}

TrainResult train_head(const model::HeadParams& init, PositionCache& cache, const TrainConfig& cfg,
                       const objective::AdvConfig& adv, const BatchSampler& sampler, const StepObserver& observer,
                       const StopCheck& stop) {
  validate(cfg);
  objective::AdvConfig eff = adv;
  eff.lambda = cfg.lambda;
  eff.alpha = cfg.alpha;
  if (eff.lambda > 0.0 && cache.proxy_count() == 0) throw ConfigError("lambda > 0 requires at least one proxy");

  TrainResult result{init, {}};
  result.metrics.reserve(cfg.steps);
  OptimizerState state = OptimizerState::for_head(init);
  double guard_scale = 0.0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::vector<std::size_t> idx = sampler(step);
    const objective::PositionBatch batch = cache.gather(idx);
    const objective::HeadGradient hg = objective::masked_head_gradient(result.head, batch, eff);
    const auto& b = hg.breakdown;
    const double lr = lr_at(step, cfg);
    StepMetrics sm{step, lr, b.sft_loss, b.adv_loss, b.total_loss, b.masked_kl, eff.lambda};
    result.metrics.push_back(sm);
    if (observer) observer(sm);

    if (!std::isfinite(b.total_loss)) throw TrainingDiverged(step, "non-finite loss");
    if (step == 0) guard_scale = std::max(std::abs(b.total_loss), b.sft_loss);
    if (cfg.divergence_factor > 0.0 && std::abs(b.total_loss) > cfg.divergence_factor * guard_scale) {
      throw TrainingDiverged(step, "total loss left " + std::to_string(cfg.divergence_factor) +
                                       "x its step-0 magnitude");
    }
    adamw_step(result.head, hg.grad, state, lr, cfg);
    if (stop && stop(step + 1, result.head)) break;
  }
  return result;
}

TrainResult defensive_train(const model::ModelBundle& teacher, std::span<const corpus::TokenSequence> corpus,
                            const TrainConfig& cfg, const objective::AdvConfig& adv,
                            PositionCache::MaskSource source, const StepObserver& observer) {
  objective::AdvConfig checked = adv;
  checked.lambda = cfg.lambda;
  checked.alpha = cfg.alpha;
  objective::validate(checked, teacher.vocab);
  PositionCache cache(teacher.base, adv.proxies, corpus, teacher.vocab, source);
  return train_head(teacher.head, cache, cfg, adv, "defense", observer);
}

}  // namespace doge::trainer
