#pragma once

// Head-only training: AdamW with linear warmup and cosine decay, driving the
// masked DOGe objective (or plain SFT when lambda is 0 and no proxies are set).

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "doge/corpus.hpp"
#include "doge/model.hpp"
#include "doge/objective.hpp"

namespace doge::trainer {

struct TrainConfig {
  std::size_t steps = 100;
  std::size_t batch_size = 128;
  double peak_lr = 5e-5;
  double lambda = 3e-5;
  double alpha = 2.0;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 233;
  std::size_t epochs = 1;
  // Abort once |total loss| exceeds this multiple of its step-0 scale. 0 disables.
  double divergence_factor = 10.0;
};

/// Throws ConfigError naming the offending field.
void validate(const TrainConfig& cfg);

struct OptimizerState {
  model::HeadParams m;
  model::HeadParams v;
  std::size_t step = 0;

  static OptimizerState for_head(const model::HeadParams& head);
};

/// Decoupled weight decay (param *= 1 - lr*wd) followed by a bias-corrected
/// Adam update. Throws TrainingDiverged (carrying the step index) on a
/// non-finite gradient or parameter.
void adamw_step(model::HeadParams& params, const model::HeadParams& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg);

/// Linear warmup from 0 over floor(warmup_ratio * steps) steps, then cosine
/// decay to 0 at `steps`.
double lr_at(std::size_t step, const TrainConfig& cfg);

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  double sft_loss = 0.0;
  double adv_loss = 0.0;
  double total_loss = 0.0;
  double masked_kl = 0.0;
  double lambda = 0.0;
};

/// Per-sequence training rows, built lazily and kept for reuse across steps.
/// Hidden states come from the trained model's frozen base; proxy logits are
/// fixed because proxies never change.
class PositionCache {
 public:
  enum class MaskSource : std::uint8_t { Tags, Delimiters, Regex };

  PositionCache(std::shared_ptr<const model::FrozenBase> base, std::vector<model::ModelBundle> proxies,
                std::span<const corpus::TokenSequence> seqs, const corpus::Vocabulary& vocab,
                MaskSource source = MaskSource::Delimiters);

  std::size_t size() const noexcept { return seqs_.size(); }
  const objective::PositionBatch& at(std::size_t i);
  objective::PositionBatch gather(std::span<const std::size_t> indices);
  std::size_t proxy_count() const noexcept { return proxies_.size(); }

 private:
  std::shared_ptr<const model::FrozenBase> base_;
  std::vector<model::ModelBundle> proxies_;
  std::vector<corpus::TokenSequence> seqs_;
  corpus::Vocabulary vocab_;
  MaskSource source_;
  std::vector<std::optional<objective::PositionBatch>> rows_;
};

corpus::SegmentMask make_mask(const corpus::TokenSequence& seq, const corpus::Vocabulary& vocab,
                              PositionCache::MaskSource source);

struct TrainResult {
  model::HeadParams head;
  std::vector<StepMetrics> metrics;
};

using StepObserver = std::function<void(const StepMetrics&)>;

/// Called after every update with the number of completed steps; returning
/// true ends training early.
using StopCheck = std::function<bool(std::size_t steps_done, const model::HeadParams&)>;

/// Sequence indices for one step.
using BatchSampler = std::function<std::vector<std::size_t>(std::size_t step)>;

/// batch_size draws with replacement from [0, n) per step.
BatchSampler with_replacement(std::size_t n, std::size_t batch_size, num::SeededRng rng);

/// Shuffled passes over [0, n); each pass is cut into ceil(n / batch_size)
/// batches, the last one possibly short.
BatchSampler epoch_passes(std::size_t n, std::size_t batch_size, num::SeededRng rng);
std::size_t steps_for_epochs(std::size_t n, std::size_t batch_size, std::size_t epochs);

/// The training loop: each step samples batch_size sequences with
/// replacement (stream "<label>/batches" under cfg.seed), evaluates the masked
/// objective, logs, then applies AdamW to the head only. lambda and alpha are
/// taken from cfg; `adv` supplies the proxies and the temperature variant.
/// The observer sees every logged step, including the one that trips the
/// divergence guard.
TrainResult train_head(const model::HeadParams& init, PositionCache& cache, const TrainConfig& cfg,
                       const objective::AdvConfig& adv, std::string_view label = "defense",
                       const StepObserver& observer = {}, const StopCheck& stop = {});

/// Same loop with an explicit batch plan.
TrainResult train_head(const model::HeadParams& init, PositionCache& cache, const TrainConfig& cfg,
                       const objective::AdvConfig& adv, const BatchSampler& sampler,
                       const StepObserver& observer = {}, const StopCheck& stop = {});

/// Defensive fine-tuning of a teacher on `corpus` (the training split).
TrainResult defensive_train(const model::ModelBundle& teacher, std::span<const corpus::TokenSequence> corpus,
                            const TrainConfig& cfg, const objective::AdvConfig& adv,
                            PositionCache::MaskSource source = PositionCache::MaskSource::Delimiters,
                            const StepObserver& observer = {});

}  // namespace doge::trainer
