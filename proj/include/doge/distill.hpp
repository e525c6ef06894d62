#pragma once

// Sequence-level distillation: a teacher answers prompts, a student is
// trained on those token sequences only, and accuracies are compared.

#include <cstdint>
#include <string>
#include <vector>

#include "doge/corpus.hpp"
#include "doge/model.hpp"
#include "doge/trainer.hpp"

namespace doge::distill {

struct KdPair {
  corpus::TokenSequence prompt;
  corpus::TokenSequence output;  // prompt followed by the teacher's continuation

  friend bool operator==(const KdPair&, const KdPair&) = default;
};

struct DistillDataset {
  std::vector<KdPair> pairs;
  std::string teacher_id;
  std::string strategy;

  std::size_t size() const noexcept { return pairs.size(); }
};

/// One decode per prompt. TopK draws for prompt i come from the strategy
/// stream split by "prompt/<i>", so each output is independent of the others.
DistillDataset generate_kd_dataset(const model::ModelBundle& teacher, std::span<const corpus::TokenSequence> prompts,
                                   const model::DecodingStrategy& strategy);

struct StudentConfig {
  std::size_t epochs = 2;
  std::size_t batch_size = 8;
  double lr = 3e-2;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
};

/// Token NLL on the dataset outputs (prompt positions excluded), AdamW with
/// warmup + cosine, `epochs` shuffled passes. Only token sequences are
/// consumed. Throws ConfigError on a vocabulary mismatch.
model::ModelBundle train_student(const model::ModelBundle& student, const DistillDataset& data,
                                 const StudentConfig& cfg, std::uint64_t seed,
                                 std::vector<trainer::StepMetrics>* log = nullptr);

/// Mean token NLL of `model` over the dataset outputs.
double mean_nll(const model::ModelBundle& model, const DistillDataset& data);

struct EvalReport {
  std::string model_id;
  double accuracy = 0.0;
  std::size_t n_eval = 0;
  std::vector<std::uint8_t> correct;
};

/// Greedy-decodes each prompt; an instance is correct iff the answer tokens
/// after the marker match the label's exactly.
EvalReport evaluate_accuracy(const model::ModelBundle& model, std::span<const corpus::TokenSequence> eval_set,
                             std::size_t max_new_tokens = 32);

struct StudentTemplate {
  model::BaseConfig base;  // seed is replaced per run seed
  std::size_t head_hidden = 0;
  StudentConfig train;
};

struct DecodeTemplate {
  model::DecodingStrategy::Kind kind = model::DecodingStrategy::Kind::TopK;
  std::size_t k = 5;
  double sample_temp = 1.0;
  std::size_t max_new_tokens = 32;
};

model::DecodingStrategy make_strategy(const DecodeTemplate& t, std::uint64_t seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  double student_from_sft_acc = 0.0;
  double student_from_defensive_acc = 0.0;
};

struct DefenseGapReport {
  double teacher_sft_acc = 0.0;
  double teacher_defensive_acc = 0.0;
  double student_from_sft_acc = 0.0;
  double student_from_defensive_acc = 0.0;
  double teacher_delta = 0.0;
  double student_delta = 0.0;
  std::vector<std::uint64_t> seeds;
  double epsilon = 0.02;
  std::vector<SeedOutcome> per_seed;

  bool teacher_preserved() const { return teacher_delta >= -epsilon; }
};

/// For every seed, distills one student from each teacher (same student base,
/// initialization and decode stream for both) and averages accuracies.
DefenseGapReport defense_gap(const model::ModelBundle& sft_teacher, const model::ModelBundle& defensive_teacher,
                             const StudentTemplate& student, std::span<const corpus::TokenSequence> kd_prompts,
                             std::span<const corpus::TokenSequence> eval_set, std::span<const std::uint64_t> seeds,
                             const DecodeTemplate& decoding = {}, double epsilon = 0.02);

/// Student bundle for a run seed: base seed and head initialization both
/// derive from `seed`.
model::ModelBundle make_student(const StudentTemplate& t, std::uint64_t seed, const corpus::Vocabulary& vocab);

}  // namespace doge::distill
