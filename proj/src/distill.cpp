#include "doge/distill.hpp"

#include <cmath>

namespace doge::distill {

DistillDataset generate_kd_dataset(const model::ModelBundle& teacher, std::span<const corpus::TokenSequence> prompts,
                                   const model::DecodingStrategy& strategy) {
  if (prompts.empty()) throw InvalidArgument("generate_kd_dataset: no prompts");
  DistillDataset ds;
  ds.teacher_id = teacher.id.empty() ? std::string(model::role_name(teacher.role)) : teacher.id;
  ds.strategy = strategy.describe();
  ds.pairs.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    KdPair pair;
    pair.prompt = corpus::prompt_of(prompts[i]);
    model::DecodingStrategy s = strategy;
    if (s.kind == model::DecodingStrategy::Kind::TopK) s.rng = strategy.rng.split("prompt/" + std::to_string(i));
    pair.output = model::decode(teacher, pair.prompt, s);
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

namespace {

void check_vocab(const model::ModelBundle& student, const DistillDataset& data) {
  const std::size_t v = student.vocab.size();
  if (student.head.vocab_size() != v) throw ConfigError("student head does not match its vocabulary");
  for (const auto& p : data.pairs) {
    for (corpus::TokenId t : p.output.tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= v) {
        throw ConfigError("dataset token id " + std::to_string(t) + " outside the student vocabulary");
      }
    }
  }
}

std::vector<corpus::TokenSequence> outputs_of(const DistillDataset& data) {
  std::vector<corpus::TokenSequence> out;
  out.reserve(data.pairs.size());
  for (const auto& p : data.pairs) out.push_back(p.output);
  return out;
}

}  // namespace

model::ModelBundle train_student(const model::ModelBundle& student, const DistillDataset& data,
                                 const StudentConfig& cfg, std::uint64_t seed,
                                 std::vector<trainer::StepMetrics>* log) {
  check_vocab(student, data);
  model::ModelBundle out = student;
  if (cfg.epochs == 0 || data.pairs.empty()) return out;

  const auto seqs = outputs_of(data);
  trainer::PositionCache cache(student.base, {}, seqs, student.vocab, trainer::PositionCache::MaskSource::Tags);
  trainer::TrainConfig tc;
  tc.steps = trainer::steps_for_epochs(seqs.size(), cfg.batch_size, cfg.epochs);
  tc.batch_size = cfg.batch_size;
  tc.peak_lr = cfg.lr;
  tc.lambda = 0.0;
  tc.warmup_ratio = cfg.warmup_ratio;
  tc.weight_decay = cfg.weight_decay;
  tc.seed = seed;
  tc.epochs = cfg.epochs;
  tc.divergence_factor = 0.0;
  objective::AdvConfig adv;
  adv.lambda = 0.0;
  auto result = trainer::train_head(student.head, cache, tc, adv,
                                    trainer::epoch_passes(seqs.size(), cfg.batch_size,
                                                          num::SeededRng(seed, "student/batches")));
  out.head = std::move(result.head);
  if (log) *log = std::move(result.metrics);
  return out;
}

double mean_nll(const model::ModelBundle& model, const DistillDataset& data) {
  const auto seqs = outputs_of(data);
  trainer::PositionCache cache(model.base, {}, seqs, model.vocab, trainer::PositionCache::MaskSource::Tags);
  std::vector<std::size_t> all(seqs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto batch = cache.gather(all);
  objective::AdvConfig adv;
  adv.lambda = 0.0;
  return objective::evaluate_loss(model.head, batch, adv).sft_loss;
}

EvalReport evaluate_accuracy(const model::ModelBundle& model, std::span<const corpus::TokenSequence> eval_set,
                             std::size_t max_new_tokens) {
  if (eval_set.empty()) throw InvalidArgument("evaluate_accuracy: empty eval set");
  EvalReport r;
  r.model_id = model.id;
  r.n_eval = eval_set.size();
  r.correct.reserve(eval_set.size());
  const auto strategy = model::DecodingStrategy::greedy(max_new_tokens);
  std::size_t hits = 0;
  for (const auto& inst : eval_set) {
    const auto label = corpus::answer_tokens(inst, model.vocab);
    if (!label) throw InvalidArgument("evaluate_accuracy: eval instance without an answer");
    const auto out = model::decode(model, corpus::prompt_of(inst), strategy);
    const auto got = corpus::answer_tokens(out, model.vocab);
    const bool ok = got && *got == *label;
    r.correct.push_back(ok ? 1 : 0);
    hits += ok ? 1 : 0;
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(r.n_eval);
  return r;
}

model::DecodingStrategy make_strategy(const DecodeTemplate& t, std::uint64_t seed) {
  if (t.kind == model::DecodingStrategy::Kind::Greedy) return model::DecodingStrategy::greedy(t.max_new_tokens);
  return model::DecodingStrategy::top_k(t.k, t.sample_temp, num::SeededRng(seed, "kd-decode"), t.max_new_tokens);
}

model::ModelBundle make_student(const StudentTemplate& t, std::uint64_t seed, const corpus::Vocabulary& vocab) {
  model::BaseConfig base = t.base;
  base.seed = num::SeededRng(seed, "student/base-seed").next_u64();
  return model::make_bundle(base, t.head_hidden, model::Role::TargetStudent, "student-" + std::to_string(seed),
                            num::SeededRng(seed, "student/head"), vocab);
}

DefenseGapReport defense_gap(const model::ModelBundle& sft_teacher, const model::ModelBundle& defensive_teacher,
                             const StudentTemplate& student, std::span<const corpus::TokenSequence> kd_prompts,
                             std::span<const corpus::TokenSequence> eval_set, std::span<const std::uint64_t> seeds,
                             const DecodeTemplate& decoding, double epsilon) {
  if (seeds.empty()) throw InvalidArgument("defense_gap: no seeds");
  if (!(sft_teacher.vocab == defensive_teacher.vocab)) throw ConfigError("teachers do not share a vocabulary");

  DefenseGapReport rep;
  rep.epsilon = epsilon;
  rep.seeds.assign(seeds.begin(), seeds.end());
  rep.teacher_sft_acc = evaluate_accuracy(sft_teacher, eval_set, decoding.max_new_tokens).accuracy;
  rep.teacher_defensive_acc = evaluate_accuracy(defensive_teacher, eval_set, decoding.max_new_tokens).accuracy;

  double sum_sft = 0.0, sum_def = 0.0;
  for (std::uint64_t seed : seeds) {
    const auto strategy = make_strategy(decoding, seed);
    const model::ModelBundle init = make_student(student, seed, sft_teacher.vocab);
    const auto ds_sft = generate_kd_dataset(sft_teacher, kd_prompts, strategy);
    const auto ds_def = generate_kd_dataset(defensive_teacher, kd_prompts, strategy);
    const auto s_sft = train_student(init, ds_sft, student.train, seed);
    const auto s_def = train_student(init, ds_def, student.train, seed);
    SeedOutcome o;
    o.seed = seed;
    o.student_from_sft_acc = evaluate_accuracy(s_sft, eval_set, decoding.max_new_tokens).accuracy;
    o.student_from_defensive_acc = evaluate_accuracy(s_def, eval_set, decoding.max_new_tokens).accuracy;
    sum_sft += o.student_from_sft_acc;
    sum_def += o.student_from_defensive_acc;
    rep.per_seed.push_back(o);
  }
  const double n = static_cast<double>(seeds.size());
  rep.student_from_sft_acc = sum_sft / n;
  rep.student_from_defensive_acc = sum_def / n;
  rep.teacher_delta = rep.teacher_defensive_acc - rep.teacher_sft_acc;
  rep.student_delta = rep.student_from_defensive_acc - rep.student_from_sft_acc;
  return rep;
}

}  // namespace doge::distill
