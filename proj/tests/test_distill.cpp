#include <gtest/gtest.h>

#include "doge/distill.hpp"

using namespace doge;
using namespace doge::distill;

namespace {

const corpus::Vocabulary& V() { return corpus::Vocabulary::arithmetic(); }

model::BaseConfig small_base(std::uint64_t seed) {
  model::BaseConfig c;
  c.seed = seed;
  c.hidden_dim = 32;
  return c;
}

corpus::Corpus tiny_corpus(std::size_t n = 100) {
  corpus::CorpusConfig cc;
  cc.size = n;
  return corpus::generate_corpus(cc);
}

model::ModelBundle random_teacher(std::uint64_t seed, double scale = 1.0) {
  auto b = model::make_bundle(small_base(seed), 0, model::Role::Teacher, "t" + std::to_string(seed),
                              num::SeededRng(seed, "h"));
  num::SeededRng rng(seed, "w");
  b.head = model::HeadParams::random(V().size(), 32, 0, rng, scale);
  return b;
}

// Teacher-forced SFT on whole labelled sequences, used to get a model that
// actually answers.
model::ModelBundle fit_on(const std::vector<corpus::TokenSequence>& seqs, std::size_t epochs, std::uint64_t seed) {
  DistillDataset ds;
  for (const auto& s : seqs) ds.pairs.push_back({corpus::prompt_of(s), s});
  StudentTemplate t;
  t.base = small_base(0);
  t.head_hidden = 64;
  const auto init = make_student(t, seed, V());
  StudentConfig sc;
  sc.epochs = epochs;
  sc.batch_size = 4;
  sc.lr = 3e-2;
  return train_student(init, ds, sc, seed);
}

}  // namespace

TEST(KdDataset, OnePairPerPromptStartingWithPrompt) {
  const auto c = tiny_corpus();
  const auto t = random_teacher(1);
  const auto ds = generate_kd_dataset(t, c.kd_prompts, model::DecodingStrategy::greedy(8));
  ASSERT_EQ(ds.size(), c.kd_prompts.size());
  EXPECT_EQ(ds.teacher_id, "t1");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& p = ds.pairs[i];
    EXPECT_EQ(p.prompt, corpus::prompt_of(c.kd_prompts[i]));
    ASSERT_GT(p.output.size(), p.prompt.size());
    EXPECT_TRUE(std::equal(p.prompt.tokens.begin(), p.prompt.tokens.end(), p.output.tokens.begin()));
  }
  EXPECT_THROW(generate_kd_dataset(t, {}, model::DecodingStrategy::greedy()), InvalidArgument);
}

TEST(KdDataset, GreedyIsDeterministic) {
  const auto c = tiny_corpus();
  const auto t = random_teacher(2);
  const auto a = generate_kd_dataset(t, c.kd_prompts, model::DecodingStrategy::greedy(8));
  const auto b = generate_kd_dataset(t, c.kd_prompts, model::DecodingStrategy::greedy(8));
  EXPECT_EQ(a.pairs, b.pairs);
}

TEST(KdDataset, TopKOutputsMatchPerPromptRedecode) {
  const auto c = tiny_corpus();
  const auto t = random_teacher(3, 2.0);
  DecodeTemplate dt;
  dt.max_new_tokens = 10;
  const auto strategy = make_strategy(dt, 233);
  const auto ds = generate_kd_dataset(t, c.kd_prompts, strategy);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto s = strategy;
    s.rng = num::SeededRng(233, "kd-decode").split("prompt/" + std::to_string(i));
    ASSERT_EQ(ds.pairs[i].output, model::decode(t, corpus::prompt_of(c.kd_prompts[i]), s));
  }
  // A different run seed gives a different sample somewhere.
  const auto other = generate_kd_dataset(t, c.kd_prompts, make_strategy(dt, 234));
  EXPECT_NE(other.pairs, ds.pairs);
}

TEST(Student, ZeroEpochsReturnsInit) {
  const auto c = tiny_corpus();
  const auto ds = generate_kd_dataset(random_teacher(4), c.kd_prompts, model::DecodingStrategy::greedy(8));
  StudentTemplate t;
  t.base = small_base(0);
  const auto init = make_student(t, 7, V());
  StudentConfig sc;
  sc.epochs = 0;
  EXPECT_TRUE(train_student(init, ds, sc, 7).head == init.head);
}

TEST(Student, TrainingReducesNll) {
  const auto c = tiny_corpus();
  const auto ds = generate_kd_dataset(random_teacher(5, 3.0), c.kd_prompts, model::DecodingStrategy::greedy(12));
  StudentTemplate t;
  t.base = small_base(0);
  t.head_hidden = 16;
  const auto init = make_student(t, 8, V());
  std::vector<trainer::StepMetrics> log;
  const auto trained = train_student(init, ds, StudentConfig{}, 8, &log);
  EXPECT_EQ(log.size(), trainer::steps_for_epochs(ds.size(), 8, 2));
  EXPECT_LT(mean_nll(trained, ds), mean_nll(init, ds));
}

TEST(Student, DerivedFromSeed) {
  StudentTemplate t;
  t.base = small_base(0);
  const auto a = make_student(t, 233, V());
  const auto b = make_student(t, 233, V());
  const auto c = make_student(t, 234, V());
  EXPECT_TRUE(a.head == b.head);
  EXPECT_EQ(a.base->config().seed, b.base->config().seed);
  EXPECT_NE(a.base->config().seed, c.base->config().seed);
  EXPECT_EQ(a.role, model::Role::TargetStudent);
}

TEST(Student, VocabularyMismatch) {
  const auto c = tiny_corpus();
  const auto ds = generate_kd_dataset(random_teacher(6), c.kd_prompts, model::DecodingStrategy::greedy(8));
  const corpus::Vocabulary small({"<pad>", "<end>", "0"});
  StudentTemplate t;
  t.base = small_base(0);
  const auto student = make_student(t, 1, small);
  EXPECT_THROW(train_student(student, ds, StudentConfig{}, 1), ConfigError);
}

TEST(Accuracy, MemorizedSetScoresOne) {
  const auto c = tiny_corpus();
  const std::vector<corpus::TokenSequence> few(c.eval.begin(), c.eval.begin() + 4);
  const auto m = fit_on(few, 150, 3);
  const auto r = evaluate_accuracy(m, few);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.n_eval, 4u);
}

TEST(Accuracy, NoAnswerMarkerScoresZero) {
  const auto c = tiny_corpus();
  auto m = random_teacher(7);
  m.head = model::HeadParams::zeros(V().size(), 32);
  m.head.bias[V().end()] = 1.0;
  const auto r = evaluate_accuracy(m, c.eval);
  EXPECT_EQ(r.accuracy, 0.0);
  EXPECT_EQ(r.correct, std::vector<std::uint8_t>(c.eval.size(), 0));
}

TEST(Accuracy, MatchesManualTally) {
  const auto c = tiny_corpus(200);
  const auto m = fit_on(c.train, 2, 4);
  const auto r = evaluate_accuracy(m, c.eval, 32);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < c.eval.size(); ++i) {
    const auto out = model::decode(m, corpus::prompt_of(c.eval[i]), model::DecodingStrategy::greedy(32));
    const auto got = corpus::answer_tokens(out, V());
    const bool ok = got && *got == *corpus::answer_tokens(c.eval[i], V());
    EXPECT_EQ(r.correct[i], ok ? 1 : 0);
    hits += ok;
  }
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(hits) / static_cast<double>(c.eval.size()));
  EXPECT_THROW(evaluate_accuracy(m, {}), InvalidArgument);
}

TEST(Gap, IdenticalTeachersGiveZeroDeltas) {
  const auto c = tiny_corpus();
  const auto t = fit_on(c.train, 1, 5);
  StudentTemplate st;
  st.base = small_base(0);
  st.train.epochs = 1;
  const std::vector<std::uint64_t> seeds{233, 234};
  DecodeTemplate dt;
  dt.max_new_tokens = 24;
  const auto rep = defense_gap(t, t, st, c.kd_prompts, c.eval, seeds, dt, 0.02);
  EXPECT_EQ(rep.teacher_delta, 0.0);
  EXPECT_EQ(rep.student_delta, 0.0);
  EXPECT_TRUE(rep.teacher_preserved());
  ASSERT_EQ(rep.per_seed.size(), 2u);
  for (const auto& o : rep.per_seed) EXPECT_EQ(o.student_from_sft_acc, o.student_from_defensive_acc);
  EXPECT_THROW(defense_gap(t, t, st, c.kd_prompts, c.eval, {}, dt), InvalidArgument);
}

TEST(Gap, TeachersMustShareVocabulary) {
  const auto c = tiny_corpus();
  const auto t = random_teacher(9);
  auto other = t;
  other.vocab = corpus::Vocabulary({"a", "b"});
  StudentTemplate st;
  st.base = small_base(0);
  const std::vector<std::uint64_t> seeds{1};
  EXPECT_THROW(defense_gap(t, other, st, c.kd_prompts, c.eval, seeds), ConfigError);
}

TEST(Gap, PreservationUsesEpsilon) {
  DefenseGapReport r;
  r.epsilon = 0.02;
  r.teacher_delta = -0.02;
  EXPECT_TRUE(r.teacher_preserved());
  r.teacher_delta = -0.0201;
  EXPECT_FALSE(r.teacher_preserved());
}
