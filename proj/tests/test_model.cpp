#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "doge/model.hpp"
#include "oracles.hpp"

using namespace doge;
using namespace doge::model;
using corpus::Vocabulary;

namespace {

BaseConfig small_base(std::uint64_t seed = 5) {
  BaseConfig c;
  c.seed = seed;
  c.hidden_dim = 16;
  c.embed_dim = 8;
  c.window = 4;
  c.context_window = 40;
  return c;
}

std::vector<TokenId> some_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed = 1) {
  num::SeededRng rng(seed, "tokens");
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.uniform_index(vocab));
  return t;
}

corpus::TokenSequence prompt(const std::string& text) {
  corpus::TokenSequence s;
  s.tokens = corpus::parse_tokens(text, Vocabulary::arithmetic());
  s.tags.assign(s.tokens.size(), corpus::Segment::Prompt);
  return s;
}

}  // namespace

TEST(Base, ShapeAndFinite) {
  const FrozenBase base(small_base(), 24);
  const auto h = base_forward(base, some_tokens(30, 24));
  EXPECT_EQ(h.rows(), 30u);
  EXPECT_EQ(h.cols(), 16u);
  EXPECT_TRUE(h.all_finite());
  for (double x : h.data()) EXPECT_LE(std::fabs(x), 1.0);
}

TEST(Base, Causal) {
  const FrozenBase base(small_base(), 24);
  const auto toks = some_tokens(30, 24);
  const auto full = base_forward(base, toks);
  for (std::size_t t : {1u, 7u, 18u}) {
    auto changed = toks;
    for (std::size_t j = t; j < changed.size(); ++j) changed[j] = (changed[j] + 1) % 24;
    const auto other = base_forward(base, changed);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t c = 0; c < 16; ++c) ASSERT_EQ(full(r, c), other(r, c));
    }
    // The edit is visible at its own position.
    bool differs = false;
    for (std::size_t c = 0; c < 16; ++c) differs |= full(t, c) != other(t, c);
    EXPECT_TRUE(differs);
  }
}

TEST(Base, CursorMatchesBatchForward) {
  const FrozenBase base(small_base(), 24);
  const auto toks = some_tokens(25, 24, 9);
  const auto full = base_forward(base, toks);
  BaseCursor cur(base);
  for (std::size_t t = 0; t < toks.size(); ++t) {
    const auto h = cur.push(toks[t]);
    for (std::size_t c = 0; c < 16; ++c) ASSERT_EQ(h[c], full(t, c));
  }
}

TEST(Base, DeterministicFromSeed) {
  const FrozenBase a(small_base(11), 24), b(small_base(11), 24), c(small_base(12), 24);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  const auto toks = some_tokens(10, 24);
  EXPECT_EQ(base_forward(a, toks), base_forward(b, toks));
}

TEST(Base, ContextOverflow) {
  const FrozenBase base(small_base(), 24);
  EXPECT_NO_THROW(base_forward(base, some_tokens(40, 24)));
  EXPECT_THROW(base_forward(base, some_tokens(41, 24)), ContextOverflow);
  BaseCursor cur(base);
  EXPECT_THROW(cur.push(24), InvalidArgument);
}

TEST(Head, ZeroWeightsGiveBias) {
  auto h = HeadParams::zeros(5, 3);
  h.bias = {1, -2, 3, 0.5, 0};
  EXPECT_EQ(head_logits(h, std::vector<double>{4, 5, 6}), h.bias);
}

TEST(Head, LinearMatchesMatvec) {
  std::mt19937_64 g(3);
  num::SeededRng rng(3, "head");
  const auto h = HeadParams::random(7, 5, 0, rng, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = oracle::random_vec(g, 5);
    const auto want = oracle::matvec({h.weights.data().begin(), h.weights.data().end()}, 7, 5, x, h.bias);
    const auto got = head_logits(h, x);
    for (std::size_t i = 0; i < 7; ++i) ASSERT_NEAR(got[i], want[i], 1e-13);
  }
}

TEST(Head, MlpMatchesOracle) {
  std::mt19937_64 g(4);
  num::SeededRng rng(4, "head");
  auto h = HeadParams::random(6, 5, 4, rng, 1.0);
  h.hidden_bias = oracle::random_vec(g, 4);
  const oracle::Vec w1(h.hidden_weights.data().begin(), h.hidden_weights.data().end());
  const oracle::Vec w2(h.weights.data().begin(), h.weights.data().end());
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = oracle::random_vec(g, 5);
    auto a = oracle::matvec(w1, 4, 5, x, h.hidden_bias);
    for (double& v : a) v = std::tanh(v);
    const auto want = oracle::matvec(w2, 6, 4, a, h.bias);
    const auto got = head_logits(h, x);
    for (std::size_t i = 0; i < 6; ++i) ASSERT_NEAR(got[i], want[i], 1e-13);
  }
}

TEST(Head, MlpWithZeroHiddenWeightsGivesBias) {
  num::SeededRng rng(4, "head");
  auto h = HeadParams::random(6, 5, 4, rng, 1.0);
  for (double& w : h.hidden_weights.data()) w = 0.0;
  for (double& b : h.hidden_bias) b = 0.0;
  EXPECT_EQ(head_logits(h, std::vector<double>{1, 2, 3, 4, 5}), h.bias);
}

TEST(Head, ShapeErrors) {
  auto h = HeadParams::zeros(5, 3);
  EXPECT_THROW(head_logits(h, std::vector<double>{1, 2}), InvalidArgument);
  h.bias.pop_back();
  EXPECT_THROW(validate(h), InvalidArgument);
  auto m = HeadParams::zeros(5, 3, 2);
  EXPECT_EQ(m.input_dim(), 3u);
  EXPECT_EQ(m.parameter_count(), 5u * 2 + 5 + 2u * 3 + 2);
  EXPECT_EQ(m.tensors().size(), 4u);
}

TEST(Decode, ForcedArgmaxStopsAtEnd) {
  auto b = make_bundle(small_base(), 0, Role::Teacher, "t", num::SeededRng(1, "h"));
  b.head = HeadParams::zeros(b.vocab.size(), 16);
  b.head.bias[b.vocab.end()] = 5.0;
  const auto p = prompt("Q : 1 + 2 mod 4 =");
  const auto out = decode(b, p, DecodingStrategy::greedy());
  ASSERT_EQ(out.size(), p.size() + 1);
  EXPECT_EQ(out.tokens.back(), b.vocab.end());
  EXPECT_EQ(out.tags.back(), corpus::Segment::Untagged);
  EXPECT_NO_THROW(corpus::validate(out));
}

TEST(Decode, GreedyTiesGoToLowestId) {
  auto b = make_bundle(small_base(), 0, Role::Teacher, "t", num::SeededRng(1, "h"));
  b.head = HeadParams::zeros(b.vocab.size(), 16);
  b.head.bias[3] = 1.0;
  b.head.bias[7] = 1.0;
  const auto p = prompt("Q : 1 =");
  const auto out = decode(b, p, DecodingStrategy::greedy(5));
  ASSERT_EQ(out.size(), p.size() + 5);
  for (std::size_t i = p.size(); i < out.size(); ++i) EXPECT_EQ(out.tokens[i], 3);
}

TEST(Decode, TopOneEqualsGreedy) {
  const auto b = make_bundle(small_base(), 8, Role::Teacher, "t", num::SeededRng(2, "h"));
  auto big = b;
  num::SeededRng rng(2, "big");
  big.head = HeadParams::random(b.vocab.size(), 16, 8, rng, 1.0);
  for (const char* text : {"Q : 1 + 2 mod 4 =", "Q : 3 - 1 mod 4 =", "Q : 0 ="}) {
    const auto p = prompt(text);
    EXPECT_EQ(decode(big, p, DecodingStrategy::greedy(12)),
              decode(big, p, DecodingStrategy::top_k(1, 1.0, num::SeededRng(9, "s"), 12)));
  }
}

TEST(Decode, TopKReproducibleFromRng) {
  auto b = make_bundle(small_base(), 8, Role::Teacher, "t", num::SeededRng(2, "h"));
  num::SeededRng rng(2, "big");
  b.head = HeadParams::random(b.vocab.size(), 16, 8, rng, 1.0);
  bool any_diff_from_greedy = false;
  for (int i = 0; i < 20; ++i) {
    const auto p = prompt("Q : " + std::to_string(i % 10) + " + 1 mod 4 =");
    const auto s = DecodingStrategy::top_k(5, 1.0, num::SeededRng(233, "kd/" + std::to_string(i)), 16);
    const auto first = decode(b, p, s);
    EXPECT_EQ(first, decode(b, p, s));
    any_diff_from_greedy |= first != decode(b, p, DecodingStrategy::greedy(16));
  }
  EXPECT_TRUE(any_diff_from_greedy);
}

TEST(Decode, RespectsLimitsAndValidates) {
  auto b = make_bundle(small_base(), 0, Role::Teacher, "t", num::SeededRng(1, "h"));
  b.head = HeadParams::zeros(b.vocab.size(), 16);
  const auto p = prompt("Q : 1 + 2 mod 4 =");
  EXPECT_EQ(decode(b, p, DecodingStrategy::greedy(100)).size(), 40u);
  EXPECT_THROW(decode(b, p, DecodingStrategy::greedy(0)), InvalidArgument);
  EXPECT_THROW(decode(b, corpus::TokenSequence{}, DecodingStrategy::greedy()), InvalidArgument);
  EXPECT_THROW(decode(b, p, DecodingStrategy::top_k(0, 1.0, num::SeededRng(1, "x"))), InvalidArgument);
  EXPECT_THROW(decode(b, p, DecodingStrategy::top_k(2, 0.0, num::SeededRng(1, "x"))), InvalidArgument);
}

TEST(Checkpoint, BitExactRoundTrip) {
  num::SeededRng rng(8, "ck");
  for (std::size_t hidden : {0u, 6u}) {
    auto h = HeadParams::random(24, 16, hidden, rng, 0.7);
    h.weights(0, 0) = 1.0 / 3.0;
    h.bias[1] = -0.0;
    h.bias[2] = 1e-310;
    std::stringstream ss;
    write_checkpoint(ss, h, 16, 0xdeadbeefcafeULL);
    const auto ck = read_checkpoint(ss);
    EXPECT_EQ(ck.header.vocab_size, 24u);
    EXPECT_EQ(ck.header.hidden_dim, 16u);
    EXPECT_EQ(ck.header.head_hidden, hidden);
    EXPECT_EQ(ck.header.base_seed, 0xdeadbeefcafeULL);
    EXPECT_TRUE(ck.head == h);
    EXPECT_TRUE(std::signbit(ck.head.bias[1]));
  }
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::istringstream empty("");
  EXPECT_THROW(read_checkpoint(empty), FormatError);
  std::istringstream bad("NOT-A-CKPT 1 2 3\n");
  EXPECT_THROW(read_checkpoint(bad), FormatError);
  std::stringstream ss;
  write_checkpoint(ss, HeadParams::zeros(4, 3), 3, 1);
  std::string text = ss.str();
  text.resize(text.size() - 5);
  std::istringstream truncated(text);
  EXPECT_THROW(read_checkpoint(truncated), FormatError);
}

TEST(Bundle, SeededAndRoleNames) {
  const auto a = make_bundle(small_base(), 4, Role::ProxyStudent, "p", num::SeededRng(3, "h"));
  const auto b = make_bundle(small_base(), 4, Role::ProxyStudent, "p", num::SeededRng(3, "h"));
  EXPECT_TRUE(a.head == b.head);
  EXPECT_TRUE(*a.base == *b.base);
  EXPECT_STREQ(role_name(Role::TargetStudent), "target-student");
}
