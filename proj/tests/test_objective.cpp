#include <gtest/gtest.h>

#include <cmath>

#include "doge/objective.hpp"
#include "oracles.hpp"

using namespace doge;
using namespace doge::objective;
using model::HeadParams;

namespace {

RealMatrix random_matrix(std::mt19937_64& g, std::size_t r, std::size_t c, double scale = 1.0) {
  return RealMatrix(r, c, oracle::random_vec(g, r * c, scale));
}

// A synthetic batch: random inputs, targets, mask and two proxies.
PositionBatch synthetic_batch(std::uint64_t seed, std::size_t rows, std::size_t dim, std::size_t vocab,
                              double mask_rate = 0.5) {
  std::mt19937_64 g(seed);
  std::uniform_int_distribution<int> tok(0, static_cast<int>(vocab) - 1);
  std::bernoulli_distribution coin(mask_rate);
  PositionBatch b;
  b.inputs = random_matrix(g, rows, dim);
  for (std::size_t r = 0; r < rows; ++r) {
    b.targets.push_back(tok(g));
    const bool m = coin(g);
    b.mask.push_back(m ? 1 : 0);
    b.tags.push_back(m ? corpus::Segment::Thinking : corpus::Segment::Answer);
  }
  for (int i = 0; i < 2; ++i) b.proxy_logits.push_back(random_matrix(g, rows, vocab, 2.0));
  return b;
}

HeadParams random_head(std::uint64_t seed, std::size_t vocab, std::size_t dim, std::size_t hidden) {
  num::SeededRng rng(seed, "head");
  return HeadParams::random(vocab, dim, hidden, rng, 0.5);
}

AdvConfig cfg_with(double lambda, double alpha = 2.0) {
  AdvConfig c;
  c.lambda = lambda;
  c.alpha = alpha;
  return c;
}

oracle::Vec row_of(const RealMatrix& m, std::size_t r) { return {m.row(r).begin(), m.row(r).end()}; }

}  // namespace

TEST(Sft, UniformLogitsGiveLogV) {
  const RealMatrix logits(3, 4, 0.0);
  const std::vector<corpus::TokenId> y{0, 2, 3};
  const auto r = sft_loss_and_grad(logits, y);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-15);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double want = (0.25 - (static_cast<int>(k) == y[i] ? 1.0 : 0.0)) / 3.0;
      EXPECT_NEAR(r.grad(i, k), want, 1e-15);
    }
  }
}

TEST(Sft, LargeMarginNearZero) {
  const RealMatrix logits{{20.0, 0.0}};
  const std::vector<corpus::TokenId> y{0};
  EXPECT_LE(sft_loss_and_grad(logits, y).loss, 1e-6);
}

TEST(Sft, Errors) {
  const std::vector<corpus::TokenId> y{0};
  EXPECT_THROW(sft_loss_and_grad(RealMatrix(0, 3), {}), InvalidArgument);
  EXPECT_THROW(sft_loss_and_grad(RealMatrix(2, 3), y), InvalidArgument);
  const std::vector<corpus::TokenId> bad{3};
  EXPECT_THROW(sft_loss_and_grad(RealMatrix(1, 3), bad), InvalidArgument);
}

TEST(Sft, MatchesOracleAndFiniteDifferences) {
  std::mt19937_64 g(1);
  for (double temp : {1.0, 2.0}) {
    RealMatrix logits = random_matrix(g, 4, 6, 2.0);
    const std::vector<corpus::TokenId> y{1, 5, 0, 3};
    const auto r = sft_loss_and_grad(logits, y, temp);
    double want = 0.0;
    for (std::size_t i = 0; i < 4; ++i) want -= std::log(oracle::softmax(row_of(logits, i), temp)[y[i]]);
    EXPECT_NEAR(r.loss, want / 4.0, 1e-13);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t k = 0; k < 6; ++k) {
        const double fd =
            oracle::central_diff([&] { return sft_loss_and_grad(logits, y, temp).loss; }, logits(i, k), 1e-5);
        EXPECT_LT(oracle::rel_err(r.grad(i, k), fd), 1e-6);
      }
    }
  }
}

TEST(Adversarial, IdenticalDistributionsGiveZero) {
  std::mt19937_64 g(2);
  const RealMatrix t = random_matrix(g, 5, 7);
  const std::vector<RealMatrix> proxies{t, t};
  const auto r = adversarial_loss_and_grad(t, proxies, 2.0);
  EXPECT_NEAR(r.loss, 0.0, 1e-15);
  for (double x : r.grad.data()) EXPECT_NEAR(x, 0.0, 1e-15);
}

TEST(Adversarial, NonPositiveAndMatchesBruteForce) {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double alpha = trial % 2 ? 1.0 : 2.5;
    const RealMatrix t = random_matrix(g, 3, 5, 3.0);
    const std::vector<RealMatrix> proxies{random_matrix(g, 3, 5, 3.0), random_matrix(g, 3, 5, 3.0),
                                          random_matrix(g, 3, 5, 3.0)};
    const auto r = adversarial_loss_and_grad(t, proxies, alpha);
    EXPECT_LE(r.loss, 0.0);
    double want = 0.0;
    for (const auto& q : proxies) {
      for (std::size_t i = 0; i < 3; ++i) {
        want += oracle::kl(oracle::softmax(row_of(t, i), alpha), oracle::softmax(row_of(q, i), alpha));
      }
    }
    want = -want / 9.0;
    ASSERT_NEAR(r.loss, want, 1e-12);
  }
}

TEST(Adversarial, FiniteDifferences) {
  std::mt19937_64 g(4);
  RealMatrix t = random_matrix(g, 3, 6, 2.0);
  const std::vector<RealMatrix> proxies{random_matrix(g, 3, 6, 2.0), random_matrix(g, 3, 6, 2.0)};
  const auto r = adversarial_loss_and_grad(t, proxies, 2.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 6; ++k) {
      const double fd =
          oracle::central_diff([&] { return adversarial_loss_and_grad(t, proxies, 2.0).loss; }, t(i, k), 1e-5);
      EXPECT_LT(oracle::rel_err(r.grad(i, k), fd), 1e-6) << i << "," << k;
    }
  }
}

TEST(Adversarial, Errors) {
  const RealMatrix t(2, 3);
  EXPECT_THROW(adversarial_loss_and_grad(t, {}, 2.0), InvalidArgument);
  const std::vector<RealMatrix> wrong{RealMatrix(2, 4)};
  EXPECT_THROW(adversarial_loss_and_grad(t, wrong, 2.0), InvalidArgument);
  const std::vector<RealMatrix> ok{t};
  EXPECT_THROW(adversarial_loss_and_grad(t, ok, 0.0), InvalidArgument);
}

TEST(Masked, LambdaZeroIsBitwiseSft) {
  for (std::size_t hidden : {0u, 5u}) {
    const auto batch = synthetic_batch(5, 20, 6, 7);
    const auto head = random_head(5, 7, 6, hidden);
    const auto got = masked_head_gradient(head, batch, cfg_with(0.0));
    const auto sft = sft_loss_and_grad(batch_logits(head, batch.inputs), batch.targets);
    EXPECT_EQ(got.breakdown.per_position_logit_grads, sft.grad);
    EXPECT_TRUE(got.grad == chain_to_head(head, batch.inputs, sft.grad));
    EXPECT_EQ(got.breakdown.total_loss, sft.loss);
  }
}

TEST(Masked, ZeroMaskIsBitwiseSft) {
  auto batch = synthetic_batch(6, 20, 6, 7);
  std::fill(batch.mask.begin(), batch.mask.end(), 0);
  const auto head = random_head(6, 7, 6, 4);
  const auto a = masked_head_gradient(head, batch, cfg_with(0.7));
  const auto b = masked_head_gradient(head, batch, cfg_with(0.0));
  EXPECT_TRUE(a.grad == b.grad);
  EXPECT_EQ(a.breakdown.total_loss, b.breakdown.total_loss);
  EXPECT_EQ(a.breakdown.masked_positions, 0u);
  EXPECT_EQ(a.breakdown.adv_loss, 0.0);
}

TEST(Masked, UnmaskedRowsCarrySftGradient) {
  const auto batch = synthetic_batch(7, 40, 6, 7);
  const auto head = random_head(7, 7, 6, 0);
  const auto got = masked_head_gradient(head, batch, cfg_with(0.9));
  const auto sft = sft_loss_and_grad(batch_logits(head, batch.inputs), batch.targets);
  std::size_t answer_rows = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto gr = got.breakdown.per_position_logit_grads.row(r);
    const auto sr = sft.grad.row(r);
    if (batch.mask[r] == 0) {
      ++answer_rows;
      for (std::size_t k = 0; k < gr.size(); ++k) ASSERT_EQ(gr[k], sr[k]);
    } else {
      bool differs = false;
      for (std::size_t k = 0; k < gr.size(); ++k) differs |= gr[k] != sr[k];
      EXPECT_TRUE(differs);
    }
  }
  EXPECT_GT(answer_rows, 0u);
}

TEST(Masked, FullFiniteDifferences) {
  for (std::size_t hidden : {0u, 4u}) {
    for (bool shared : {false, true}) {
      const auto batch = synthetic_batch(8 + hidden, 12, 5, 6);
      auto head = random_head(8, 6, 5, hidden);
      auto cfg = cfg_with(0.6, 2.0);
      cfg.alg1_shared_temp = shared;
      const auto an = masked_head_gradient(head, batch, cfg).grad;
      auto params = head.tensors();
      const auto grads = an.tensors();
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].size(); ++i) {
          const double fd = oracle::central_diff([&] { return evaluate_loss(head, batch, cfg).total_loss; },
                                                 params[t][i], 1e-5);
          ASSERT_LT(oracle::rel_err(grads[t][i], fd), 1e-5) << "tensor " << t << " index " << i;
        }
      }
    }
  }
}

TEST(Masked, TotalIsLinearInLambda) {
  const auto batch = synthetic_batch(9, 30, 6, 7);
  const auto head = random_head(9, 7, 6, 3);
  const auto g0 = masked_head_gradient(head, batch, cfg_with(0.0));
  const auto g1 = masked_head_gradient(head, batch, cfg_with(1.0));
  for (int i = 1; i <= 100; ++i) {
    const double lambda = 0.05 * i;
    const auto gl = masked_head_gradient(head, batch, cfg_with(lambda));
    const auto& b = gl.breakdown;
    ASSERT_NEAR(b.total_loss, b.sft_loss + lambda * b.adv_loss, 1e-12);
    ASSERT_EQ(b.sft_loss, g0.breakdown.sft_loss);
    ASSERT_EQ(b.adv_loss, g1.breakdown.adv_loss);
    const auto a = gl.grad.tensors();
    const auto z = g0.grad.tensors();
    const auto o = g1.grad.tensors();
    for (std::size_t t = 0; t < a.size(); ++t) {
      for (std::size_t k = 0; k < a[t].size(); ++k) {
        ASSERT_NEAR(a[t][k], z[t][k] + lambda * (o[t][k] - z[t][k]), 1e-10);
      }
    }
  }
}

TEST(Masked, SignContract) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto batch = synthetic_batch(100 + s, 15, 4, 5);
    const auto b = evaluate_loss(random_head(s, 5, 4, 0), batch, cfg_with(0.3));
    EXPECT_LE(b.adv_loss, 0.0);
    EXPECT_EQ(b.masked_kl, -b.adv_loss);
    EXPECT_GE(b.sft_loss, 0.0);
    EXPECT_EQ(b.masked_positions, static_cast<std::size_t>(std::count(batch.mask.begin(), batch.mask.end(), 1)));
  }
}

TEST(Masked, AlphaOneIsPlainKl) {
  const auto batch = synthetic_batch(10, 10, 4, 5, 1.0);
  const auto head = random_head(10, 5, 4, 0);
  const auto logits = batch_logits(head, batch.inputs);
  double want = 0.0;
  for (const auto& q : batch.proxy_logits) {
    for (std::size_t r = 0; r < batch.size(); ++r) {
      want += oracle::kl(oracle::softmax(row_of(logits, r), 1.0), oracle::softmax(row_of(q, r), 1.0));
    }
  }
  want /= 2.0 * static_cast<double>(batch.size());
  EXPECT_NEAR(evaluate_loss(head, batch, cfg_with(0.1, 1.0)).masked_kl, want, 1e-12);
}

TEST(Masked, SharedTemperatureVariant) {
  const auto batch = synthetic_batch(11, 10, 4, 5);
  const auto head = random_head(11, 5, 4, 0);
  auto cfg = cfg_with(0.1, 3.0);
  cfg.alg1_shared_temp = true;
  const auto logits = batch_logits(head, batch.inputs);
  EXPECT_EQ(evaluate_loss(head, batch, cfg).sft_loss, sft_loss_and_grad(logits, batch.targets, 3.0).loss);
  cfg.alg1_shared_temp = false;
  EXPECT_EQ(evaluate_loss(head, batch, cfg).sft_loss, sft_loss_and_grad(logits, batch.targets, 1.0).loss);
}

TEST(AdvConfigValidation, Errors) {
  const auto& v = corpus::Vocabulary::arithmetic();
  EXPECT_NO_THROW(validate(cfg_with(0.0), v));
  EXPECT_THROW(validate(cfg_with(0.1), v), ConfigError);
  EXPECT_THROW(validate(cfg_with(-1.0), v), ConfigError);
  EXPECT_THROW(validate(cfg_with(0.0, 0.0), v), ConfigError);
  auto cfg = cfg_with(0.1);
  model::BaseConfig bc;
  bc.hidden_dim = 8;
  cfg.proxies.push_back(model::make_bundle(bc, 0, model::Role::ProxyStudent, "p", num::SeededRng(1, "p"),
                                           corpus::Vocabulary({"a", "b"})));
  EXPECT_THROW(validate(cfg, v), ConfigError);
}

TEST(PositionBatchBuild, ShiftedRowsAndProxyLogits) {
  const auto& v = corpus::Vocabulary::arithmetic();
  corpus::TokenSequence s;
  s.tokens = corpus::parse_tokens("Q : 1 = <think> 1 </think> Answer: 1 <end>", v);
  for (char c : std::string("PPPPTTTAAA")) s.tags.push_back(corpus::segment_from_code(c));
  model::BaseConfig bc;
  bc.hidden_dim = 8;
  const model::FrozenBase base(bc, v.size());
  const auto proxy = model::make_bundle(bc, 2, model::Role::ProxyStudent, "p", num::SeededRng(1, "p"));
  const std::vector<corpus::TokenSequence> seqs{s};
  const std::vector<corpus::SegmentMask> masks{corpus::mask_by_delimiters(s, v)};
  const std::vector<RealMatrix> hidden{model::base_forward(base, s)};
  const std::vector<model::ModelBundle> proxies{proxy};
  const auto b = make_position_batch(seqs, masks, hidden, proxies);
  ASSERT_EQ(b.size(), 6u);
  EXPECT_EQ(b.targets.front(), v.think_open());
  EXPECT_EQ(b.targets.back(), v.end());
  EXPECT_EQ(b.mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0}));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(b.inputs(0, c), hidden[0](3, c));
  const auto ph = model::base_forward(*proxy.base, s);
  const auto want = model::head_logits(proxy.head, ph.row(3));
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_EQ(b.proxy_logits[0](0, k), want[k]);
}
