#include "doge/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace doge::model {

namespace {

RealMatrix gaussian(std::size_t rows, std::size_t cols, double scale, num::SeededRng& rng) {
  RealMatrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal() * scale;
  return m;
}

}  // namespace

FrozenBase::FrozenBase(const BaseConfig& cfg, std::size_t vocab_size) : cfg_(cfg), vocab_size_(vocab_size) {
  if (cfg.depth < 1 || cfg.hidden_dim == 0 || cfg.embed_dim == 0 || cfg.window == 0 || cfg.context_window == 0) {
    throw InvalidArgument("FrozenBase: depth, hidden_dim, embed_dim, window and context_window must be positive");
  }
  if (vocab_size == 0) throw InvalidArgument("FrozenBase: empty vocabulary");
  num::SeededRng rng(cfg.seed, "frozen-base");
  const std::size_t d = cfg.hidden_dim;
  const std::size_t e = cfg.embed_dim;

  const RealMatrix embed = gaussian(vocab_size, e, 1.0, rng);
  const double wscale = cfg.window_gain / std::sqrt(static_cast<double>(cfg.window * e));
  for (std::size_t k = 0; k < cfg.window; ++k) {
    const RealMatrix w = gaussian(d, e, wscale, rng);
    RealMatrix proj(vocab_size, d);
    for (std::size_t tok = 0; tok < vocab_size; ++tok) {
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < e; ++j) acc += w(i, j) * embed(tok, j);
        proj(tok, i) = acc;
      }
    }
    projected_.push_back(std::move(proj));
  }
  window_bias_.resize(d);
  for (double& b : window_bias_) b = rng.normal() * cfg.window_bias_scale;

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 1; l < cfg.depth; ++l) {
    input_.push_back(gaussian(d, d, cfg.mix_gain * inv_sqrt_d, rng));
    // Circular law: an i.i.d. N(0, r^2/d) matrix has spectral radius close to r.
    recurrent_.push_back(gaussian(d, d, cfg.recurrent_radius * inv_sqrt_d, rng));
  }
}

BaseCursor::BaseCursor(const FrozenBase& base)
    : base_(&base),
      recent_(base.cfg_.window, -1),
      state_(base.cfg_.depth, RealVector(base.cfg_.hidden_dim, 0.0)),
      scratch_(base.cfg_.hidden_dim) {}

std::span<const double> BaseCursor::push(TokenId token) {
  const FrozenBase& b = *base_;
  if (position_ >= b.cfg_.context_window) {
    throw ContextOverflow("sequence exceeds context window of " + std::to_string(b.cfg_.context_window));
  }
  if (token < 0 || static_cast<std::size_t>(token) >= b.vocab_size_) {
    throw InvalidArgument("BaseCursor: token id out of range");
  }
  const std::size_t window = b.cfg_.window;
  const std::size_t d = b.cfg_.hidden_dim;
  recent_[position_ % window] = token;

  RealVector& u = state_[0];
  for (std::size_t i = 0; i < d; ++i) {
    double acc = b.window_bias_[i];
    for (std::size_t lag = 0; lag < window && lag <= position_; ++lag) {
      const TokenId t = recent_[(position_ - lag) % window];
      acc += b.projected_[lag](static_cast<std::size_t>(t), i);
    }
    u[i] = std::tanh(acc);
  }

  for (std::size_t l = 1; l < b.cfg_.depth; ++l) {
    const RealMatrix& win = b.input_[l - 1];
    const RealMatrix& rec = b.recurrent_[l - 1];
    const RealVector& below = state_[l - 1];
    RealVector& s = state_[l];
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      const auto wr = win.row(i);
      const auto rr = rec.row(i);
      for (std::size_t j = 0; j < d; ++j) acc += wr[j] * below[j];
      for (std::size_t j = 0; j < d; ++j) acc += rr[j] * s[j];
      scratch_[i] = std::tanh(acc);
    }
    std::swap(s, scratch_);
  }
  ++position_;
  return state_.back();
}

RealMatrix base_forward(const FrozenBase& base, std::span<const TokenId> tokens) {
  if (tokens.size() > base.context_window()) {
    throw ContextOverflow("sequence of length " + std::to_string(tokens.size()) + " exceeds context window of " +
                          std::to_string(base.context_window()));
  }
  RealMatrix out(tokens.size(), base.hidden_dim());
  BaseCursor cursor(base);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto h = cursor.push(tokens[t]);
    std::copy(h.begin(), h.end(), out.row(t).begin());
  }
  return out;
}

RealMatrix base_forward(const FrozenBase& base, const corpus::TokenSequence& seq) {
  return base_forward(base, std::span<const TokenId>(seq.tokens));
}

HeadParams HeadParams::zeros(std::size_t vocab, std::size_t dim, std::size_t hidden_units) {
  HeadParams h;
  h.weights = RealMatrix(vocab, hidden_units ? hidden_units : dim);
  h.bias.assign(vocab, 0.0);
  if (hidden_units) {
    h.hidden_weights = RealMatrix(hidden_units, dim);
    h.hidden_bias.assign(hidden_units, 0.0);
  }
  return h;
}

HeadParams HeadParams::random(std::size_t vocab, std::size_t dim, std::size_t hidden_units, num::SeededRng& rng,
                              double scale) {
  HeadParams h = zeros(vocab, dim, hidden_units);
  for (double& x : h.weights.data()) x = rng.normal() * scale;
  if (hidden_units) {
    // The hidden layer needs O(1/sqrt(dim)) weights to produce non-degenerate features.
    const double hs = 1.0 / std::sqrt(static_cast<double>(dim));
    for (double& x : h.hidden_weights.data()) x = rng.normal() * hs;
  }
  return h;
}

std::vector<std::span<double>> HeadParams::tensors() {
  std::vector<std::span<double>> t{weights.data(), std::span<double>(bias)};
  if (has_hidden()) {
    t.push_back(hidden_weights.data());
    t.emplace_back(hidden_bias);
  }
  return t;
}

std::vector<std::span<const double>> HeadParams::tensors() const {
  std::vector<std::span<const double>> t{weights.data(), std::span<const double>(bias)};
  if (has_hidden()) {
    t.push_back(hidden_weights.data());
    t.emplace_back(hidden_bias);
  }
  return t;
}

std::size_t HeadParams::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

bool HeadParams::all_finite() const {
  for (auto t : tensors()) {
    for (double x : t) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

HeadParams HeadParams::zeros_like() const {
  HeadParams z = zeros(vocab_size(), input_dim(), hidden_units());
  z.activation = activation;
  return z;
}

void validate(const HeadParams& head) {
  const std::size_t v = head.bias.size();
  if (v == 0 || head.weights.rows() != v) throw InvalidArgument("HeadParams: weights/bias row mismatch");
  if (head.has_hidden()) {
    if (head.weights.cols() != head.hidden_weights.rows() || head.hidden_bias.size() != head.hidden_weights.rows()) {
      throw InvalidArgument("HeadParams: hidden layer shape mismatch");
    }
  } else if (!head.hidden_bias.empty()) {
    throw InvalidArgument("HeadParams: hidden bias without hidden weights");
  }
}

void head_logits_into(const HeadParams& head, std::span<const double> hidden, std::span<double> logits,
                      std::span<double> activations) {
  std::span<const double> x = hidden;
  if (head.has_hidden()) {
    const std::size_t nh = head.hidden_units();
    for (std::size_t i = 0; i < nh; ++i) {
      const auto w = head.hidden_weights.row(i);
      double acc = 0.0;
      for (std::size_t j = 0; j < hidden.size(); ++j) acc += w[j] * hidden[j];
      acc += head.hidden_bias[i];
      activations[i] = head.activation == Activation::Tanh ? std::tanh(acc) : acc;
    }
    x = activations.first(nh);
  }
  const std::size_t n = x.size();
  for (std::size_t r = 0; r < head.weights.rows(); ++r) {
    const auto w = head.weights.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += w[c] * x[c];
    logits[r] = acc + head.bias[r];
  }
}

RealVector head_logits(const HeadParams& head, std::span<const double> hidden) {
  validate(head);
  if (hidden.size() != head.input_dim()) {
    throw InvalidArgument("head_logits: hidden has dimension " + std::to_string(hidden.size()) + ", expected " +
                          std::to_string(head.input_dim()));
  }
  RealVector logits(head.vocab_size());
  RealVector act(head.hidden_units());
  head_logits_into(head, hidden, logits, act);
  return logits;
}

const char* role_name(Role r) {
  switch (r) {
    case Role::Teacher: return "teacher";
    case Role::ProxyStudent: return "proxy-student";
    case Role::TargetStudent: return "target-student";
  }
  return "?";
}

ModelBundle make_bundle(const BaseConfig& base_cfg, std::size_t head_hidden_units, Role role, std::string id,
                        num::SeededRng head_rng, const corpus::Vocabulary& vocab) {
  ModelBundle b;
  b.base = std::make_shared<const FrozenBase>(base_cfg, vocab.size());
  b.head = HeadParams::random(vocab.size(), base_cfg.hidden_dim, head_hidden_units, head_rng);
  b.role = role;
  b.id = std::move(id);
  b.vocab = vocab;
  return b;
}

DecodingStrategy DecodingStrategy::greedy(std::size_t max_new_tokens) {
  DecodingStrategy s;
  s.max_new_tokens = max_new_tokens;
  return s;
}

DecodingStrategy DecodingStrategy::top_k(std::size_t k, double temp, num::SeededRng rng, std::size_t max_new_tokens) {
  DecodingStrategy s;
  s.kind = Kind::TopK;
  s.k = k;
  s.sample_temp = temp;
  s.rng = std::move(rng);
  s.max_new_tokens = max_new_tokens;
  return s;
}

std::string DecodingStrategy::describe() const {
  std::ostringstream os;
  if (kind == Kind::Greedy) {
    os << "greedy max_new_tokens=" << max_new_tokens;
  } else {
    os << "top-k k=" << k << " temp=" << sample_temp << " max_new_tokens=" << max_new_tokens << " rng=" << rng.seed()
       << ":" << rng.label();
  }
  return os.str();
}

namespace {

TokenId argmax_lowest(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

TokenId sample_top_k(std::span<const double> logits, std::size_t k, double temp, num::SeededRng& rng) {
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  order.resize(k);
  RealVector top(k);
  for (std::size_t i = 0; i < k; ++i) top[i] = logits[order[i]];
  const num::ProbVector p = num::softmax_temp(top, temp);
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    cum += p[i];
    if (u < cum) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[k - 1]);
}

}  // namespace

corpus::TokenSequence decode(const ModelBundle& bundle, const corpus::TokenSequence& prompt,
                             const DecodingStrategy& strategy) {
  if (prompt.tokens.empty()) throw InvalidArgument("decode: empty prompt");
  const std::size_t vocab = bundle.head.vocab_size();
  if (strategy.max_new_tokens < 1) throw InvalidArgument("decode: max_new_tokens must be >= 1");
  if (strategy.kind == DecodingStrategy::Kind::TopK && (strategy.k < 1 || strategy.k > vocab)) {
    throw InvalidArgument("decode: top-k requires 1 <= k <= V");
  }
  if (!(strategy.sample_temp > 0.0)) throw InvalidArgument("decode: sample_temp must be positive");

  corpus::TokenSequence out = prompt;
  out.tags.assign(prompt.size(), corpus::Segment::Prompt);
  BaseCursor cursor(*bundle.base);
  std::span<const double> h;
  for (TokenId t : prompt.tokens) h = cursor.push(t);

  num::SeededRng rng = strategy.rng;
  RealVector logits(vocab);
  RealVector act(bundle.head.hidden_units());
  const TokenId end = bundle.vocab.end();
  const std::size_t limit = bundle.base->context_window();
  for (std::size_t n = 0; n < strategy.max_new_tokens && out.size() < limit; ++n) {
    head_logits_into(bundle.head, h, logits, act);
    const TokenId next = strategy.kind == DecodingStrategy::Kind::Greedy
                             ? argmax_lowest(logits)
                             : sample_top_k(logits, strategy.k, strategy.sample_temp, rng);
    out.tokens.push_back(next);
    out.tags.push_back(corpus::Segment::Untagged);
    if (next == end || out.size() >= limit) break;
    h = cursor.push(next);
  }
  return out;
}

namespace {

void write_matrix(std::ostream& os, const char* name, std::size_t rows, std::size_t cols,
                  std::span<const double> data) {
  os << name << ' ' << rows << ' ' << cols << '\n';
  for (double x : data) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

std::vector<double> read_doubles(std::istream& is, std::size_t n) {
  std::vector<double> out(n);
  for (double& x : out) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw FormatError("checkpoint: truncated matrix data");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    x = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& os, const HeadParams& head, std::size_t base_hidden_dim, std::uint64_t base_seed) {
  validate(head);
  os << "DOGE-CKPT v1 " << head.vocab_size() << ' ' << base_hidden_dim << ' ' << head.hidden_units() << ' '
     << base_seed << '\n';
  write_matrix(os, "weights", head.weights.rows(), head.weights.cols(), head.weights.data());
  write_matrix(os, "bias", head.bias.size(), 1, head.bias);
  if (head.has_hidden()) {
    write_matrix(os, "hidden_weights", head.hidden_weights.rows(), head.hidden_weights.cols(),
                 head.hidden_weights.data());
    write_matrix(os, "hidden_bias", head.hidden_bias.size(), 1, head.hidden_bias);
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("checkpoint: missing header");
  std::istringstream hs(line);
  std::string magic, version;
  Checkpoint ck;
  if (!(hs >> magic >> version >> ck.header.vocab_size >> ck.header.hidden_dim >> ck.header.head_hidden >>
        ck.header.base_seed) ||
      magic != "DOGE-CKPT" || version != "v1") {
    throw FormatError("checkpoint: bad header '" + line + "'");
  }
  bool have_w = false, have_b = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ms(line);
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (!(ms >> name >> rows >> cols)) throw FormatError("checkpoint: bad matrix header '" + line + "'");
    auto data = read_doubles(is, rows * cols);
    if (name == "weights") {
      ck.head.weights = RealMatrix(rows, cols, std::move(data));
      have_w = true;
    } else if (name == "bias") {
      ck.head.bias = std::move(data);
      have_b = true;
    } else if (name == "hidden_weights") {
      ck.head.hidden_weights = RealMatrix(rows, cols, std::move(data));
    } else if (name == "hidden_bias") {
      ck.head.hidden_bias = std::move(data);
    } else {
      throw FormatError("checkpoint: unknown matrix '" + name + "'");
    }
  }
  if (!have_w || !have_b) throw FormatError("checkpoint: missing weights or bias");
  validate(ck.head);
  if (ck.head.vocab_size() != ck.header.vocab_size || ck.head.hidden_units() != ck.header.head_hidden ||
      ck.head.input_dim() != ck.header.hidden_dim) {
    throw FormatError("checkpoint: header does not match matrix shapes");
  }
  return ck;
}

}  // namespace doge::model
