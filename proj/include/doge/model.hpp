#pragma once

// Frozen random causal feature network plus a trainable output head. The same
// bundle type plays teacher, proxy student and target student.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "doge/corpus.hpp"
#include "doge/numerics.hpp"

namespace doge::model {

using corpus::TokenId;
using num::RealMatrix;
using num::RealVector;

struct BaseConfig {
  std::uint64_t seed = 1;
  std::size_t depth = 2;  // one windowed layer followed by depth-1 recurrent layers
  std::size_t hidden_dim = 64;
  std::size_t context_window = 64;
  std::size_t embed_dim = 16;
  std::size_t window = 8;
  double window_gain = 2.0;
  double window_bias_scale = 0.5;
  double mix_gain = 1.5;
  double recurrent_radius = 0.7;

  friend bool operator==(const BaseConfig&, const BaseConfig&) = default;
};

/// Random causal network, generated from its seed and never updated.
///
/// Layer 1 mixes a causal window of token embeddings through tanh; every
/// further layer is a tanh recurrence over the layer below. Row t of the
/// output therefore depends on tokens[0..t] only.
class FrozenBase {
 public:
  FrozenBase(const BaseConfig& cfg, std::size_t vocab_size);

  const BaseConfig& config() const noexcept { return cfg_; }
  std::size_t hidden_dim() const noexcept { return cfg_.hidden_dim; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t context_window() const noexcept { return cfg_.context_window; }

  friend bool operator==(const FrozenBase&, const FrozenBase&) = default;

 private:
  friend class BaseCursor;

  BaseConfig cfg_;
  std::size_t vocab_size_;
  // projected_[k](token, :) = W_k * embed(token): the window layer reduces to
  // table lookups.
  std::vector<RealMatrix> projected_;
  RealVector window_bias_;
  std::vector<RealMatrix> input_;
  std::vector<RealMatrix> recurrent_;
};

/// Incremental evaluation of a FrozenBase, one token at a time.
class BaseCursor {
 public:
  explicit BaseCursor(const FrozenBase& base);

  /// Consumes the next token and returns the hidden state at its position.
  std::span<const double> push(TokenId token);
  std::size_t position() const noexcept { return position_; }

 private:
  const FrozenBase* base_;
  std::vector<TokenId> recent_;  // ring buffer of the last `window` tokens
  std::size_t position_ = 0;
  std::vector<RealVector> state_;
  RealVector scratch_;
};

/// Hidden states for every position (length x d). Throws ContextOverflow when
/// the sequence exceeds the context window.
RealMatrix base_forward(const FrozenBase& base, std::span<const TokenId> tokens);
RealMatrix base_forward(const FrozenBase& base, const corpus::TokenSequence& seq);

enum class Activation : std::uint8_t { Identity, Tanh };

/// Output head: logits = weights * x + bias, where x is the hidden state or,
/// with a hidden layer, act(hidden_weights * h + hidden_bias).
struct HeadParams {
  RealMatrix weights;
  RealVector bias;
  RealMatrix hidden_weights;
  RealVector hidden_bias;
  Activation activation = Activation::Tanh;

  static HeadParams zeros(std::size_t vocab, std::size_t dim, std::size_t hidden_units = 0);
  static HeadParams random(std::size_t vocab, std::size_t dim, std::size_t hidden_units, num::SeededRng& rng,
                           double scale = 0.01);

  bool has_hidden() const noexcept { return hidden_weights.rows() > 0; }
  std::size_t vocab_size() const noexcept { return bias.size(); }
  std::size_t input_dim() const noexcept { return has_hidden() ? hidden_weights.cols() : weights.cols(); }
  std::size_t hidden_units() const noexcept { return hidden_weights.rows(); }

  /// Every trainable tensor, in a fixed order (weights, bias, hidden_weights, hidden_bias).
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Same shape, all zeros.
  HeadParams zeros_like() const;

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

/// Throws InvalidArgument on inconsistent head shapes.
void validate(const HeadParams& head);

RealVector head_logits(const HeadParams& head, std::span<const double> hidden);

/// Allocation-free variant. `activations` must hold hidden_units() entries
/// (ignored for a linear head); on return it carries the hidden-layer output.
void head_logits_into(const HeadParams& head, std::span<const double> hidden, std::span<double> logits,
                      std::span<double> activations);

enum class Role : std::uint8_t { Teacher, ProxyStudent, TargetStudent };
const char* role_name(Role r);

struct ModelBundle {
  std::shared_ptr<const FrozenBase> base;
  HeadParams head;
  Role role = Role::Teacher;
  std::string id;
  corpus::Vocabulary vocab = corpus::Vocabulary::arithmetic();
};

/// Fresh bundle with a random head.
ModelBundle make_bundle(const BaseConfig& base_cfg, std::size_t head_hidden_units, Role role, std::string id,
                        num::SeededRng head_rng, const corpus::Vocabulary& vocab = corpus::Vocabulary::arithmetic());

struct DecodingStrategy {
  enum class Kind : std::uint8_t { Greedy, TopK };
  Kind kind = Kind::Greedy;
  std::size_t k = 1;
  double sample_temp = 1.0;
  std::size_t max_new_tokens = 32;
  num::SeededRng rng{0, "decode"};

  static DecodingStrategy greedy(std::size_t max_new_tokens = 32);
  static DecodingStrategy top_k(std::size_t k, double temp, num::SeededRng rng, std::size_t max_new_tokens = 32);
  std::string describe() const;
};

/// Autoregressive extension of `prompt` until the end token or
/// max_new_tokens. Greedy ties go to the lowest token id. Generated positions
/// are tagged Untagged.
corpus::TokenSequence decode(const ModelBundle& bundle, const corpus::TokenSequence& prompt,
                             const DecodingStrategy& strategy);

struct CheckpointHeader {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 0;
  std::size_t head_hidden = 0;
  std::uint64_t base_seed = 0;
};

struct Checkpoint {
  CheckpointHeader header;
  HeadParams head;
};

/// `DOGE-CKPT v1 V d d_h base_seed` then named matrices, each as
/// `name rows cols` followed by row-major little-endian float64 data.
void write_checkpoint(std::ostream& os, const HeadParams& head, std::size_t base_hidden_dim, std::uint64_t base_seed);
Checkpoint read_checkpoint(std::istream& is);

}  // namespace doge::model
