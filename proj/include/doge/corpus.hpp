#pragma once

// Synthetic reasoning corpus: modular-arithmetic questions with a labelled
// thinking segment and a final answer, plus the two reasoning-mask detectors.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doge/numerics.hpp"

namespace doge::corpus {

using TokenId = int;

class Vocabulary {
 public:
  /// Throws InvalidArgument on duplicates, an empty list, or more than 64 symbols.
  explicit Vocabulary(std::vector<std::string> symbols);

  /// Digits, + - × =, template words, think delimiters, `Answer:`, pad and end.
  static const Vocabulary& arithmetic();

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::string& symbol(TokenId id) const;
  TokenId id(std::string_view symbol) const;
  bool contains(std::string_view symbol) const;
  std::span<const std::string> symbols() const noexcept { return symbols_; }

  TokenId pad() const { return id("<pad>"); }
  TokenId end() const { return id("<end>"); }
  TokenId think_open() const { return id("<think>"); }
  TokenId think_close() const { return id("</think>"); }
  TokenId answer_marker() const { return id("Answer:"); }
  TokenId digit(int d) const { return id(std::to_string(d)); }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> symbols_;
};

enum class Segment : std::uint8_t { Prompt, Thinking, Answer, Pad, Untagged };

char segment_code(Segment s);
Segment segment_from_code(char c);

struct TokenSequence {
  std::vector<TokenId> tokens;
  std::vector<Segment> tags;

  std::size_t size() const noexcept { return tokens.size(); }
  std::size_t prompt_length() const;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Checks equal lengths and block order Prompt -> Thinking -> Answer -> Pad
/// (Untagged may replace Thinking/Answer on freshly decoded output).
/// Throws MalformedSequence.
void validate(const TokenSequence& seq);

/// Prompt prefix of a sequence, tags preserved.
TokenSequence prompt_of(const TokenSequence& seq);

/// Tokens after the first answer marker that follows the prompt, up to the
/// end token. Empty optional when no marker is present.
std::optional<std::vector<TokenId>> answer_tokens(const TokenSequence& seq, const Vocabulary& vocab);

struct SegmentMask {
  std::vector<std::uint8_t> mask;
  std::size_t size() const noexcept { return mask.size(); }
  friend bool operator==(const SegmentMask&, const SegmentMask&) = default;
};

/// 1 on positions from `<think>` to `</think>` inclusive, 0 elsewhere.
SegmentMask mask_by_delimiters(const TokenSequence& seq, const Vocabulary& vocab);

/// 1 from the first post-prompt position up to (excluding) the first
/// occurrence of `answer_marker`; 0 on the marker, after it, and on the prompt.
SegmentMask mask_by_regex(const TokenSequence& seq, TokenId answer_marker);

/// Mask derived from stored Thinking tags.
SegmentMask mask_from_tags(const TokenSequence& seq);

enum class Op : char { Add = '+', Sub = '-', Mul = '*' };

struct ArithmeticSpec {
  std::vector<int> moduli{4};
  std::vector<Op> operators{Op::Add, Op::Sub};
};

/// Operators from a string of op characters ("+-*", '×' accepted as '*').
std::vector<Op> parse_operators(std::string_view text);
std::string format_operators(std::span<const Op> ops);

/// One instance: "Q : <expr> mod <m> =" "<think> a op b = r ... </think>"
/// "Answer: r <end>". `difficulty` in [1,4] is the number of operations.
TokenSequence generate_instance(num::SeededRng& rng, int difficulty, const ArithmeticSpec& spec = {},
                                const Vocabulary& vocab = Vocabulary::arithmetic());

struct CorpusConfig {
  std::size_t size = 10000;
  int min_difficulty = 1;
  int max_difficulty = 1;
  ArithmeticSpec arithmetic;
  std::uint64_t seed = 233;
};

/// Deterministic 80/10/10 split by instance index.
struct Corpus {
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> kd_prompts;
  std::vector<TokenSequence> eval;

  std::vector<TokenSequence> all() const;
};

Corpus generate_corpus(const CorpusConfig& cfg, const Vocabulary& vocab = Vocabulary::arithmetic());
Corpus split_corpus(std::vector<TokenSequence> instances);

/// Line format: space-separated symbols, a tab, then one tag letter per token.
void write_corpus(std::ostream& os, std::span<const TokenSequence> seqs, const Vocabulary& vocab);
std::vector<TokenSequence> read_corpus(std::istream& is, const Vocabulary& vocab);

std::string render(std::span<const TokenId> tokens, const Vocabulary& vocab);
std::vector<TokenId> parse_tokens(std::string_view text, const Vocabulary& vocab);

}  // namespace doge::corpus
