#include "doge/corpus.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace doge::corpus {

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty() || symbols_.size() > 64) throw InvalidArgument("Vocabulary: size must be in [1, 64]");
  std::unordered_set<std::string> seen;
  for (const auto& s : symbols_) {
    if (s.empty() || s.find_first_of(" \t\n") != std::string::npos) {
      throw InvalidArgument("Vocabulary: symbols must be non-empty and whitespace-free");
    }
    if (!seen.insert(s).second) throw InvalidArgument("Vocabulary: duplicate symbol '" + s + "'");
  }
}

const Vocabulary& Vocabulary::arithmetic() {
  static const Vocabulary v([] {
    std::vector<std::string> s{"<pad>", "<end>"};
    for (int d = 0; d <= 9; ++d) s.push_back(std::to_string(d));
    for (const char* x : {"+", "-", "×", "=", "Q", ":", "mod", "<think>", "</think>", "Answer:"}) s.emplace_back(x);
    return s;
  }());
  return v;
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw InvalidArgument("Vocabulary: token id " + std::to_string(id) + " out of range");
  }
  return symbols_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view symbol) const {
  const auto it = std::find(symbols_.begin(), symbols_.end(), symbol);
  if (it == symbols_.end()) throw InvalidArgument("Vocabulary: unknown symbol '" + std::string(symbol) + "'");
  return static_cast<TokenId>(it - symbols_.begin());
}

bool Vocabulary::contains(std::string_view symbol) const {
  return std::find(symbols_.begin(), symbols_.end(), symbol) != symbols_.end();
}

char segment_code(Segment s) {
  switch (s) {
    case Segment::Prompt: return 'P';
    case Segment::Thinking: return 'T';
    case Segment::Answer: return 'A';
    case Segment::Pad: return 'X';
    case Segment::Untagged: return 'U';
  }
  return '?';
}

Segment segment_from_code(char c) {
  switch (c) {
    case 'P': return Segment::Prompt;
    case 'T': return Segment::Thinking;
    case 'A': return Segment::Answer;
    case 'X': return Segment::Pad;
    case 'U': return Segment::Untagged;
    default: throw FormatError(std::string("unknown segment code '") + c + "'");
  }
}

std::size_t TokenSequence::prompt_length() const {
  std::size_t n = 0;
  while (n < tags.size() && tags[n] == Segment::Prompt) ++n;
  return n;
}

void validate(const TokenSequence& seq) {
  if (seq.tokens.size() != seq.tags.size()) throw MalformedSequence("tokens and tags differ in length");
  auto rank = [](Segment s) {
    switch (s) {
      case Segment::Prompt: return 0;
      case Segment::Thinking:
      case Segment::Untagged: return 1;
      case Segment::Answer: return 2;
      case Segment::Pad: return 3;
    }
    return 4;
  };
  bool labelled = false;
  bool untagged = false;
  int prev = 0;
  for (Segment s : seq.tags) {
    const int r = rank(s);
    if (r < prev) throw MalformedSequence("segment tags out of order");
    prev = r;
    labelled |= (s == Segment::Thinking || s == Segment::Answer);
    untagged |= (s == Segment::Untagged);
  }
  if (labelled && untagged) throw MalformedSequence("labelled and untagged segments mixed");
}

TokenSequence prompt_of(const TokenSequence& seq) {
  const std::size_t n = seq.prompt_length();
  return {{seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(n)},
          {seq.tags.begin(), seq.tags.begin() + static_cast<std::ptrdiff_t>(n)}};
}

std::optional<std::vector<TokenId>> answer_tokens(const TokenSequence& seq, const Vocabulary& vocab) {
  const TokenId marker = vocab.answer_marker();
  const TokenId end = vocab.end();
  std::size_t i = seq.prompt_length();
  while (i < seq.size() && seq.tokens[i] != marker) ++i;
  if (i == seq.size()) return std::nullopt;
  std::vector<TokenId> out;
  for (++i; i < seq.size() && seq.tokens[i] != end && seq.tokens[i] != vocab.pad(); ++i) out.push_back(seq.tokens[i]);
  return out;
}

SegmentMask mask_by_delimiters(const TokenSequence& seq, const Vocabulary& vocab) {
  const TokenId open = vocab.think_open();
  const TokenId close = vocab.think_close();
  std::optional<std::size_t> first_open, first_close;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.tokens[i] == open) {
      if (first_open) throw MalformedSequence("repeated <think> delimiter");
      first_open = i;
    } else if (seq.tokens[i] == close) {
      if (first_close) throw MalformedSequence("repeated </think> delimiter");
      first_close = i;
    }
  }
  if (!first_open || !first_close || *first_close < *first_open) {
    throw MalformedSequence("unmatched <think>/</think> delimiters");
  }
  SegmentMask m{std::vector<std::uint8_t>(seq.size(), 0)};
  for (std::size_t i = *first_open; i <= *first_close; ++i) m.mask[i] = 1;
  return m;
}

SegmentMask mask_by_regex(const TokenSequence& seq, TokenId answer_marker) {
  const std::size_t start = seq.prompt_length();
  std::size_t marker = start;
  while (marker < seq.size() && seq.tokens[marker] != answer_marker) ++marker;
  if (marker == seq.size()) throw MarkerNotFound("answer marker not found after the prompt");
  SegmentMask m{std::vector<std::uint8_t>(seq.size(), 0)};
  for (std::size_t i = start; i < marker; ++i) m.mask[i] = 1;
  return m;
}

SegmentMask mask_from_tags(const TokenSequence& seq) {
  SegmentMask m{std::vector<std::uint8_t>(seq.size(), 0)};
  for (std::size_t i = 0; i < seq.size(); ++i) m.mask[i] = seq.tags[i] == Segment::Thinking ? 1 : 0;
  return m;
}

std::vector<Op> parse_operators(std::string_view text) {
  std::vector<Op> ops;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '+') ops.push_back(Op::Add);
    else if (c == '-') ops.push_back(Op::Sub);
    else if (c == '*' || c == 'x') ops.push_back(Op::Mul);
    else if (text.substr(i, 2) == "\xC3\x97") {  // UTF-8 '×'
      ops.push_back(Op::Mul);
      ++i;
    } else if (c != ',' && c != ' ') {
      throw InvalidArgument(std::string("unknown operator '") + c + "'");
    }
  }
  if (ops.empty()) throw InvalidArgument("operator list is empty");
  return ops;
}

std::string format_operators(std::span<const Op> ops) {
  std::string s;
  for (Op o : ops) s += static_cast<char>(o);
  return s;
}

namespace {

const char* op_symbol(Op op) {
  switch (op) {
    case Op::Add: return "+";
    case Op::Sub: return "-";
    case Op::Mul: return "×";
  }
  return "?";
}

int apply_mod(int a, Op op, int b, int m) {
  int r = 0;
  switch (op) {
    case Op::Add: r = a + b; break;
    case Op::Sub: r = a - b; break;
    case Op::Mul: r = a * b; break;
  }
  return ((r % m) + m) % m;
}

void push_number(std::vector<TokenId>& toks, int n, const Vocabulary& vocab) {
  for (char c : std::to_string(n)) toks.push_back(vocab.id(std::string(1, c)));
}

}  // namespace

TokenSequence generate_instance(num::SeededRng& rng, int difficulty, const ArithmeticSpec& spec,
                                const Vocabulary& vocab) {
  if (difficulty < 1 || difficulty > 4) throw InvalidArgument("generate_instance: difficulty must be in [1, 4]");
  if (spec.moduli.empty() || spec.operators.empty()) throw InvalidArgument("generate_instance: empty arithmetic spec");
  const int m = spec.moduli[rng.uniform_index(spec.moduli.size())];
  if (m < 2) throw InvalidArgument("generate_instance: modulus must be >= 2");

  std::vector<int> operands;
  std::vector<Op> ops;
  operands.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(m))));
  for (int k = 0; k < difficulty; ++k) {
    ops.push_back(spec.operators[rng.uniform_index(spec.operators.size())]);
    operands.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(m))));
  }

  TokenSequence seq;
  auto emit = [&](Segment tag, auto&& body) {
    const std::size_t before = seq.tokens.size();
    body();
    seq.tags.insert(seq.tags.end(), seq.tokens.size() - before, tag);
  };

  emit(Segment::Prompt, [&] {
    seq.tokens.push_back(vocab.id("Q"));
    seq.tokens.push_back(vocab.id(":"));
    push_number(seq.tokens, operands[0], vocab);
    for (int k = 0; k < difficulty; ++k) {
      seq.tokens.push_back(vocab.id(op_symbol(ops[k])));
      push_number(seq.tokens, operands[k + 1], vocab);
    }
    seq.tokens.push_back(vocab.id("mod"));
    push_number(seq.tokens, m, vocab);
    seq.tokens.push_back(vocab.id("="));
  });

  int acc = operands[0];
  emit(Segment::Thinking, [&] {
    seq.tokens.push_back(vocab.think_open());
    push_number(seq.tokens, acc, vocab);
    for (int k = 0; k < difficulty; ++k) {
      acc = apply_mod(acc, ops[k], operands[k + 1], m);
      seq.tokens.push_back(vocab.id(op_symbol(ops[k])));
      push_number(seq.tokens, operands[k + 1], vocab);
      seq.tokens.push_back(vocab.id("="));
      push_number(seq.tokens, acc, vocab);
    }
    seq.tokens.push_back(vocab.think_close());
  });

  emit(Segment::Answer, [&] {
    seq.tokens.push_back(vocab.answer_marker());
    push_number(seq.tokens, acc, vocab);
    seq.tokens.push_back(vocab.end());
  });
  return seq;
}

std::vector<TokenSequence> Corpus::all() const {
  std::vector<TokenSequence> out = train;
  out.insert(out.end(), kd_prompts.begin(), kd_prompts.end());
  out.insert(out.end(), eval.begin(), eval.end());
  return out;
}

Corpus split_corpus(std::vector<TokenSequence> instances) {
  const std::size_t n = instances.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_kd = n / 10;
  Corpus c;
  auto it = std::make_move_iterator(instances.begin());
  c.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  c.kd_prompts.assign(it + static_cast<std::ptrdiff_t>(n_train), it + static_cast<std::ptrdiff_t>(n_train + n_kd));
  c.eval.assign(it + static_cast<std::ptrdiff_t>(n_train + n_kd), std::make_move_iterator(instances.end()));
  return c;
}

Corpus generate_corpus(const CorpusConfig& cfg, const Vocabulary& vocab) {
  if (cfg.min_difficulty > cfg.max_difficulty) throw InvalidArgument("corpus: min_difficulty > max_difficulty");
  if (cfg.size < 10) throw InvalidArgument("corpus: need at least 10 instances");
  const num::SeededRng root(cfg.seed, "corpus");
  std::vector<TokenSequence> instances;
  instances.reserve(cfg.size);
  const auto span = static_cast<std::uint64_t>(cfg.max_difficulty - cfg.min_difficulty + 1);
  for (std::size_t i = 0; i < cfg.size; ++i) {
    num::SeededRng rng = root.split("instance/" + std::to_string(i));
    const int diff = cfg.min_difficulty + static_cast<int>(rng.uniform_index(span));
    instances.push_back(generate_instance(rng, diff, cfg.arithmetic, vocab));
  }
  return split_corpus(std::move(instances));
}

std::string render(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.symbol(tokens[i]);
  }
  return out;
}

std::vector<TokenId> parse_tokens(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> toks;
  std::istringstream is{std::string(text)};
  std::string sym;
  while (is >> sym) toks.push_back(vocab.id(sym));
  return toks;
}

void write_corpus(std::ostream& os, std::span<const TokenSequence> seqs, const Vocabulary& vocab) {
  for (const auto& s : seqs) {
    os << render(s.tokens, vocab) << '\t';
    for (Segment t : s.tags) os << segment_code(t);
    os << '\n';
  }
}

std::vector<TokenSequence> read_corpus(std::istream& is, const Vocabulary& vocab) {
  std::vector<TokenSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("corpus line " + std::to_string(lineno) + ": missing tag field");
    TokenSequence s;
    s.tokens = parse_tokens(std::string_view(line).substr(0, tab), vocab);
    for (char c : std::string_view(line).substr(tab + 1)) s.tags.push_back(segment_from_code(c));
    if (s.tokens.size() != s.tags.size()) {
      throw FormatError("corpus line " + std::to_string(lineno) + ": token/tag length mismatch");
    }
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace doge::corpus
