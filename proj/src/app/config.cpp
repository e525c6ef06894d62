#include "doge/app/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace doge::app {

namespace {

// Key, default. Defense keys mirror TrainConfig field names.
const std::vector<std::pair<std::string, std::string>> kSchema = {
    {"seed", "233"},

    {"corpus.size", "10000"},
    {"corpus.min_difficulty", "1"},
    {"corpus.max_difficulty", "1"},
    {"corpus.moduli", "4"},
    {"corpus.operators", "+-"},

    {"base.depth", "2"},
    {"base.context_window", "64"},
    {"base.embed_dim", "16"},
    {"base.window", "8"},
    {"base.window_gain", "2"},
    {"base.window_bias_scale", "0.5"},
    {"base.mix_gain", "1.5"},
    {"base.recurrent_radius", "0.7"},

    {"teacher.hidden_dim", "64"},

    {"sft.steps", "2000"},
    {"sft.batch_size", "128"},
    {"sft.lr", "1e-2"},
    {"sft.check_every", "500"},
    {"sft.plateau_tolerance", "0"},
    {"sft.probe_size", "200"},

    {"proxy.count", "2"},
    {"proxy.hidden_dim", "32"},
    {"proxy.steps", "1500"},

    {"defense.steps", "100"},
    {"defense.batch_size", "128"},
    {"defense.peak_lr", "5e-5"},
    {"defense.lambda", "3e-5"},
    {"defense.alpha", "2"},
    {"defense.warmup_ratio", "0.1"},
    {"defense.weight_decay", "0.01"},
    {"defense.beta1", "0.9"},
    {"defense.beta2", "0.999"},
    {"defense.adam_eps", "1e-8"},
    {"defense.divergence_factor", "10"},
    {"defense.lr_scale", "200"},
    {"defense.lambda_scale", "5000"},
    {"defense.mask", "delimiters"},
    {"defense.alg1_shared_temp", "false"},

    {"student.hidden_dim", "32"},
    {"student.head_hidden", "64"},
    {"student.epochs", "2"},
    {"student.batch_size", "8"},
    {"student.lr", "3e-2"},
    {"student.warmup_ratio", "0.1"},
    {"student.weight_decay", "0.01"},

    {"kd.strategy", "topk"},
    {"kd.k", "5"},
    {"kd.temp", "1"},
    {"kd.max_new_tokens", "32"},

    {"distill.teacher", "defensive"},
    {"eval.max_new_tokens", "32"},

    {"gap.seeds", "233,234,235"},
    {"gap.epsilon", "0.02"},

    {"theory.epsilon", "1e-3"},
    {"theory.alpha", "2"},
    {"theory.lemma_trials", "1000"},
    {"theory.step_trials", "500"},
    {"theory.range_trials", "10000"},
    {"theory.vocab", "6"},
    {"theory.dim", "4"},
    {"theory.contexts", "3"},
    {"theory.mlp_hidden", "3"},
    {"theory.eta_fraction", "0.1"},
    {"theory.instance_positions", "48"},

    {"landscape.grid_size", "41"},
    {"landscape.radius", "1"},
    {"landscape.seed_x", "1"},
    {"landscape.seed_y", "2"},
    {"landscape.batch_size", "128"},
    {"landscape.teacher", "defensive"},

    {"sweep.lambda_scales", "0,2500,5000,7500,10000"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, const std::string& value, std::string_view want) {
  throw ConfigError("config key '" + std::string(key) + "': expected " + std::string(want) + ", got '" + value + "'");
}

template <class T>
bool parse_number(const std::string& text, T& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

Config::Config() {
  for (const auto& [k, v] : kSchema) values_.emplace(k, v);
}

const std::vector<std::pair<std::string, std::string>>& Config::schema() { return kSchema; }

bool Config::has_key(std::string_view key) const { return values_.find(key) != values_.end(); }

void Config::set(std::string_view key, std::string_view value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second = trim(value);
}

const std::string& Config::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

void Config::load(std::istream& is, std::string_view source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(source) + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (!has_key(key)) {
      throw ConfigError(std::string(source) + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    }
    set(key, std::string_view(body).substr(eq + 1));
  }
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  load(in, path.string());
}

void Config::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::int64_t Config::get_int(std::string_view key) const {
  const auto& v = get(key);
  std::int64_t out = 0;
  if (!parse_number(v, out)) bad_value(key, v, "an integer");
  return out;
}

std::size_t Config::get_count(std::string_view key) const {
  const auto& v = get(key);
  std::size_t out = 0;
  if (!parse_number(v, out)) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t Config::get_u64(std::string_view key) const {
  const auto& v = get(key);
  std::uint64_t out = 0;
  if (!parse_number(v, out)) bad_value(key, v, "an unsigned 64-bit integer");
  return out;
}

double Config::get_double(std::string_view key) const {
  const auto& v = get(key);
  double out = 0.0;
  if (!parse_number(v, out) || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool Config::get_bool(std::string_view key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> Config::get_list(std::string_view key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void Config::write(std::ostream& os) const {
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
}

trainer::TrainConfig DefenseSettings::effective() const {
  trainer::TrainConfig t = train;
  t.peak_lr = train.peak_lr * lr_scale;
  t.lambda = train.lambda * lambda_scale;
  return t;
}

namespace {

std::vector<double> double_list(const Config& c, std::string_view key) {
  std::vector<double> out;
  for (const auto& item : c.get_list(key)) {
    double v = 0.0;
    if (!parse_number(item, v) || !std::isfinite(v)) bad_value(key, item, "a list of numbers");
    out.push_back(v);
  }
  return out;
}

std::vector<std::uint64_t> u64_list(const Config& c, std::string_view key) {
  std::vector<std::uint64_t> out;
  for (const auto& item : c.get_list(key)) {
    std::uint64_t v = 0;
    if (!parse_number(item, v)) bad_value(key, item, "a list of unsigned integers");
    out.push_back(v);
  }
  return out;
}

void require(bool ok, std::string_view key, const std::string& why) {
  if (!ok) throw ConfigError("config key '" + std::string(key) + "': " + why);
}

}  // namespace

PipelineConfig PipelineConfig::resolve(const Config& c) {
  PipelineConfig p;
  p.seed = c.get_u64("seed");

  p.corpus.size = c.get_count("corpus.size");
  p.corpus.min_difficulty = static_cast<int>(c.get_int("corpus.min_difficulty"));
  p.corpus.max_difficulty = static_cast<int>(c.get_int("corpus.max_difficulty"));
  p.corpus.seed = p.seed;
  p.corpus.arithmetic.moduli.clear();
  for (const auto& m : c.get_list("corpus.moduli")) {
    int v = 0;
    if (!parse_number(m, v) || v < 2 || v > 9) bad_value("corpus.moduli", m, "moduli in [2, 9]");
    p.corpus.arithmetic.moduli.push_back(v);
  }
  require(!p.corpus.arithmetic.moduli.empty(), "corpus.moduli", "empty");
  try {
    p.corpus.arithmetic.operators = corpus::parse_operators(c.get("corpus.operators"));
  } catch (const std::exception& e) {
    throw ConfigError("config key 'corpus.operators': " + std::string(e.what()));
  }
  require(p.corpus.min_difficulty >= 1 && p.corpus.max_difficulty <= 4 &&
              p.corpus.min_difficulty <= p.corpus.max_difficulty,
          "corpus.min_difficulty", "difficulties must satisfy 1 <= min <= max <= 4");
  require(p.corpus.size >= 10, "corpus.size", "need at least 10 instances");

  p.base.depth = c.get_count("base.depth");
  p.base.context_window = c.get_count("base.context_window");
  p.base.embed_dim = c.get_count("base.embed_dim");
  p.base.window = c.get_count("base.window");
  p.base.window_gain = c.get_double("base.window_gain");
  p.base.window_bias_scale = c.get_double("base.window_bias_scale");
  p.base.mix_gain = c.get_double("base.mix_gain");
  p.base.recurrent_radius = c.get_double("base.recurrent_radius");
  require(p.base.depth >= 1, "base.depth", "must be at least 1");
  require(p.base.window >= 1 && p.base.embed_dim >= 1, "base.window", "window and embed_dim must be positive");
  require(p.base.context_window >= 16, "base.context_window", "must be at least 16");

  p.teacher_hidden_dim = c.get_count("teacher.hidden_dim");
  require(p.teacher_hidden_dim >= 1, "teacher.hidden_dim", "must be positive");

  p.sft.steps = c.get_count("sft.steps");
  p.sft.batch_size = c.get_count("sft.batch_size");
  p.sft.lr = c.get_double("sft.lr");
  p.sft.check_every = c.get_count("sft.check_every");
  p.sft.plateau_tolerance = c.get_double("sft.plateau_tolerance");
  p.sft.probe_size = c.get_count("sft.probe_size");
  require(p.sft.batch_size >= 1, "sft.batch_size", "must be positive");
  require(p.sft.lr > 0.0, "sft.lr", "must be positive");

  p.proxy.count = c.get_count("proxy.count");
  p.proxy.hidden_dim = c.get_count("proxy.hidden_dim");
  p.proxy.steps = c.get_count("proxy.steps");
  require(p.proxy.hidden_dim >= 1, "proxy.hidden_dim", "must be positive");

  auto& t = p.defense.train;
  t.steps = c.get_count("defense.steps");
  t.batch_size = c.get_count("defense.batch_size");
  t.peak_lr = c.get_double("defense.peak_lr");
  t.lambda = c.get_double("defense.lambda");
  t.alpha = c.get_double("defense.alpha");
  t.warmup_ratio = c.get_double("defense.warmup_ratio");
  t.weight_decay = c.get_double("defense.weight_decay");
  t.beta1 = c.get_double("defense.beta1");
  t.beta2 = c.get_double("defense.beta2");
  t.adam_eps = c.get_double("defense.adam_eps");
  t.divergence_factor = c.get_double("defense.divergence_factor");
  t.seed = p.seed;
  p.defense.lr_scale = c.get_double("defense.lr_scale");
  p.defense.lambda_scale = c.get_double("defense.lambda_scale");
  require(p.defense.lr_scale > 0.0, "defense.lr_scale", "must be positive");
  require(p.defense.lambda_scale >= 0.0, "defense.lambda_scale", "must be non-negative");
  require(t.lambda >= 0.0, "defense.lambda", "must be non-negative");
  const auto& mask = c.get("defense.mask");
  if (mask == "delimiters") p.defense.mask = trainer::PositionCache::MaskSource::Delimiters;
  else if (mask == "regex") p.defense.mask = trainer::PositionCache::MaskSource::Regex;
  else if (mask == "tags") p.defense.mask = trainer::PositionCache::MaskSource::Tags;
  else bad_value("defense.mask", mask, "delimiters, regex or tags");
  p.defense.alg1_shared_temp = c.get_bool("defense.alg1_shared_temp");
  try {
    trainer::validate(p.defense.effective());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("defense: ") + e.what());
  }
  require(p.defense.effective().lambda == 0.0 || p.proxy.count > 0, "proxy.count",
          "lambda > 0 needs at least one proxy");

  p.student.base = p.base;
  p.student.base.hidden_dim = c.get_count("student.hidden_dim");
  p.student.head_hidden = c.get_count("student.head_hidden");
  p.student.train.epochs = c.get_count("student.epochs");
  p.student.train.batch_size = c.get_count("student.batch_size");
  p.student.train.lr = c.get_double("student.lr");
  p.student.train.warmup_ratio = c.get_double("student.warmup_ratio");
  p.student.train.weight_decay = c.get_double("student.weight_decay");
  require(p.student.base.hidden_dim >= 1, "student.hidden_dim", "must be positive");
  require(p.student.train.batch_size >= 1, "student.batch_size", "must be positive");
  require(p.student.train.lr > 0.0, "student.lr", "must be positive");

  const auto& strat = c.get("kd.strategy");
  if (strat == "topk") p.kd.kind = model::DecodingStrategy::Kind::TopK;
  else if (strat == "greedy") p.kd.kind = model::DecodingStrategy::Kind::Greedy;
  else bad_value("kd.strategy", strat, "topk or greedy");
  p.kd.k = c.get_count("kd.k");
  p.kd.sample_temp = c.get_double("kd.temp");
  p.kd.max_new_tokens = c.get_count("kd.max_new_tokens");
  require(p.kd.k >= 1, "kd.k", "must be positive");
  require(p.kd.sample_temp > 0.0, "kd.temp", "must be positive");

  p.distill_teacher = c.get("distill.teacher");
  require(p.distill_teacher == "sft" || p.distill_teacher == "defensive", "distill.teacher",
          "must be sft or defensive");
  p.eval_max_new_tokens = c.get_count("eval.max_new_tokens");

  p.gap_seeds = u64_list(c, "gap.seeds");
  require(!p.gap_seeds.empty(), "gap.seeds", "empty");
  p.gap_epsilon = c.get_double("gap.epsilon");
  require(p.gap_epsilon >= 0.0, "gap.epsilon", "must be non-negative");

  auto& s = p.bounds.suite;
  s.seed = p.seed;
  s.smoothing.epsilon = c.get_double("theory.epsilon");
  s.smoothing.alpha = c.get_double("theory.alpha");
  s.lemma_trials = c.get_count("theory.lemma_trials");
  s.step_trials = c.get_count("theory.step_trials");
  s.range_trials = c.get_count("theory.range_trials");
  s.vocab = c.get_count("theory.vocab");
  s.dim = c.get_count("theory.dim");
  s.contexts = c.get_count("theory.contexts");
  s.mlp_hidden = c.get_count("theory.mlp_hidden");
  s.eta_fraction = c.get_double("theory.eta_fraction");
  p.bounds.instance_positions = c.get_count("theory.instance_positions");
  try {
    theory::validate(s.smoothing);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config key 'theory.epsilon': ") + e.what());
  }
  require(s.vocab >= 2 && s.dim >= 1 && s.contexts >= 1, "theory.vocab", "need vocab >= 2, dim and contexts >= 1");
  require(s.eta_fraction > 0.0, "theory.eta_fraction", "must be positive");

  p.grid.grid_size = c.get_count("landscape.grid_size");
  p.grid.radius = c.get_double("landscape.radius");
  p.grid.seed_x = c.get_u64("landscape.seed_x");
  p.grid.seed_y = c.get_u64("landscape.seed_y");
  p.landscape_batch = c.get_count("landscape.batch_size");
  p.landscape_teacher = c.get("landscape.teacher");
  require(p.grid.grid_size % 2 == 1, "landscape.grid_size", "must be odd");
  require(p.grid.radius > 0.0, "landscape.radius", "must be positive");
  require(p.landscape_batch >= 1, "landscape.batch_size", "must be positive");
  require(p.landscape_teacher == "sft" || p.landscape_teacher == "defensive", "landscape.teacher",
          "must be sft or defensive");

  p.sweep_lambda_scales = double_list(c, "sweep.lambda_scales");
  for (double v : p.sweep_lambda_scales) require(v >= 0.0, "sweep.lambda_scales", "entries must be non-negative");
  return p;
}

}  // namespace doge::app
