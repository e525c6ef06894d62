#pragma once

// Flat `key = value` run configuration with a fixed schema. Precedence is
// defaults < file < overrides; unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "doge/corpus.hpp"
#include "doge/distill.hpp"
#include "doge/landscape.hpp"
#include "doge/model.hpp"
#include "doge/theory.hpp"
#include "doge/trainer.hpp"

namespace doge::app {

class Config {
 public:
  /// All schema keys at their defaults.
  Config();

  /// Throws ConfigError naming the key if it is not in the schema.
  void set(std::string_view key, std::string_view value);
  const std::string& get(std::string_view key) const;
  bool has_key(std::string_view key) const;

  /// Reads `key = value` lines; '#' starts a comment. Throws ConfigError with
  /// the line number on malformed lines or unknown keys.
  void load(std::istream& is, std::string_view source = "config");
  void load_file(const std::filesystem::path& path);
  /// "key=value".
  void apply_override(std::string_view assignment);

  std::int64_t get_int(std::string_view key) const;
  std::size_t get_count(std::string_view key) const;
  std::uint64_t get_u64(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::vector<std::string> get_list(std::string_view key) const;

  /// Every key in sorted order, one `key = value` per line.
  void write(std::ostream& os) const;
  const std::map<std::string, std::string, std::less<>>& values() const noexcept { return values_; }

  static const std::vector<std::pair<std::string, std::string>>& schema();

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

struct SftSettings {
  std::size_t steps = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  std::size_t check_every = 0;
  double plateau_tolerance = 0.0;
  std::size_t probe_size = 0;
};

struct ProxySettings {
  std::size_t count = 0;
  std::size_t hidden_dim = 0;
  std::size_t steps = 0;
};

struct DefenseSettings {
  trainer::TrainConfig train;  // nominal values exactly as configured
  double lr_scale = 1.0;
  double lambda_scale = 1.0;
  trainer::PositionCache::MaskSource mask = trainer::PositionCache::MaskSource::Delimiters;
  bool alg1_shared_temp = false;

  /// The configuration actually run: lr and lambda multiplied by their scales.
  trainer::TrainConfig effective() const;
};

struct BoundsSettings {
  theory::SuiteConfig suite;
  std::size_t instance_positions = 0;
};

/// Typed view of a Config. Throws ConfigError naming the key on bad values.
struct PipelineConfig {
  std::uint64_t seed = 233;
  corpus::CorpusConfig corpus;
  model::BaseConfig base;  // shared generator settings; seed and width set per model
  std::size_t teacher_hidden_dim = 64;
  SftSettings sft;
  ProxySettings proxy;
  DefenseSettings defense;
  distill::StudentTemplate student;
  distill::DecodeTemplate kd;
  std::vector<std::uint64_t> gap_seeds;
  double gap_epsilon = 0.02;
  std::string distill_teacher;
  std::size_t eval_max_new_tokens = 32;
  BoundsSettings bounds;
  landscape::GridConfig grid;
  std::size_t landscape_batch = 128;
  std::string landscape_teacher;
  std::vector<double> sweep_lambda_scales;

  static PipelineConfig resolve(const Config& cfg);
};

}  // namespace doge::app
