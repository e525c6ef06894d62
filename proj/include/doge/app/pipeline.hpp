#pragma once

// Experiment stages and the subcommands built from them. Every stage is a
// plain function so tests can drive the pipeline in-process; run_command adds
// file handling and a manifest.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "doge/app/config.hpp"
#include "doge/app/manifest.hpp"
#include "doge/app/report.hpp"
#include "doge/distill.hpp"
#include "doge/landscape.hpp"
#include "doge/theory.hpp"

namespace doge::app {

/// Base network settings for a model whose base seed derives from the run
/// seed and `label`.
model::BaseConfig derived_base(const PipelineConfig& cfg, std::size_t hidden_dim, std::string_view label);

model::ModelBundle fresh_teacher(const PipelineConfig& cfg);
model::ModelBundle fresh_proxy(const PipelineConfig& cfg, std::size_t index);

struct SftOutcome {
  model::ModelBundle teacher;
  std::vector<model::ModelBundle> proxies;
  std::vector<trainer::StepMetrics> teacher_log;
  std::size_t teacher_steps = 0;  // may stop early on a plateau
  std::vector<double> probe_history;
};

/// Ground-truth SFT of the teacher (stopping early once probe accuracy on the
/// eval split stops improving by sft.plateau_tolerance) and of every proxy.
SftOutcome run_sft(const PipelineConfig& cfg, const corpus::Corpus& data);

objective::AdvConfig adv_config(const PipelineConfig& cfg, std::vector<model::ModelBundle> proxies);

struct DefenseOutcome {
  model::ModelBundle teacher;  // the SFT teacher when training diverged
  std::vector<trainer::StepMetrics> log;
  DefenseSummary summary;
  bool diverged() const { return summary.diverged_at.has_value(); }
};

/// Defensive fine-tuning with the effective (scaled) lr and lambda. A guard
/// trip is reported in the outcome, never thrown.
DefenseOutcome run_defense(const PipelineConfig& cfg, const corpus::Corpus& data, const model::ModelBundle& teacher,
                           const std::vector<model::ModelBundle>& proxies);

/// Bound suites, plus checks on an instance built from real teachers when
/// given: a fresh target student on KD-prompt contexts, p the defensive
/// teacher's distributions and q the SFT teacher's.
struct TeacherPair {
  const model::ModelBundle* sft = nullptr;
  const model::ModelBundle* defensive = nullptr;
  const corpus::Corpus* data = nullptr;
};
theory::BoundReport run_bounds(const PipelineConfig& cfg, std::optional<TeacherPair> instance = std::nullopt);

landscape::LandscapeGrid run_landscape(const PipelineConfig& cfg, const corpus::Corpus& data,
                                       const model::ModelBundle& teacher,
                                       const std::vector<model::ModelBundle>& proxies);

/// Serialized checkpoint bytes and the reverse, rebuilding the frozen base from
/// the shared base settings and the seed and width stored in the header.
std::string checkpoint_bytes(const model::ModelBundle& bundle);
model::ModelBundle bundle_from_checkpoint(const PipelineConfig& cfg, std::string_view bytes, model::Role role,
                                          std::string id);

enum ExitCode : int {
  kOk = 0,
  kFailed = 1,       // verify-bounds violations, rerun mismatch
  kUsage = 2,        // config or input errors
  kDiverged = 3,     // divergence guard tripped
};

const std::vector<std::string>& command_names();

/// Runs one subcommand in `out`, writes `manifest_<command>.json` and prints a
/// one-line summary (plus errors) to `log`. Returns the exit status.
int run_command(const std::string& command, const Config& cfg, const std::filesystem::path& out, std::ostream& log);

struct RerunResult {
  int exit_code = 0;
  int recorded_exit_code = 0;
  std::vector<std::string> mismatched;  // outputs whose hashes differ
  std::vector<std::string> missing;     // outputs not produced again
  bool identical() const { return exit_code == recorded_exit_code && mismatched.empty() && missing.empty(); }
};

/// Copies the recorded inputs (verifying their hashes) into `out`, runs the
/// recorded command with the recorded config and compares output hashes.
RerunResult rerun_from_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out,
                                std::ostream& log);

}  // namespace doge::app
