#pragma once

// Artifact serialization (JSON, JSONL) and the human-readable run summary.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doge/distill.hpp"
#include "doge/theory.hpp"
#include "doge/trainer.hpp"

namespace doge::app {

std::string metrics_jsonl(std::span<const trainer::StepMetrics> log);
std::vector<trainer::StepMetrics> parse_metrics_jsonl(std::string_view text);

/// One record per pair: prompt and output token ids plus rendered text.
std::string kd_jsonl(const distill::DistillDataset& ds, const corpus::Vocabulary& vocab);
distill::DistillDataset parse_kd_jsonl(std::string_view text);

std::string eval_report_json(std::span<const distill::EvalReport> reports);

/// How a defensive run behaved, derived from its step log.
struct DefenseSummary {
  std::string status;  // "completed" or "diverged"
  std::optional<std::size_t> diverged_at;
  std::string message;
  std::size_t steps_logged = 0;
  double lambda_nominal = 0.0;
  double lambda_scale = 1.0;
  double lambda_effective = 0.0;
  double lr_nominal = 0.0;
  double lr_effective = 0.0;
  double alpha = 0.0;
  double kl_first = 0.0;  // mean masked KL over the first window
  double kl_last = 0.0;   // and the last window
  std::size_t kl_window = 0;
  bool kl_increased = false;
  double total_first = 0.0;
  double total_last = 0.0;
  double max_total_jump = 0.0;  // largest |total_t - total_{t-1}| over the step-0 scale
  double sft_growth = 0.0;      // max_t sft_t / sft_0
  // "guard_tripped", "unstable" or "stable"
  std::string stability;
  std::string stability_reason;
};

inline constexpr double kUnstableJump = 0.5;
inline constexpr double kUnstableSftGrowth = 2.0;

DefenseSummary summarize_defense(std::span<const trainer::StepMetrics> log, const trainer::TrainConfig& nominal,
                                 const trainer::TrainConfig& effective, double lambda_scale,
                                 std::optional<std::size_t> diverged_at, std::string message);

std::string defense_summary_json(const DefenseSummary& s);
std::string gap_report_json(const distill::DefenseGapReport& gap, const DefenseSummary& defense);
std::string bound_report_json(const theory::BoundReport& report);

/// Teacher preservation against epsilon, student degradation, lambda used and
/// the verdict of every bound check.
std::string emit_report(const distill::DefenseGapReport& gap, const theory::BoundReport& bounds,
                        const DefenseSummary& defense);

}  // namespace doge::app
