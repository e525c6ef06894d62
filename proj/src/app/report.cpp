#include "doge/app/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>

namespace doge::app {

using nlohmann::json;

namespace {

json metrics_json(const trainer::StepMetrics& m) {
  return {{"step", m.step},           {"lr", m.lr},         {"sft_loss", m.sft_loss}, {"adv_loss", m.adv_loss},
          {"total_loss", m.total_loss}, {"masked_kl", m.masked_kl}, {"lambda", m.lambda}};
}

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    if (nl > pos) out.emplace_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string metrics_jsonl(std::span<const trainer::StepMetrics> log) {
  std::string out;
  for (const auto& m : log) out += metrics_json(m).dump() + "\n";
  return out;
}

std::vector<trainer::StepMetrics> parse_metrics_jsonl(std::string_view text) {
  std::vector<trainer::StepMetrics> out;
  try {
    for (const auto& line : lines_of(text)) {
      const json j = json::parse(line);
      trainer::StepMetrics m;
      m.step = j.at("step").get<std::size_t>();
      m.lr = j.at("lr").get<double>();
      m.sft_loss = j.at("sft_loss").get<double>();
      m.adv_loss = j.at("adv_loss").get<double>();
      m.total_loss = j.at("total_loss").get<double>();
      m.masked_kl = j.at("masked_kl").get<double>();
      m.lambda = j.value("lambda", 0.0);
      out.push_back(m);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed metrics log: ") + e.what());
  }
  return out;
}

std::string kd_jsonl(const distill::DistillDataset& ds, const corpus::Vocabulary& vocab) {
  std::string out;
  for (const auto& p : ds.pairs) {
    json j;
    j["prompt"] = p.prompt.tokens;
    j["output"] = p.output.tokens;
    j["text"] = corpus::render(p.output.tokens, vocab);
    out += j.dump() + "\n";
  }
  return out;
}

distill::DistillDataset parse_kd_jsonl(std::string_view text) {
  distill::DistillDataset ds;
  try {
    for (const auto& line : lines_of(text)) {
      const json j = json::parse(line);
      distill::KdPair pair;
      pair.prompt.tokens = j.at("prompt").get<std::vector<corpus::TokenId>>();
      pair.output.tokens = j.at("output").get<std::vector<corpus::TokenId>>();
      if (pair.output.tokens.size() < pair.prompt.tokens.size() ||
          !std::equal(pair.prompt.tokens.begin(), pair.prompt.tokens.end(), pair.output.tokens.begin())) {
        throw FormatError("KD record output does not extend its prompt");
      }
      // Decoded outputs carry no segment labels past the prompt.
      pair.prompt.tags.assign(pair.prompt.tokens.size(), corpus::Segment::Prompt);
      pair.output.tags = pair.prompt.tags;
      pair.output.tags.resize(pair.output.tokens.size(), corpus::Segment::Untagged);
      ds.pairs.push_back(std::move(pair));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed KD dataset: ") + e.what());
  }
  return ds;
}

std::string eval_report_json(std::span<const distill::EvalReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    std::size_t hits = 0;
    for (auto c : r.correct) hits += c;
    arr.push_back({{"model_id", r.model_id}, {"accuracy", r.accuracy}, {"n_eval", r.n_eval}, {"correct", hits}});
  }
  return json{{"models", arr}}.dump(2) + "\n";
}

DefenseSummary summarize_defense(std::span<const trainer::StepMetrics> log, const trainer::TrainConfig& nominal,
                                 const trainer::TrainConfig& effective, double lambda_scale,
                                 std::optional<std::size_t> diverged_at, std::string message) {
  DefenseSummary s;
  s.status = diverged_at ? "diverged" : "completed";
  s.diverged_at = diverged_at;
  s.message = std::move(message);
  s.steps_logged = log.size();
  s.lambda_nominal = nominal.lambda;
  s.lambda_scale = lambda_scale;
  s.lambda_effective = effective.lambda;
  s.lr_nominal = nominal.peak_lr;
  s.lr_effective = effective.peak_lr;
  s.alpha = effective.alpha;

  if (!log.empty()) {
    s.kl_window = std::min<std::size_t>(25, std::max<std::size_t>(1, log.size() / 2));
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < s.kl_window; ++i) {
      a += log[i].masked_kl;
      b += log[log.size() - s.kl_window + i].masked_kl;
    }
    s.kl_first = a / static_cast<double>(s.kl_window);
    s.kl_last = b / static_cast<double>(s.kl_window);
    s.kl_increased = s.kl_last > s.kl_first;
    s.total_first = log.front().total_loss;
    s.total_last = log.back().total_loss;
    // Same scale the divergence guard uses.
    const double scale = std::max(std::abs(log.front().total_loss), log.front().sft_loss);
    double sft_max = log.front().sft_loss;
    for (std::size_t t = 1; t < log.size(); ++t) {
      s.max_total_jump = std::max(s.max_total_jump, std::abs(log[t].total_loss - log[t - 1].total_loss) / scale);
      sft_max = std::max(sft_max, log[t].sft_loss);
    }
    s.sft_growth = log.front().sft_loss > 0.0 ? sft_max / log.front().sft_loss : 0.0;
  }

  if (diverged_at) {
    s.stability = "guard_tripped";
    s.stability_reason = "divergence guard tripped at step " + std::to_string(*diverged_at);
  } else if (s.max_total_jump > kUnstableJump) {
    s.stability = "unstable";
    s.stability_reason = "total loss jumped by " + fmt(s.max_total_jump, 3) + "x its step-0 scale in one step";
  } else if (s.sft_growth > kUnstableSftGrowth) {
    s.stability = "unstable";
    s.stability_reason = "SFT loss grew to " + fmt(s.sft_growth, 2) + "x its step-0 value";
  } else {
    s.stability = "stable";
    s.stability_reason = "no guard trip, largest total-loss jump " + fmt(s.max_total_jump, 3) + ", SFT growth " +
                         fmt(s.sft_growth, 2) + "x";
  }
  return s;
}

namespace {

json defense_json(const DefenseSummary& s) {
  json j{{"status", s.status},
         {"message", s.message},
         {"steps_logged", s.steps_logged},
         {"lambda_nominal", s.lambda_nominal},
         {"lambda_scale", s.lambda_scale},
         {"lambda_effective", s.lambda_effective},
         {"lr_nominal", s.lr_nominal},
         {"lr_effective", s.lr_effective},
         {"alpha", s.alpha},
         {"kl_window", s.kl_window},
         {"kl_first", s.kl_first},
         {"kl_last", s.kl_last},
         {"kl_increased", s.kl_increased},
         {"total_first", s.total_first},
         {"total_last", s.total_last},
         {"max_total_jump", s.max_total_jump},
         {"sft_growth", s.sft_growth},
         {"stability", s.stability},
         {"stability_reason", s.stability_reason}};
  j["diverged_at"] = s.diverged_at ? json(*s.diverged_at) : json(nullptr);
  return j;
}

}  // namespace

std::string defense_summary_json(const DefenseSummary& s) { return defense_json(s).dump(2) + "\n"; }

std::string gap_report_json(const distill::DefenseGapReport& gap, const DefenseSummary& defense) {
  json per_seed = json::array();
  for (const auto& o : gap.per_seed) {
    per_seed.push_back({{"seed", o.seed},
                        {"student_from_sft_acc", o.student_from_sft_acc},
                        {"student_from_defensive_acc", o.student_from_defensive_acc}});
  }
  json j{{"teacher_sft_acc", gap.teacher_sft_acc},
         {"teacher_defensive_acc", gap.teacher_defensive_acc},
         {"student_from_sft_acc", gap.student_from_sft_acc},
         {"student_from_defensive_acc", gap.student_from_defensive_acc},
         {"teacher_delta", gap.teacher_delta},
         {"student_delta", gap.student_delta},
         {"seeds", gap.seeds},
         {"epsilon", gap.epsilon},
         {"teacher_preserved", gap.teacher_preserved()},
         {"per_seed", per_seed},
         {"defense", defense_json(defense)}};
  return j.dump(2) + "\n";
}

std::string bound_report_json(const theory::BoundReport& r) {
  json checks = json::array();
  for (const auto& c : r.checks) {
    checks.push_back({{"name", c.name},
                      {"trials", c.trials},
                      {"violations", c.violations},
                      {"worst_lhs", c.worst_lhs},
                      {"worst_rhs", c.worst_rhs},
                      {"min_slack", c.min_slack},
                      {"asserted", c.asserted}});
  }
  json j{{"G_hat", r.G_hat},     {"L_hat", r.L_hat},     {"D_bar", r.D_bar},
         {"threshold", r.threshold}, {"epsilon", r.epsilon}, {"alpha", r.alpha},
         {"asserted_violations", r.asserted_violations()}, {"checks", checks}};
  return j.dump(2) + "\n";
}

std::string emit_report(const distill::DefenseGapReport& gap, const theory::BoundReport& bounds,
                        const DefenseSummary& defense) {
  std::ostringstream os;
  os << "Defense gap over seeds";
  for (auto s : gap.seeds) os << ' ' << s;
  os << "\n";
  os << "  teacher accuracy: SFT " << fmt(gap.teacher_sft_acc) << ", defensive " << fmt(gap.teacher_defensive_acc)
     << " (delta " << fmt(gap.teacher_delta) << ")\n";
  os << "  teacher " << (gap.teacher_preserved() ? "preserved" : "NOT preserved") << " at epsilon "
     << fmt(gap.epsilon, 3) << "\n";
  os << "  student accuracy: from SFT teacher " << fmt(gap.student_from_sft_acc) << ", from defensive teacher "
     << fmt(gap.student_from_defensive_acc) << " (delta " << fmt(gap.student_delta) << ")\n";
  if (std::abs(gap.student_delta) < 1e-12) {
    os << "  no defense effect: students from both teachers score the same\n";
  } else if (gap.student_delta < 0.0) {
    os << "  student degraded by " << fmt(-gap.student_delta) << "\n";
  } else {
    os << "  student improved by " << fmt(gap.student_delta) << ": the defense did not mislead it\n";
  }

  os << "Defensive training\n";
  os << "  lambda " << sci(defense.lambda_effective) << " (nominal " << sci(defense.lambda_nominal) << " x "
     << sci(defense.lambda_scale) << "), peak lr " << sci(defense.lr_effective) << ", alpha "
     << fmt(defense.alpha, 2) << "\n";
  os << "  masked KL to proxies: first " << defense.kl_window << " steps " << fmt(defense.kl_first) << ", last "
     << defense.kl_window << " steps " << fmt(defense.kl_last) << (defense.kl_increased ? " (increased)" : " (did not increase)")
     << "\n";
  os << "  stability: " << defense.stability << " (" << defense.stability_reason << ")\n";

  os << "Bound checks: G_hat " << sci(bounds.G_hat) << ", L_hat " << sci(bounds.L_hat) << "\n";
  for (const auto& c : bounds.checks) {
    if (c.violations == 0) {
      os << "  ok        " << c.name << " (" << c.trials << " trials)\n";
    } else {
      os << "  VIOLATED  " << c.name << ": " << c.violations << " of " << c.trials << " trials, worst lhs "
         << sci(c.worst_lhs) << " > rhs " << sci(c.worst_rhs) << (c.asserted ? "" : " [reported, not asserted]")
         << "\n";
    }
  }
  return os.str();
}

}  // namespace doge::app
