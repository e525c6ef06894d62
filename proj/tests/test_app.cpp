#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "doge/app/pipeline.hpp"

using namespace doge;
using namespace doge::app;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("doge_test_app_" + name);
  fs::remove_all(p);
  return p;
}

// Small enough that the whole pipeline runs in seconds.
Config small_config() {
  Config c;
  for (const char* kv : {"corpus.size=200", "sft.steps=80", "sft.batch_size=32", "proxy.steps=40",
                         "defense.steps=10", "defense.batch_size=32", "theory.lemma_trials=20",
                         "theory.step_trials=10", "theory.range_trials=100", "gap.seeds=233", "student.epochs=1",
                         "landscape.grid_size=3", "landscape.batch_size=16", "sweep.lambda_scales=0,5000"}) {
    c.apply_override(kv);
  }
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

trainer::StepMetrics step(std::size_t i, double sft, double kl, double lambda) {
  return {i, 1e-2, sft, -kl, sft - lambda * kl, kl, lambda};
}

}  // namespace

TEST(ConfigFile, DefaultsFileAndOverridePrecedence) {
  Config c;
  EXPECT_EQ(c.get("seed"), "233");
  EXPECT_EQ(c.get_double("defense.alpha"), 2.0);
  std::istringstream file("# comment\nseed = 7\n\ndefense.steps = 40  # trailing\n");
  c.load(file);
  EXPECT_EQ(c.get_u64("seed"), 7u);
  EXPECT_EQ(c.get_count("defense.steps"), 40u);
  c.apply_override("seed=9");
  EXPECT_EQ(c.get_int("seed"), 9);
  EXPECT_EQ(c.get_list("gap.seeds"), (std::vector<std::string>{"233", "234", "235"}));
  EXPECT_FALSE(c.get_bool("defense.alg1_shared_temp"));
}

TEST(ConfigFile, Errors) {
  Config c;
  try {
    c.set("bogus.key", "1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bogus.key"), std::string::npos);
  }
  std::istringstream bad("seed = 1\nno equals sign\n");
  try {
    c.load(bad, "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(c.apply_override("seed"), ConfigError);
  c.set("seed", "abc");
  EXPECT_THROW(c.get_u64("seed"), ConfigError);
  EXPECT_THROW(c.load_file("/nonexistent/doge.cfg"), ConfigError);
}

TEST(ConfigFile, WriteRoundTrip) {
  Config c;
  c.set("defense.lambda", "1e-4");
  std::stringstream ss;
  c.write(ss);
  Config d;
  d.load(ss);
  EXPECT_EQ(c.values(), d.values());
}

TEST(Resolve, EffectiveDefenseSettings) {
  const auto p = PipelineConfig::resolve(Config{});
  EXPECT_EQ(p.seed, 233u);
  const auto eff = p.defense.effective();
  EXPECT_NEAR(eff.peak_lr, 1e-2, 1e-15);
  EXPECT_NEAR(eff.lambda, 0.15, 1e-15);
  EXPECT_EQ(p.defense.train.lambda, 3e-5);
  EXPECT_EQ(p.gap_seeds, (std::vector<std::uint64_t>{233, 234, 235}));
  EXPECT_EQ(p.grid.grid_size, 41u);
}

TEST(Resolve, NamesOffendingKey) {
  for (const char* kv : {"landscape.grid_size=4", "defense.alpha=-1", "corpus.operators=+/", "kd.k=0"}) {
    Config c;
    c.apply_override(kv);
    const std::string key(kv, std::string_view(kv).find('='));
    try {
      PipelineConfig::resolve(c);
      FAIL() << kv;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key.substr(key.find('.') + 1)), std::string::npos) << e.what();
    }
  }
}

TEST(Hashing, KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Manifest, JsonRoundTrip) {
  RunManifest m;
  m.command = "train-defense";
  m.config = {{"seed", "233"}, {"defense.lambda", "3e-05"}};
  m.seed = 233;
  m.inputs = {{"corpus/train.txt", sha256_hex("x"), 1}};
  m.outputs = {{"defense_summary.json", sha256_hex("y"), 1}};
  m.started_at = "2026-01-01T00:00:00Z";
  m.finished_at = "2026-01-01T00:00:01Z";
  m.exit_code = 3;
  const auto back = manifest_from_json_text(to_json_text(m));
  EXPECT_EQ(back.command, m.command);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.inputs, m.inputs);
  EXPECT_EQ(back.outputs, m.outputs);
  EXPECT_EQ(back.exit_code, 3);
  EXPECT_THROW(manifest_from_json_text("{not json"), FormatError);
}

TEST(RunDir, RecordsReadsAndWrites) {
  const auto dir = fresh_dir("rundir");
  RunDirectory rd(dir);
  EXPECT_FALSE(rd.exists("a/b.txt"));
  rd.write("a/b.txt", "hello");
  EXPECT_TRUE(rd.exists("a/b.txt"));
  EXPECT_EQ(rd.read("a/b.txt"), "hello");
  ASSERT_EQ(rd.outputs().size(), 1u);
  EXPECT_EQ(rd.outputs()[0].sha256, sha256_hex("hello"));
  EXPECT_EQ(rd.outputs()[0].bytes, 5u);
  ASSERT_EQ(rd.inputs().size(), 1u);
  EXPECT_EQ(sha256_file(dir / "a/b.txt"), sha256_hex("hello"));
  EXPECT_THROW(rd.read("missing.txt"), FormatError);
  fs::remove_all(dir);
}

TEST(Artifacts, MetricsJsonlRoundTrip) {
  const std::vector<trainer::StepMetrics> log{step(0, 2.0, 0.5, 0.15), step(1, 1.9, 0.6, 0.15)};
  const auto back = parse_metrics_jsonl(metrics_jsonl(log));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].sft_loss, 1.9);
  EXPECT_EQ(back[1].masked_kl, 0.6);
  EXPECT_EQ(back[0].total_loss, log[0].total_loss);
}

TEST(Artifacts, KdJsonlRoundTrip) {
  const auto& v = corpus::Vocabulary::arithmetic();
  distill::DistillDataset ds;
  ds.teacher_id = "defensive";
  corpus::TokenSequence p;
  p.tokens = corpus::parse_tokens("Q : 1 =", v);
  p.tags.assign(4, corpus::Segment::Prompt);
  auto o = p;
  o.tokens.push_back(v.end());
  o.tags.push_back(corpus::Segment::Untagged);
  ds.pairs.push_back({p, o});
  const std::string text = kd_jsonl(ds, v);
  EXPECT_NE(text.find("Q : 1 = <end>"), std::string::npos);
  const auto back = parse_kd_jsonl(text);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back.pairs[0].output.tokens, o.tokens);
}

TEST(Summary, ClassifiesStability) {
  trainer::TrainConfig nominal, eff;
  eff.lambda = 0.15;
  std::vector<trainer::StepMetrics> calm;
  for (std::size_t i = 0; i < 10; ++i) calm.push_back(step(i, 2.0 - 0.01 * i, 0.3 + 0.05 * i, 0.15));
  auto s = summarize_defense(calm, nominal, eff, 5000, std::nullopt, "");
  EXPECT_EQ(s.stability, "stable");
  EXPECT_TRUE(s.kl_increased);
  EXPECT_EQ(s.kl_window, 5u);
  EXPECT_EQ(s.status, "completed");

  auto grow = calm;
  grow.back().sft_loss = 4.5;
  grow.back().total_loss = grow[8].total_loss;
  s = summarize_defense(grow, nominal, eff, 5000, std::nullopt, "");
  EXPECT_EQ(s.stability, "unstable");
  EXPECT_NE(s.stability_reason.find("SFT loss grew"), std::string::npos);

  auto jump = calm;
  jump[5].total_loss = -5.0;
  EXPECT_EQ(summarize_defense(jump, nominal, eff, 5000, std::nullopt, "").stability, "unstable");
  s = summarize_defense(calm, nominal, eff, 5000, 9, "guard");
  EXPECT_EQ(s.stability, "guard_tripped");
  EXPECT_EQ(s.status, "diverged");
}

TEST(Report, NoEffectAndFlaggedViolations) {
  distill::DefenseGapReport gap;
  gap.seeds = {233};
  gap.teacher_sft_acc = gap.teacher_defensive_acc = 0.8;
  gap.student_from_sft_acc = gap.student_from_defensive_acc = 0.5;
  theory::BoundReport bounds;
  bounds.checks.push_back({"bounded_divergence_range", 10, 4, 3.0, 2.0, -1.0, false});
  bounds.checks.push_back({"gradient_discrepancy", 10, 0, 0.0, 1.0, 1.0, true});
  const DefenseSummary defense;
  const std::string text = emit_report(gap, bounds, defense);
  EXPECT_NE(text.find("no defense effect"), std::string::npos);
  EXPECT_NE(text.find("VIOLATED  bounded_divergence_range: 4 of 10 trials"), std::string::npos);
  EXPECT_NE(text.find("[reported, not asserted]"), std::string::npos);
  EXPECT_NE(text.find("ok        gradient_discrepancy"), std::string::npos);
  EXPECT_NE(text.find("teacher preserved"), std::string::npos);

  gap.student_from_defensive_acc = 0.3;
  gap.student_delta = -0.2;
  EXPECT_NE(emit_report(gap, bounds, defense).find("student degraded by"), std::string::npos);
}

TEST(Report, GapJsonFields) {
  distill::DefenseGapReport gap;
  gap.seeds = {233, 234};
  gap.teacher_sft_acc = 0.8;
  gap.teacher_defensive_acc = 0.9;
  gap.teacher_delta = 0.1;
  gap.per_seed = {{233, 0.5, 0.4}, {234, 0.6, 0.5}};
  const auto j = nlohmann::json::parse(gap_report_json(gap, DefenseSummary{}));
  for (const char* k : {"teacher_sft_acc", "teacher_defensive_acc", "student_from_sft_acc",
                        "student_from_defensive_acc", "teacher_delta", "student_delta", "seeds", "epsilon",
                        "teacher_preserved", "per_seed", "defense"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["per_seed"].size(), 2u);
  EXPECT_TRUE(j["teacher_preserved"].get<bool>());
}

TEST(Pipeline, CommandsRunAndRerunIdentically) {
  const auto dir = fresh_dir("pipeline");
  const auto cfg = small_config();
  std::ostringstream log;
  for (const char* cmd : {"gen-corpus", "train-sft", "train-defense", "distill", "eval", "verify-bounds"}) {
    ASSERT_EQ(run_command(cmd, cfg, dir, log), kOk) << cmd << "\n" << log.str();
    EXPECT_TRUE(fs::exists(dir / (std::string("manifest_") + cmd + ".json"))) << cmd;
  }
  for (const char* f : {"corpus/train.txt", "teacher_sft.ckpt", "proxy_0.ckpt", "teacher_defensive.ckpt",
                        "defense_metrics.jsonl", "defense_summary.json", "eval_report.json", "bound_report.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto bounds = nlohmann::json::parse(slurp(dir / "bound_report.json"));
  EXPECT_GT(bounds["checks"].size(), 8u);

  const auto manifest = read_manifest(dir / "manifest_train-defense.json");
  EXPECT_EQ(manifest.command, "train-defense");
  EXPECT_FALSE(manifest.inputs.empty());
  for (const char* cmd : {"gen-corpus", "train-defense"}) {
    const auto again = fresh_dir(std::string("rerun_") + cmd);
    std::ostringstream rlog;
    const auto r = rerun_from_manifest(dir / (std::string("manifest_") + cmd + ".json"), again, rlog);
    EXPECT_TRUE(r.identical()) << cmd << "\n" << rlog.str();
    fs::remove_all(again);
  }
  fs::remove_all(dir);
}

TEST(Pipeline, MissingInputsAndBadConfigAreUsageErrors) {
  const auto dir = fresh_dir("usage");
  std::ostringstream log;
  EXPECT_EQ(run_command("train-sft", small_config(), dir, log), kUsage);
  auto bad = small_config();
  bad.set("defense.alpha", "0");
  EXPECT_EQ(run_command("gen-corpus", bad, dir, log), kUsage);
  EXPECT_EQ(run_command("no-such-command", small_config(), dir, log), kUsage);
  fs::remove_all(dir);
}

TEST(Pipeline, CheckpointBundleRoundTrip) {
  const auto p = PipelineConfig::resolve(small_config());
  const auto t = fresh_teacher(p);
  const auto back = bundle_from_checkpoint(p, checkpoint_bytes(t), model::Role::Teacher, "t");
  EXPECT_TRUE(back.head == t.head);
  EXPECT_TRUE(*back.base == *t.base);
}
