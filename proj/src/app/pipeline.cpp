#include "doge/app/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace doge::app {

namespace fs = std::filesystem;

model::BaseConfig derived_base(const PipelineConfig& cfg, std::size_t hidden_dim, std::string_view label) {
  model::BaseConfig b = cfg.base;
  b.hidden_dim = hidden_dim;
  b.seed = num::SeededRng(cfg.seed, std::string(label) + "/base-seed").next_u64();
  return b;
}

model::ModelBundle fresh_teacher(const PipelineConfig& cfg) {
  return model::make_bundle(derived_base(cfg, cfg.teacher_hidden_dim, "teacher"), 0, model::Role::Teacher, "teacher",
                            num::SeededRng(cfg.seed, "teacher/head"));
}

model::ModelBundle fresh_proxy(const PipelineConfig& cfg, std::size_t index) {
  const std::string label = "proxy/" + std::to_string(index);
  return model::make_bundle(derived_base(cfg, cfg.proxy.hidden_dim, label), 0, model::Role::ProxyStudent,
                            "proxy-" + std::to_string(index), num::SeededRng(cfg.seed, label + "/head"));
}

namespace {

trainer::TrainConfig sft_train_config(const PipelineConfig& cfg, std::size_t steps) {
  trainer::TrainConfig t;
  t.steps = steps;
  t.batch_size = cfg.sft.batch_size;
  t.peak_lr = cfg.sft.lr;
  t.lambda = 0.0;
  t.seed = cfg.seed;
  t.divergence_factor = 0.0;
  return t;
}

objective::AdvConfig no_adversary() {
  objective::AdvConfig a;
  a.lambda = 0.0;
  return a;
}

}  // namespace

SftOutcome run_sft(const PipelineConfig& cfg, const corpus::Corpus& data) {
  SftOutcome out;
  out.teacher = fresh_teacher(cfg);
  const auto& vocab = out.teacher.vocab;

  const std::size_t probe_n = std::min(cfg.sft.probe_size, data.eval.size());
  const std::span<const corpus::TokenSequence> probe(data.eval.data(), probe_n);
  const bool plateau = cfg.sft.check_every > 0 && cfg.sft.plateau_tolerance > 0.0 && probe_n > 0;
  double best = -1.0;
  trainer::StopCheck stop = [&](std::size_t done, const model::HeadParams& head) {
    if (!plateau || done % cfg.sft.check_every != 0 || done >= cfg.sft.steps) return false;
    model::ModelBundle snapshot = out.teacher;
    snapshot.head = head;
    const double acc = distill::evaluate_accuracy(snapshot, probe, cfg.eval_max_new_tokens).accuracy;
    out.probe_history.push_back(acc);
    const bool flat = best >= 0.0 && acc - best < cfg.sft.plateau_tolerance;
    best = std::max(best, acc);
    return flat;
  };

  trainer::PositionCache cache(out.teacher.base, {}, data.train, vocab, trainer::PositionCache::MaskSource::Tags);
  auto r = trainer::train_head(out.teacher.head, cache, sft_train_config(cfg, cfg.sft.steps), no_adversary(), "sft",
                               {}, stop);
  out.teacher.head = std::move(r.head);
  out.teacher_log = std::move(r.metrics);
  out.teacher_steps = out.teacher_log.size();

  for (std::size_t i = 0; i < cfg.proxy.count; ++i) {
    model::ModelBundle p = fresh_proxy(cfg, i);
    if (cfg.proxy.steps > 0) {
      trainer::PositionCache pc(p.base, {}, data.train, vocab, trainer::PositionCache::MaskSource::Tags);
      p.head = trainer::train_head(p.head, pc, sft_train_config(cfg, cfg.proxy.steps), no_adversary(),
                                   "proxy/" + std::to_string(i))
                   .head;
    }
    out.proxies.push_back(std::move(p));
  }
  return out;
}

objective::AdvConfig adv_config(const PipelineConfig& cfg, std::vector<model::ModelBundle> proxies) {
  const auto eff = cfg.defense.effective();
  objective::AdvConfig a;
  a.lambda = eff.lambda;
  a.alpha = eff.alpha;
  a.alg1_shared_temp = cfg.defense.alg1_shared_temp;
  a.proxies = std::move(proxies);
  return a;
}

DefenseOutcome run_defense(const PipelineConfig& cfg, const corpus::Corpus& data, const model::ModelBundle& teacher,
                           const std::vector<model::ModelBundle>& proxies) {
  DefenseOutcome out;
  out.teacher = teacher;
  out.teacher.id = "teacher-defensive";
  const auto eff = cfg.defense.effective();
  std::optional<std::size_t> diverged;
  std::string message = "completed";
  try {
    auto r = trainer::defensive_train(teacher, data.train, eff, adv_config(cfg, proxies), cfg.defense.mask,
                                      [&](const trainer::StepMetrics& m) { out.log.push_back(m); });
    out.teacher.head = std::move(r.head);
  } catch (const TrainingDiverged& e) {
    diverged = e.step();
    message = e.what();
    out.teacher = teacher;
  }
  out.summary = summarize_defense(out.log, cfg.defense.train, eff, cfg.defense.lambda_scale, diverged, message);
  return out;
}

theory::BoundReport run_bounds(const PipelineConfig& cfg, std::optional<TeacherPair> instance) {
  theory::BoundReport rep = theory::run_all_suites(cfg.bounds.suite);
  if (!instance || cfg.bounds.instance_positions == 0) return rep;

  const auto& sft = *instance->sft;
  const auto& def = *instance->defensive;
  const model::ModelBundle student = distill::make_student(cfg.student, cfg.seed, sft.vocab);
  const std::size_t want = cfg.bounds.instance_positions;
  const std::size_t v = sft.vocab.size();

  std::vector<double> ctx, zdef, qs;
  std::size_t rows = 0;
  for (const auto& seq : instance->data->kd_prompts) {
    if (rows == want) break;
    const auto hs = model::base_forward(*student.base, seq);
    const auto hd = model::base_forward(*def.base, seq);
    const auto hq = model::base_forward(*sft.base, seq);
    // Row t-1 predicts token t; use the positions after the prompt.
    for (std::size_t t = std::max<std::size_t>(seq.prompt_length(), 1); t < seq.size() && rows < want; ++t, ++rows) {
      ctx.insert(ctx.end(), hs.row(t - 1).begin(), hs.row(t - 1).end());
      const auto zd = model::head_logits(def.head, hd.row(t - 1));
      zdef.insert(zdef.end(), zd.begin(), zd.end());
      const auto q = num::softmax_temp(model::head_logits(sft.head, hq.row(t - 1)), 1.0);
      qs.insert(qs.end(), q.values().begin(), q.values().end());
    }
  }
  if (rows == 0) throw InvalidArgument("no positions available for the bound instance");
  const num::RealMatrix contexts(rows, student.base->hidden_dim(), std::move(ctx));
  const num::RealMatrix logits(rows, v, std::move(zdef));
  const num::RealMatrix q(rows, v, std::move(qs));
  theory::run_instance_checks(student.head, contexts, logits, q, cfg.bounds.suite, rep);
  return rep;
}

landscape::LandscapeGrid run_landscape(const PipelineConfig& cfg, const corpus::Corpus& data,
                                       const model::ModelBundle& teacher,
                                       const std::vector<model::ModelBundle>& proxies) {
  const std::size_t n = std::min(cfg.landscape_batch, data.train.size());
  const std::span<const corpus::TokenSequence> seqs(data.train.data(), n);
  trainer::PositionCache cache(teacher.base, proxies, seqs, teacher.vocab, cfg.defense.mask);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const auto batch = cache.gather(idx);
  return landscape::slice_loss_surface(teacher.head, batch, adv_config(cfg, proxies), cfg.grid);
}

std::string checkpoint_bytes(const model::ModelBundle& bundle) {
  std::ostringstream os(std::ios::binary);
  model::write_checkpoint(os, bundle.head, bundle.base->hidden_dim(), bundle.base->config().seed);
  return std::move(os).str();
}

model::ModelBundle bundle_from_checkpoint(const PipelineConfig& cfg, std::string_view bytes, model::Role role,
                                          std::string id) {
  std::istringstream is(std::string(bytes), std::ios::binary);
  const model::Checkpoint ck = model::read_checkpoint(is);
  const auto& vocab = corpus::Vocabulary::arithmetic();
  if (ck.header.vocab_size != vocab.size()) {
    throw FormatError("checkpoint vocabulary size " + std::to_string(ck.header.vocab_size) + " does not match " +
                      std::to_string(vocab.size()));
  }
  if (ck.head.input_dim() != ck.header.hidden_dim) throw FormatError("checkpoint head does not match its base width");
  model::BaseConfig b = cfg.base;
  b.hidden_dim = ck.header.hidden_dim;
  b.seed = ck.header.base_seed;
  model::ModelBundle m;
  m.base = std::make_shared<const model::FrozenBase>(b, vocab.size());
  m.head = ck.head;
  m.role = role;
  m.id = std::move(id);
  m.vocab = vocab;
  return m;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

struct Ctx {
  const PipelineConfig& cfg;
  RunDirectory& dir;
  std::ostream& log;
};

const corpus::Vocabulary& vocab() { return corpus::Vocabulary::arithmetic(); }

std::string corpus_text(std::span<const corpus::TokenSequence> seqs) {
  std::ostringstream os;
  corpus::write_corpus(os, seqs, vocab());
  return std::move(os).str();
}

std::vector<corpus::TokenSequence> read_split(RunDirectory& dir, std::string_view name) {
  std::istringstream is(dir.read("corpus/" + std::string(name) + ".txt"));
  return corpus::read_corpus(is, vocab());
}

void write_corpus_files(RunDirectory& dir, const corpus::Corpus& data) {
  dir.write("corpus/train.txt", corpus_text(data.train));
  dir.write("corpus/kd.txt", corpus_text(data.kd_prompts));
  dir.write("corpus/eval.txt", corpus_text(data.eval));
}

std::string proxy_file(std::size_t i) { return "proxy_" + std::to_string(i) + ".ckpt"; }
std::string teacher_file(std::string_view which) { return "teacher_" + std::string(which) + ".ckpt"; }
std::string student_file(std::string_view teacher, std::uint64_t seed) {
  return "students/" + std::string(teacher) + "_" + std::to_string(seed) + ".ckpt";
}

model::ModelBundle load_teacher(Ctx& c, std::string_view which) {
  return bundle_from_checkpoint(c.cfg, c.dir.read(teacher_file(which)), model::Role::Teacher,
                                "teacher-" + std::string(which));
}

std::vector<model::ModelBundle> load_proxies(Ctx& c) {
  std::vector<model::ModelBundle> out;
  for (std::size_t i = 0; i < c.cfg.proxy.count; ++i) {
    out.push_back(bundle_from_checkpoint(c.cfg, c.dir.read(proxy_file(i)), model::Role::ProxyStudent,
                                         "proxy-" + std::to_string(i)));
  }
  return out;
}

void write_defense_files(Ctx& c, const DefenseOutcome& d) {
  c.dir.write("defense_metrics.jsonl", metrics_jsonl(d.log));
  if (!d.log.empty()) {
    std::ostringstream os;
    landscape::export_training_curves(os, d.log);
    c.dir.write("defense_curves.csv", os.str());
  }
  c.dir.write("defense_summary.json", defense_summary_json(d.summary));
}

std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string defense_line(const DefenseSummary& s) {
  std::string line = s.status + " after " + std::to_string(s.steps_logged) + " logged steps, masked KL " +
                     f4(s.kl_first) + " -> " + f4(s.kl_last) + ", " + s.stability;
  if (s.stability != "stable") line += " (" + s.stability_reason + ")";
  return line;
}

int cmd_gen_corpus(Ctx& c) {
  const auto data = corpus::generate_corpus(c.cfg.corpus, vocab());
  write_corpus_files(c.dir, data);
  c.log << "gen-corpus: " << data.train.size() << " train, " << data.kd_prompts.size() << " kd, "
        << data.eval.size() << " eval instances\n";
  return kOk;
}

int cmd_train_sft(Ctx& c) {
  corpus::Corpus data;
  data.train = read_split(c.dir, "train");
  data.eval = read_split(c.dir, "eval");
  const auto sft = run_sft(c.cfg, data);
  c.dir.write(teacher_file("sft"), checkpoint_bytes(sft.teacher));
  for (std::size_t i = 0; i < sft.proxies.size(); ++i) c.dir.write(proxy_file(i), checkpoint_bytes(sft.proxies[i]));
  c.dir.write("sft_metrics.jsonl", metrics_jsonl(sft.teacher_log));

  const double teacher_acc = distill::evaluate_accuracy(sft.teacher, data.eval, c.cfg.eval_max_new_tokens).accuracy;
  std::vector<double> proxy_acc;
  for (const auto& p : sft.proxies) {
    proxy_acc.push_back(distill::evaluate_accuracy(p, data.eval, c.cfg.eval_max_new_tokens).accuracy);
  }
  std::ostringstream js;
  js << "{\n  \"teacher_steps\": " << sft.teacher_steps << ",\n  \"teacher_eval_acc\": " << teacher_acc
     << ",\n  \"probe_history\": [";
  for (std::size_t i = 0; i < sft.probe_history.size(); ++i) js << (i ? ", " : "") << sft.probe_history[i];
  js << "],\n  \"proxy_eval_acc\": [";
  for (std::size_t i = 0; i < proxy_acc.size(); ++i) js << (i ? ", " : "") << proxy_acc[i];
  js << "]\n}\n";
  c.dir.write("sft_summary.json", js.str());

  c.log << "train-sft: teacher " << sft.teacher_steps << " steps, eval accuracy " << f4(teacher_acc) << "; "
        << sft.proxies.size() << " proxies";
  for (double a : proxy_acc) c.log << ' ' << f4(a);
  c.log << "\n";
  return kOk;
}

int cmd_train_defense(Ctx& c) {
  corpus::Corpus data;
  data.train = read_split(c.dir, "train");
  const auto teacher = load_teacher(c, "sft");
  const auto proxies = load_proxies(c);
  const auto d = run_defense(c.cfg, data, teacher, proxies);
  write_defense_files(c, d);
  if (!d.diverged()) c.dir.write(teacher_file("defensive"), checkpoint_bytes(d.teacher));
  c.log << "train-defense: " << defense_line(d.summary) << "\n";
  if (d.diverged()) {
    c.log << "error: " << d.summary.message << "\n";
    return kDiverged;
  }
  return kOk;
}

int cmd_distill(Ctx& c) {
  const auto kd = read_split(c.dir, "kd");
  const auto& which = c.cfg.distill_teacher;
  const auto teacher = load_teacher(c, which);
  for (std::uint64_t seed : c.cfg.gap_seeds) {
    const auto ds = distill::generate_kd_dataset(teacher, kd, distill::make_strategy(c.cfg.kd, seed));
    c.dir.write("kd/" + which + "_" + std::to_string(seed) + ".jsonl", kd_jsonl(ds, vocab()));
    const auto student = distill::train_student(distill::make_student(c.cfg.student, seed, vocab()), ds,
                                                c.cfg.student.train, seed);
    c.dir.write(student_file(which, seed), checkpoint_bytes(student));
  }
  c.log << "distill: " << c.cfg.gap_seeds.size() << " students from the " << which << " teacher on " << kd.size()
        << " prompts\n";
  return kOk;
}

int cmd_eval(Ctx& c) {
  const auto eval = read_split(c.dir, "eval");
  std::vector<distill::EvalReport> reports;
  auto evaluate = [&](const model::ModelBundle& m) {
    reports.push_back(distill::evaluate_accuracy(m, eval, c.cfg.eval_max_new_tokens));
  };
  for (const char* which : {"sft", "defensive"}) {
    if (c.dir.exists(teacher_file(which))) evaluate(load_teacher(c, which));
  }
  for (const char* which : {"sft", "defensive"}) {
    for (std::uint64_t seed : c.cfg.gap_seeds) {
      const auto f = student_file(which, seed);
      if (!c.dir.exists(f)) continue;
      evaluate(bundle_from_checkpoint(c.cfg, c.dir.read(f), model::Role::TargetStudent,
                                      "student-" + std::string(which) + "-" + std::to_string(seed)));
    }
  }
  if (reports.empty()) throw FormatError("eval: no checkpoints found in '" + c.dir.root().string() + "'");
  c.dir.write("eval_report.json", eval_report_json(reports));
  c.log << "eval:";
  for (const auto& r : reports) c.log << ' ' << r.model_id << '=' << f4(r.accuracy);
  c.log << "\n";
  return kOk;
}

int cmd_gap_report(Ctx& c) {
  const auto data = corpus::generate_corpus(c.cfg.corpus, vocab());
  write_corpus_files(c.dir, data);
  const auto sft = run_sft(c.cfg, data);
  c.dir.write(teacher_file("sft"), checkpoint_bytes(sft.teacher));
  for (std::size_t i = 0; i < sft.proxies.size(); ++i) c.dir.write(proxy_file(i), checkpoint_bytes(sft.proxies[i]));
  const auto d = run_defense(c.cfg, data, sft.teacher, sft.proxies);
  write_defense_files(c, d);
  if (d.diverged()) {
    c.dir.write("summary.txt", "Defensive training diverged: " + d.summary.message + "\n");
    c.log << "gap-report: " << defense_line(d.summary) << "\nerror: " << d.summary.message << "\n";
    return kDiverged;
  }
  c.dir.write(teacher_file("defensive"), checkpoint_bytes(d.teacher));

  const auto gap = distill::defense_gap(sft.teacher, d.teacher, c.cfg.student, data.kd_prompts, data.eval,
                                        c.cfg.gap_seeds, c.cfg.kd, c.cfg.gap_epsilon);
  const auto bounds = run_bounds(c.cfg, TeacherPair{&sft.teacher, &d.teacher, &data});
  c.dir.write("gap_report.json", gap_report_json(gap, d.summary));
  c.dir.write("bound_report.json", bound_report_json(bounds));
  c.dir.write("summary.txt", emit_report(gap, bounds, d.summary));
  c.log << "gap-report: teacher " << f4(gap.teacher_sft_acc) << " -> " << f4(gap.teacher_defensive_acc)
        << (gap.teacher_preserved() ? " (preserved)" : " (not preserved)") << ", student "
        << f4(gap.student_from_sft_acc) << " -> " << f4(gap.student_from_defensive_acc) << " (delta "
        << f4(gap.student_delta) << ")\n";
  return kOk;
}

int cmd_verify_bounds(Ctx& c) {
  theory::BoundReport rep;
  const bool have = c.dir.exists("corpus/kd.txt") && c.dir.exists(teacher_file("sft")) &&
                    c.dir.exists(teacher_file("defensive"));
  if (have) {
    corpus::Corpus data;
    data.kd_prompts = read_split(c.dir, "kd");
    const auto sft = load_teacher(c, "sft");
    const auto def = load_teacher(c, "defensive");
    rep = run_bounds(c.cfg, TeacherPair{&sft, &def, &data});
  } else {
    rep = run_bounds(c.cfg);
  }
  c.dir.write("bound_report.json", bound_report_json(rep));
  std::size_t reported = 0;
  for (const auto& ch : rep.checks) reported += ch.asserted ? 0 : ch.violations;
  c.log << "verify-bounds: " << rep.checks.size() << " checks" << (have ? " (with teacher instance)" : "") << ", "
        << rep.asserted_violations() << " asserted violations";
  for (const auto& ch : rep.checks) {
    if (ch.violations > 0) c.log << "; " << ch.name << ' ' << ch.violations << '/' << ch.trials
                                 << (ch.asserted ? "" : " reported");
  }
  c.log << "\n";
  return rep.asserted_violations() == 0 ? kOk : kFailed;
}

int cmd_landscape(Ctx& c) {
  corpus::Corpus data;
  data.train = read_split(c.dir, "train");
  const auto teacher = load_teacher(c, c.cfg.landscape_teacher);
  const auto proxies = load_proxies(c);
  const auto grid = run_landscape(c.cfg, data, teacher, proxies);
  std::ostringstream os;
  landscape::write_grid_csv(os, grid);
  c.dir.write("landscape.csv", os.str());
  c.log << "landscape: " << grid.grid_size << "x" << grid.grid_size << " grid around the " << c.cfg.landscape_teacher
        << " teacher, center loss " << f4(grid.center()) << "\n";
  return kOk;
}

int cmd_lambda_sweep(Ctx& c) {
  const auto data = corpus::generate_corpus(c.cfg.corpus, vocab());
  const auto sft = run_sft(c.cfg, data);
  std::ostringstream csv;
  csv << "lambda_scale,lambda_effective,status,diverged_at,stability,kl_first,kl_last,teacher_sft_acc,"
         "teacher_defensive_acc,student_from_sft_acc,student_from_defensive_acc,teacher_delta,student_delta\n";
  csv.precision(17);
  for (double scale : c.cfg.sweep_lambda_scales) {
    PipelineConfig run = c.cfg;
    run.defense.lambda_scale = scale;
    const auto d = run_defense(run, data, sft.teacher, sft.proxies);
    const auto& s = d.summary;
    csv << scale << ',' << s.lambda_effective << ',' << s.status << ','
        << (s.diverged_at ? std::to_string(*s.diverged_at) : "") << ',' << s.stability << ',' << s.kl_first << ','
        << s.kl_last;
    if (d.diverged()) {
      csv << ",,,,,,\n";
      c.log << "lambda-sweep: scale " << scale << " diverged\n";
      continue;
    }
    const auto gap = distill::defense_gap(sft.teacher, d.teacher, run.student, data.kd_prompts, data.eval,
                                          run.gap_seeds, run.kd, run.gap_epsilon);
    csv << ',' << gap.teacher_sft_acc << ',' << gap.teacher_defensive_acc << ',' << gap.student_from_sft_acc << ','
        << gap.student_from_defensive_acc << ',' << gap.teacher_delta << ',' << gap.student_delta << '\n';
    c.log << "lambda-sweep: scale " << scale << " teacher " << f4(gap.teacher_defensive_acc) << " student "
          << f4(gap.student_from_defensive_acc) << " (delta " << f4(gap.student_delta) << ")\n";
  }
  c.dir.write("lambda_sweep.csv", csv.str());
  return kOk;
}

using Handler = int (*)(Ctx&);

const std::vector<std::pair<std::string, Handler>>& handlers() {
  static const std::vector<std::pair<std::string, Handler>> h = {
      {"gen-corpus", cmd_gen_corpus},       {"train-sft", cmd_train_sft},   {"train-defense", cmd_train_defense},
      {"distill", cmd_distill},             {"eval", cmd_eval},             {"gap-report", cmd_gap_report},
      {"verify-bounds", cmd_verify_bounds}, {"landscape", cmd_landscape},   {"lambda-sweep", cmd_lambda_sweep},
  };
  return h;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, _] : handlers()) n.push_back(k);
    return n;
  }();
  return names;
}

int run_command(const std::string& command, const Config& config, const fs::path& out, std::ostream& log) {
  Handler handler = nullptr;
  for (const auto& [k, h] : handlers()) {
    if (k == command) handler = h;
  }
  if (!handler) {
    log << "error: unknown command '" << command << "'\n";
    return kUsage;
  }
  PipelineConfig cfg;
  try {
    cfg = PipelineConfig::resolve(config);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kUsage;
  }

  RunDirectory dir(out);
  RunManifest m;
  m.command = command;
  m.seed = cfg.seed;
  for (const auto& [k, v] : config.values()) m.config.emplace(k, v);
  m.started_at = utc_timestamp();
  const auto t0 = std::chrono::steady_clock::now();

  int code = kOk;
  try {
    Ctx ctx{cfg, dir, log};
    code = handler(ctx);
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    code = kUsage;
  } catch (const FormatError& e) {
    log << "error: " << e.what() << "\n";
    code = kUsage;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    code = kFailed;
  }

  m.inputs = dir.inputs();
  m.outputs = dir.outputs();
  m.finished_at = utc_timestamp();
  m.exit_code = code;
  write_manifest(out / ("manifest_" + command + ".json"), m);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", secs);
  log << command << ": exit " << code << " in " << buf << " s\n";
  return code;
}

RerunResult rerun_from_manifest(const fs::path& manifest_path, const fs::path& out, std::ostream& log) {
  const RunManifest m = read_manifest(manifest_path);
  const fs::path src = manifest_path.parent_path();
  if (fs::exists(out) && fs::equivalent(out, src.empty() ? fs::path(".") : src)) {
    throw ConfigError("rerun output directory must differ from the recorded run directory");
  }
  fs::create_directories(out);
  for (const auto& in : m.inputs) {
    const fs::path from = src / in.path;
    const fs::path to = out / in.path;
    if (sha256_file(from) != in.sha256) throw FormatError("input '" + in.path + "' changed since the recorded run");
    if (to.has_parent_path()) fs::create_directories(to.parent_path());
    fs::copy_file(from, to, fs::copy_options::overwrite_existing);
  }
  Config cfg;
  for (const auto& [k, v] : m.config) cfg.set(k, v);

  RerunResult r;
  r.recorded_exit_code = m.exit_code;
  r.exit_code = run_command(m.command, cfg, out, log);
  const RunManifest again = read_manifest(out / ("manifest_" + m.command + ".json"));
  for (const auto& o : m.outputs) {
    auto it = std::find_if(again.outputs.begin(), again.outputs.end(),
                           [&](const FileRecord& x) { return x.path == o.path; });
    if (it == again.outputs.end()) r.missing.push_back(o.path);
    else if (it->sha256 != o.sha256) r.mismatched.push_back(o.path);
  }
  if (r.exit_code != m.exit_code) {
    log << "rerun: exit code " << r.exit_code << " differs from recorded " << m.exit_code << "\n";
  }
  return r;
}

}  // namespace doge::app
