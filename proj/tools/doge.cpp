// Command-line entry point: one subcommand per pipeline stage.

#include <CLI11.hpp>
#include <iostream>

#include "doge/app/pipeline.hpp"

namespace app = doge::app;

int main(int argc, char** argv) {
  CLI::App cli{"Defensive output generation lab"};
  cli.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out = "runs/latest";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override one key (key=value), repeatable")->take_all();
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--out", out, "run directory");
  };

  for (const auto& name : app::command_names()) add_common(cli.add_subcommand(name));

  std::string manifest;
  auto* rerun = cli.add_subcommand("rerun", "re-execute a run from its manifest and compare outputs");
  rerun->add_option("--manifest", manifest, "manifest_<command>.json of the recorded run")
      ->required()
      ->check(CLI::ExistingFile);
  rerun->add_option("--out", out, "fresh run directory")->required();

  CLI11_PARSE(cli, argc, argv);

  try {
    if (rerun->parsed()) {
      const auto r = app::rerun_from_manifest(manifest, out, std::cout);
      for (const auto& f : r.mismatched) std::cout << "rerun: " << f << " differs\n";
      for (const auto& f : r.missing) std::cout << "rerun: " << f << " was not produced\n";
      std::cout << "rerun: " << (r.identical() ? "outputs identical" : "outputs differ") << "\n";
      return r.identical() ? app::kOk : app::kFailed;
    }

    app::Config cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    if (seed) cfg.set("seed", std::to_string(*seed));
    return app::run_command(cli.get_subcommands().front()->get_name(), cfg, out, std::cout);
  } catch (const doge::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::kFailed;
  }
}
