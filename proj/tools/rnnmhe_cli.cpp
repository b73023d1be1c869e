// rnnmhe: experiment driver.
//
//   rnnmhe <simulate|train|drift-eval|adapt|sweep|converge> [--config f.json]
//          [--out dir] [--seed n] [--jobs n]
//   rnnmhe plot --run dir --figure fig3..fig7
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "rnnmhe/error.hpp"
#include "rnnmhe/harness.hpp"
#include "rnnmhe/model_io.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moving-horizon adaptation of recurrent plant models"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string run_dir, figure;
  bool print_config = false;

  const char* tags[] = {"simulate", "train", "drift-eval", "adapt", "sweep", "converge"};
  for (const char* tag : tags) {
    auto* sub = app.add_subcommand(tag, std::string("run the ") + tag + " experiment");
    sub->add_option("--config", config_path, "experiment config (JSON); defaults otherwise");
    sub->add_option("--out", out_dir, "output directory (default runs/<experiment>)");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--print-config", print_config, "print the resolved config and exit");
  }
  auto* plot = app.add_subcommand("plot", "write figure CSVs from a finished run");
  plot->add_option("--run", run_dir, "run directory")->required();
  plot->add_option("--figure", figure, "fig3 | fig4 | fig5 | fig6 | fig7")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub->get_name() == "plot") {
      std::cout << rnnmhe::emit_plotdata(run_dir, figure).string() << '\n';
      return kOk;
    }
    rnnmhe::ExperimentConfig cfg = config_path.empty()
                                       ? rnnmhe::ExperimentConfig{}
                                       : rnnmhe::load_experiment_config(config_path);
    cfg.experiment = sub->get_name();
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    cfg.validate();
    if (print_config) {
      std::cout << rnnmhe::dump_json(rnnmhe::to_json(cfg)) << '\n';
      return kOk;
    }
    if (out_dir.empty()) out_dir = "runs/" + cfg.experiment;
    const rnnmhe::RunManifest m = rnnmhe::run(cfg, out_dir);
    std::cout << rnnmhe::dump_json(m.summary) << '\n';
    std::cerr << "wrote " << out_dir << "/run_manifest.json\n";
    return kOk;
  } catch (const rnnmhe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
