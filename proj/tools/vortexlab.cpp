// vortexlab: runs the experiment presets and checks their reports.
//
//   vortexlab <pde|simulate|chaos|regularity|ldp|fluct> --config FILE [--seed S] [--out DIR] [--threads N]
//   vortexlab report --out DIR
//
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 failed check.

#include <omp.h>

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "vortex/runner.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 0;
};

void add_common(CLI::App* sub, Options& o, bool needs_config) {
  auto* c = sub->add_option("--config", o.config, "experiment config file (key = value lines)");
  if (needs_config) c->required();
  sub->add_option("--seed", o.seed, "base seed; run r uses seed + r");
  sub->add_option("--out", o.out, "output directory (overrides output_dir)");
  sub->add_option("--threads", o.threads, "OpenMP threads (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);
}

int report(const Options& o) {
  std::string dir = o.out;
  if (dir.empty() && !o.config.empty()) dir = vortex::parse_config(o.config).output_dir;
  if (dir.empty()) {
    std::cerr << "report needs --out or --config\n";
    return vortex::exit_config;
  }
  const auto outcome = vortex::verify_output(dir);
  for (const auto& p : outcome.problems) std::cout << "PROBLEM " << p << '\n';
  if (outcome.error_record) std::cout << "ERROR run ended with a numerical failure (see error.json)\n";
  for (const auto& c : outcome.checks)
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << vortex::detail::format_double(c.value) << '\n';
  return outcome.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random vortex experiments"};
  app.require_subcommand(1);
  Options opt;
  for (const char* name : {"pde", "simulate", "chaos", "regularity", "ldp", "fluct"})
    add_common(app.add_subcommand(name, std::string("run the ") + name + " experiment"), opt, true);
  add_common(app.add_subcommand("report", "verify manifest hashes and print recorded checks"), opt, false);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : vortex::exit_config;
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  if (opt.threads > 0) omp_set_num_threads(opt.threads);

  try {
    if (sub == "report") return report(opt);
    auto cfg = vortex::parse_config(opt.config);
    if (opt.seed) cfg.base_seed = *opt.seed;
    if (!opt.out.empty()) cfg.output_dir = opt.out;
    return vortex::run_subcommand(sub, cfg, std::cout);
  } catch (const vortex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return vortex::exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return vortex::exit_numerical;
  }
}
