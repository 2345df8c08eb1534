#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sfpe/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Monte-Carlo Picard solver for stochastic fixed point equations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("sfpe ") + sfpe::cli::kVersion);

  sfpe::cli::Overrides o;
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", config, "run configuration (INI)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--threads", threads, "worker threads (default: SFPE_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
  };

  auto* solve = app.add_subcommand("solve", "Picard iteration on the configured grid");
  common(solve);

  auto* estimate = app.add_subcommand("estimate", "nested Monte-Carlo estimate at one point");
  common(estimate);
  double t = 0.0;
  std::vector<double> x;
  std::size_t depth = 0;
  std::string widths;
  auto* t_opt = estimate->add_option("--t", t, "time");
  auto* x_opt = estimate->add_option("--x", x, "point, comma separated")->delimiter(',');
  auto* depth_opt = estimate->add_option("--depth", depth, "recursion depth");
  auto* widths_opt = estimate->add_option("--widths", widths, "Ng,Nf per level, levels separated by ';'");

  auto* check = app.add_subcommand("check-lyapunov", "generator inequality and supermartingale test");
  common(check);

  auto* contraction = app.add_subcommand("verify-contraction", "measured contraction ratio against L / lambda");
  common(contraction);
  std::vector<double> lambdas;
  auto* sweep_opt = contraction->add_option("--lambda-sweep", lambdas, "lambda values, comma separated")->delimiter(',');

  auto* couple = app.add_subcommand("couple-test", "exact coupling and freeze checks");
  common(couple);

  auto* version = app.add_subcommand("version", "print the version");

  CLI11_PARSE(app, argc, argv);

  for (auto* sub : {solve, estimate, check, contraction, couple}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--out")) o.out = out;
    if (sub->count("--threads")) o.threads = threads;
  }
  if (t_opt->count()) o.t = t;
  if (x_opt->count()) o.x = x;
  if (depth_opt->count()) o.depth = depth;
  if (widths_opt->count()) o.widths = widths;
  if (sweep_opt->count()) o.lambdas = lambdas;

  if (version->parsed()) return sfpe::cli::version();
  const std::string command = app.get_subcommands().front()->get_name();
  return sfpe::cli::run(command, config, o);
}
