#include <CLI11.hpp>

#include <iostream>

#include "ksi/commands.hpp"

namespace {

using ksi::cli::Overrides;

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "experiment config (JSON)");
  sub->add_option("--seed", o.seed, "experiment seed; overrides the config");
  sub->add_option("--mode", o.mode, "enrichment: off|add|concat");
  sub->add_option("--matcher", o.matcher, "solver: mnn|exact|sinkhorn");
  sub->add_option("--match-mode", o.match_mode, "heterogeneous|homogeneous");
  sub->add_flag("--compare-baseline", o.compare_baseline, "also run without enrichment");
  sub->add_option("--out", o.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint semantic integration experiments on a simulated vineyard"};
  app.require_subcommand(1);
  Overrides o;
  std::string which;
  std::string report_dir;

  auto* gen = app.add_subcommand("generate", "simulate a scene and write scene.json, frames/ and manifest.json");
  auto* mat = app.add_subcommand("match", "match consecutive frames; writes matches.json and accuracy CSVs");
  auto* pos = app.add_subcommand("pose", "visual odometry; writes TUM trajectories and trajectory_errors.csv");
  auto* loc = app.add_subcommand("localize", "PnP localization of odd frames against even frames");
  auto* abl = app.add_subcommand("ablate", "one of the three ablation sweeps");
  auto* rep = app.add_subcommand("report", "summarize the CSVs of an output directory into report.md");
  for (auto* s : {gen, mat, pos, loc, abl}) add_common(s, o);
  abl->add_option("which", which, "embed|normalize|matchmode")->required();
  rep->add_option("dir", report_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ksi::cli::kValidation;
  }

  try {
    if (rep->parsed()) return ksi::cli::cmd_report(report_dir);
    const auto cfg = ksi::cli::load_config(o);
    if (gen->parsed()) return ksi::cli::cmd_generate(cfg);
    if (mat->parsed()) return ksi::cli::cmd_match(cfg, o.compare_baseline);
    if (pos->parsed()) return ksi::cli::cmd_pose(cfg, o.compare_baseline);
    if (loc->parsed()) return ksi::cli::cmd_localize(cfg, o.compare_baseline);
    if (abl->parsed()) return ksi::cli::cmd_ablate(cfg, which);
  } catch (const ksi::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return ksi::cli::kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ksi::cli::kRuntime;
  }
  return ksi::cli::kRuntime;
}
