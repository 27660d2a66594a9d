#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ksi/error.hpp"
#include "ksi/experiment.hpp"
#include "ksi/io.hpp"

// The CLI subcommands as library functions, so tests can drive them directly.
namespace ksi::cli {

namespace fs = std::filesystem;

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kValidation = 1;
inline constexpr int kRuntime = 2;
inline constexpr int kUndefined = 3;

struct Overrides {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> matcher;
  std::optional<std::string> match_mode;
  std::optional<std::string> out;
  bool compare_baseline = false;
};

// Config file (if any) with command-line overrides applied on top.
inline exp::ExperimentConfig load_config(const Overrides& o) {
  nlohmann::json j = nlohmann::json::object();
  if (o.config) {
    if (!fs::exists(*o.config)) throw ValidationError("config file does not exist: " + o.config->string(), "config");
    j = io::read_json(*o.config);
    if (!j.is_object()) throw ValidationError("expected a JSON object", o.config->string());
  }
  if (o.seed) j["seed"] = *o.seed;
  if (!j.contains("seed")) throw ValidationError("is mandatory (config field or --seed)", "seed");
  exp::ExperimentConfig c = exp::experiment_from_json(j);
  if (o.mode) c.mode = enrich::mode_from_string(*o.mode);
  if (o.matcher) c.matcher.solver = match::solver_from_string(*o.matcher);
  if (o.match_mode) c.match_mode = match::match_mode_from_string(*o.match_mode);
  if (o.out) c.output_dir = *o.out;
  c.validate();
  return c;
}

namespace detail {

inline std::string pct(const std::optional<double>& v) { return v ? io::fmt(*v) : ""; }

inline std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d.json", i);
  return buf;
}

// Per-condition subdirectory when the config lists several conditions.
inline fs::path condition_dir(const exp::ExperimentConfig& c, const exp::Condition& cond) {
  return c.conditions.size() > 1 ? fs::path(c.output_dir) / cond.name : fs::path(c.output_dir);
}

inline std::string suffix(const exp::ExperimentConfig& c, const exp::Condition& cond) {
  return c.conditions.size() > 1 ? "_" + cond.name : "";
}

}  // namespace detail

// ---- generate -----------------------------------------------------------------------

inline int cmd_generate(const exp::ExperimentConfig& c) {
  const std::string hash = exp::config_hash(c);
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& cond : c.conditions) {
    const fs::path dir = detail::condition_dir(c, cond);
    const sim::Scene scene = sim::generate_scene(c.scene_for(cond));
    io::write_json(dir / "scene.json", sim::to_json(scene));
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < scene.trajectory.size(); ++i) {
      const auto f = sim::render_frame(scene, static_cast<int>(i));
      const std::string name = "frames/" + detail::frame_name(static_cast<int>(i));
      io::write_json(dir / name, sim::to_json(f));
      files.push_back(name);
    }
    conds.push_back({{"name", cond.name},
                     {"directory", fs::relative(dir, c.output_dir).generic_string()},
                     {"frames", files.size()},
                     {"trajectory_length_m", sim::trajectory_length(scene)},
                     {"files", files}});
  }
  io::write_json(fs::path(c.output_dir) / "manifest.json",
                 {{"config_hash", hash}, {"config", exp::to_json(c)}, {"conditions", conds}});
  return kOk;
}

// ---- match ----------------------------------------------------------------------------

inline int cmd_match(const exp::ExperimentConfig& c, bool compare_baseline) {
  const std::string hash = exp::config_hash(c);
  std::vector<std::string> header{"condition", "frame_a", "frame_b", "correct", "incorrect", "unmatched", "excluded",
                                  "accuracy"};
  if (compare_baseline)
    for (const char* h : {"baseline_correct", "baseline_incorrect", "baseline_accuracy", "gain"}) header.push_back(h);
  io::CsvTable table(header);
  io::CsvTable summary({"condition", "variant", "accuracy", "mean_pair_accuracy", "pairs", "defined_pairs"});
  nlohmann::json out{{"config_hash", hash}, {"conditions", nlohmann::json::array()}};
  for (const auto& cond : c.conditions) {
    exp::Context ctx(c, cond);
    const exp::Variant v = exp::variant_of(c);
    std::vector<nlohmann::json> pairs;
    const exp::MatchRun run = exp::run_match(ctx, v, [&](const exp::PairResult& p, const exp::EnrichedPair& ep) {
      pairs.push_back({{"frame_a", p.frame_a},
                       {"frame_b", p.frame_b},
                       {"matches", match::to_json(p.matches, ep.a, ep.b)},
                       {"accuracy", eval::to_json(p.accuracy)},
                       {"correspondence", eval::to_json(ctx.correspondence(p.frame_a))}});
    });
    std::optional<exp::MatchRun> base;
    if (compare_baseline) base = exp::run_match(ctx, exp::baseline_of(c));
    for (std::size_t k = 0; k < run.pairs.size(); ++k) {
      const auto& p = run.pairs[k];
      std::vector<std::string> row{cond.name,
                                   std::to_string(p.frame_a),
                                   std::to_string(p.frame_b),
                                   std::to_string(p.accuracy.correct),
                                   std::to_string(p.accuracy.incorrect),
                                   std::to_string(p.accuracy.unmatched),
                                   std::to_string(p.accuracy.excluded),
                                   p.accuracy.defined ? io::fmt(p.accuracy.accuracy) : ""};
      if (base) {
        const auto& b = base->pairs[k];
        row.push_back(std::to_string(b.accuracy.correct));
        row.push_back(std::to_string(b.accuracy.incorrect));
        row.push_back(b.accuracy.defined ? io::fmt(b.accuracy.accuracy) : "");
        row.push_back(p.accuracy.defined && b.accuracy.defined ? io::fmt(p.accuracy.accuracy - b.accuracy.accuracy) : "");
        pairs[k]["baseline_accuracy"] = eval::to_json(b.accuracy);
      }
      table.add(std::move(row));
    }
    auto add_summary = [&](const exp::MatchRun& r) {
      const auto defined = std::count_if(r.pairs.begin(), r.pairs.end(), [](const auto& p) { return p.accuracy.defined; });
      summary.add({cond.name, r.variant.label, detail::pct(r.accuracy()), detail::pct(r.mean_pair_accuracy()),
                   std::to_string(r.pairs.size()), std::to_string(defined)});
    };
    add_summary(run);
    if (base) add_summary(*base);
    out["conditions"].push_back({{"name", cond.name}, {"variant", v.label}, {"pairs", pairs}});
  }
  const fs::path dir(c.output_dir);
  io::write_json(dir / "matches.json", out);
  io::write_text(dir / "accuracy.csv", table.render(hash));
  io::write_text(dir / "accuracy_summary.csv", summary.render(hash));
  return kOk;
}

// ---- pose -------------------------------------------------------------------------------

inline int cmd_pose(const exp::ExperimentConfig& c, bool compare_baseline) {
  const std::string hash = exp::config_hash(c);
  io::CsvTable table({"condition", "variant", "rpe_mean_cm", "rpe_std_cm", "ape_mean_cm", "ape_std_cm", "frames",
                      "skipped", "flagged"});
  const fs::path dir(c.output_dir);
  bool undefined = false;
  for (const auto& cond : c.conditions) {
    exp::Context ctx(c, cond);
    std::vector<exp::Variant> variants{exp::variant_of(c)};
    if (compare_baseline) variants.push_back(exp::baseline_of(c));
    bool gt_written = false;
    for (const auto& v : variants) {
      const exp::PoseRun run = exp::run_pose(ctx, v);
      if (run.estimate.size() < 2) undefined = true;
      if (!gt_written) {
        io::write_text(dir / ("trajectory_gt" + detail::suffix(c, cond) + ".tum"), pose::to_tum(run.ground_truth));
        gt_written = true;
      }
      io::write_text(dir / ("trajectory_" + v.label + detail::suffix(c, cond) + ".tum"), pose::to_tum(run.estimate));
      table.add({cond.name, v.label, io::fmt(run.rpe.mean), io::fmt(run.rpe.std), io::fmt(run.ape.mean),
                 io::fmt(run.ape.std), std::to_string(run.estimate.size()), std::to_string(run.skipped),
                 std::to_string(run.estimate.flagged_count())});
    }
  }
  io::write_text(dir / "trajectory_errors.csv", table.render(hash));
  return undefined ? kUndefined : kOk;
}

// ---- localize ----------------------------------------------------------------------------

inline int cmd_localize(const exp::ExperimentConfig& c, bool compare_baseline) {
  const std::string hash = exp::config_hash(c);
  io::CsvTable table({"condition", "variant", "mte_cm", "recall_0.5m", "recall_1m", "recall_5m", "queries", "failures",
                      "outliers"});
  bool undefined = false;
  for (const auto& cond : c.conditions) {
    exp::Context ctx(c, cond);
    std::vector<exp::Variant> variants{exp::variant_of(c)};
    if (compare_baseline) variants.push_back(exp::baseline_of(c));
    for (const auto& v : variants) {
      const auto run = exp::run_localize(ctx, v);
      const auto& r = run.report;
      if (!r.defined || !r.mte_defined) undefined = true;
      table.add({cond.name, v.label, r.mte_defined ? io::fmt(r.mte_cm) : "", io::fmt(r.recall_05), io::fmt(r.recall_1),
                 io::fmt(r.recall_5), std::to_string(r.queries), std::to_string(r.failures), std::to_string(r.outliers)});
    }
  }
  io::write_text(fs::path(c.output_dir) / "localization.csv", table.render(hash));
  return undefined ? kUndefined : kOk;
}

// ---- ablate --------------------------------------------------------------------------------

inline int cmd_ablate(const exp::ExperimentConfig& c, const std::string& which) {
  if (which != "embed" && which != "normalize" && which != "matchmode")
    throw ValidationError("expected embed|normalize|matchmode, got '" + which + "'", "ablation");
  const std::string hash = exp::config_hash(c);
  const fs::path dir(c.output_dir);
  io::CsvTable table({"condition", "configuration", "accuracy", "mean_pair_accuracy"});
  io::CsvTable domains({"condition", "configuration", "matches", "S-S", "S-B", "B-B", "B-S"});
  for (const auto& cond : c.conditions) {
    exp::Context ctx(c, cond);
    std::vector<exp::Variant> grid;
    if (which == "embed") {
      exp::Variant add = exp::variant_of(c, "addition");
      add.mode = enrich::Mode::Add;
      exp::Variant cat = exp::variant_of(c, "concat");
      cat.mode = enrich::Mode::Concat;
      exp::Variant off = exp::baseline_of(c);
      off.label = "w/o KSI";
      grid = {add, cat, off};
    } else if (which == "normalize") {
      for (bool sn : {false, true})
        for (bool kn : {false, true}) {
          exp::Variant v = exp::variant_of(c, std::string("SN=") + (sn ? "on" : "off") + " KN=" + (kn ? "on" : "off"));
          v.norm = {sn, kn};
          grid.push_back(v);
        }
    } else {
      for (auto m : {match::MatchMode::Homogeneous, match::MatchMode::Heterogeneous}) {
        exp::Variant v = exp::variant_of(c, match::to_string(m));
        v.match_mode = m;
        grid.push_back(v);
      }
    }
    for (const auto& v : grid) {
      const auto run = exp::run_match(ctx, v);
      table.add({cond.name, v.label, detail::pct(run.accuracy()), detail::pct(run.mean_pair_accuracy())});
      if (which == "matchmode") {
        const auto d = run.domain_totals();
        domains.add({cond.name, v.label, std::to_string(d.total), io::fmt(d.ss), io::fmt(d.sb), io::fmt(d.bb),
                     io::fmt(d.bs)});
      }
    }
  }
  io::write_text(dir / ("ablation_" + which + ".csv"), table.render(hash));
  if (which == "matchmode") io::write_text(dir / "ablation_matchmode_domains.csv", domains.render(hash));
  return kOk;
}

// ---- report --------------------------------------------------------------------------------

namespace detail {

struct CsvFile {
  std::string hash;
  std::vector<std::vector<std::string>> rows;  // header first
};

inline CsvFile parse_csv(const std::string& text) {
  CsvFile f;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    if (line.rfind("# config_hash=", 0) == 0) {
      f.hash = line.substr(14);
      continue;
    }
    std::vector<std::string> cells;
    std::size_t a = 0;
    while (true) {
      const std::size_t b = line.find(',', a);
      cells.push_back(line.substr(a, b == std::string::npos ? std::string::npos : b - a));
      if (b == std::string::npos) break;
      a = b + 1;
    }
    f.rows.push_back(std::move(cells));
  }
  return f;
}

}  // namespace detail

// Markdown summary of every CSV in the directory, in file-name order.
inline std::string render_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> csvs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
  std::sort(csvs.begin(), csvs.end());
  std::string md = "# KSI results\n\n";
  if (csvs.empty()) return md + "No results found in this directory.\n";
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    const auto m = io::read_json(manifest);
    md += "Scene manifest config hash: `" + m.value("config_hash", std::string("?")) + "`\n\n";
  }
  for (const auto& p : csvs) {
    const auto f = detail::parse_csv(io::read_text(p));
    md += "## " + p.filename().string() + "\n\n";
    md += "config hash: `" + (f.hash.empty() ? std::string("missing") : f.hash) + "`\n\n";
    if (f.rows.empty()) {
      md += "(empty file)\n\n";
      continue;
    }
    if (f.rows.size() == 1) {
      md += "(no rows)\n\n";
      continue;
    }
    const std::size_t width = f.rows[0].size();
    for (std::size_t r = 0; r < f.rows.size(); ++r) {
      md += "|";
      for (std::size_t k = 0; k < width; ++k) md += " " + (k < f.rows[r].size() ? f.rows[r][k] : std::string()) + " |";
      md += "\n";
      if (r == 0) {
        md += "|";
        for (std::size_t k = 0; k < width; ++k) md += " --- |";
        md += "\n";
      }
    }
    md += "\n";
  }
  return md;
}

inline int cmd_report(const fs::path& dir) {
  io::write_text(dir / "report.md", render_report(dir));
  return kOk;
}

}  // namespace ksi::cli
