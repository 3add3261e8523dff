#pragma once

// Command-line front end: simulate, experiment, solve, export-heatmap.
// Exit codes: 0 success, 1 runtime or input-data failure, 2 usage or
// configuration error. Every file a subcommand writes is staged in a sibling
// directory and renamed into place only after all of them are complete.

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rlmatch/config.hpp"
#include "rlmatch/experiment.hpp"
#include "rlmatch/matcher.hpp"
#include "rlmatch/simulator.hpp"
#include "rlmatch/text.hpp"
#include "rlmatch/value_function.hpp"

namespace rlmatch::cli {

namespace fs = std::filesystem;

// Failure categories, each with its own message prefix and exit code.
struct Failure {
  const char* prefix;
  int code;
  std::string message;
};

inline Failure usage_error(std::string m) { return {"error[usage]", 2, std::move(m)}; }
inline Failure config_io_error(std::string m) { return {"error[config-io]", 2, std::move(m)}; }
inline Failure config_error(std::string m) { return {"error[config]", 2, std::move(m)}; }
inline Failure input_error(std::string m) { return {"error[input]", 1, std::move(m)}; }
inline Failure runtime_error(std::string m) { return {"error[runtime]", 1, std::move(m)}; }

// Writes into a hidden sibling of the target directory; commit() swaps it in.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path target) : target_(std::move(target)) {
    if (target_.filename().empty()) target_ = target_.parent_path();
    const fs::path parent = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    stage_ = parent / ("." + target_.filename().string() + ".staging-" + std::to_string(::getpid()));
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }

  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  ~StagedOutput() {
    std::error_code ec;
    if (!committed_) fs::remove_all(stage_, ec);
  }

  void write_text(const std::string& name, const std::string& text) { write_bytes(name, text.data(), text.size()); }

  void write_bytes(const std::string& name, const void* data, std::size_t n) {
    std::ofstream out(stage_ / name, std::ios::binary);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    out.close();
    if (!out) throw std::runtime_error("cannot write " + (stage_ / name).string());
  }

  void commit() {
    const fs::path old = target_.parent_path() / ("." + target_.filename().string() + ".old-" + std::to_string(::getpid()));
    const bool existed = fs::exists(target_);
    if (existed) {
      if (!fs::is_directory(target_)) throw std::runtime_error("output path exists and is not a directory: " + target_.string());
      fs::rename(target_, old);
    }
    fs::rename(stage_, target_);
    committed_ = true;
    if (existed) fs::remove_all(old);
  }

 private:
  fs::path target_;
  fs::path stage_;
  bool committed_ = false;
};

inline std::optional<std::string> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  if (in.bad()) return std::nullopt;
  return ss.str();
}

inline RunConfig load_config(const std::string& path) {
  if (fs::is_directory(path)) throw config_io_error("cannot read config file '" + path + "': is a directory");
  const auto text = read_file(path);
  if (!text) throw config_io_error("cannot read config file '" + path + "'");
  try {
    return parse_config(*text);
  } catch (const ConfigError& e) {
    std::string m = "invalid config '" + path + "':";
    for (const auto& p : e.problems()) m += "\n  " + p.field + ": " + p.message;
    throw config_error(m);
  }
}

// Edge list: "rider driver weight [pickup_s]" per line, '#' starts a comment.
// Labels are free-form; ids follow first appearance, which is also the
// rider order the greedy baseline uses.
struct EdgeFile {
  std::vector<CandidateEdge> edges;
  std::vector<std::string> rider_labels;
  std::vector<std::string> driver_labels;
  std::vector<RiderId> rider_order;
};

inline EdgeFile parse_edges(const std::string& text, const std::string& name) {
  EdgeFile f;
  std::map<std::string, std::uint64_t> riders, drivers;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    auto bad = [&](const std::string& m) { return input_error(name + ":" + std::to_string(lineno) + ": " + m); };
    if (tok.size() < 3 || tok.size() > 4) throw bad("expected 'rider driver weight [pickup_s]'");
    auto number = [&](const std::string& s, const char* what) {
      double v = 0.0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw bad(std::string("bad ") + what + " '" + s + "'");
      return v;
    };
    CandidateEdge e;
    e.weight = number(tok[2], "weight");
    e.pickup_s = tok.size() == 4 ? number(tok[3], "pickup_s") : 0.0;
    auto [ri, rnew] = riders.try_emplace(tok[0], riders.size());
    if (rnew) {
      f.rider_labels.push_back(tok[0]);
      f.rider_order.push_back(ri->second);
    }
    auto [di, dnew] = drivers.try_emplace(tok[1], drivers.size());
    if (dnew) f.driver_labels.push_back(tok[1]);
    e.rider = ri->second;
    e.driver = di->second;
    f.edges.push_back(e);
  }
  return f;
}

inline std::string summary_tsv(const MetricsLog& log) {
  const auto& t = log.totals;
  std::ostringstream os;
  os << "# seed=" << log.seed << "\nmetric\tvalue\n";
  os << "requests\t" << t.requests << "\ncompleted\t" << t.completed << "\nin_progress\t" << t.in_progress
     << "\ncancelled\t" << t.cancelled << "\nexpired\t" << t.expired << "\nwaiting\t" << t.waiting << "\nmatches\t"
     << t.matches << "\ntd_updates\t" << t.td_updates << "\ndriver_online_s\t" << fmt_double(t.driver_online_s)
     << "\ndemand_supply_ratio\t" << fmt_double(t.demand_supply_ratio()) << "\n";
  return os.str();
}

inline void write_run_outputs(StagedOutput& out, const MetricsLog& log, const ValueTable& table,
                              const RunConfig& cfg) {
  std::ostringstream events, hourly;
  write_events_tsv(events, log);
  write_hourly_tsv(hourly, log);
  out.write_text("events.tsv", events.str());
  out.write_text("hourly.tsv", hourly.str());
  out.write_text("summary.tsv", summary_tsv(log));
  const auto bytes = snapshot(table);
  out.write_bytes("value_table.bin", bytes.data(), bytes.size());
  out.write_text("config.json", serialize_config(cfg));
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string policy;
  std::string out_dir;
  bool freeze = false;
  std::string edges_path;
  std::string snapshot_path;
  double time_s = 0.0;
  int precision = 0;
};

inline RunConfig effective_config(const Options& o) {
  RunConfig cfg = load_config(o.config_path);
  if (o.seed) cfg.scenario.rng_seed = *o.seed;
  if (!o.policy.empty()) cfg.policy = *parse_policy(o.policy);
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  return cfg;
}

inline int cmd_simulate(const Options& o, std::ostream& out) {
  const RunConfig cfg = effective_config(o);
  auto res = run(cfg.scenario, cfg.engine(), cfg.policy, true, ValueTable(cfg.learner.default_value));
  StagedOutput staged(cfg.output_dir);
  write_run_outputs(staged, res.log, res.table, cfg);
  staged.commit();
  const auto& t = res.log.totals;
  out << "simulate seed=" << cfg.scenario.rng_seed << " policy=" << to_string(cfg.policy)
      << " requests=" << t.requests << " completed=" << t.completed << " expired=" << t.expired
      << " cancelled=" << t.cancelled << " -> " << cfg.output_dir << "\n";
  return 0;
}

inline int cmd_experiment(const Options& o, std::ostream& out) {
  const RunConfig cfg = effective_config(o);
  const double span = 2.0 * cfg.experiment.week_s;
  if (cfg.scenario.horizon_s != span)
    throw config_error("invalid config '" + o.config_path + "':\n  scenario.horizon_s: must equal two weeks (" +
                       fmt_double(span) + " s, twice experiment.week_s) for the experiment subcommand");
  const std::uint64_t seed = cfg.scenario.rng_seed;
  const auto plan = make_plan(cfg.experiment.region_id, cfg.experiment.bucket_len_s, seed, cfg.experiment.week_s);
  auto res = run_switchback(cfg.scenario, cfg.engine(), plan, cfg.burn, ValueTable(cfg.learner.default_value),
                            switchback_options(o.freeze));
  StagedOutput staged(cfg.output_dir);
  std::ostringstream plan_tsv, buckets_tsv, effects_tsv;
  write_plan_tsv(plan_tsv, plan, seed);
  write_buckets_tsv(buckets_tsv, res.buckets, seed);
  write_effects_tsv(effects_tsv, res.estimates, seed);
  staged.write_text("plan.tsv", plan_tsv.str());
  staged.write_text("buckets.tsv", buckets_tsv.str());
  staged.write_text("effects.tsv", effects_tsv.str());
  write_run_outputs(staged, res.log, res.table, cfg);
  staged.commit();
  out << effects_tsv.str();
  return 0;
}

inline int cmd_solve(const Options& o, std::ostream& out) {
  const auto text = read_file(o.edges_path);
  if (!text || fs::is_directory(o.edges_path)) throw input_error("cannot read edges file '" + o.edges_path + "'");
  const EdgeFile f = parse_edges(*text, o.edges_path);
  const Policy policy = o.policy.empty() ? Policy::rl : *parse_policy(o.policy);
  MatchPlan plan;
  try {
    plan = policy == Policy::rl ? solve_assignment(f.edges) : greedy_assignment(f.edges, f.rider_order);
  } catch (const InvalidInput& e) {
    throw input_error(o.edges_path + ": " + e.what());
  }
  std::map<std::pair<RiderId, DriverId>, const CandidateEdge*> by_pair;
  for (const auto& e : f.edges) by_pair[{e.rider, e.driver}] = &e;

  std::ostringstream os;
  os << "# seed=" << o.seed.value_or(0) << "\n";
  os << "# policy=" << to_string(policy) << " objective=" << fmt_double(plan.objective)
     << " matched=" << plan.pairs.size() << "\n";
  os << "rider\tdriver\tweight\tpickup_s\n";
  double pickup = 0.0;
  for (const auto& [r, d] : plan.pairs) {
    const CandidateEdge* e = by_pair.at({r, d});
    pickup += e->pickup_s;
    os << f.rider_labels[r] << '\t' << f.driver_labels[d] << '\t' << fmt_double(e->weight) << '\t'
       << fmt_double(e->pickup_s) << '\n';
  }
  for (RiderId r : plan.unmatched_riders) os << f.rider_labels[r] << "\t-\t-\t-\n";
  for (DriverId d : plan.unmatched_drivers) os << "-\t" << f.driver_labels[d] << "\t-\t-\n";
  os << "# total_pickup_s=" << fmt_double(pickup) << "\n";

  if (!o.out_dir.empty()) {
    StagedOutput staged(o.out_dir);
    staged.write_text("plan.tsv", os.str());
    staged.commit();
  }
  out << os.str();
  return 0;
}

inline int cmd_export_heatmap(const Options& o, std::ostream& out) {
  const RunConfig cfg = effective_config(o);
  const auto bytes = read_file(o.snapshot_path);
  if (!bytes || fs::is_directory(o.snapshot_path))
    throw input_error("cannot read snapshot '" + o.snapshot_path + "'");
  ValueTable table;
  try {
    table = restore(std::span(reinterpret_cast<const std::uint8_t*>(bytes->data()), bytes->size()));
  } catch (const ParseError& e) {
    throw input_error("snapshot '" + o.snapshot_path + "': " + e.what());
  }
  if (o.time_s < 0.0) throw usage_error("--time must be >= 0");
  const int precision = o.precision ? o.precision : cfg.coding.precision;
  if (precision < 1 || precision > 12) throw usage_error("--precision must be in [1, 12]");
  const auto rows = export_heatmap(table, o.time_s, cfg.scenario.region, cfg.coding, precision);
  std::ostringstream os;
  write_heatmap_tsv(os, rows, cfg.scenario.rng_seed);
  StagedOutput staged(cfg.output_dir);
  staged.write_text("heatmap.tsv", os.str());
  staged.commit();
  out << "export-heatmap cells=" << rows.size() << " -> " << cfg.output_dir << "\n";
  return 0;
}

inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ridesharing marketplace simulator with an online value-function matching engine", "rlmatch"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Run configuration (JSON)")->required();
    sub->add_option("--seed", o.seed, "Overrides scenario.rng_seed; echoed into every output");
    sub->add_option("--out", o.out_dir, "Output directory (overrides output_dir)");
  };
  auto policy_check = CLI::IsMember({"greedy", "rl"});

  auto* simulate = app.add_subcommand("simulate", "Run one marketplace simulation");
  add_config(simulate);
  simulate->add_option("--policy", o.policy, "Matching policy")->check(policy_check);

  auto* experiment = app.add_subcommand("experiment", "Run a two-week switchback experiment");
  add_config(experiment);
  experiment->add_flag("--freeze-learning-in-control", o.freeze, "No value updates during control buckets");

  auto* solve = app.add_subcommand("solve", "Solve one assignment from an edge list");
  solve->add_option("--edges", o.edges_path, "Edge list: rider driver weight [pickup_s]")->required();
  solve->add_option("--policy", o.policy, "rl: maximum weight matching; greedy: nearest driver per rider")
      ->check(policy_check);
  solve->add_option("--seed", o.seed, "Echoed into the output header");
  solve->add_option("--out", o.out_dir, "Also write plan.tsv here");

  auto* heatmap = app.add_subcommand("export-heatmap", "Write V at every cell center of the region");
  add_config(heatmap);
  heatmap->add_option("--snapshot", o.snapshot_path, "Value table snapshot")->required();
  heatmap->add_option("--time", o.time_s, "Timestamp in seconds");
  heatmap->add_option("--precision", o.precision, "Cell precision (default: coding.precision)");

  try {
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[usage] " << e.what() << "\n" << "run 'rlmatch --help' for usage\n";
    return 2;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(o, out);
    if (experiment->parsed()) return cmd_experiment(o, out);
    if (solve->parsed()) return cmd_solve(o, out);
    if (heatmap->parsed()) return cmd_export_heatmap(o, out);
  } catch (const Failure& f) {
    err << f.prefix << ' ' << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    err << "error[runtime] " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(std::move(args), std::cout, std::cerr);
}

}  // namespace rlmatch::cli
