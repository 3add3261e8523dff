// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "brute_force_matching.hpp"
#include "rlmatch/cli.hpp"
#include "rlmatch/config.hpp"
#include "rlmatch/experiment.hpp"
#include "rlmatch/matcher.hpp"
#include "rlmatch/value_function.hpp"

using namespace rlmatch;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& why) {
    if (!ok) {
      if (pass) detail << "; ";
      pass = false;
      detail << "[" << why << "]";
    }
  }
};

RunConfig load(const std::string& name) {
  std::ifstream in(std::string(RLMATCH_CONFIG_DIR) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

struct SeedStats {
  double mean = 0.0;
  double se = 0.0;
};

SeedStats mean_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  SeedStats s;
  for (double x : xs) s.mean += x / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.se = std::sqrt(ss / (n - 1.0) / n);
  return s;
}

WeightedFactorSet single(int i) { return {{Factor::spatial(CellId(static_cast<std::uint64_t>(i), 5)), 1.0}}; }

// ---------------------------------------------------------------------------

void two_by_two(Verdict& v) {
  const std::vector<CandidateEdge> edges{
      {0, 0, -180.0, 180.0}, {0, 1, -120.0, 120.0}, {1, 0, -600.0, 600.0}, {1, 1, -300.0, 300.0}};
  std::map<std::pair<RiderId, DriverId>, double> pickup;
  for (const auto& e : edges) pickup[{e.rider, e.driver}] = e.pickup_s;
  auto total_pickup = [&](const MatchPlan& p) {
    double s = 0.0;
    for (const auto& pr : p.pairs) s += pickup.at(pr);
    return s;
  };

  solve_assignment(edges);  // warm-up
  const auto t0 = Clock::now();
  const MatchPlan opt = solve_assignment(edges);
  const double elapsed = seconds_since(t0);
  const std::vector<RiderId> order{0, 1};
  const MatchPlan greedy = greedy_assignment(edges, order);

  const std::vector<std::pair<RiderId, DriverId>> want{{0, 0}, {1, 1}};
  v.require(opt.pairs == want, "optimal pairs are not (1,A),(2,B)");
  v.require(total_pickup(opt) == 480.0, "optimal pickup != 480");
  v.require(total_pickup(greedy) == 720.0, "greedy pickup != 720");
  const double gap = total_pickup(greedy) / total_pickup(opt) - 1.0;
  v.require(gap == 0.5, "gap != 50%");
  v.require(elapsed < 1e-3, "solve took >= 1 ms");
  v.detail << "optimal=" << total_pickup(opt) << "s greedy=" << total_pickup(greedy) << "s gap="
           << fmt_double(100.0 * gap) << "% solve=" << fmt_double(elapsed * 1e6) << "us";
}

void solver_optimality(Verdict& v) {
  std::mt19937_64 rng(20240601);
  const auto t0 = Clock::now();
  int mismatches = 0;
  std::size_t edges_seen = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const int nr = 1 + static_cast<int>(rng() % 7), nd = 1 + static_cast<int>(rng() % 7);
    const double density = 0.2 + 0.8 * sim_detail::uniform01(rng);
    std::vector<CandidateEdge> edges;
    for (int r = 0; r < nr; ++r)
      for (int d = 0; d < nd; ++d)
        if (sim_detail::uniform01(rng) < density) {
          // Integral weights keep every sum exact; some positive, many tied.
          const double w = static_cast<double>(static_cast<int>(rng() % 41) - 30);
          edges.push_back({static_cast<RiderId>(r), static_cast<DriverId>(d), w, 0.0});
        }
    edges_seen += edges.size();
    const MatchPlan plan = solve_assignment(edges);
    const auto best = testing_oracle::best_matching(edges);
    double sum = 0.0;
    std::map<std::pair<RiderId, DriverId>, double> w;
    for (const auto& e : edges) w[{e.rider, e.driver}] = e.weight;
    for (const auto& pr : plan.pairs) sum += w.at(pr);
    if (plan.objective != best.weight || plan.pairs.size() != best.cardinality || sum != plan.objective) ++mismatches;
  }
  const double elapsed = seconds_since(t0);
  v.require(mismatches == 0, std::to_string(mismatches) + " instances differ from brute force");
  v.require(elapsed < 10.0, "runtime >= 10 s");
  v.detail << "instances=1000 edges=" << edges_seen << " mismatches=" << mismatches
           << " runtime=" << fmt_double(elapsed) << "s";
}

void td_fixed_point(Verdict& v) {
  LearnerConfig cfg;
  cfg.alpha = 0.05;
  cfg.gamma = 0.995;
  // A -> B pays 7 over 30 s, B -> A pays 2 over 90 s.
  const double ra = 7.0, da = 30.0, rb = 2.0, db = 90.0;
  const double ga = std::pow(cfg.gamma, da), gb = std::pow(cfg.gamma, db);
  // VA - ga VB = ra; -gb VA + VB = rb.
  const double det = 1.0 - ga * gb;
  const double va = (ra + ga * rb) / det, vb = (rb + gb * ra) / det;

  ValueTable t;
  const auto a = single(0), b = single(1);
  int first_within = -1;
  double worst_after = 0.0, err = 0.0;
  for (int updates = 2; updates <= 100000; updates += 2) {
    td_update(t, Transition::trip(a, b, ra, da), cfg);
    td_update(t, Transition::trip(b, a, rb, db), cfg);
    err = std::max(std::abs(evaluate(t, a) - va), std::abs(evaluate(t, b) - vb));
    if (first_within < 0 && err < 1e-2) first_within = updates;
    if (first_within >= 0) worst_after = std::max(worst_after, err);
  }
  v.require(first_within >= 0, "never within 1e-2 of the Bellman solution");
  v.require(worst_after < 1e-2, "left the 1e-2 band after entering it");
  v.detail << "V*=(" << fmt_double(va) << ", " << fmt_double(vb) << ") within 1e-2 after " << first_within
           << " updates, worst later error=" << fmt_double(worst_after) << " final error after 1e5=" << fmt_double(err);
}

void tabular_equivalence(Verdict& v) {
  LearnerConfig cfg;
  cfg.alpha = 0.05;
  cfg.gamma = 0.999;
  std::mt19937_64 rng(77);
  std::vector<double> oracle(5, 0.0);
  ValueTable t;
  int state = 0;
  double worst = 0.0;
  for (int step = 0; step < 10000; ++step) {
    const int next = static_cast<int>(rng() % 5);
    const double reward = static_cast<double>(rng() % 4000) / 100.0;
    const double dur = 1.0 + static_cast<double>(rng() % 1200);
    oracle[state] += cfg.alpha * (reward + std::pow(cfg.gamma, dur) * oracle[next] - oracle[state]);
    td_update(t, Transition::trip(single(state), single(next), reward, dur), cfg);
    for (int s = 0; s < 5; ++s) worst = std::max(worst, std::abs(evaluate(t, single(s)) - oracle[s]));
    state = next;
  }
  v.require(worst <= 1e-9, "per-step deviation > 1e-9");
  v.detail << "steps=10000 max_deviation=" << fmt_double(worst);
}

void advantage_identities(Verdict& v) {
  std::mt19937_64 rng(5);
  LearnerConfig cfg;
  int bad_p1 = 0, bad_v0 = 0;
  for (int i = 0; i < 1000; ++i) {
    ValueTable t;
    t.set(single(0).front().factor, 1000.0 * sim_detail::uniform01(rng), 1);
    t.set(single(1).front().factor, 1000.0 * sim_detail::uniform01(rng), 1);
    const double r = 100.0 * sim_detail::uniform01(rng);
    const double d = 1.0 + 3600.0 * sim_detail::uniform01(rng);
    const double p = sim_detail::uniform01(rng);
    if (advantage(t, single(0), single(1), r, d, 1.0, cfg) != r) ++bad_p1;
    if (advantage(ValueTable{}, single(0), single(1), r, d, p, cfg) != r) ++bad_v0;
  }
  v.require(bad_p1 == 0, "advantage(p=1) != r");
  v.require(bad_v0 == 0, "advantage(V=0) != r");
  v.detail << "inputs=1000 p=1 failures=" << bad_p1 << " V=0 failures=" << bad_v0;
}

void plan_structure(Verdict& v) {
  const double lens[] = {3600.0, 7200.0, 14400.0, 21600.0};
  int broken = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto plan = make_plan("region-" + std::to_string(seed % 7), lens[seed % 4], seed);
    const std::size_t n = plan.buckets_per_week();
    std::size_t treated = 0;
    bool ok = n >= 2 && n % 2 == 0;
    for (std::size_t b = 0; b < n && ok; ++b) {
      ok = plan.arm(2, b) == opposite(plan.arm(1, b));
      if (b % 2 == 1) ok = ok && plan.arm(1, b) == opposite(plan.arm(1, b - 1));
      treated += (plan.arm(1, b) == Arm::treatment) + (plan.arm(2, b) == Arm::treatment);
    }
    ok = ok && treated * 2 == plan.total_buckets();
    broken += !ok;
  }
  v.require(broken == 0, std::to_string(broken) + " plans violate the structure");
  v.detail << "plans=10000 violations=" << broken;
}

void aa_neutrality(Verdict& v) {
  const RunConfig base = load("undersupplied.json");
  const SwitchbackOptions greedy_both{{Policy::greedy, true}, {Policy::greedy, true}};
  std::map<std::string, std::vector<double>> rel;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    RunConfig cfg = base;
    cfg.scenario.rng_seed = seed;
    const auto plan = make_plan(cfg.experiment.region_id, cfg.experiment.bucket_len_s, seed, cfg.experiment.week_s);
    const auto res = run_switchback(cfg.scenario, cfg.engine(), plan, cfg.burn,
                                    ValueTable(cfg.learner.default_value), greedy_both);
    for (const auto& e : res.estimates) rel[e.metric].push_back(e.relative_effect);
  }
  for (const auto& m : metric_names()) {
    const auto s = mean_se(rel.at(m));
    const bool ok = std::abs(s.mean) <= 2.0 * s.se;
    v.require(ok, m + " outside 2 SE");
    v.detail << m << "=" << fmt_double(s.mean) << "+-" << fmt_double(s.se) << (ok ? " " : "(!) ");
  }
}

void directional(Verdict& v) {
  const RunConfig base = load("undersupplied.json");
  const auto t0 = Clock::now();
  int unavail_down = 0, cancel_down = 0;
  std::vector<double> ratios, requests;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    RunConfig cfg = base;
    cfg.scenario.rng_seed = seed;
    const auto plan = make_plan(cfg.experiment.region_id, cfg.experiment.bucket_len_s, seed, cfg.experiment.week_s);
    const auto res = run_switchback(cfg.scenario, cfg.engine(), plan, cfg.burn,
                                    ValueTable(cfg.learner.default_value), switchback_options(false));
    for (const auto& e : res.estimates) {
      if (e.metric == "unavailability" && e.relative_effect < 0.0) ++unavail_down;
      if (e.metric == "rider_cancellation" && e.relative_effect < 0.0) ++cancel_down;
    }
    ratios.push_back(res.log.totals.demand_supply_ratio());
    requests.push_back(static_cast<double>(res.log.totals.requests));
  }
  const double elapsed = seconds_since(t0);
  const double mean_ratio = mean_se(ratios).mean;
  v.require(unavail_down >= 16, "unavailability lower in fewer than 16 seeds");
  v.require(cancel_down >= 13, "cancellation lower in fewer than 13 seeds");
  v.require(mean_ratio >= 1.5, "demand/supply ratio below 1.5");
  v.require(elapsed < 600.0, "runtime >= 10 min");
  v.detail << "unavailability_lower=" << unavail_down << "/20 cancellation_lower=" << cancel_down
           << "/20 demand_supply_ratio mean=" << fmt_double(mean_ratio)
           << " min=" << fmt_double(*std::min_element(ratios.begin(), ratios.end()))
           << " requests_mean=" << fmt_double(mean_se(requests).mean) << " runtime=" << fmt_double(elapsed) << "s";
}

std::map<std::string, std::string> slurp_dir(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[e.path().filename().string()] = ss.str();
  }
  return files;
}

void determinism(Verdict& v) {
  const fs::path work = fs::temp_directory_path() / ("rlmatch_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string cfgs = RLMATCH_CONFIG_DIR;
  const std::string out = (work / "out").string();
  const std::string quick = cfgs + "/quick.json";

  // Snapshot input for export-heatmap.
  std::ostringstream sink;
  cli::run_cli({"simulate", "--config", quick, "--seed", "11", "--out", (work / "snap").string()}, sink, sink);
  const std::string snap = (work / "snap" / "value_table.bin").string();

  const std::vector<std::pair<std::string, std::vector<std::string>>> runs{
      {"simulate", {"simulate", "--config", quick, "--seed", "5", "--out", out}},
      {"simulate-greedy", {"simulate", "--config", quick, "--seed", "5", "--policy", "greedy", "--out", out}},
      {"experiment", {"experiment", "--config", quick, "--seed", "5", "--out", out}},
      {"experiment-frozen",
       {"experiment", "--config", quick, "--seed", "5", "--freeze-learning-in-control", "--out", out}},
      {"solve", {"solve", "--edges", cfgs + "/two_by_two_edges.txt", "--seed", "5", "--out", out}},
      {"export-heatmap",
       {"export-heatmap", "--config", quick, "--snapshot", snap, "--time", "7200", "--seed", "5", "--out", out}},
  };
  for (const auto& [name, args] : runs) {
    std::ostringstream o1, o2, e1, e2;
    const int c1 = cli::run_cli(args, o1, e1);
    const auto first = slurp_dir(out);
    const int c2 = cli::run_cli(args, o2, e2);
    const auto second = slurp_dir(out);
    const bool same = c1 == 0 && c2 == 0 && first == second && o1.str() == o2.str() && !first.empty();
    v.require(same, name + " differs between runs");
    v.detail << name << "(" << first.size() << " files)=" << (same ? "identical " : "DIFFERENT ");
  }
  fs::remove_all(work);
}

void snapshot_round_trip(Verdict& v) {
  std::mt19937_64 rng(10);
  ValueTable t(3.5);
  while (t.size() < 100000) {
    const int p = 1 + static_cast<int>(rng() % 12);
    const CellId cell(rng() >> (64 - 5 * p), p);
    const std::uint64_t bucket = rng() % 500000;
    const int kind = static_cast<int>(rng() % 3);
    const Factor f =
        kind == 0 ? Factor::spatial(cell) : kind == 1 ? Factor::temporal(bucket) : Factor::interaction(cell, bucket);
    // Raw bit patterns cover subnormals and odd mantissas.
    double val = std::bit_cast<double>(rng());
    if (!std::isfinite(val)) val = -0.0;
    t.set(f, val, rng() % 100000);
  }
  const auto bytes = snapshot(t);
  const ValueTable back = restore(bytes);
  std::size_t diff = 0;
  const auto a = t.sorted_entries(), b = back.sorted_entries();
  if (a.size() != b.size()) diff = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (!(a[i].first == b[i].first) ||
        std::bit_cast<std::uint64_t>(a[i].second.value) != std::bit_cast<std::uint64_t>(b[i].second.value) ||
        a[i].second.updates != b[i].second.updates)
      ++diff;
  }
  v.require(diff == 0, std::to_string(diff) + " entries differ");
  v.require(snapshot(back) == bytes, "re-serialized bytes differ");
  v.require(std::bit_cast<std::uint64_t>(back.default_value()) == std::bit_cast<std::uint64_t>(3.5),
            "default value differs");
  v.detail << "entries=" << a.size() << " bytes=" << bytes.size() << " differing=" << diff;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Verdict&)>>> criteria{
      {"two-by-two batch example", two_by_two},
      {"solver optimality vs brute force", solver_optimality},
      {"TD fixed point", td_fixed_point},
      {"tabular equivalence", tabular_equivalence},
      {"advantage identities", advantage_identities},
      {"switchback plan structure", plan_structure},
      {"A/A neutrality", aa_neutrality},
      {"directional effects in undersupplied market", directional},
      {"determinism", determinism},
      {"snapshot round-trip", snapshot_round_trip},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, fn] : criteria) {
    ++n;
    Verdict v;
    try {
      fn(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    failed += !v.pass;
    std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", n, name, v.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", n - failed, n);
  return failed == 0 ? 0 : 1;
}
