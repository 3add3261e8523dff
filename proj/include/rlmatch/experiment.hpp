#pragma once

// Two-week randomized paired switchback: plan construction, one continuous
// simulation that flips policy at bucket boundaries, and bucket-level effect
// estimates with burn-in/burn-out windows removed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rlmatch/error.hpp"
#include "rlmatch/simulator.hpp"
#include "rlmatch/text.hpp"

namespace rlmatch {

enum class Arm : std::uint8_t { control, treatment };
enum class Provenance : std::uint8_t { random, paired };

inline const char* to_string(Arm a) { return a == Arm::treatment ? "treatment" : "control"; }
inline const char* to_string(Provenance p) { return p == Provenance::random ? "random" : "paired"; }
inline Arm opposite(Arm a) { return a == Arm::treatment ? Arm::control : Arm::treatment; }

struct BurnConfig {
  double burn_in_s = 1800.0;
  double burn_out_s = 1800.0;

  // Checked against the bucket length it will be applied to.
  std::vector<FieldProblem> problems(double bucket_len_s) const {
    std::vector<FieldProblem> out;
    if (!(burn_in_s >= 0.0) || !std::isfinite(burn_in_s)) out.push_back({"burn_in_s", "must be >= 0"});
    if (!(burn_out_s >= 0.0) || !std::isfinite(burn_out_s)) out.push_back({"burn_out_s", "must be >= 0"});
    if (!(burn_in_s + burn_out_s < bucket_len_s))
      out.push_back({"burn_in_s+burn_out_s", "burn_in_s + burn_out_s must be less than bucket_len_s (" +
                                                 fmt_double(bucket_len_s) + ")"});
    return out;
  }

  friend bool operator==(const BurnConfig&, const BurnConfig&) = default;
};

struct SwitchbackPlan {
  std::string region_id;
  double bucket_len_s = 14400.0;
  double week_s = kWeekS;
  // [week 0|1][bucket]
  std::array<std::vector<Arm>, 2> assignments;
  std::array<std::vector<Provenance>, 2> provenance;

  std::size_t buckets_per_week() const { return assignments[0].size(); }
  std::size_t total_buckets() const { return 2 * buckets_per_week(); }

  // week is 1 or 2.
  Arm arm(int week, std::size_t bucket) const { return assignments.at(static_cast<std::size_t>(week - 1)).at(bucket); }

  // Arm of the global bucket g in [0, total_buckets()).
  Arm arm_of_global(std::size_t g) const {
    const std::size_t n = buckets_per_week();
    return assignments[g / n][g % n];
  }

  double bucket_start(std::size_t g) const { return static_cast<double>(g) * bucket_len_s; }

  std::size_t global_bucket(double t) const {
    const auto g = static_cast<std::size_t>(std::floor(t / bucket_len_s));
    return std::min(g, total_buckets() - 1);
  }

  Arm arm_at(double t) const { return arm_of_global(global_bucket(t)); }

  friend bool operator==(const SwitchbackPlan&, const SwitchbackPlan&) = default;
};

namespace experiment_detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace experiment_detail

// Week-1 buckets 0, 2, 4, ... are drawn at random; each following bucket takes
// the opposite arm; week 2 mirrors week 1 with every arm flipped. Regions draw
// independently from the same seed.
inline SwitchbackPlan make_plan(const std::string& region_id, double bucket_len_s, std::uint64_t seed,
                                double week_s = kWeekS) {
  if (!(bucket_len_s > 0.0) || !(week_s > 0.0)) throw InvalidInput("bucket_len_s and week_s must be positive");
  const double ratio = week_s / bucket_len_s;
  const double count = std::round(ratio);
  if (count < 2.0 || std::abs(count * bucket_len_s - week_s) > 1e-6)
    throw InvalidInput("bucket_len_s (" + fmt_double(bucket_len_s) + ") must divide the week (" + fmt_double(week_s) +
                       " s) into at least two buckets");
  const auto n = static_cast<std::size_t>(count);
  if (n % 2 != 0)
    throw InvalidInput("bucket_len_s (" + fmt_double(bucket_len_s) + ") gives an odd number of buckets per week (" +
                       std::to_string(n) + "); pairing needs an even count");

  SwitchbackPlan plan;
  plan.region_id = region_id;
  plan.bucket_len_s = bucket_len_s;
  plan.week_s = week_s;
  std::mt19937_64 rng(experiment_detail::splitmix64(seed ^ experiment_detail::fnv1a(region_id)));
  for (auto& w : plan.assignments) w.resize(n);
  for (auto& w : plan.provenance) w.resize(n);
  for (std::size_t b = 0; b < n; b += 2) {
    const Arm first = (rng() >> 63) ? Arm::treatment : Arm::control;
    plan.assignments[0][b] = first;
    plan.assignments[0][b + 1] = opposite(first);
    plan.provenance[0][b] = Provenance::random;
    plan.provenance[0][b + 1] = Provenance::paired;
  }
  for (std::size_t b = 0; b < n; ++b) {
    plan.assignments[1][b] = opposite(plan.assignments[0][b]);
    plan.provenance[1][b] = Provenance::paired;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Bucket metrics

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"unavailability", "rider_cancellation", "mean_pickup_s",
                                              "rides_per_driver_hour", "gross_fares_per_hour"};
  return names;
}

// Raw counts for the retained window of one bucket.
struct BucketMetrics {
  std::size_t global_index = 0;
  int week = 1;
  std::size_t index = 0;
  Arm arm = Arm::control;
  double window_start = 0.0;  // inclusive
  double window_end = 0.0;    // inclusive
  std::uint64_t requests = 0;
  std::uint64_t expired = 0;   // of the requests above
  std::uint64_t matches = 0;
  std::uint64_t cancelled = 0;  // of the matches above
  double pickup_sum_s = 0.0;
  std::uint64_t completions = 0;
  double fares = 0.0;
  double driver_hours = 0.0;

  double retained_hours() const { return (window_end - window_start) / kHourS; }

  // NaN when the denominator is empty.
  double metric(std::size_t m) const {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto ratio = [&](double a, double b) { return b > 0.0 ? a / b : nan; };
    switch (m) {
      case 0: return ratio(static_cast<double>(expired), static_cast<double>(requests));
      case 1: return ratio(static_cast<double>(cancelled), static_cast<double>(matches));
      case 2: return ratio(pickup_sum_s, static_cast<double>(matches));
      case 3: return ratio(static_cast<double>(completions), driver_hours);
      case 4: return ratio(fares, retained_hours());
    }
    return nan;
  }

  friend bool operator==(const BucketMetrics&, const BucketMetrics&) = default;
};

inline bool in_window(double t, const BucketMetrics& b) { return t >= b.window_start && t <= b.window_end; }

// Counts per bucket over [start + burn_in, end - burn_out]. Every bucket
// boundary is treated as a switch.
inline std::vector<BucketMetrics> bucket_metrics(const MetricsLog& log, const SwitchbackPlan& plan,
                                                 const BurnConfig& burn) {
  const auto problems = burn.problems(plan.bucket_len_s);
  if (!problems.empty()) throw InvalidInput("invalid burn config: " + describe(problems));
  const std::size_t total = plan.total_buckets();
  std::vector<BucketMetrics> out(total);
  for (std::size_t g = 0; g < total; ++g) {
    auto& b = out[g];
    b.global_index = g;
    b.week = static_cast<int>(g / plan.buckets_per_week()) + 1;
    b.index = g % plan.buckets_per_week();
    b.arm = plan.arm_of_global(g);
    b.window_start = plan.bucket_start(g) + burn.burn_in_s;
    b.window_end = plan.bucket_start(g) + plan.bucket_len_s - burn.burn_out_s;
  }
  auto bucket_of = [&](double t) -> BucketMetrics* {
    if (t < 0.0 || t >= static_cast<double>(total) * plan.bucket_len_s) return nullptr;
    BucketMetrics& b = out[plan.global_bucket(t)];
    return in_window(t, b) ? &b : nullptr;
  };

  std::map<DriverId, double> online_since;
  auto add_online = [&](double from, double to) {
    for (auto& b : out) {
      const double lo = std::max(from, b.window_start), hi = std::min(to, b.window_end);
      if (hi > lo) b.driver_hours += (hi - lo) / kHourS;
    }
  };

  for (const auto& e : log.events) {
    switch (e.kind) {
      case EventKind::request_arrival:
        if (auto* b = bucket_of(e.time)) ++b->requests;
        break;
      case EventKind::request_expired:
        if (auto* b = bucket_of(e.request_time)) ++b->expired;
        break;
      case EventKind::match_made:
        if (auto* b = bucket_of(e.time)) {
          ++b->matches;
          b->pickup_sum_s += e.value;
        }
        break;
      case EventKind::rider_cancel:
        // value is the time since the match.
        if (auto* b = bucket_of(e.time - e.value)) ++b->cancelled;
        break;
      case EventKind::trip_complete:
        if (auto* b = bucket_of(e.time)) {
          ++b->completions;
          b->fares += e.value;
        }
        break;
      case EventKind::driver_login: online_since[e.driver] = e.time; break;
      case EventKind::driver_logoff: {
        auto it = online_since.find(e.driver);
        if (it != online_since.end()) {
          add_online(it->second, e.time);
          online_since.erase(it);
        }
        break;
      }
      default: break;
    }
  }
  for (const auto& [d, since] : online_since) add_online(since, log.horizon_s);
  return out;
}

// ---------------------------------------------------------------------------
// Estimates

enum class EstimateStatus : std::uint8_t { ok, insufficient_data };

struct EffectEstimate {
  std::string metric;
  double control_mean = 0.0;
  double treatment_mean = 0.0;
  double difference = 0.0;
  double relative_effect = 0.0;  // NaN when control_mean == 0
  double stderr_diff = 0.0;
  double stderr_relative = 0.0;  // stderr_diff / |control_mean|
  std::size_t n_buckets = 0;
  std::size_t n_control = 0;
  std::size_t n_treatment = 0;
  EstimateStatus status = EstimateStatus::ok;

  bool ok() const { return status == EstimateStatus::ok; }

  const EffectEstimate& require_ok() const {
    if (!ok())
      throw InsufficientData(metric + ": fewer than 2 retained buckets in an arm (control " +
                             std::to_string(n_control) + ", treatment " + std::to_string(n_treatment) + ")");
    return *this;
  }
};

// Buckets are the independent unit. arms[i] labels buckets[i].
inline std::vector<EffectEstimate> estimate_from_buckets(const std::vector<BucketMetrics>& buckets,
                                                         const std::vector<Arm>& arms) {
  if (arms.size() != buckets.size()) throw InvalidInput("one arm label per bucket required");
  std::vector<EffectEstimate> out;
  for (std::size_t m = 0; m < metric_names().size(); ++m) {
    std::vector<double> c, t;
    for (std::size_t i = 0; i < buckets.size(); ++i) {
      const double v = buckets[i].metric(m);
      if (std::isnan(v)) continue;
      (arms[i] == Arm::treatment ? t : c).push_back(v);
    }
    EffectEstimate e;
    e.metric = metric_names()[m];
    e.n_control = c.size();
    e.n_treatment = t.size();
    e.n_buckets = c.size() + t.size();
    if (c.size() < 2 || t.size() < 2) {
      e.status = EstimateStatus::insufficient_data;
      e.control_mean = e.treatment_mean = e.difference = e.relative_effect = std::numeric_limits<double>::quiet_NaN();
      e.stderr_diff = e.stderr_relative = std::numeric_limits<double>::quiet_NaN();
      out.push_back(e);
      continue;
    }
    auto mean_var = [](const std::vector<double>& xs) {
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double ss = 0.0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      return std::pair{mean, ss / static_cast<double>(xs.size() - 1)};
    };
    const auto [mc, vc] = mean_var(c);
    const auto [mt, vt] = mean_var(t);
    e.control_mean = mc;
    e.treatment_mean = mt;
    e.difference = mt - mc;
    e.stderr_diff = std::sqrt(vt / static_cast<double>(t.size()) + vc / static_cast<double>(c.size()));
    if (mc != 0.0) {
      e.relative_effect = mt / mc - 1.0;
      e.stderr_relative = e.stderr_diff / std::abs(mc);
    } else {
      e.relative_effect = e.stderr_relative = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(e);
  }
  return out;
}

inline std::vector<EffectEstimate> estimate_effects(const MetricsLog& log, const SwitchbackPlan& plan,
                                                    const BurnConfig& burn) {
  const auto buckets = bucket_metrics(log, plan, burn);
  std::vector<Arm> arms;
  for (const auto& b : buckets) arms.push_back(b.arm);
  return estimate_from_buckets(buckets, arms);
}

// ---------------------------------------------------------------------------
// Running

struct SwitchbackOptions {
  ArmSetting treatment{Policy::rl, true};
  ArmSetting control{Policy::greedy, true};
};

inline SwitchbackOptions switchback_options(bool freeze_learning_in_control) {
  SwitchbackOptions o;
  o.control.learn = !freeze_learning_in_control;
  return o;
}

struct SwitchbackResult {
  std::vector<EffectEstimate> estimates;
  std::vector<BucketMetrics> buckets;
  MetricsLog log;
  ValueTable table;
};

inline SwitchbackResult run_switchback(const ScenarioConfig& cfg, const EngineConfig& engine,
                                       const SwitchbackPlan& plan, const BurnConfig& burn, ValueTable table,
                                       const SwitchbackOptions& options = {}) {
  if (plan.total_buckets() == 0) throw InvalidInput("empty switchback plan");
  const double covered = static_cast<double>(plan.total_buckets()) * plan.bucket_len_s;
  if (std::abs(cfg.horizon_s - covered) > 1e-6)
    throw InvalidInput("scenario horizon_s (" + fmt_double(cfg.horizon_s) + ") must equal the plan span of two weeks (" +
                       fmt_double(covered) + ")");
  const auto problems = burn.problems(plan.bucket_len_s);
  if (!problems.empty()) throw InvalidInput("invalid burn config: " + describe(problems));

  auto schedule = [&](double t) {
    return plan.arm_at(t) == Arm::treatment ? options.treatment : options.control;
  };
  auto sim = run(cfg, engine, schedule, std::move(table));
  SwitchbackResult res;
  res.buckets = bucket_metrics(sim.log, plan, burn);
  std::vector<Arm> arms;
  for (const auto& b : res.buckets) arms.push_back(b.arm);
  res.estimates = estimate_from_buckets(res.buckets, arms);
  res.log = std::move(sim.log);
  res.table = std::move(sim.table);
  return res;
}

// ---------------------------------------------------------------------------
// Delimited text output

inline void write_plan_tsv(std::ostream& os, const SwitchbackPlan& plan, std::uint64_t seed) {
  os << "# seed=" << seed << "\n";
  os << "region\tbucket\tstart_s\tweek1\tweek2\n";
  for (std::size_t b = 0; b < plan.buckets_per_week(); ++b) {
    os << plan.region_id << '\t' << b << '\t' << fmt_double(plan.bucket_start(b)) << '\t'
       << to_string(plan.assignments[0][b]) << " (" << to_string(plan.provenance[0][b]) << ")\t"
       << to_string(plan.assignments[1][b]) << " (" << to_string(plan.provenance[1][b]) << ")\n";
  }
}

inline void write_buckets_tsv(std::ostream& os, const std::vector<BucketMetrics>& buckets, std::uint64_t seed) {
  os << "# seed=" << seed << "\n";
  os << "week\tbucket\tarm\twindow_start\twindow_end\trequests\texpired\tmatches\tcancelled\tcompletions\tdriver_hours";
  for (const auto& n : metric_names()) os << '\t' << n;
  os << '\n';
  for (const auto& b : buckets) {
    os << b.week << '\t' << b.index << '\t' << to_string(b.arm) << '\t' << fmt_double(b.window_start) << '\t'
       << fmt_double(b.window_end) << '\t' << b.requests << '\t' << b.expired << '\t' << b.matches << '\t'
       << b.cancelled << '\t' << b.completions << '\t' << fmt_double(b.driver_hours);
    for (std::size_t m = 0; m < metric_names().size(); ++m) os << '\t' << fmt_double(b.metric(m));
    os << '\n';
  }
}

inline void write_effects_tsv(std::ostream& os, const std::vector<EffectEstimate>& effects, std::uint64_t seed) {
  os << "# seed=" << seed << "\n";
  os << "metric\tstatus\tcontrol_mean\ttreatment_mean\trelative_effect\tstderr\tn_buckets\n";
  for (const auto& e : effects) {
    os << e.metric << '\t' << (e.ok() ? "ok" : "insufficient_data") << '\t' << fmt_double(e.control_mean) << '\t'
       << fmt_double(e.treatment_mean) << '\t' << fmt_double(e.relative_effect) << '\t' << fmt_double(e.stderr_diff)
       << '\t' << e.n_buckets << '\n';
  }
}

}  // namespace rlmatch
