#pragma once

// Run configuration: one JSON document with every field optional. Parsing
// collects every problem it finds, addressed by dotted path, before giving up.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlmatch/error.hpp"
#include "rlmatch/experiment.hpp"
#include "rlmatch/matcher.hpp"
#include "rlmatch/simulator.hpp"
#include "rlmatch/spacetime.hpp"
#include "rlmatch/value_function.hpp"

namespace rlmatch {

struct ExperimentConfig {
  std::string region_id = "region-1";
  double bucket_len_s = 14400.0;
  double week_s = kWeekS;

  std::vector<FieldProblem> problems() const {
    std::vector<FieldProblem> out;
    if (region_id.empty()) out.push_back({"region_id", "must not be empty"});
    if (!(week_s > 0.0) || !std::isfinite(week_s)) out.push_back({"week_s", "must be positive"});
    if (!(bucket_len_s > 0.0) || !std::isfinite(bucket_len_s)) {
      out.push_back({"bucket_len_s", "must be positive"});
    } else if (week_s > 0.0) {
      try {
        make_plan(region_id.empty() ? "x" : region_id, bucket_len_s, 0, week_s);
      } catch (const InvalidInput& e) {
        out.push_back({"bucket_len_s", e.what()});
      }
    }
    return out;
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct RunConfig {
  ScenarioConfig scenario;
  CodingConfig coding;
  LearnerConfig learner;
  FilterConfig filter;
  BurnConfig burn;
  ExperimentConfig experiment;
  Policy policy = Policy::rl;
  std::string output_dir = "out";

  EngineConfig engine() const { return {coding, learner, filter}; }

  std::vector<FieldProblem> problems() const {
    std::vector<FieldProblem> out;
    auto add = [&](const std::string& section, const std::vector<FieldProblem>& list) {
      for (const auto& p : list) {
        // "a+b" names two fields; prefix both.
        std::string field;
        std::size_t start = 0;
        for (;;) {
          const auto plus = p.field.find('+', start);
          if (!field.empty()) field += " + ";
          field += section + "." + p.field.substr(start, plus - start);
          if (plus == std::string::npos) break;
          start = plus + 1;
        }
        out.push_back({field, p.message});
      }
    };
    add("scenario", scenario.problems());
    add("coding", coding.problems());
    add("learner", learner.problems());
    add("filter", filter.problems());
    add("burn", burn.problems(experiment.bucket_len_s));
    add("experiment", experiment.problems());
    if (output_dir.empty()) out.push_back({"output_dir", "must not be empty"});
    return out;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Every problem found in a configuration document.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<FieldProblem> problems)
      : std::runtime_error(render(problems)), problems_(std::move(problems)) {}

  const std::vector<FieldProblem>& problems() const noexcept { return problems_; }

 private:
  static std::string render(const std::vector<FieldProblem>& ps) {
    std::string s;
    for (const auto& p : ps) s += (s.empty() ? "" : "\n") + p.field + ": " + p.message;
    return s;
  }

  std::vector<FieldProblem> problems_;
};

namespace config_detail {

using json = nlohmann::ordered_json;

// Walks one JSON object, recording type errors and unknown keys.
class Reader {
 public:
  Reader(const json* node, std::string path, std::vector<FieldProblem>& out)
      : node_(node), path_(std::move(path)), out_(&out) {
    if (node_ && !node_->is_object()) {
      problem(path_.empty() ? "<root>" : path_, "must be an object");
      node_ = nullptr;
    }
  }

  ~Reader() {
    if (!node_) return;
    for (const auto& [k, v] : node_->items())
      if (!known_.count(k)) problem(at(k), "unknown key");
  }

  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  Reader child(const std::string& key) { return Reader(find(key), at(key), *out_); }

  void read(const std::string& key, double& dst) {
    if (const json* v = find(key)) {
      if (v->is_number()) dst = v->get<double>();
      else problem(at(key), "must be a number");
    }
  }

  void read(const std::string& key, int& dst) {
    if (const json* v = find(key)) {
      if (v->is_number_integer() && v->get<std::int64_t>() >= INT32_MIN && v->get<std::int64_t>() <= INT32_MAX)
        dst = v->get<int>();
      else problem(at(key), "must be an integer");
    }
  }

  void read(const std::string& key, std::uint64_t& dst) {
    if (const json* v = find(key)) {
      if (v->is_number_unsigned()) dst = v->get<std::uint64_t>();
      else problem(at(key), "must be a non-negative integer");
    }
  }

  void read(const std::string& key, bool& dst) {
    if (const json* v = find(key)) {
      if (v->is_boolean()) dst = v->get<bool>();
      else problem(at(key), "must be true or false");
    }
  }

  void read(const std::string& key, std::string& dst) {
    if (const json* v = find(key)) {
      if (v->is_string()) dst = v->get<std::string>();
      else problem(at(key), "must be a string");
    }
  }

  void read(const std::string& key, std::optional<double>& dst) {
    if (const json* v = find(key)) {
      if (v->is_null()) dst.reset();
      else if (v->is_number()) dst = v->get<double>();
      else problem(at(key), "must be a number or null");
    }
  }

  template <std::size_t N>
  void read(const std::string& key, std::array<double, N>& dst) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != N) {
        problem(at(key), "must be an array of " + std::to_string(N) + " numbers");
        return;
      }
      for (std::size_t i = 0; i < N; ++i) {
        if (!(*v)[i].is_number()) {
          problem(at(key) + "[" + std::to_string(i) + "]", "must be a number");
          return;
        }
      }
      for (std::size_t i = 0; i < N; ++i) dst[i] = (*v)[i].get<double>();
    }
  }

  void read(const std::string& key, Policy& dst) {
    if (const json* v = find(key)) {
      const auto p = v->is_string() ? parse_policy(v->get<std::string>()) : std::nullopt;
      if (p) dst = *p;
      else problem(at(key), "must be \"greedy\" or \"rl\"");
    }
  }

  void read(const std::string& key, SpatialSurface& dst) {
    Reader r = child(key);
    r.read("background", dst.background);
    if (const json* hs = r.find("hotspots")) {
      if (!hs->is_array()) {
        problem(at(key) + ".hotspots", "must be an array");
        return;
      }
      dst.hotspots.clear();
      for (std::size_t i = 0; i < hs->size(); ++i) {
        Hotspot h;
        Reader hr(&(*hs)[i], at(key) + ".hotspots[" + std::to_string(i) + "]", *out_);
        hr.read("lat", h.center.lat);
        hr.read("lon", h.center.lon);
        hr.read("radius_m", h.radius_m);
        hr.read("weight", h.weight);
        dst.hotspots.push_back(h);
      }
    }
  }

  const json* find(const std::string& key) {
    known_.insert(key);
    if (!node_) return nullptr;
    auto it = node_->find(key);
    return it == node_->end() ? nullptr : &*it;
  }

 private:
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void problem(const std::string& field, const std::string& msg) { out_->push_back({field, msg}); }

  const json* node_;
  std::string path_;
  std::vector<FieldProblem>* out_;
  std::set<std::string> known_;
};

inline json surface_json(const SpatialSurface& s) {
  json hs = json::array();
  for (const auto& h : s.hotspots)
    hs.push_back({{"lat", h.center.lat}, {"lon", h.center.lon}, {"radius_m", h.radius_m}, {"weight", h.weight}});
  return {{"background", s.background}, {"hotspots", hs}};
}

}  // namespace config_detail

// Parses and validates. Throws ConfigError listing every problem found.
inline RunConfig parse_config(const std::string& text) {
  using config_detail::json;
  std::vector<FieldProblem> problems;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (auto pos = msg.find("parse error"); pos != std::string::npos) msg = msg.substr(pos);
    throw ConfigError({{"line " + std::to_string(line) + ", column " + std::to_string(col), msg}});
  }

  RunConfig c;
  {
    config_detail::Reader root(&doc, "", problems);
    {
      auto s = root.child("scenario");
      {
        auto r = s.child("region");
        r.read("lat_min", c.scenario.region.lat_min);
        r.read("lat_max", c.scenario.region.lat_max);
        r.read("lon_min", c.scenario.region.lon_min);
        r.read("lon_max", c.scenario.region.lon_max);
      }
      s.read("horizon_s", c.scenario.horizon_s);
      s.read("speed_mps", c.scenario.speed_mps);
      s.read("cycle_s", c.scenario.cycle_s);
      s.read("rng_seed", c.scenario.rng_seed);
      {
        auto d = s.child("demand");
        d.read("base_rate_per_hour", c.scenario.demand.base_rate_per_hour);
        d.read("hourly", c.scenario.demand.hourly);
        d.read("daily", c.scenario.demand.daily);
        d.read("origins", c.scenario.demand.origins);
        d.read("destinations", c.scenario.demand.destinations);
        d.read("cell_precision", c.scenario.demand.cell_precision);
        d.read("min_trip_m", c.scenario.demand.min_trip_m);
      }
      {
        auto u = s.child("supply");
        u.read("initial_drivers", c.scenario.supply.initial_drivers);
        u.read("login_rate_per_hour", c.scenario.supply.login_rate_per_hour);
        u.read("hourly", c.scenario.supply.hourly);
        u.read("session_mean_s", c.scenario.supply.session_mean_s);
        u.read("session_min_s", c.scenario.supply.session_min_s);
      }
      {
        auto f = s.child("fare");
        f.read("base", c.scenario.fare.base);
        f.read("per_km", c.scenario.fare.per_km);
        f.read("per_min", c.scenario.fare.per_min);
      }
      {
        auto r = s.child("rider");
        r.read("patience_s", c.scenario.rider.patience_s);
        r.read("cancel_prob", c.scenario.rider.cancel_prob);
        r.read("cancel_per_pickup_min", c.scenario.rider.cancel_per_pickup_min);
      }
    }
    {
      auto k = root.child("coding");
      k.read("precision", c.coding.precision);
      k.read("time_bucket_s", c.coding.time_bucket_s);
      k.read("spatial", c.coding.spatial);
      k.read("temporal", c.coding.temporal);
      k.read("interaction", c.coding.interaction);
      k.read("epsilon_m", c.coding.epsilon_m);
    }
    {
      auto l = root.child("learner");
      l.read("alpha", c.learner.alpha);
      l.read("gamma", c.learner.gamma);
      l.read("idle_duration_s", c.learner.idle_duration_s);
      l.read("default_value", c.learner.default_value);
      l.read("max_transition_s", c.learner.max_transition_s);
    }
    {
      auto f = root.child("filter");
      f.read("max_pickup_s", c.filter.max_pickup_s);
      f.read("max_candidates_per_rider", c.filter.max_candidates_per_rider);
      f.read("min_weight", c.filter.min_weight);
    }
    {
      auto b = root.child("burn");
      b.read("burn_in_s", c.burn.burn_in_s);
      b.read("burn_out_s", c.burn.burn_out_s);
    }
    {
      auto x = root.child("experiment");
      x.read("region_id", c.experiment.region_id);
      x.read("bucket_len_s", c.experiment.bucket_len_s);
      x.read("week_s", c.experiment.week_s);
    }
    root.read("policy", c.policy);
    root.read("output_dir", c.output_dir);
  }
  for (auto& p : c.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

// Every field written out, so the result documents the effective settings.
inline std::string serialize_config(const RunConfig& c) {
  using config_detail::json;
  const auto& s = c.scenario;
  json doc;
  doc["scenario"] = {
      {"region",
       {{"lat_min", s.region.lat_min},
        {"lat_max", s.region.lat_max},
        {"lon_min", s.region.lon_min},
        {"lon_max", s.region.lon_max}}},
      {"horizon_s", s.horizon_s},
      {"speed_mps", s.speed_mps},
      {"cycle_s", s.cycle_s},
      {"rng_seed", s.rng_seed},
      {"demand",
       {{"base_rate_per_hour", s.demand.base_rate_per_hour},
        {"hourly", s.demand.hourly},
        {"daily", s.demand.daily},
        {"origins", config_detail::surface_json(s.demand.origins)},
        {"destinations", config_detail::surface_json(s.demand.destinations)},
        {"cell_precision", s.demand.cell_precision},
        {"min_trip_m", s.demand.min_trip_m}}},
      {"supply",
       {{"initial_drivers", s.supply.initial_drivers},
        {"login_rate_per_hour", s.supply.login_rate_per_hour},
        {"hourly", s.supply.hourly},
        {"session_mean_s", s.supply.session_mean_s},
        {"session_min_s", s.supply.session_min_s}}},
      {"fare", {{"base", s.fare.base}, {"per_km", s.fare.per_km}, {"per_min", s.fare.per_min}}},
      {"rider",
       {{"patience_s", s.rider.patience_s},
        {"cancel_prob", s.rider.cancel_prob},
        {"cancel_per_pickup_min", s.rider.cancel_per_pickup_min}}},
  };
  doc["coding"] = {{"precision", c.coding.precision},     {"time_bucket_s", c.coding.time_bucket_s},
                   {"spatial", c.coding.spatial},         {"temporal", c.coding.temporal},
                   {"interaction", c.coding.interaction}, {"epsilon_m", c.coding.epsilon_m}};
  doc["learner"] = {{"alpha", c.learner.alpha},
                    {"gamma", c.learner.gamma},
                    {"idle_duration_s", c.learner.idle_duration_s},
                    {"default_value", c.learner.default_value},
                    {"max_transition_s", c.learner.max_transition_s}};
  doc["filter"] = {{"max_pickup_s", c.filter.max_pickup_s},
                   {"max_candidates_per_rider", c.filter.max_candidates_per_rider},
                   {"min_weight", c.filter.min_weight ? json(*c.filter.min_weight) : json(nullptr)}};
  doc["burn"] = {{"burn_in_s", c.burn.burn_in_s}, {"burn_out_s", c.burn.burn_out_s}};
  doc["experiment"] = {{"region_id", c.experiment.region_id},
                       {"bucket_len_s", c.experiment.bucket_len_s},
                       {"week_s", c.experiment.week_s}};
  doc["policy"] = to_string(c.policy);
  doc["output_dir"] = c.output_dir;
  return doc.dump(2) + "\n";
}

}  // namespace rlmatch
