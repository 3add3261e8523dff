#pragma once

// Per-cycle batch matching: candidate edge construction under the greedy or
// advantage-weighted policy, the optimal assignment, and the sequential
// nearest-driver baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rlmatch/error.hpp"
#include "rlmatch/hungarian.hpp"
#include "rlmatch/spacetime.hpp"
#include "rlmatch/value_function.hpp"

namespace rlmatch {

using RiderId = std::uint64_t;
using DriverId = std::uint64_t;

enum class Policy : std::uint8_t { greedy, rl };

inline const char* to_string(Policy p) { return p == Policy::greedy ? "greedy" : "rl"; }

inline std::optional<Policy> parse_policy(std::string_view s) {
  if (s == "greedy") return Policy::greedy;
  if (s == "rl") return Policy::rl;
  return std::nullopt;
}

struct CandidateEdge {
  RiderId rider = 0;
  DriverId driver = 0;
  double weight = 0.0;
  double pickup_s = 0.0;

  friend bool operator==(const CandidateEdge&, const CandidateEdge&) = default;
};

struct MatchPlan {
  std::vector<std::pair<RiderId, DriverId>> pairs;  // ascending rider id
  std::vector<RiderId> unmatched_riders;            // ascending
  std::vector<DriverId> unmatched_drivers;          // ascending
  double objective = 0.0;

  friend bool operator==(const MatchPlan&, const MatchPlan&) = default;
};

struct FilterConfig {
  double max_pickup_s = 900.0;
  int max_candidates_per_rider = 15;
  // Edges weighing less than this are dropped before solving. Unset admits all.
  std::optional<double> min_weight;

  std::vector<FieldProblem> problems() const {
    std::vector<FieldProblem> out;
    if (!(max_pickup_s > 0.0) || !std::isfinite(max_pickup_s))
      out.push_back({"max_pickup_s", "must be a positive number of seconds"});
    if (max_candidates_per_rider < 1) out.push_back({"max_candidates_per_rider", "must be a positive integer"});
    if (min_weight && !std::isfinite(*min_weight)) out.push_back({"min_weight", "must be finite or null"});
    return out;
  }

  friend bool operator==(const FilterConfig&, const FilterConfig&) = default;
};

namespace matcher_detail {

inline void validate_edges(std::span<const CandidateEdge> edges) {
  std::set<std::pair<RiderId, DriverId>> seen;
  for (const auto& e : edges) {
    if (!std::isfinite(e.weight)) throw InvalidInput("edge weight must be finite");
    if (!(e.pickup_s >= 0.0)) throw InvalidInput("edge pickup time must be non-negative");
    if (!seen.insert({e.rider, e.driver}).second) {
      throw InvalidInput("duplicate edge (rider " + std::to_string(e.rider) + ", driver " +
                         std::to_string(e.driver) + ")");
    }
  }
}

template <typename Id>
std::vector<Id> sorted_unique(std::vector<Id> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

// Fills unmatched sets and the objective from pairs; checks that no rider or
// driver is used twice and that every pair is a supplied edge.
inline MatchPlan finalize(std::span<const CandidateEdge> edges, std::vector<std::pair<RiderId, DriverId>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  std::map<std::pair<RiderId, DriverId>, double> weight;
  std::vector<RiderId> riders;
  std::vector<DriverId> drivers;
  for (const auto& e : edges) {
    weight[{e.rider, e.driver}] = e.weight;
    riders.push_back(e.rider);
    drivers.push_back(e.driver);
  }
  riders = sorted_unique(std::move(riders));
  drivers = sorted_unique(std::move(drivers));

  MatchPlan plan;
  std::set<RiderId> used_r;
  std::set<DriverId> used_d;
  for (const auto& p : pairs) {
    auto it = weight.find(p);
    if (it == weight.end()) throw std::logic_error("matched pair is not a candidate edge");
    if (!used_r.insert(p.first).second) throw std::logic_error("rider matched twice");
    if (!used_d.insert(p.second).second) throw std::logic_error("driver matched twice");
    plan.objective += it->second;
  }
  plan.pairs = std::move(pairs);
  for (auto r : riders)
    if (!used_r.count(r)) plan.unmatched_riders.push_back(r);
  for (auto d : drivers)
    if (!used_d.count(d)) plan.unmatched_drivers.push_back(d);
  return plan;
}

// Solves one connected component exactly.
inline std::vector<std::pair<RiderId, DriverId>> solve_component(std::span<const CandidateEdge> edges) {
  std::vector<RiderId> riders;
  std::vector<DriverId> drivers;
  for (const auto& e : edges) {
    riders.push_back(e.rider);
    drivers.push_back(e.driver);
  }
  riders = sorted_unique(std::move(riders));
  drivers = sorted_unique(std::move(drivers));
  const bool transpose = riders.size() > drivers.size();
  const std::size_t rows = transpose ? drivers.size() : riders.size();
  const std::size_t cols = transpose ? riders.size() : drivers.size();

  // Allowed costs are max_w - w in [0, range]. A forbidden cell costs more
  // than any set of rows allowed cells, so every extra matched pair
  // dominates weight differences.
  double max_w = edges.front().weight, min_w = edges.front().weight;
  for (const auto& e : edges) {
    max_w = std::max(max_w, e.weight);
    min_w = std::min(min_w, e.weight);
  }
  const double forbidden = static_cast<double>(rows + 1) * (max_w - min_w + 1.0);

  std::vector<double> cost(rows * cols, forbidden);
  std::vector<bool> allowed(rows * cols, false);
  auto index_of = [](const auto& ids, auto id) {
    return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };
  for (const auto& e : edges) {
    const std::size_t r = index_of(riders, e.rider), d = index_of(drivers, e.driver);
    const std::size_t cell = transpose ? d * cols + r : r * cols + d;
    cost[cell] = max_w - e.weight;
    allowed[cell] = true;
  }
  const auto assignment = min_cost_assignment(cost, rows, cols);
  std::vector<std::pair<RiderId, DriverId>> pairs;
  for (std::size_t row = 0; row < rows; ++row) {
    const std::size_t col = assignment[row];
    if (!allowed[row * cols + col]) continue;
    pairs.emplace_back(transpose ? riders[col] : riders[row], transpose ? drivers[row] : drivers[col]);
  }
  return pairs;
}

}  // namespace matcher_detail

// Optimal batch assignment. Each rider and each driver is used at most once;
// among all such matchings the solver first maximizes the number of matched
// pairs, then the total weight. This keeps all-negative weight schemes such
// as -pickup_s meaningful. Edges below min_weight are never selected.
// Deterministic: ids are processed in ascending order.
inline MatchPlan solve_assignment(std::span<const CandidateEdge> edges, std::optional<double> min_weight = {}) {
  matcher_detail::validate_edges(edges);
  std::vector<CandidateEdge> admitted;
  for (const auto& e : edges)
    if (!min_weight || e.weight >= *min_weight) admitted.push_back(e);
  std::sort(admitted.begin(), admitted.end(), [](const auto& a, const auto& b) {
    return std::pair(a.rider, a.driver) < std::pair(b.rider, b.driver);
  });

  // Connected components via union-find over riders then drivers.
  std::vector<RiderId> riders;
  std::vector<DriverId> drivers;
  for (const auto& e : admitted) {
    riders.push_back(e.rider);
    drivers.push_back(e.driver);
  }
  riders = matcher_detail::sorted_unique(std::move(riders));
  drivers = matcher_detail::sorted_unique(std::move(drivers));
  std::vector<std::size_t> parent(riders.size() + drivers.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto rider_node = [&](RiderId r) {
    return static_cast<std::size_t>(std::lower_bound(riders.begin(), riders.end(), r) - riders.begin());
  };
  auto driver_node = [&](DriverId d) {
    return riders.size() +
           static_cast<std::size_t>(std::lower_bound(drivers.begin(), drivers.end(), d) - drivers.begin());
  };
  for (const auto& e : admitted) {
    const auto a = find(rider_node(e.rider)), b = find(driver_node(e.driver));
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<std::size_t, std::vector<CandidateEdge>> components;
  for (const auto& e : admitted) components[find(rider_node(e.rider))].push_back(e);

  std::vector<std::pair<RiderId, DriverId>> pairs;
  for (const auto& [root, comp] : components) {
    auto part = matcher_detail::solve_component(comp);
    pairs.insert(pairs.end(), part.begin(), part.end());
  }
  return matcher_detail::finalize(edges, std::move(pairs));
}

// Sequential baseline: riders in the given order (remaining riders follow
// in ascending id) each take the nearest still-free driver among their
// edges; ties go to the lower driver id.
inline MatchPlan greedy_assignment(std::span<const CandidateEdge> edges, std::span<const RiderId> rider_order = {}) {
  matcher_detail::validate_edges(edges);
  std::map<RiderId, std::vector<const CandidateEdge*>> by_rider;
  for (const auto& e : edges) by_rider[e.rider].push_back(&e);

  std::vector<RiderId> order;
  std::set<RiderId> listed;
  for (auto r : rider_order)
    if (by_rider.count(r) && listed.insert(r).second) order.push_back(r);
  for (const auto& [r, _] : by_rider)
    if (!listed.count(r)) order.push_back(r);

  std::set<DriverId> taken;
  std::vector<std::pair<RiderId, DriverId>> pairs;
  for (auto r : order) {
    const CandidateEdge* best = nullptr;
    for (const auto* e : by_rider[r]) {
      if (taken.count(e->driver)) continue;
      if (!best || e->pickup_s < best->pickup_s || (e->pickup_s == best->pickup_s && e->driver < best->driver))
        best = e;
    }
    if (best) {
      taken.insert(best->driver);
      pairs.emplace_back(r, best->driver);
    }
  }
  return matcher_detail::finalize(edges, std::move(pairs));
}

struct RiderView {
  RiderId id = 0;
  GeoPoint origin;
  GeoPoint destination;
  double fare = 0.0;
  double trip_s = 0.0;
};

struct DriverView {
  DriverId id = 0;
  GeoPoint position;
};

struct EdgeContext {
  double now = 0.0;
  CodingConfig coding;
  LearnerConfig learner;
};

// Candidate edges for one cycle. pickup_time(rider, driver) gives seconds;
// cancel_prob(rider, pickup_s) the chance the rider cancels before pickup.
// Pairs beyond max_pickup_s are dropped and each rider keeps only its
// nearest max_candidates_per_rider drivers. Greedy weight is -pickup_s; RL
// weight is the advantage of the trip for the driver.
template <typename PickupFn, typename CancelFn>
std::vector<CandidateEdge> build_edges(std::span<const RiderView> riders, std::span<const DriverView> drivers,
                                       Policy policy, const ValueTable& table, const FilterConfig& filter,
                                       const EdgeContext& ctx, PickupFn&& pickup_time, CancelFn&& cancel_prob) {
  std::vector<CandidateEdge> edges;
  if (riders.empty() || drivers.empty()) return edges;

  std::vector<double> driver_value;
  if (policy == Policy::rl) {
    driver_value.reserve(drivers.size());
    for (const auto& d : drivers) driver_value.push_back(evaluate(table, factorize(d.position, ctx.now, ctx.coding)));
  }

  std::vector<std::pair<double, std::size_t>> near;
  for (const auto& r : riders) {
    near.clear();
    for (std::size_t j = 0; j < drivers.size(); ++j) {
      const double pickup = pickup_time(r, drivers[j]);
      if (pickup <= filter.max_pickup_s) near.emplace_back(pickup, j);
    }
    std::sort(near.begin(), near.end(), [&](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : drivers[a.second].id < drivers[b.second].id;
    });
    if (near.size() > static_cast<std::size_t>(filter.max_candidates_per_rider))
      near.resize(static_cast<std::size_t>(filter.max_candidates_per_rider));

    for (const auto& [pickup, j] : near) {
      double weight = -pickup;
      if (policy == Policy::rl) {
        const double duration = pickup + r.trip_s;
        const double dest_value = evaluate(table, factorize(r.destination, ctx.now + duration, ctx.coding));
        const double p = cancel_prob(r, pickup);
        weight = advantage_from_values(driver_value[j], dest_value, r.fare, duration, p, ctx.learner);
      }
      edges.push_back({r.id, drivers[j].id, weight, pickup});
    }
  }
  return edges;
}

}  // namespace rlmatch
