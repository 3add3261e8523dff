#include "rlmatch/matcher.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <random>

#include "brute_force_matching.hpp"

using namespace rlmatch;

namespace {

constexpr RiderId kRider1 = 1, kRider2 = 2;
constexpr DriverId kDriverA = 1, kDriverB = 2;

// Two riders, two drivers; pickup minutes 1A=3, 1B=2, 2A=10, 2B=5.
std::vector<CandidateEdge> two_by_two_edges() {
  return {{kRider1, kDriverA, -180.0, 180.0},
          {kRider1, kDriverB, -120.0, 120.0},
          {kRider2, kDriverA, -600.0, 600.0},
          {kRider2, kDriverB, -300.0, 300.0}};
}

std::vector<CandidateEdge> random_instance(std::mt19937_64& rng, int max_side) {
  const int nr = 1 + static_cast<int>(rng() % max_side);
  const int nd = 1 + static_cast<int>(rng() % max_side);
  const double density = 0.2 + 0.8 * static_cast<double>(rng() % 1000) / 1000.0;
  std::vector<CandidateEdge> edges;
  for (int r = 0; r < nr; ++r) {
    for (int d = 0; d < nd; ++d) {
      if (static_cast<double>(rng() % 1000) / 1000.0 > density) continue;
      const double w = static_cast<double>(static_cast<int>(rng() % 2001) - 1000);
      edges.push_back({static_cast<RiderId>(10 + r), static_cast<DriverId>(100 + d), w,
                       static_cast<double>(rng() % 900)});
    }
  }
  return edges;
}

void expect_feasible(const std::vector<CandidateEdge>& edges, const MatchPlan& plan) {
  std::set<RiderId> rs;
  std::set<DriverId> ds;
  double sum = 0.0;
  for (const auto& [r, d] : plan.pairs) {
    EXPECT_TRUE(rs.insert(r).second);
    EXPECT_TRUE(ds.insert(d).second);
    auto it = std::find_if(edges.begin(), edges.end(), [&](const auto& e) { return e.rider == r && e.driver == d; });
    ASSERT_NE(it, edges.end());
    sum += it->weight;
  }
  EXPECT_EQ(sum, plan.objective);
  for (auto r : plan.unmatched_riders) EXPECT_FALSE(rs.count(r));
  for (auto d : plan.unmatched_drivers) EXPECT_FALSE(ds.count(d));
}

}  // namespace

TEST(SolveAssignment, TwoByTwoBatchBeatsGreedy) {
  const auto edges = two_by_two_edges();
  const MatchPlan best = solve_assignment(edges);
  ASSERT_EQ(best.pairs.size(), 2u);
  EXPECT_EQ(best.pairs[0], std::pair(kRider1, kDriverA));
  EXPECT_EQ(best.pairs[1], std::pair(kRider2, kDriverB));
  EXPECT_EQ(best.objective, -480.0);

  const std::vector<RiderId> order{kRider1, kRider2};
  const MatchPlan greedy = greedy_assignment(edges, order);
  ASSERT_EQ(greedy.pairs.size(), 2u);
  EXPECT_EQ(greedy.pairs[0], std::pair(kRider1, kDriverB));
  EXPECT_EQ(greedy.pairs[1], std::pair(kRider2, kDriverA));
  EXPECT_EQ(greedy.objective, -720.0);
  EXPECT_EQ(greedy.objective / best.objective, 1.5);
}

TEST(SolveAssignment, SingleEdge) {
  const std::vector<CandidateEdge> edges{{5, 9, -42.0, 42.0}};
  const auto plan = solve_assignment(edges);
  ASSERT_EQ(plan.pairs.size(), 1u);
  EXPECT_EQ(plan.objective, -42.0);
  EXPECT_TRUE(solve_assignment(edges, -10.0).pairs.empty());
  EXPECT_EQ(solve_assignment(edges, -10.0).unmatched_riders, std::vector<RiderId>{5});
}

TEST(SolveAssignment, EmptyInput) {
  const auto plan = solve_assignment({});
  EXPECT_TRUE(plan.pairs.empty());
  EXPECT_EQ(plan.objective, 0.0);
}

TEST(SolveAssignment, RejectsDuplicatesAndNonFinite) {
  std::vector<CandidateEdge> dup{{1, 1, 1.0, 1.0}, {1, 1, 2.0, 1.0}};
  EXPECT_THROW(solve_assignment(dup), InvalidInput);
  std::vector<CandidateEdge> nan_w{{1, 1, NAN, 1.0}};
  EXPECT_THROW(solve_assignment(nan_w), InvalidInput);
  EXPECT_THROW(greedy_assignment(dup), InvalidInput);
}

TEST(SolveAssignment, MatchesBruteForceOnSmallInstances) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 1000; ++i) {
    const auto edges = random_instance(rng, 7);
    const auto plan = solve_assignment(edges);
    expect_feasible(edges, plan);
    const auto oracle = testing_oracle::best_matching(edges);
    ASSERT_EQ(plan.pairs.size(), oracle.cardinality) << "instance " << i;
    ASSERT_EQ(plan.objective, oracle.weight) << "instance " << i;
  }
}

TEST(SolveAssignment, MinWeightAdmissionMatchesFilteredOracle) {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 200; ++i) {
    const auto edges = random_instance(rng, 6);
    std::vector<CandidateEdge> kept;
    for (const auto& e : edges)
      if (e.weight >= 0.0) kept.push_back(e);
    const auto plan = solve_assignment(edges, 0.0);
    expect_feasible(edges, plan);
    const auto oracle = testing_oracle::best_matching(kept);
    EXPECT_EQ(plan.pairs.size(), oracle.cardinality);
    EXPECT_EQ(plan.objective, oracle.weight);
  }
}

TEST(SolveAssignment, ConstantShiftKeepsChosenPairs) {
  std::mt19937_64 rng(33);
  for (int i = 0; i < 200; ++i) {
    const int n = 1 + static_cast<int>(rng() % 7);
    std::vector<CandidateEdge> edges;
    for (int r = 0; r < n; ++r)
      for (int d = 0; d < n; ++d)
        edges.push_back({static_cast<RiderId>(r), static_cast<DriverId>(d),
                         static_cast<double>(rng() % 100000) / 7.0, 0.0});
    const auto base = solve_assignment(edges);
    for (double c : {-1000.0, 3.5, 250.0}) {
      auto shifted = edges;
      for (auto& e : shifted) e.weight += c;
      EXPECT_EQ(solve_assignment(shifted).pairs, base.pairs);
    }
  }
}

TEST(SolveAssignment, Deterministic) {
  std::mt19937_64 rng(34);
  for (int i = 0; i < 100; ++i) {
    auto edges = random_instance(rng, 7);
    const auto a = solve_assignment(edges);
    std::shuffle(edges.begin(), edges.end(), rng);
    EXPECT_EQ(solve_assignment(edges), a);
  }
}

TEST(SolveAssignment, LargeSparseInstanceIsFeasible) {
  std::mt19937_64 rng(35);
  std::vector<CandidateEdge> edges;
  std::set<std::pair<RiderId, DriverId>> used;
  for (RiderId r = 0; r < 300; ++r)
    for (int k = 0; k < 15; ++k) {
      const DriverId d = rng() % 250;
      if (!used.insert({r, d}).second) continue;
      edges.push_back({r, d, static_cast<double>(rng() % 5000) / 10.0, 1.0});
    }
  const auto plan = solve_assignment(edges);
  expect_feasible(edges, plan);
  EXPECT_GT(plan.pairs.size(), 200u);
}

TEST(GreedyAssignment, SingleRiderEqualsOptimal) {
  const std::vector<CandidateEdge> edges{{1, 1, -300.0, 300.0}, {1, 2, -120.0, 120.0}, {1, 3, -500.0, 500.0}};
  EXPECT_EQ(greedy_assignment(edges), solve_assignment(edges));
}

TEST(GreedyAssignment, NeverBeatsOptimal) {
  std::mt19937_64 rng(36);
  for (int i = 0; i < 1000; ++i) {
    auto edges = random_instance(rng, 7);
    for (auto& e : edges) e.weight = -e.pickup_s;
    const auto greedy = greedy_assignment(edges);
    const auto best = solve_assignment(edges);
    expect_feasible(edges, greedy);
    // The optimum is lexicographic in (matched pairs, total weight).
    EXPECT_LE(greedy.pairs.size(), best.pairs.size());
    if (greedy.pairs.size() == best.pairs.size()) {
      EXPECT_LE(greedy.objective, best.objective);
    }
  }
}

TEST(GreedyAssignment, FollowsGivenRiderOrder) {
  const auto edges = two_by_two_edges();
  const std::vector<RiderId> order{kRider2, kRider1};
  const auto plan = greedy_assignment(edges, order);
  EXPECT_EQ(plan.pairs[0], std::pair(kRider1, kDriverA));
  EXPECT_EQ(plan.pairs[1], std::pair(kRider2, kDriverB));
}

namespace {

struct TwoByTwoPickup {
  double operator()(const RiderView& r, const DriverView& d) const {
    static const std::map<std::pair<RiderId, DriverId>, double> minutes{
        {{1, 1}, 3.0}, {{1, 2}, 2.0}, {{2, 1}, 10.0}, {{2, 2}, 5.0}};
    return 60.0 * minutes.at({r.id, d.id});
  }
};

double no_cancel(const RiderView&, double) { return 0.0; }

}  // namespace

TEST(BuildEdges, EmptyDriversGiveNoEdges) {
  const std::vector<RiderView> riders{{1, {37.7, -122.4}, {37.8, -122.4}, 10.0, 600.0}};
  const auto edges = build_edges(riders, std::span<const DriverView>{}, Policy::rl, ValueTable{}, FilterConfig{},
                                 EdgeContext{}, TwoByTwoPickup{}, no_cancel);
  EXPECT_TRUE(edges.empty());
}

TEST(BuildEdges, TwoByTwoGreedyWeights) {
  const std::vector<RiderView> riders{{1, {37.7, -122.4}, {37.8, -122.4}, 10.0, 600.0},
                                      {2, {37.7, -122.41}, {37.8, -122.4}, 10.0, 600.0}};
  const std::vector<DriverView> drivers{{1, {37.71, -122.4}}, {2, {37.69, -122.4}}};
  const auto edges =
      build_edges(riders, drivers, Policy::greedy, ValueTable{}, FilterConfig{}, EdgeContext{}, TwoByTwoPickup{}, no_cancel);
  std::vector<CandidateEdge> sorted = edges;
  std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return std::pair(a.rider, a.driver) < std::pair(b.rider, b.driver); });
  EXPECT_EQ(sorted, two_by_two_edges());
}

TEST(BuildEdges, RlWeightsOnEmptyTableEqualFare) {
  const std::vector<RiderView> riders{{1, {37.7, -122.4}, {37.8, -122.4}, 11.5, 600.0},
                                      {2, {37.7, -122.41}, {37.8, -122.45}, 23.0, 900.0}};
  const std::vector<DriverView> drivers{{1, {37.71, -122.4}}, {2, {37.69, -122.4}}};
  const auto edges = build_edges(riders, drivers, Policy::rl, ValueTable{}, FilterConfig{}, EdgeContext{},
                                 TwoByTwoPickup{}, [](const RiderView&, double) { return 0.2; });
  ASSERT_EQ(edges.size(), 4u);
  for (const auto& e : edges) EXPECT_EQ(e.weight, e.rider == 1 ? 11.5 : 23.0);
}

TEST(BuildEdges, RlWeightIsAdvantage) {
  EdgeContext ctx;
  ctx.now = 1000.0;
  const RiderView rider{1, {37.7, -122.4}, {37.8, -122.45}, 15.0, 700.0};
  const DriverView driver{1, {37.71, -122.4}};
  ValueTable table;
  for (const auto& [k, w] : factorize(driver.position, ctx.now, ctx.coding)) table.set(k, 30.0, 1);
  for (const auto& [k, w] : factorize(rider.destination, ctx.now + 180.0 + 700.0, ctx.coding)) table.set(k, 12.0, 1);
  const auto edges = build_edges(std::span(&rider, 1), std::span(&driver, 1), Policy::rl, table, FilterConfig{}, ctx,
                                 TwoByTwoPickup{}, [](const RiderView&, double) { return 0.1; });
  ASSERT_EQ(edges.size(), 1u);
  const double expected = advantage(table, factorize(driver.position, ctx.now, ctx.coding),
                                    factorize(rider.destination, ctx.now + 880.0, ctx.coding), 15.0, 880.0, 0.1,
                                    ctx.learner);
  EXPECT_DOUBLE_EQ(edges[0].weight, expected);
}

TEST(BuildEdges, PickupFilterAndCandidateCap) {
  std::vector<RiderView> riders{{7, {0.0, 0.0}, {0.1, 0.1}, 5.0, 100.0}};
  std::vector<DriverView> drivers;
  for (DriverId d = 0; d < 30; ++d) drivers.push_back({d, {0.0, 0.0}});
  FilterConfig filter;
  filter.max_pickup_s = 600.0;
  filter.max_candidates_per_rider = 4;
  auto pickup = [](const RiderView&, const DriverView& d) { return 50.0 * static_cast<double>(30 - d.id); };
  const auto edges = build_edges(riders, drivers, Policy::greedy, ValueTable{}, filter, EdgeContext{}, pickup, no_cancel);
  ASSERT_EQ(edges.size(), 4u);
  for (const auto& e : edges) EXPECT_LE(e.pickup_s, 600.0);
  EXPECT_EQ(edges[0].driver, 29u);
  EXPECT_EQ(edges[3].driver, 26u);
}
