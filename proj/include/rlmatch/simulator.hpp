#pragma once

// Deterministic discrete-event ridesharing marketplace. Riders arrive as a
// piecewise-constant Poisson process, drivers log in and out, and every
// matching cycle the idle drivers and waiting riders are matched under the
// active policy. With learning on, completed trips, cancelled pickups and
// every idle cycle feed TD updates to the value table.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <queue>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "rlmatch/error.hpp"
#include "rlmatch/matcher.hpp"
#include "rlmatch/spacetime.hpp"
#include "rlmatch/text.hpp"
#include "rlmatch/value_function.hpp"

namespace rlmatch {

inline constexpr double kHourS = 3600.0;
inline constexpr double kWeekS = 7.0 * 24.0 * kHourS;
inline constexpr std::uint64_t kNoId = std::numeric_limits<std::uint64_t>::max();

// ---------------------------------------------------------------------------
// Configuration

struct Hotspot {
  GeoPoint center;
  double radius_m = 1000.0;
  double weight = 1.0;

  friend bool operator==(const Hotspot&, const Hotspot&) = default;
};

// Relative spatial intensity: background + sum of Gaussian bumps.
struct SpatialSurface {
  double background = 1.0;
  std::vector<Hotspot> hotspots;

  double at(const GeoPoint& p) const {
    double w = background;
    for (const auto& h : hotspots) {
      const double d = haversine_m(p, h.center);
      w += h.weight * std::exp(-0.5 * (d / h.radius_m) * (d / h.radius_m));
    }
    return w;
  }

  friend bool operator==(const SpatialSurface&, const SpatialSurface&) = default;
};

struct DemandConfig {
  double base_rate_per_hour = 60.0;
  std::array<double, 24> hourly{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  std::array<double, 7> daily{1, 1, 1, 1, 1, 1, 1};  // Monday first
  SpatialSurface origins;
  SpatialSurface destinations;
  int cell_precision = 6;
  double min_trip_m = 500.0;

  // Requests per hour at hour-of-week h (0 = Monday 00:00).
  double rate_at(int hour_of_week) const {
    return base_rate_per_hour * hourly[static_cast<std::size_t>(hour_of_week % 24)] *
           daily[static_cast<std::size_t>(hour_of_week / 24)];
  }

  friend bool operator==(const DemandConfig&, const DemandConfig&) = default;
};

struct SupplyConfig {
  int initial_drivers = 20;
  double login_rate_per_hour = 2.0;
  std::array<double, 24> hourly{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  double session_mean_s = 8.0 * kHourS;
  double session_min_s = 1.0 * kHourS;

  friend bool operator==(const SupplyConfig&, const SupplyConfig&) = default;
};

struct FareConfig {
  double base = 2.0;
  double per_km = 1.0;
  double per_min = 0.2;

  friend bool operator==(const FareConfig&, const FareConfig&) = default;
};

struct RiderConfig {
  double patience_s = 300.0;
  double cancel_prob = 0.05;
  // Added to cancel_prob per minute of pickup wait, capped at one.
  double cancel_per_pickup_min = 0.01;

  friend bool operator==(const RiderConfig&, const RiderConfig&) = default;
};

struct ScenarioConfig {
  GeoRect region{37.70, 37.82, -122.50, -122.38};
  double horizon_s = 2.0 * kWeekS;
  DemandConfig demand;
  SupplyConfig supply;
  double speed_mps = 8.0;
  FareConfig fare;
  double cycle_s = 4.0;
  RiderConfig rider;
  std::uint64_t rng_seed = 1;

  std::vector<FieldProblem> problems() const {
    std::vector<FieldProblem> out;
    auto bad = [&](const std::string& f, const std::string& m) { out.push_back({f, m}); };
    const GeoRect& r = region;
    if (!in_bounds({r.lat_min, r.lon_min}) || !in_bounds({r.lat_max, r.lon_max}) || !(r.lat_min < r.lat_max) ||
        !(r.lon_min < r.lon_max))
      bad("region", "needs finite in-range bounds with lat_min < lat_max and lon_min < lon_max");
    if (!(horizon_s > 0.0) || !std::isfinite(horizon_s)) bad("horizon_s", "must be positive");
    if (!(demand.base_rate_per_hour >= 0.0) || !std::isfinite(demand.base_rate_per_hour))
      bad("demand.base_rate_per_hour", "must be >= 0");
    for (double v : demand.hourly)
      if (!(v >= 0.0) || !std::isfinite(v)) {
        bad("demand.hourly", "all multipliers must be >= 0");
        break;
      }
    for (double v : demand.daily)
      if (!(v >= 0.0) || !std::isfinite(v)) {
        bad("demand.daily", "all multipliers must be >= 0");
        break;
      }
    auto check_surface = [&](const SpatialSurface& s, const std::string& name) {
      if (!(s.background >= 0.0)) bad(name + ".background", "must be >= 0");
      double total = s.background;
      for (std::size_t i = 0; i < s.hotspots.size(); ++i) {
        const auto& h = s.hotspots[i];
        const std::string at = name + ".hotspots[" + std::to_string(i) + "]";
        if (!in_bounds(h.center)) bad(at + ".center", "coordinate out of range");
        if (!(h.radius_m > 0.0)) bad(at + ".radius_m", "must be positive");
        if (!(h.weight >= 0.0)) bad(at + ".weight", "must be >= 0");
        total += h.weight;
      }
      if (!(total > 0.0)) bad(name, "total weight must be positive");
    };
    check_surface(demand.origins, "demand.origins");
    check_surface(demand.destinations, "demand.destinations");
    if (demand.cell_precision < 1 || demand.cell_precision > 9)
      bad("demand.cell_precision", "must be an integer in [1, 9]");
    if (!(demand.min_trip_m >= 0.0)) bad("demand.min_trip_m", "must be >= 0");
    if (supply.initial_drivers < 0) bad("supply.initial_drivers", "must be >= 0");
    if (!(supply.login_rate_per_hour >= 0.0)) bad("supply.login_rate_per_hour", "must be >= 0");
    for (double v : supply.hourly)
      if (!(v >= 0.0) || !std::isfinite(v)) {
        bad("supply.hourly", "all multipliers must be >= 0");
        break;
      }
    if (!(supply.session_min_s >= 0.0)) bad("supply.session_min_s", "must be >= 0");
    if (!(supply.session_mean_s > supply.session_min_s))
      bad("supply.session_mean_s", "must exceed supply.session_min_s");
    if (!(speed_mps > 0.0) || !std::isfinite(speed_mps)) bad("speed_mps", "must be positive");
    if (!(fare.base >= 0.0)) bad("fare.base", "must be >= 0");
    if (!(fare.per_km >= 0.0)) bad("fare.per_km", "must be >= 0");
    if (!(fare.per_min >= 0.0)) bad("fare.per_min", "must be >= 0");
    if (!(cycle_s > 0.0) || !std::isfinite(cycle_s)) bad("cycle_s", "must be positive");
    if (!(rider.patience_s > 0.0)) bad("rider.patience_s", "must be positive");
    if (!(rider.cancel_prob >= 0.0 && rider.cancel_prob <= 1.0)) bad("rider.cancel_prob", "must be in [0, 1]");
    if (!(rider.cancel_per_pickup_min >= 0.0)) bad("rider.cancel_per_pickup_min", "must be >= 0");
    return out;
  }

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

// Learner, coding and filter settings shared by the matcher and the learner.
struct EngineConfig {
  CodingConfig coding;
  LearnerConfig learner;
  FilterConfig filter;
};

inline std::string describe(const std::vector<FieldProblem>& problems) {
  std::string s;
  for (const auto& p : problems) s += (s.empty() ? "" : "; ") + p.field + ": " + p.message;
  return s;
}

// ---------------------------------------------------------------------------
// Travel model

// Straight-line travel time in whole seconds, rounded up. A micro-second of
// slack absorbs floating-point noise in the distance.
inline double travel_time(const GeoPoint& a, const GeoPoint& b, double speed_mps) {
  return std::ceil(haversine_m(a, b) / speed_mps - 1e-6);
}

inline double trip_fare(double distance_m, double duration_s, const FareConfig& f) {
  return f.base + f.per_km * distance_m / 1000.0 + f.per_min * duration_s / 60.0;
}

inline double pickup_cancel_prob(double base, double pickup_s, const RiderConfig& rc) {
  return std::min(1.0, base + rc.cancel_per_pickup_min * pickup_s / 60.0);
}

// ---------------------------------------------------------------------------
// State and events

enum class DriverStatus : std::uint8_t { idle, enroute_pickup, on_trip, offline };

struct DriverState {
  DriverId driver_id = 0;
  GeoPoint position;
  DriverStatus status = DriverStatus::offline;
  double status_until = 0.0;
  double session_end = 0.0;
};

struct RideRequest {
  RiderId rider_id = 0;
  GeoPoint origin;
  GeoPoint destination;
  double request_time = 0.0;
  double fare = 0.0;
  double patience_s = 0.0;
  double cancel_prob = 0.0;
};

// Declaration order is the tie-break priority for simultaneous events.
enum class EventKind : std::uint8_t {
  pickup_complete,
  trip_complete,
  rider_cancel,
  driver_logoff,
  driver_login,
  request_expired,
  request_arrival,
  cycle_tick,
  match_made,
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::pickup_complete: return "pickup_complete";
    case EventKind::trip_complete: return "trip_complete";
    case EventKind::rider_cancel: return "rider_cancel";
    case EventKind::driver_logoff: return "driver_logoff";
    case EventKind::driver_login: return "driver_login";
    case EventKind::request_expired: return "request_expired";
    case EventKind::request_arrival: return "request_arrival";
    case EventKind::cycle_tick: return "cycle_tick";
    case EventKind::match_made: return "match_made";
  }
  return "?";
}

struct MarketEvent {
  double time = 0.0;
  EventKind kind = EventKind::cycle_tick;
  std::uint64_t entity = 0;
  std::uint64_t seq = 0;

  // Earliest first; then kind priority, entity id, insertion order.
  friend bool operator>(const MarketEvent& a, const MarketEvent& b) {
    if (a.time != b.time) return a.time > b.time;
    if (a.kind != b.kind) return a.kind > b.kind;
    if (a.entity != b.entity) return a.entity > b.entity;
    return a.seq > b.seq;
  }
};

// ---------------------------------------------------------------------------
// Metrics

// One logged event. value carries the fare for request_arrival and
// trip_complete, the pickup seconds for match_made, the seconds since the
// match for rider_cancel, the session end for driver_login, zero otherwise.
struct EventRecord {
  double time = 0.0;
  EventKind kind = EventKind::cycle_tick;
  RiderId rider = kNoId;
  DriverId driver = kNoId;
  double value = 0.0;
  double request_time = 0.0;
  Policy policy = Policy::greedy;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct HourlyRow {
  std::uint64_t hour = 0;
  std::uint64_t requests = 0;
  std::uint64_t matches = 0;
  std::uint64_t expirations = 0;
  std::uint64_t cancellations = 0;
  double pickup_sum_s = 0.0;
  std::uint64_t idle_driver_cycles = 0;
  std::uint64_t online_driver_cycles = 0;
  double gross_fares = 0.0;

  double mean_pickup_s() const { return matches ? pickup_sum_s / static_cast<double>(matches) : 0.0; }
  double driver_idle_fraction() const {
    return online_driver_cycles ? static_cast<double>(idle_driver_cycles) / static_cast<double>(online_driver_cycles)
                                : 0.0;
  }

  friend bool operator==(const HourlyRow&, const HourlyRow&) = default;
};

// Where every request ended up when the horizon was reached.
struct OutcomeTotals {
  std::uint64_t requests = 0;
  std::uint64_t completed = 0;
  std::uint64_t in_progress = 0;  // matched, trip not finished at the horizon
  std::uint64_t cancelled = 0;
  std::uint64_t expired = 0;
  std::uint64_t waiting = 0;  // unmatched with patience left at the horizon
  std::uint64_t matches = 0;
  std::uint64_t td_updates = 0;
  double requested_trip_s = 0.0;  // summed over every request, served or not
  double driver_online_s = 0.0;   // up to the horizon

  // Driver time the requested trips alone would need, per unit of driver
  // time supplied. Pickups excluded, so this understates the true load.
  double demand_supply_ratio() const { return driver_online_s > 0.0 ? requested_trip_s / driver_online_s : 0.0; }

  friend bool operator==(const OutcomeTotals&, const OutcomeTotals&) = default;
};

struct MetricsLog {
  std::uint64_t seed = 0;
  double horizon_s = 0.0;
  std::vector<EventRecord> events;
  std::vector<HourlyRow> hourly;
  OutcomeTotals totals;

  friend bool operator==(const MetricsLog&, const MetricsLog&) = default;
};

struct ArmSetting {
  Policy policy = Policy::greedy;
  bool learn = false;
};

// Active policy and learning flag as a function of simulation time.
using ArmSchedule = std::function<ArmSetting(double)>;

struct SimulationResult {
  MetricsLog log;
  ValueTable table;
};

// ---------------------------------------------------------------------------
// Engine

namespace sim_detail {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double exponential(std::mt19937_64& rng, double mean) { return -mean * std::log1p(-uniform01(rng)); }

// Cells of a precision covering a rectangle, in CellId order.
inline std::vector<CellId> cells_covering(const GeoRect& region, int precision) {
  const auto [lat_span, lon_span] = cell_span_deg(precision);
  const GeoPoint first = encode_cell({region.lat_min, region.lon_min}, precision).center();
  std::vector<CellId> out;
  for (double lat = first.lat; lat - lat_span / 2.0 < region.lat_max; lat += lat_span) {
    for (double lon = first.lon; lon - lon_span / 2.0 < region.lon_max; lon += lon_span) {
      const CellId c = encode_cell({std::clamp(lat, -90.0, 90.0), std::clamp(lon, -180.0, 180.0)}, precision);
      if (c.bounds().intersects(region)) out.push_back(c);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Categorical sampler over cells, restricted to the region.
class CellSampler {
 public:
  CellSampler(const GeoRect& region, int precision, const SpatialSurface& surface) : region_(region) {
    double total = 0.0;
    for (const auto& c : cells_covering(region, precision)) {
      GeoRect b = c.bounds();
      b.lat_min = std::max(b.lat_min, region.lat_min);
      b.lat_max = std::min(b.lat_max, region.lat_max);
      b.lon_min = std::max(b.lon_min, region.lon_min);
      b.lon_max = std::min(b.lon_max, region.lon_max);
      const double area = (b.lat_max - b.lat_min) * (b.lon_max - b.lon_min);
      const double w = surface.at(b.center()) * area;
      if (!(w > 0.0)) continue;
      total += w;
      rects_.push_back(b);
      cumulative_.push_back(total);
    }
  }

  bool empty() const { return rects_.empty(); }

  GeoPoint sample(std::mt19937_64& rng) const {
    const double u = uniform01(rng) * cumulative_.back();
    auto idx = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
    idx = std::min(idx, rects_.size() - 1);
    const GeoRect& b = rects_[idx];
    const double lat = b.lat_min + uniform01(rng) * (b.lat_max - b.lat_min);
    const double lon = b.lon_min + uniform01(rng) * (b.lon_max - b.lon_min);
    return {lat, lon};
  }

 private:
  GeoRect region_;
  std::vector<GeoRect> rects_;
  std::vector<double> cumulative_;
};

// Next arrival of a Poisson process whose rate (per hour) is constant within
// each hour and repeats weekly. Returns +inf when the rate is zero everywhere.
template <typename RateFn>
double next_arrival(double t, std::mt19937_64& rng, RateFn&& rate_per_hour) {
  double any = 0.0;
  for (int h = 0; h < 168; ++h) any += rate_per_hour(h);
  if (!(any > 0.0)) return std::numeric_limits<double>::infinity();
  double budget = exponential(rng, 1.0);
  for (;;) {
    const double hour_start = std::floor(t / kHourS) * kHourS;
    const double hour_end = hour_start + kHourS;
    const int how = static_cast<int>(std::fmod(hour_start, kWeekS) / kHourS);
    const double rate = rate_per_hour(how) / kHourS;
    const double mass = rate * (hour_end - t);
    if (budget < mass) return t + budget / rate;
    budget -= mass;
    t = hour_end;
  }
}

inline GeoPoint lerp(const GeoPoint& a, const GeoPoint& b, double f) {
  return {a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon)};
}

}  // namespace sim_detail

class Simulator {
 public:
  Simulator(ScenarioConfig cfg, EngineConfig engine, ValueTable table)
      : cfg_(std::move(cfg)), engine_(std::move(engine)), table_(std::move(table)), rng_(cfg_.rng_seed) {
    auto problems = cfg_.problems();
    for (const auto& [sect, list] : {std::pair{"coding.", engine_.coding.problems()},
                                     std::pair{"learner.", engine_.learner.problems()},
                                     std::pair{"filter.", engine_.filter.problems()}}) {
      for (const auto& p : list) problems.push_back({sect + p.field, p.message});
    }
    if (!problems.empty()) throw InvalidInput("invalid simulation config: " + describe(problems));
    origins_ = std::make_unique<sim_detail::CellSampler>(cfg_.region, cfg_.demand.cell_precision, cfg_.demand.origins);
    destinations_ =
        std::make_unique<sim_detail::CellSampler>(cfg_.region, cfg_.demand.cell_precision, cfg_.demand.destinations);
    if (origins_->empty() || destinations_->empty()) throw InvalidInput("demand surface has no support in region");
  }

  // Fixed arrivals on top of the stochastic streams; call before run().
  RiderId script_request(double t, const GeoPoint& origin, const GeoPoint& destination) {
    require_in_bounds(origin);
    require_in_bounds(destination);
    const RiderId id = next_rider_id_++;
    scripted_trips_.emplace(id, std::pair{origin, destination});
    scripted_.push_back({t, EventKind::request_arrival, id, 0});
    return id;
  }

  DriverId script_driver(double t, const GeoPoint& position, double session_s) {
    require_in_bounds(position);
    const DriverId id = next_driver_id_++;
    scripted_drivers_.emplace(id, std::pair{position, session_s});
    scripted_.push_back({t, EventKind::driver_login, id, 0});
    return id;
  }

  // Single use: the simulator is consumed.
  SimulationResult run(const ArmSchedule& schedule) {
    for (const auto& ev : scripted_) push(ev.time, ev.kind, ev.entity);
    log_ = MetricsLog{};
    log_.seed = cfg_.rng_seed;
    log_.horizon_s = cfg_.horizon_s;
    log_.hourly.resize(static_cast<std::size_t>(std::ceil(cfg_.horizon_s / kHourS)));
    for (std::size_t h = 0; h < log_.hourly.size(); ++h) log_.hourly[h].hour = h;

    for (int i = 0; i < cfg_.supply.initial_drivers; ++i) push(0.0, EventKind::driver_login, next_driver_id_++);
    schedule_next_login(0.0);
    schedule_next_request(0.0);
    push(0.0, EventKind::cycle_tick, 0);

    double clock = 0.0;
    while (!queue_.empty()) {
      const MarketEvent ev = queue_.top();
      if (ev.time >= cfg_.horizon_s) break;
      queue_.pop();
      if (ev.time < clock) throw std::logic_error("event clock went backwards");
      clock = ev.time;
      arm_ = schedule(ev.time);
      dispatch(ev);
    }
    finish_totals();
    return {std::move(log_), std::move(table_)};
  }

 private:
  enum class RequestState : std::uint8_t { waiting, matched, picked_up, completed, cancelled, expired };

  struct Request {
    RideRequest data;
    double trip_s = 0.0;
    RequestState state = RequestState::waiting;
    DriverId driver = kNoId;
    double cancel_at = -1.0;
  };

  struct Driver {
    DriverState state;
    double login_time = 0.0;
    bool logoff_pending = false;
    RiderId rider = kNoId;
    double match_time = 0.0;
    GeoPoint match_position;
    double pickup_s = 0.0;
    // Cached coding of the current idle position.
    WeightedFactorSet coded;
    std::uint64_t coded_bucket = std::numeric_limits<std::uint64_t>::max();
    bool coded_valid = false;
  };

  void push(double t, EventKind kind, std::uint64_t entity) { queue_.push({t, kind, entity, seq_++}); }

  void record(double t, EventKind kind, RiderId rider, DriverId driver, double value, double request_time) {
    log_.events.push_back({t, kind, rider, driver, value, request_time, arm_.policy});
  }

  HourlyRow& hour_row(double t) {
    const auto h = static_cast<std::size_t>(t / kHourS);
    return log_.hourly[std::min(h, log_.hourly.size() - 1)];
  }

  void schedule_next_request(double t) {
    const double next = sim_detail::next_arrival(t, rng_, [&](int how) { return cfg_.demand.rate_at(how); });
    if (next < cfg_.horizon_s) push(next, EventKind::request_arrival, next_rider_id_++);
  }

  void schedule_next_login(double t) {
    const double next = sim_detail::next_arrival(
        t, rng_, [&](int how) { return cfg_.supply.login_rate_per_hour * cfg_.supply.hourly[how % 24]; });
    if (next < cfg_.horizon_s) push(next, EventKind::driver_login, next_driver_id_++);
  }

  void dispatch(const MarketEvent& ev) {
    switch (ev.kind) {
      case EventKind::request_arrival: on_request(ev.time, ev.entity); break;
      case EventKind::driver_login: on_login(ev.time, ev.entity); break;
      case EventKind::driver_logoff: on_logoff(ev.time, ev.entity); break;
      case EventKind::cycle_tick: on_cycle(ev.time); break;
      case EventKind::pickup_complete: on_pickup(ev.time, ev.entity); break;
      case EventKind::trip_complete: on_trip_complete(ev.time, ev.entity); break;
      case EventKind::rider_cancel: on_cancel(ev.time, ev.entity); break;
      case EventKind::request_expired: on_expire(ev.time, ev.entity); break;
      case EventKind::match_made: break;
    }
  }

  void on_request(double t, RiderId id) {
    Request r;
    r.data.rider_id = id;
    r.data.request_time = t;
    const auto scripted = scripted_trips_.find(id);
    if (scripted != scripted_trips_.end()) {
      std::tie(r.data.origin, r.data.destination) = scripted->second;
    } else {
      r.data.origin = origins_->sample(rng_);
      r.data.destination = destinations_->sample(rng_);
      for (int tries = 0; tries < 64 && haversine_m(r.data.origin, r.data.destination) < cfg_.demand.min_trip_m;
           ++tries)
        r.data.destination = destinations_->sample(rng_);
      if (r.data.origin == r.data.destination) r.data.destination.lat += 1e-4;
    }
    r.trip_s = std::max(1.0, travel_time(r.data.origin, r.data.destination, cfg_.speed_mps));
    r.data.fare = trip_fare(haversine_m(r.data.origin, r.data.destination), r.trip_s, cfg_.fare);
    r.data.patience_s = cfg_.rider.patience_s;
    r.data.cancel_prob = cfg_.rider.cancel_prob;
    requests_.emplace(id, r);
    waiting_.push_back(id);
    ++log_.totals.requests;
    log_.totals.requested_trip_s += r.trip_s;
    ++hour_row(t).requests;
    record(t, EventKind::request_arrival, id, kNoId, r.data.fare, t);
    push(t + r.data.patience_s, EventKind::request_expired, id);
    if (scripted == scripted_trips_.end()) schedule_next_request(t);
  }

  void on_login(double t, DriverId id) {
    Driver d;
    d.state.driver_id = id;
    d.login_time = t;
    d.state.status = DriverStatus::idle;
    d.state.status_until = t;
    const auto scripted = scripted_drivers_.find(id);
    if (scripted != scripted_drivers_.end()) {
      d.state.position = scripted->second.first;
      d.state.session_end = t + scripted->second.second;
    } else {
      d.state.position = origins_->sample(rng_);
      const double extra = sim_detail::exponential(rng_, cfg_.supply.session_mean_s - cfg_.supply.session_min_s);
      d.state.session_end = t + cfg_.supply.session_min_s + extra;
    }
    drivers_.emplace(id, d);
    online_.push_back(id);
    record(t, EventKind::driver_login, kNoId, id, d.state.session_end, 0.0);
    push(d.state.session_end, EventKind::driver_logoff, id);
    if (t > 0.0 && scripted == scripted_drivers_.end()) schedule_next_login(t);
  }

  void go_offline(double t, Driver& d) {
    d.state.status = DriverStatus::offline;
    d.logoff_pending = false;
    log_.totals.driver_online_s += t - d.login_time;
    online_.erase(std::find(online_.begin(), online_.end(), d.state.driver_id));
    record(t, EventKind::driver_logoff, kNoId, d.state.driver_id, 0.0, 0.0);
  }

  void on_logoff(double t, DriverId id) {
    Driver& d = drivers_.at(id);
    if (d.state.status == DriverStatus::idle) {
      go_offline(t, d);
    } else if (d.state.status != DriverStatus::offline) {
      d.logoff_pending = true;
    }
  }

  void become_idle(double t, Driver& d, const GeoPoint& where) {
    d.state.position = where;
    d.state.status = DriverStatus::idle;
    d.state.status_until = t;
    d.rider = kNoId;
    d.coded_valid = false;
    if (d.logoff_pending || t >= d.state.session_end) go_offline(t, d);
  }

  void learn_transition(double t, const Driver& d, const GeoPoint& to, double reward) {
    const double duration = t - d.match_time;
    if (!arm_.learn || !(duration > 0.0)) return;
    const auto from = factorize(d.match_position, d.match_time, engine_.coding);
    const auto dest = factorize(to, t, engine_.coding);
    td_update(table_, Transition::trip(from, dest, reward, duration), engine_.learner);
    ++log_.totals.td_updates;
  }

  void on_pickup(double t, RiderId id) {
    Request& r = requests_.at(id);
    Driver& d = drivers_.at(r.driver);
    r.state = RequestState::picked_up;
    d.state.status = DriverStatus::on_trip;
    d.state.position = r.data.origin;
    d.state.status_until = t + r.trip_s;
    record(t, EventKind::pickup_complete, id, r.driver, 0.0, r.data.request_time);
    push(t + r.trip_s, EventKind::trip_complete, id);
  }

  void on_trip_complete(double t, RiderId id) {
    Request& r = requests_.at(id);
    Driver& d = drivers_.at(r.driver);
    r.state = RequestState::completed;
    hour_row(t).gross_fares += r.data.fare;
    record(t, EventKind::trip_complete, id, r.driver, r.data.fare, r.data.request_time);
    learn_transition(t, d, r.data.destination, r.data.fare);
    become_idle(t, d, r.data.destination);
  }

  void on_cancel(double t, RiderId id) {
    Request& r = requests_.at(id);
    Driver& d = drivers_.at(r.driver);
    r.state = RequestState::cancelled;
    ++log_.totals.cancelled;
    ++hour_row(t).cancellations;
    record(t, EventKind::rider_cancel, id, r.driver, t - d.match_time, r.data.request_time);
    const double frac = d.pickup_s > 0.0 ? (t - d.match_time) / d.pickup_s : 1.0;
    const GeoPoint where = sim_detail::lerp(d.match_position, r.data.origin, std::clamp(frac, 0.0, 1.0));
    learn_transition(t, d, where, 0.0);
    become_idle(t, d, where);
  }

  void on_expire(double t, RiderId id) {
    Request& r = requests_.at(id);
    if (r.state != RequestState::waiting) return;
    r.state = RequestState::expired;
    waiting_.erase(std::find(waiting_.begin(), waiting_.end(), id));
    ++log_.totals.expired;
    ++hour_row(t).expirations;
    record(t, EventKind::request_expired, id, kNoId, 0.0, r.data.request_time);
  }

  const WeightedFactorSet& coded_state(Driver& d, double t) {
    const auto bucket = time_bucket(t, engine_.coding.time_bucket_s).index;
    if (!d.coded_valid || d.coded_bucket != bucket) {
      d.coded = factorize(d.state.position, t, engine_.coding);
      d.coded_bucket = bucket;
      d.coded_valid = true;
    }
    return d.coded;
  }

  void on_cycle(double t) {
    std::vector<RiderView> riders;
    riders.reserve(waiting_.size());
    for (RiderId id : waiting_) {
      const Request& r = requests_.at(id);
      riders.push_back({id, r.data.origin, r.data.destination, r.data.fare, r.trip_s});
    }
    std::vector<DriverView> idle;
    for (DriverId id : online_) {
      const Driver& d = drivers_.at(id);
      if (d.state.status == DriverStatus::idle) idle.push_back({id, d.state.position});
    }

    std::vector<char> matched_driver(idle.size(), 0);
    if (!riders.empty() && !idle.empty()) {
      auto pickup = [&](const RiderView& r, const DriverView& d) {
        return travel_time(d.position, r.origin, cfg_.speed_mps);
      };
      auto cancel = [&](const RiderView& r, double pickup_s) {
        return pickup_cancel_prob(requests_.at(r.id).data.cancel_prob, pickup_s, cfg_.rider);
      };
      const EdgeContext ctx{t, engine_.coding, engine_.learner};
      const auto edges = build_edges(riders, idle, arm_.policy, table_, engine_.filter, ctx, pickup, cancel);
      MatchPlan plan;
      if (arm_.policy == Policy::greedy) {
        // waiting_ is in arrival order.
        plan = greedy_assignment(edges, std::span<const RiderId>(waiting_));
      } else {
        plan = solve_assignment(edges, engine_.filter.min_weight);
      }
      std::map<std::pair<RiderId, DriverId>, double> pickup_of;
      for (const auto& e : edges) pickup_of[{e.rider, e.driver}] = e.pickup_s;
      for (const auto& [rid, did] : plan.pairs) {
        apply_match(t, rid, did, pickup_of.at({rid, did}));
        for (std::size_t j = 0; j < idle.size(); ++j)
          if (idle[j].id == did) matched_driver[j] = 1;
      }
    }

    HourlyRow& row = hour_row(t);
    std::uint64_t idle_count = 0;
    for (std::size_t j = 0; j < idle.size(); ++j) {
      if (matched_driver[j]) continue;
      ++idle_count;
      if (!arm_.learn) continue;
      Driver& d = drivers_.at(idle[j].id);
      const WeightedFactorSet& from = coded_state(d, t);
      const double later = t + engine_.learner.idle_duration_s;
      if (time_bucket(later, engine_.coding.time_bucket_s).index == d.coded_bucket) {
        td_update(table_, Transition::idle(from, from, engine_.learner), engine_.learner);
      } else {
        td_update(table_, Transition::idle(from, factorize(d.state.position, later, engine_.coding), engine_.learner),
                  engine_.learner);
      }
      ++log_.totals.td_updates;
    }
    row.idle_driver_cycles += idle_count;
    row.online_driver_cycles += online_.size();

    if (t + cfg_.cycle_s < cfg_.horizon_s) push(t + cfg_.cycle_s, EventKind::cycle_tick, 0);
  }

  void apply_match(double t, RiderId rid, DriverId did, double pickup_s) {
    Request& r = requests_.at(rid);
    Driver& d = drivers_.at(did);
    if (r.state != RequestState::waiting || d.state.status != DriverStatus::idle || d.rider != kNoId)
      throw std::logic_error("match on unavailable rider or driver");
    r.state = RequestState::matched;
    r.driver = did;
    waiting_.erase(std::find(waiting_.begin(), waiting_.end(), rid));
    d.state.status = DriverStatus::enroute_pickup;
    d.state.status_until = t + pickup_s;
    d.rider = rid;
    d.match_time = t;
    d.match_position = d.state.position;
    d.pickup_s = pickup_s;
    d.coded_valid = false;
    ++log_.totals.matches;
    HourlyRow& row = hour_row(t);
    ++row.matches;
    row.pickup_sum_s += pickup_s;
    record(t, EventKind::match_made, rid, did, pickup_s, r.data.request_time);

    const double p = pickup_cancel_prob(r.data.cancel_prob, pickup_s, cfg_.rider);
    if (sim_detail::uniform01(rng_) < p) {
      const double when = t + sim_detail::uniform01(rng_) * pickup_s;
      push(when, EventKind::rider_cancel, rid);
    } else {
      push(t + pickup_s, EventKind::pickup_complete, rid);
    }
  }

  void finish_totals() {
    auto& tot = log_.totals;
    tot.completed = tot.in_progress = tot.waiting = 0;
    for (DriverId id : online_) tot.driver_online_s += cfg_.horizon_s - drivers_.at(id).login_time;
    for (const auto& [id, r] : requests_) {
      switch (r.state) {
        case RequestState::completed: ++tot.completed; break;
        case RequestState::matched:
        case RequestState::picked_up: ++tot.in_progress; break;
        case RequestState::waiting: ++tot.waiting; break;
        default: break;
      }
    }
  }

  ScenarioConfig cfg_;
  EngineConfig engine_;
  ValueTable table_;
  std::mt19937_64 rng_;
  std::unique_ptr<sim_detail::CellSampler> origins_, destinations_;
  std::priority_queue<MarketEvent, std::vector<MarketEvent>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  RiderId next_rider_id_ = 0;
  DriverId next_driver_id_ = 0;
  std::unordered_map<RiderId, Request> requests_;
  std::unordered_map<DriverId, Driver> drivers_;
  std::vector<RiderId> waiting_;   // arrival order
  std::vector<DriverId> online_;   // login order
  ArmSetting arm_;
  MetricsLog log_;
  std::vector<MarketEvent> scripted_;
  std::unordered_map<RiderId, std::pair<GeoPoint, GeoPoint>> scripted_trips_;
  std::unordered_map<DriverId, std::pair<GeoPoint, double>> scripted_drivers_;
};

inline SimulationResult run(const ScenarioConfig& cfg, const EngineConfig& engine, const ArmSchedule& schedule,
                            ValueTable table) {
  Simulator sim(cfg, engine, std::move(table));
  return sim.run(schedule);
}

inline SimulationResult run(const ScenarioConfig& cfg, const EngineConfig& engine, Policy policy, bool learn,
                            ValueTable table) {
  return run(cfg, engine, [=](double) { return ArmSetting{policy, learn}; }, std::move(table));
}

// ---------------------------------------------------------------------------
// Heatmap

struct HeatmapRow {
  CellId cell;
  GeoPoint center;
  double value = 0.0;
};

// V at each cell center (time t) for every cell intersecting the region.
inline std::vector<HeatmapRow> export_heatmap(const ValueTable& table, double t, const GeoRect& region,
                                              const CodingConfig& coding, int precision = 0) {
  if (precision == 0) precision = coding.precision;
  std::vector<HeatmapRow> rows;
  for (const auto& c : sim_detail::cells_covering(region, precision)) {
    const GeoPoint center = c.center();
    rows.push_back({c, center, evaluate(table, factorize(center, t, coding))});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Delimited text output

inline void write_events_tsv(std::ostream& os, const MetricsLog& log) {
  os << "# seed=" << log.seed << "\n";
  os << "time\tkind\trider\tdriver\tvalue\trequest_time\tpolicy\n";
  auto id = [](std::uint64_t v) { return v == kNoId ? std::string("-") : std::to_string(v); };
  for (const auto& e : log.events) {
    os << fmt_double(e.time) << '\t' << to_string(e.kind) << '\t' << id(e.rider) << '\t' << id(e.driver) << '\t'
       << fmt_double(e.value) << '\t' << fmt_double(e.request_time) << '\t' << to_string(e.policy) << '\n';
  }
}

inline void write_hourly_tsv(std::ostream& os, const MetricsLog& log) {
  os << "# seed=" << log.seed << "\n";
  os << "hour\trequests\tmatches\texpirations\tcancellations\tmean_pickup_s\tdriver_idle_fraction\tgross_fares\n";
  for (const auto& h : log.hourly) {
    os << h.hour << '\t' << h.requests << '\t' << h.matches << '\t' << h.expirations << '\t' << h.cancellations
       << '\t' << fmt_double(h.mean_pickup_s()) << '\t' << fmt_double(h.driver_idle_fraction()) << '\t'
       << fmt_double(h.gross_fares) << '\n';
  }
}

inline void write_heatmap_tsv(std::ostream& os, const std::vector<HeatmapRow>& rows, std::uint64_t seed) {
  os << "# seed=" << seed << "\n";
  os << "cell\tlat\tlon\tvalue\n";
  for (const auto& r : rows) {
    os << r.cell.code() << '\t' << fmt_double(r.center.lat) << '\t' << fmt_double(r.center.lon) << '\t'
       << fmt_double(r.value) << '\n';
  }
}

}  // namespace rlmatch
