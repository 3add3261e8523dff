#pragma once

// Spatiotemporal state representation: geohash cells, time buckets, and the
// inverse-distance coarse coding that turns a (position, time) pair into a
// weighted set of discrete factors.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rlmatch/error.hpp"

namespace rlmatch {

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kPi = 3.14159265358979323846;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

inline bool in_bounds(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

inline void require_in_bounds(const GeoPoint& p) {
  if (!in_bounds(p)) {
    throw InvalidInput("coordinate out of range: lat=" + std::to_string(p.lat) +
                       " lon=" + std::to_string(p.lon));
  }
}

// Great-circle distance in meters.
inline double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  constexpr double deg = kPi / 180.0;
  const double dlat = (b.lat - a.lat) * deg;
  const double dlon = (b.lon - a.lon) * deg;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(a.lat * deg) * std::cos(b.lat * deg) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::min(1.0, h)));
}

struct GeoRect {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;

  GeoPoint center() const { return {(lat_min + lat_max) / 2.0, (lon_min + lon_max) / 2.0}; }

  // Half-open on the upper edges, except at the poles and the antimeridian.
  bool contains(const GeoPoint& p) const {
    const bool lat_ok = p.lat >= lat_min && (p.lat < lat_max || (lat_max == 90.0 && p.lat == 90.0));
    const bool lon_ok =
        p.lon >= lon_min && (p.lon < lon_max || (lon_max == 180.0 && p.lon == 180.0));
    return lat_ok && lon_ok;
  }

  bool intersects(const GeoRect& o) const {
    return lat_min < o.lat_max && o.lat_min < lat_max && lon_min < o.lon_max && o.lon_min < lon_max;
  }

  friend bool operator==(const GeoRect&, const GeoRect&) = default;
};

inline constexpr std::string_view kGeohashAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";
inline constexpr int kMaxGeohashPrecision = 12;

// Geohash cell. Bits are packed most-significant-first, five per character,
// so ordering by (precision, bits) equals lexicographic ordering of the codes.
class CellId {
 public:
  CellId() = default;
  CellId(std::uint64_t bits, int precision) : bits_(bits), precision_(static_cast<std::uint8_t>(precision)) {}

  static CellId from_code(std::string_view code) {
    if (code.empty() || code.size() > static_cast<std::size_t>(kMaxGeohashPrecision)) {
      throw InvalidInput("geohash length must be in [1, 12]: '" + std::string(code) + "'");
    }
    std::uint64_t bits = 0;
    for (char c : code) {
      const auto pos = kGeohashAlphabet.find(c);
      if (pos == std::string_view::npos) {
        throw InvalidInput("invalid geohash character in '" + std::string(code) + "'");
      }
      bits = (bits << 5) | pos;
    }
    return CellId(bits, static_cast<int>(code.size()));
  }

  std::uint64_t bits() const { return bits_; }
  int precision() const { return precision_; }
  bool valid() const { return precision_ > 0; }

  std::string code() const {
    std::string out(precision_, '0');
    for (int i = 0; i < precision_; ++i) {
      const int shift = 5 * (precision_ - 1 - i);
      out[i] = kGeohashAlphabet[(bits_ >> shift) & 0x1f];
    }
    return out;
  }

  GeoRect bounds() const {
    GeoRect r{-90.0, 90.0, -180.0, 180.0};
    const int total = 5 * precision_;
    for (int i = 0; i < total; ++i) {
      const bool bit = (bits_ >> (total - 1 - i)) & 1u;
      if (i % 2 == 0) {
        const double mid = (r.lon_min + r.lon_max) / 2.0;
        (bit ? r.lon_min : r.lon_max) = mid;
      } else {
        const double mid = (r.lat_min + r.lat_max) / 2.0;
        (bit ? r.lat_min : r.lat_max) = mid;
      }
    }
    return r;
  }

  GeoPoint center() const { return bounds().center(); }

  friend bool operator==(const CellId&, const CellId&) = default;
  friend auto operator<=>(const CellId& a, const CellId& b) {
    if (auto c = a.precision_ <=> b.precision_; c != 0) return c;
    return a.bits_ <=> b.bits_;
  }

 private:
  std::uint64_t bits_ = 0;
  std::uint8_t precision_ = 0;
};

inline CellId encode_cell(const GeoPoint& p, int precision) {
  if (precision < 1 || precision > kMaxGeohashPrecision) {
    throw InvalidInput("geohash precision must be in [1, 12], got " + std::to_string(precision));
  }
  require_in_bounds(p);
  double lat_lo = -90.0, lat_hi = 90.0, lon_lo = -180.0, lon_hi = 180.0;
  std::uint64_t bits = 0;
  const int total = 5 * precision;
  for (int i = 0; i < total; ++i) {
    bits <<= 1;
    if (i % 2 == 0) {
      const double mid = (lon_lo + lon_hi) / 2.0;
      if (p.lon >= mid) {
        bits |= 1u;
        lon_lo = mid;
      } else {
        lon_hi = mid;
      }
    } else {
      const double mid = (lat_lo + lat_hi) / 2.0;
      if (p.lat >= mid) {
        bits |= 1u;
        lat_lo = mid;
      } else {
        lat_hi = mid;
      }
    }
  }
  return CellId(bits, precision);
}

// Cell extent in degrees at a precision: {lat span, lon span}.
inline std::pair<double, double> cell_span_deg(int precision) {
  const int total = 5 * precision;
  const int lon_bits = (total + 1) / 2;
  const int lat_bits = total / 2;
  return {180.0 / std::ldexp(1.0, lat_bits), 360.0 / std::ldexp(1.0, lon_bits)};
}

// The cell itself followed by its neighbors in the order N, NE, E, SE, S, SW, W, NW.
// Neighbors beyond a pole are omitted; longitude wraps.
inline std::vector<CellId> neighborhood(const CellId& cell) {
  static constexpr std::array<std::pair<int, int>, 8> kOffsets{
      {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};
  const auto [lat_span, lon_span] = cell_span_deg(cell.precision());
  const GeoPoint c = cell.center();
  std::vector<CellId> out;
  out.reserve(9);
  out.push_back(cell);
  for (const auto& [dlat, dlon] : kOffsets) {
    const double lat = c.lat + dlat * lat_span;
    if (lat <= -90.0 || lat >= 90.0) continue;
    double lon = c.lon + dlon * lon_span;
    if (lon >= 180.0) lon -= 360.0;
    if (lon < -180.0) lon += 360.0;
    const CellId n = encode_cell({lat, lon}, cell.precision());
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  }
  return out;
}

struct TimeBucket {
  std::uint64_t index = 0;
  double width_s = 3600.0;

  friend bool operator==(const TimeBucket&, const TimeBucket&) = default;
};

inline TimeBucket time_bucket(double t, double width_s) {
  if (!std::isfinite(t) || t < 0.0) throw InvalidInput("timestamp must be finite and non-negative");
  if (!(width_s > 0.0)) throw InvalidInput("time bucket width must be positive");
  return {static_cast<std::uint64_t>(std::floor(t / width_s)), width_s};
}

enum class FactorKind : std::uint8_t { spatial = 0, temporal = 1, interaction = 2 };

inline const char* to_string(FactorKind k) {
  switch (k) {
    case FactorKind::spatial: return "spatial";
    case FactorKind::temporal: return "temporal";
    case FactorKind::interaction: return "interaction";
  }
  return "?";
}

// A value-table key. Spatial factors carry only a cell, temporal only a
// bucket index, interactions both.
class Factor {
 public:
  static Factor spatial(CellId cell) { return Factor(FactorKind::spatial, cell, 0); }
  static Factor temporal(std::uint64_t bucket) { return Factor(FactorKind::temporal, CellId{}, bucket); }
  static Factor interaction(CellId cell, std::uint64_t bucket) {
    return Factor(FactorKind::interaction, cell, bucket);
  }

  FactorKind kind() const { return kind_; }
  const CellId& cell() const { return cell_; }
  std::uint64_t bucket() const { return bucket_; }
  bool has_cell() const { return kind_ != FactorKind::temporal; }
  bool has_bucket() const { return kind_ != FactorKind::spatial; }

  std::string to_string() const {
    std::string s = rlmatch::to_string(kind_);
    if (has_cell()) s += ":" + cell_.code();
    if (has_bucket()) s += "@" + std::to_string(bucket_);
    return s;
  }

  friend bool operator==(const Factor&, const Factor&) = default;
  friend auto operator<=>(const Factor& a, const Factor& b) {
    if (auto c = a.kind_ <=> b.kind_; c != 0) return c;
    if (auto c = a.cell_ <=> b.cell_; c != 0) return c;
    return a.bucket_ <=> b.bucket_;
  }

 private:
  Factor(FactorKind kind, CellId cell, std::uint64_t bucket) : kind_(kind), cell_(cell), bucket_(bucket) {}

  FactorKind kind_;
  CellId cell_;
  std::uint64_t bucket_;
};

struct FactorHash {
  std::size_t operator()(const Factor& f) const noexcept {
    // splitmix64 finalizer over the packed key
    std::uint64_t x = f.cell().bits() ^ (static_cast<std::uint64_t>(f.cell().precision()) << 60) ^
                      (f.bucket() * 0x9e3779b97f4a7c15ULL) ^
                      (static_cast<std::uint64_t>(f.kind()) << 62);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return static_cast<std::size_t>(x);
  }
};

struct WeightedFactor {
  Factor factor;
  double weight;
};

using WeightedFactorSet = std::vector<WeightedFactor>;

struct CodingConfig {
  int precision = 6;
  double time_bucket_s = 3600.0;
  bool spatial = true;
  bool temporal = true;
  bool interaction = true;
  double epsilon_m = 1.0;

  std::vector<FieldProblem> problems() const {
    std::vector<FieldProblem> out;
    if (precision < 1 || precision > kMaxGeohashPrecision)
      out.push_back({"precision", "must be an integer in [1, 12]"});
    if (!(time_bucket_s > 0.0) || !std::isfinite(time_bucket_s))
      out.push_back({"time_bucket_s", "must be a positive number of seconds"});
    if (!(epsilon_m > 0.0) || !std::isfinite(epsilon_m))
      out.push_back({"epsilon_m", "must be a positive number of meters"});
    if (!spatial && !temporal && !interaction)
      out.push_back({"spatial", "at least one of spatial, temporal, interaction must be enabled"});
    return out;
  }

  friend bool operator==(const CodingConfig&, const CodingConfig&) = default;
};

// Coarse-codes a driver state. Spatial weights are proportional to
// 1 / (distance to cell center + epsilon) over the containing cell and its
// neighbors, normalized to one; the containing time bucket gets weight one;
// interaction factors reuse the spatial weights paired with that bucket.
inline WeightedFactorSet factorize(const GeoPoint& p, double t, const CodingConfig& cfg) {
  require_in_bounds(p);
  if (auto issues = cfg.problems(); !issues.empty()) {
    throw InvalidInput("coding config: " + issues.front().field + " " + issues.front().message);
  }
  const TimeBucket bucket = time_bucket(t, cfg.time_bucket_s);

  WeightedFactorSet out;
  std::vector<CellId> cells;
  std::vector<double> weights;
  if (cfg.spatial || cfg.interaction) {
    cells = neighborhood(encode_cell(p, cfg.precision));
    weights.reserve(cells.size());
    double total = 0.0;
    for (const auto& c : cells) {
      const double w = 1.0 / (haversine_m(p, c.center()) + cfg.epsilon_m);
      weights.push_back(w);
      total += w;
    }
    for (auto& w : weights) w /= total;
  }
  out.reserve(2 * cells.size() + 1);
  if (cfg.spatial) {
    for (std::size_t i = 0; i < cells.size(); ++i) out.push_back({Factor::spatial(cells[i]), weights[i]});
  }
  if (cfg.temporal) out.push_back({Factor::temporal(bucket.index), 1.0});
  if (cfg.interaction) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      out.push_back({Factor::interaction(cells[i], bucket.index), weights[i]});
  }
  return out;
}

}  // namespace rlmatch
