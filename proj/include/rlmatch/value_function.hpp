#pragma once

// Coarse-coded driver value function: V(s) = sum_k w_s(k) v(k), the trip
// advantage used as a matching weight, and online semi-gradient TD(0)
// updates for trip and idle transitions.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rlmatch/error.hpp"
#include "rlmatch/spacetime.hpp"

namespace rlmatch {

struct LearnerConfig {
  double alpha = 0.05;
  // Per-second discount; a transition lasting d seconds is discounted by gamma^d.
  double gamma = 0.9999;
  double idle_duration_s = 4.0;
  double default_value = 0.0;
  // Longest transition the learner must discount without underflow.
  double max_transition_s = 86400.0;

  std::vector<FieldProblem> problems() const {
    std::vector<FieldProblem> out;
    if (!(alpha > 0.0 && alpha <= 1.0)) out.push_back({"alpha", "must be in (0, 1]"});
    if (!(gamma > 0.0 && gamma < 1.0)) {
      out.push_back({"gamma", "must be in (0, 1)"});
    } else if (!(std::pow(gamma, max_transition_s) > 0.0)) {
      out.push_back({"gamma", "gamma^max_transition_s underflows to zero"});
    }
    if (!(idle_duration_s > 0.0) || !std::isfinite(idle_duration_s))
      out.push_back({"idle_duration_s", "must be a positive number of seconds"});
    if (!std::isfinite(default_value)) out.push_back({"default_value", "must be finite"});
    if (!(max_transition_s > 0.0) || !std::isfinite(max_transition_s))
      out.push_back({"max_transition_s", "must be a positive number of seconds"});
    return out;
  }

  friend bool operator==(const LearnerConfig&, const LearnerConfig&) = default;
};

class ValueTable {
 public:
  struct Entry {
    double value = 0.0;
    std::uint64_t updates = 0;
  };

  explicit ValueTable(double default_value = 0.0) : default_value_(default_value) {}

  double default_value() const { return default_value_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  double value(const Factor& k) const {
    auto it = entries_.find(k);
    return it == entries_.end() ? default_value_ : it->second.value;
  }

  std::uint64_t update_count(const Factor& k) const {
    auto it = entries_.find(k);
    return it == entries_.end() ? 0 : it->second.updates;
  }

  bool contains(const Factor& k) const { return entries_.count(k) != 0; }

  void set(const Factor& k, double value, std::uint64_t updates) {
    if (!std::isfinite(value)) throw InvalidInput("value for " + k.to_string() + " is not finite");
    entries_[k] = Entry{value, updates};
  }

  void add(const Factor& k, double delta) {
    auto [it, inserted] = entries_.try_emplace(k, Entry{default_value_, 0});
    it->second.value += delta;
    ++it->second.updates;
  }

  // Entries in Factor order.
  std::vector<std::pair<Factor, Entry>> sorted_entries() const {
    std::vector<std::pair<Factor, Entry>> out(entries_.begin(), entries_.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  // Exact equality: same default, same keys, bit-identical values, same counts.
  friend bool operator==(const ValueTable& a, const ValueTable& b) {
    if (std::bit_cast<std::uint64_t>(a.default_value_) != std::bit_cast<std::uint64_t>(b.default_value_))
      return false;
    if (a.entries_.size() != b.entries_.size()) return false;
    for (const auto& [k, e] : a.entries_) {
      auto it = b.entries_.find(k);
      if (it == b.entries_.end()) return false;
      if (std::bit_cast<std::uint64_t>(e.value) != std::bit_cast<std::uint64_t>(it->second.value)) return false;
      if (e.updates != it->second.updates) return false;
    }
    return true;
  }

 private:
  std::unordered_map<Factor, Entry, FactorHash> entries_;
  double default_value_;
};

inline double evaluate(const ValueTable& table, const WeightedFactorSet& s) {
  double v = 0.0;
  for (const auto& [k, w] : s) v += w * table.value(k);
  return v;
}

// r + (1 - p)(gamma^d V(s') - V(s)), from already evaluated state values.
inline double advantage_from_values(double value_from, double value_dest, double reward, double duration_s,
                                    double cancel_prob, const LearnerConfig& cfg) {
  const double discount = std::pow(cfg.gamma, duration_s);
  return reward + (1.0 - cancel_prob) * (discount * value_dest - value_from);
}

inline double advantage(const ValueTable& table, const WeightedFactorSet& s, const WeightedFactorSet& s_dest,
                        double reward, double duration_s, double cancel_prob, const LearnerConfig& cfg) {
  return advantage_from_values(evaluate(table, s), evaluate(table, s_dest), reward, duration_s, cancel_prob, cfg);
}

enum class TransitionKind : std::uint8_t { trip, idle };

struct Transition {
  WeightedFactorSet from;
  WeightedFactorSet to;
  double reward = 0.0;
  double duration_s = 0.0;
  double cancel_prob = 0.0;
  TransitionKind kind = TransitionKind::trip;

  static Transition trip(WeightedFactorSet from, WeightedFactorSet to, double reward, double duration_s,
                         double cancel_prob = 0.0) {
    return {std::move(from), std::move(to), reward, duration_s, cancel_prob, TransitionKind::trip};
  }

  // A zero-reward virtual trip lasting one idle interval.
  static Transition idle(WeightedFactorSet from, WeightedFactorSet to, const LearnerConfig& cfg) {
    return {std::move(from), std::move(to), 0.0, cfg.idle_duration_s, 0.0, TransitionKind::idle};
  }

  void validate(const LearnerConfig& cfg) const {
    if (!(duration_s > 0.0) || !std::isfinite(duration_s)) throw InvalidInput("transition duration must be positive");
    if (!(reward >= 0.0) || !std::isfinite(reward)) throw InvalidInput("transition reward must be finite and >= 0");
    if (!(cancel_prob >= 0.0 && cancel_prob <= 1.0)) throw InvalidInput("cancel probability must be in [0, 1]");
    if (kind == TransitionKind::idle &&
        (reward != 0.0 || cancel_prob != 0.0 || duration_s != cfg.idle_duration_s)) {
      throw InvalidInput("idle transition must have zero reward, zero cancel probability and the idle duration");
    }
  }
};

// TD error r + gamma^d V(s_to) - V(s_from) on the current table.
inline double td_error(const ValueTable& table, const Transition& tr, const LearnerConfig& cfg) {
  return tr.reward + std::pow(cfg.gamma, tr.duration_s) * evaluate(table, tr.to) - evaluate(table, tr.from);
}

// Semi-gradient TD(0): every factor of the origin state moves by
// alpha * w(k) * delta. Returns delta. The table is untouched on error.
inline double td_update(ValueTable& table, const Transition& tr, const LearnerConfig& cfg) {
  tr.validate(cfg);
  const double delta = td_error(table, tr, cfg);
  if (!std::isfinite(delta)) throw NumericError("non-finite TD error; update rejected");
  if (cfg.alpha == 0.0) return delta;
  for (const auto& [k, w] : tr.from) {
    if (!std::isfinite(table.value(k) + cfg.alpha * w * delta)) {
      throw NumericError("update of " + k.to_string() + " would be non-finite; update rejected");
    }
  }
  for (const auto& [k, w] : tr.from) table.add(k, cfg.alpha * w * delta);
  return delta;
}

// Single writer, many readers. Readers hold a shared lock for the whole
// evaluation, so they never see a partially applied update.
class SharedValueTable {
 public:
  explicit SharedValueTable(ValueTable table = ValueTable{}) : table_(std::move(table)) {}

  double evaluate(const WeightedFactorSet& s) const {
    std::shared_lock lock(mutex_);
    return rlmatch::evaluate(table_, s);
  }

  double advantage(const WeightedFactorSet& s, const WeightedFactorSet& s_dest, double reward, double duration_s,
                   double cancel_prob, const LearnerConfig& cfg) const {
    std::shared_lock lock(mutex_);
    return rlmatch::advantage(table_, s, s_dest, reward, duration_s, cancel_prob, cfg);
  }

  double td_update(const Transition& tr, const LearnerConfig& cfg) {
    std::unique_lock lock(mutex_);
    return rlmatch::td_update(table_, tr, cfg);
  }

  ValueTable copy() const {
    std::shared_lock lock(mutex_);
    return table_;
  }

 private:
  mutable std::shared_mutex mutex_;
  ValueTable table_;
};

// Binary snapshot, all integers and doubles little-endian:
//   "RLVT" | u16 version | f64 default_value | u64 count |
//   count x ( u8 kind | [u8 len, ASCII geohash] | [u64 bucket] | f64 value | u64 updates )
// The bracketed key parts are present when the factor kind carries them.
namespace snapshot_detail {

inline constexpr char kMagic[4] = {'R', 'L', 'V', 'T'};
inline constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  double get_f64(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) throw ParseError(std::string("truncated snapshot while reading ") + what, pos_);
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace snapshot_detail

inline std::vector<std::uint8_t> snapshot(const ValueTable& table) {
  using namespace snapshot_detail;
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put(out, kVersion);
  put_f64(out, table.default_value());
  const auto entries = table.sorted_entries();
  put(out, static_cast<std::uint64_t>(entries.size()));
  for (const auto& [k, e] : entries) {
    put(out, static_cast<std::uint8_t>(k.kind()));
    if (k.has_cell()) {
      const std::string code = k.cell().code();
      put(out, static_cast<std::uint8_t>(code.size()));
      out.insert(out.end(), code.begin(), code.end());
    }
    if (k.has_bucket()) put(out, k.bucket());
    put_f64(out, e.value);
    put(out, e.updates);
  }
  return out;
}

inline ValueTable restore(std::span<const std::uint8_t> bytes) {
  using namespace snapshot_detail;
  Reader in(bytes);
  if (in.get_bytes(4, "magic") != std::string(kMagic, 4)) throw ParseError("bad snapshot magic", 0);
  const auto version = in.get<std::uint16_t>("version");
  if (version != kVersion) throw ParseError("unsupported snapshot version " + std::to_string(version), 4);
  const std::size_t default_at = in.pos();
  const double default_value = in.get_f64("default value");
  if (!std::isfinite(default_value)) throw ParseError("non-finite default value", default_at);
  const auto count = in.get<std::uint64_t>("entry count");

  ValueTable table(default_value);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t entry_at = in.pos();
    const auto kind_raw = in.get<std::uint8_t>("factor kind");
    if (kind_raw > static_cast<std::uint8_t>(FactorKind::interaction))
      throw ParseError("unknown factor kind " + std::to_string(kind_raw), entry_at);
    const auto kind = static_cast<FactorKind>(kind_raw);
    CellId cell;
    std::uint64_t bucket = 0;
    if (kind != FactorKind::temporal) {
      const std::size_t code_at = in.pos();
      const auto len = in.get<std::uint8_t>("cell code length");
      const std::string code = in.get_bytes(len, "cell code");
      try {
        cell = CellId::from_code(code);
      } catch (const InvalidInput& e) {
        throw ParseError(e.what(), code_at);
      }
    }
    if (kind != FactorKind::spatial) bucket = in.get<std::uint64_t>("bucket index");
    const std::size_t value_at = in.pos();
    const double value = in.get_f64("factor value");
    const auto updates = in.get<std::uint64_t>("update count");
    if (!std::isfinite(value)) throw ParseError("non-finite factor value", value_at);
    const Factor k = kind == FactorKind::spatial    ? Factor::spatial(cell)
                     : kind == FactorKind::temporal ? Factor::temporal(bucket)
                                                    : Factor::interaction(cell, bucket);
    if (table.contains(k)) throw ParseError("duplicate factor " + k.to_string(), entry_at);
    table.set(k, value, updates);
  }
  if (!in.done()) throw ParseError("trailing bytes after last entry", in.pos());
  return table;
}

}  // namespace rlmatch
