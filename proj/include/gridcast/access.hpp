#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "gridcast/synthetic_city.hpp"

namespace gridcast {

/// A read of data the current protocol is not allowed to see.
class LeakError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Challenge { core, extended };
std::string to_string(Challenge c);
Challenge parse_challenge(const std::string& s);

/// Whitelist of (city, regime) pairs a training run may read.
class AccessGuard {
 public:
  AccessGuard() = default;
  AccessGuard(std::string purpose, std::set<std::pair<std::string, Regime>> allowed)
      : purpose_(std::move(purpose)), allowed_(std::move(allowed)) {}

  void check(const Manifest& manifest, const std::string& city, Regime regime) const {
    if (allowed_.count({city, regime})) return;
    const CityRole role = manifest.role_of(city);
    throw LeakError(purpose_ + ": read of forbidden split " + to_string(role) + "/" + city + "/" + to_string(regime) +
                    " (" + to_string(split_of(role, regime)) + " data)");
  }

  bool allows(const std::string& city, Regime regime) const { return allowed_.count({city, regime}) > 0; }
  const std::string& purpose() const { return purpose_; }

 private:
  std::string purpose_;
  std::set<std::pair<std::string, Regime>> allowed_;
};

/// Core: train cities in both regimes plus core cities pre-Covid.
/// Extended: train cities only.
inline AccessGuard training_guard(const Manifest& manifest, Challenge challenge) {
  std::set<std::pair<std::string, Regime>> allowed;
  for (const auto& c : manifest.cities(CityRole::train)) {
    allowed.insert({c, Regime::pre_covid});
    allowed.insert({c, Regime::in_covid});
  }
  if (challenge == Challenge::core) {
    for (const auto& c : manifest.cities(CityRole::core)) allowed.insert({c, Regime::pre_covid});
  }
  return AccessGuard(to_string(challenge) + " training", std::move(allowed));
}

inline std::string to_string(Challenge c) { return c == Challenge::core ? "core" : "extended"; }

inline Challenge parse_challenge(const std::string& s) {
  if (s == "core") return Challenge::core;
  if (s == "extended") return Challenge::extended;
  throw std::invalid_argument("unknown challenge '" + s + "' (expected core or extended)");
}

}  // namespace gridcast
