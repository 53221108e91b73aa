// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace synweather {

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

/// Counter-based random stream. A stream is keyed by
/// (master_seed, purpose, index); the n-th draw is a pure function of the
/// key and n, so draw sequences do not depend on how work is split across
/// threads or processes.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::string_view purpose, std::uint64_t index = 0) {
    std::uint64_t h = detail::mix64(master_seed ^ detail::kGolden);
    h = detail::mix64(h ^ detail::fnv1a(purpose));
    h = detail::mix64(h ^ (index * detail::kGolden));
    key_ = h;
  }

  std::uint64_t next_u64() {
    counter_ += detail::kGolden;
    return detail::mix64(key_ ^ counter_);
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be >= 1.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (implementation-pinned, unlike
  /// std::normal_distribution).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // (0,1) open on both ends so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    double u2 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void fill_normal(T* dst, std::int64_t n, double mean = 0.0, double stddev = 1.0) {
    for (std::int64_t i = 0; i < n; ++i)
      dst[i] = static_cast<T>(mean + stddev * normal());
  }

  template <typename T>
  void fill_uniform(T* dst, std::int64_t n, double lo = 0.0, double hi = 1.0) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = static_cast<T>(uniform(lo, hi));
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Seed-derivation policy shared by every stage of a run.
struct RngPolicy {
  std::uint64_t master_seed = 0;

  RngStream stream(std::string_view purpose, std::uint64_t index = 0) const {
    return RngStream(master_seed, purpose, index);
  }
};

}  // namespace synweather
