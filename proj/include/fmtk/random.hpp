#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace fmtk {

// SplitMix64 finalizer; bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to turn dotted parameter paths into stream ids.
constexpr std::uint64_t stream_id(std::string_view name) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Counter-based generator: draw i of stream s under seed k is a pure function
// of (k, s, i). Sequential use goes through next_*; random access through
// the counter overloads.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL))) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_ ^ mix64(counter));
  }

  // Counter i owns bit words 2i and 2i+1, so uniform and normal draws at
  // distinct counters never share bits.
  double uniform(std::uint64_t counter) const noexcept { return unit(2 * counter); }

  // Standard normal via Box-Muller.
  double normal(std::uint64_t counter) const noexcept {
    const double u1 = 1.0 - unit(2 * counter);
    const double u2 = unit(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double next_uniform() noexcept { return uniform(counter_++); }
  double next_normal() noexcept { return normal(counter_++); }
  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(next_uniform() * static_cast<double>(n)) % n;
  }

  std::uint64_t position() const noexcept { return counter_; }

 private:
  double unit(std::uint64_t word) const noexcept {
    return static_cast<double>(bits(word) >> 11) * 0x1.0p-53;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace fmtk
