#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "polypbench/grid.hpp"

namespace polypbench {

/// FNV-1a over bytes; stable across platforms and runs.
constexpr std::uint64_t stable_hash(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic random stream identified by (seed, stream id). Two sources
/// built from the same pair produce identical draws.
class RandomSource {
 public:
  RandomSource(std::uint64_t seed, std::string stream)
      : seed_(seed), stream_(std::move(stream)), engine_(splitmix64(seed ^ stable_hash(stream_))) {}

  std::uint64_t seed() const { return seed_; }
  const std::string& stream() const { return stream_; }

  /// Independent child stream; does not advance this one.
  RandomSource fork(std::string_view name) const { return RandomSource(seed_, stream_ + "/" + std::string(name)); }

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t bits() { return engine_(); }

  template <typename Scalar>
  Grid<Scalar> normal_grid(int channels, int rows, int cols) {
    Grid<Scalar> g(channels, rows, cols);
    for (Eigen::Index i = 0; i < g.array().size(); ++i) g.array().data()[i] = static_cast<Scalar>(normal_(engine_));
    return g;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::string stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace polypbench
