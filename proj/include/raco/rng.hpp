#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace raco {

namespace detail {

// splitmix64, used only to turn (seed, step, purpose) tuples into
// well-separated engine seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

}  // namespace detail

/// Purpose tags for substreams. Streams derived with different purposes are
/// statistically independent and never share engine state, so consuming one
/// (e.g. histogram noise) cannot shift another (e.g. gradient noise).
enum class StreamPurpose : std::uint64_t {
  kSplit = 0x517ab1ed0001ULL,
  kPoissonSample = 0x517ab1ed0002ULL,
  kHistogramNoise = 0x517ab1ed0003ULL,
  kGradientNoise = 0x517ab1ed0004ULL,
  kSensitivityTrial = 0x517ab1ed0005ULL,
  kSynthesis = 0x517ab1ed0006ULL,
  kGeneric = 0x517ab1ed0007ULL,
};

/// Deterministic random stream. All distributions are implemented on top of
/// raw mt19937_64 output (not std::*_distribution, whose sequences are
/// implementation-defined), so replaying a stream reproduces identical draws
/// on any platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(detail::splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform in (0, 1); never returns an endpoint (safe for log()).
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Unbiased-enough integer in [0, bound) via 128-bit multiply.
  std::uint64_t below(std::uint64_t bound) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(engine_()) * bound) >> 64);
  }

  /// N(0, sigma^2) via Box-Muller.
  double gaussian(double sigma) {
    const double u1 = uniform_open();
    const double u2 = uniform();
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  /// Laplace(0, scale) via inverse CDF.
  double laplace(double scale) {
    const double u = uniform_open() - 0.5;
    const double s = (u > 0.0) - (u < 0.0);
    return -scale * s * std::log1p(-2.0 * std::abs(u));
  }

 private:
  std::mt19937_64 engine_;
};

/// Root of all randomness for one run. Substreams are derived, never shared:
/// the draw count of one substream has no effect on any other, which keeps
/// e.g. a run with histogram noise disabled bit-compatible on the gradient
/// noise path.
class NoiseStreams {
 public:
  explicit NoiseStreams(std::uint64_t master_seed) : root_(master_seed) {}

  RngStream at(std::uint64_t step, StreamPurpose purpose) const {
    return RngStream(detail::mix(detail::mix(root_, step),
                                 static_cast<std::uint64_t>(purpose)));
  }

  RngStream at(StreamPurpose purpose) const { return at(0, purpose); }

  std::uint64_t seed() const { return root_; }

 private:
  std::uint64_t root_;
};

}  // namespace raco
