#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace modup {

/// Deterministic random stream. All randomness in the toolkit flows from one
/// master seed through named substreams, so a pipeline run is reproducible
/// bit-for-bit regardless of thread scheduling. Uniform/normal draws are
/// generated by hand from the raw engine output; the standard distribution
/// classes are implementation-defined and would break reproducibility across
/// library versions.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(splitmix(seed)) {}

  static std::uint64_t derive(std::uint64_t master, std::string_view name) {
    // FNV-1a over the substream name, mixed into the master seed.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
      h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
      h *= 1099511628211ull;
    }
    return splitmix(master ^ h);
  }

  static RandomStream substream(std::uint64_t master, std::string_view name) {
    return RandomStream(derive(master, name));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }

  /// Standard normal via Box-Muller (explicit formula, reproducible).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace modup
