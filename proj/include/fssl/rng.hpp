#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fssl {

// All randomness in the project flows through this generator so that runs are
// bit-reproducible for a fixed seed, independent of platform and standard
// library version. The core is xoshiro256++ seeded through splitmix64; the
// distributions are hand-pinned rather than std::: the C++ standard leaves
// distribution output implementation-defined.

std::uint64_t splitmix64(std::uint64_t& state);

// FNV-1a over bytes; used to fold string identities (DSNs, stream tags) into
// substream seeds.
std::uint64_t fnv1a64(std::string_view s);

// Derives an independent substream seed from a parent seed and up to three
// integer coordinates (round index, day, clip index...).
std::uint64_t substream(std::uint64_t seed, std::string_view tag,
                        std::uint64_t a = 0, std::uint64_t b = 0,
                        std::uint64_t c = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via Box-Muller; second draw of each pair is cached.
  double normal();
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t state_[4];
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace fssl
