#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <utility>
#include <vector>

namespace dssl {

// Tags that separate the independent random streams of one run.
enum class Stream : std::uint64_t {
  kInit = 0x1001,
  kStep = 0x1002,
  kWarmup = 0x1003,
  kBatch = 0x1004,
  kView = 0x1005,
  kData = 0x1006,
  kProbe = 0x1007,
};

// splitmix64 fold over the keys; order-sensitive.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> keys);

/// xoshiro256** with splitmix64 seeding. Uses only integer arithmetic and IEEE doubles, so a
/// seed yields the same draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  static Rng derive(std::initializer_list<std::uint64_t> keys) { return Rng(mix_seed(keys)); }

  std::uint64_t next_u64();
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // [0, n), unbiased.
  std::uint64_t uniform_int(std::uint64_t n);
  // Standard normal via Box–Muller; the paired sample is cached.
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(i))]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dssl
