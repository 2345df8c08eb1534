#pragma once

// Counter-based noise for reproducible parallel path simulation.
//
// Every path owns an independent generator whose state is a pure function of
// (seed, stream, path index), so the increment drawn at step k of path i does
// not depend on which worker simulates the path or in which order.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

#include <boost/random/normal_distribution.hpp>

namespace sfpe {

// Philox4x32-10 block function (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter c, Key k) noexcept {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
      k[0] += 0x9E3779B9u;
      k[1] += 0xBB67AE85u;
    }
    return c;
  }

  // Two 64-bit words from counter (lo, hi) under a 64-bit key.
  static std::array<std::uint64_t, 2> words(std::uint64_t key, std::uint64_t lo, std::uint64_t hi) noexcept {
    const Counter out = block({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(lo >> 32),
                               static_cast<std::uint32_t>(hi), static_cast<std::uint32_t>(hi >> 32)},
                              {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)});
    return {(std::uint64_t{out[0]} << 32) | out[1], (std::uint64_t{out[2]} << 32) | out[3]};
  }
};

// xoshiro256++ (Blackman & Vigna); satisfies UniformRandomBitGenerator.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  Xoshiro256pp() = default;
  explicit Xoshiro256pp(const std::array<std::uint64_t, 4>& state) noexcept : s_(state) {
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
  }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> s_{1, 0, 0, 0};
};

inline std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Standard normal source for one path.
class PathNoise {
 public:
  PathNoise(std::uint64_t key, std::uint64_t stream, std::uint64_t path) {
    const auto a = Philox4x32::words(key, path, stream);
    const auto b = Philox4x32::words(key, path, ~stream);
    gen_ = Xoshiro256pp({a[0], a[1], b[0], b[1]});
  }

  double normal() { return normal_(gen_); }

  // Fills `dw` with independent N(0, dt) increments.
  void increments(std::span<double> dw, double sqrt_dt) {
    for (double& w : dw) w = sqrt_dt * normal_(gen_);
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1p-53; }

 private:
  Xoshiro256pp gen_;
  boost::random::normal_distribution<double> normal_;
};

// Keyed family of Brownian noise streams. `substream` derives an independent
// driver, e.g. one per grid node or per recursive estimator call.
struct BrownianDriver {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  PathNoise path(std::uint64_t index) const { return PathNoise(mix64(seed), stream, index); }

  BrownianDriver substream(std::uint64_t tag) const { return {seed, mix64(stream ^ mix64(tag + 0x632BE59BD9B4E019ull))}; }
};

}  // namespace sfpe
