#pragma once

// Counter-based random streams. A stream is identified by a 64-bit key that
// is derived by hashing (seed, tags...). Draw j of a stream is a pure
// function of (key, j), so results never depend on thread scheduling.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace bpf {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept {
  return mix64(seed ^ (mix64(value + 0x9E3779B97F4A7C15ULL) + 0x632BE59BD9B4E019ULL +
                       (seed << 6) + (seed >> 2)));
}

inline std::uint64_t hash_key(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = mix64(seed + 0x9E3779B97F4A7C15ULL);
  for (auto t : tags) h = hash_combine(h, t);
  return h;
}

// Stream domains, used as the first tag when keying substreams.
enum class StreamDomain : std::uint64_t {
  initial_positions = 1,
  particle_epoch = 2,
  population_control = 3,
  observation_noise = 4,
  signal_path = 5,
  replication = 6,
  test = 7,
};

// SplitMix64 over an explicit counter. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Makes sub-keys from a master seed.
class StreamFactory {
 public:
  constexpr explicit StreamFactory(std::uint64_t seed) noexcept : seed_(seed) {}

  CounterRng stream(StreamDomain domain, std::uint64_t a = 0, std::uint64_t b = 0) const noexcept {
    return CounterRng(hash_key(seed_, {static_cast<std::uint64_t>(domain), a, b}));
  }
  StreamFactory child(std::uint64_t tag) const noexcept {
    return StreamFactory(hash_key(seed_, {static_cast<std::uint64_t>(StreamDomain::replication), tag}));
  }
  constexpr std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

// Uniform on [0, 1) with 53 random bits.
template <class Rng>
double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform on the open interval (0, 1).
template <class Rng>
double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

template <class Rng>
double standard_exponential(Rng& rng) {
  return -std::log(uniform_open01(rng));
}

// Box-Muller, one variate per call.
template <class Rng>
double standard_normal(Rng& rng) {
  const double u = uniform_open01(rng);
  const double v = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

}  // namespace bpf
