#pragma once

#include <atomic>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace flhc {

using Rng = std::mt19937_64;

/// Stream tags keep the seeds of independent random decisions apart.
enum class Stream : std::uint64_t {
  Init = 1,
  Partition = 2,
  Sampling = 3,
  LocalTraining = 4,
  ClusteringPass = 5,
};

namespace detail {
inline std::atomic<std::uint64_t> rng_counter{0};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Order-sensitive hash of a key path, e.g. (experiment_seed, stream, round, client_id).
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = detail::splitmix64(h ^ detail::splitmix64(p));
  return h;
}

inline Rng make_rng(std::uint64_t seed) {
  detail::rng_counter.fetch_add(1, std::memory_order_relaxed);
  return Rng(seed);
}

/// Number of generators created through make_rng in this process.
inline std::uint64_t rng_instances_created() {
  return detail::rng_counter.load(std::memory_order_relaxed);
}

}  // namespace flhc
