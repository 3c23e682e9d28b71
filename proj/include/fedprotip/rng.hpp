#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace fedprotip::rng {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a tag sequence into a substream key. Every component that needs its
// own deterministic stream (per client, per task, per round) derives one of
// these instead of sharing a sequential engine, so results do not depend on
// scheduling or call order.
inline std::uint64_t derive_key(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> tags) {
  std::uint64_t k = splitmix64(seed);
  for (std::uint64_t t : tags) k = splitmix64(k ^ (t + 0x9e3779b97f4a7c15ULL));
  return k;
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed,
                          std::initializer_list<std::uint64_t> tags = {}) {
  return Engine(derive_key(seed, tags));
}

// 53-bit uniform in [0, 1).
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(eng);
}

// Box-Muller without the usual pair cache: two engine draws per value keeps
// the stream layout independent of call parity.
inline double normal(Engine& eng) {
  double u1;
  do {
    u1 = uniform01(eng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

// Stateless counter-based normal: value `index` of stream `key`. Used for
// randomized-SVD test matrices so entries can be produced in any order.
inline double normal_at(std::uint64_t key, std::uint64_t index) {
  const std::uint64_t a = splitmix64(key ^ splitmix64(2 * index));
  const std::uint64_t b = splitmix64(key ^ splitmix64(2 * index + 1));
  const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

// Unbiased draw from [0, n).
inline std::uint64_t below(Engine& eng, std::uint64_t n) {
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = eng();
  } while (x >= limit);
  return x % n;
}

template <typename T>
void shuffle(std::vector<T>& v, Engine& eng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[below(eng, i)]);
}

// k distinct indices from [0, n), order randomized (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                           std::size_t k,
                                                           Engine& eng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i)
    std::swap(idx[i], idx[i + below(eng, n - i)]);
  idx.resize(k);
  return idx;
}

// Marsaglia-Tsang gamma sampler; alpha < 1 uses the boost identity.
inline double gamma(Engine& eng, double alpha) {
  if (alpha < 1.0) {
    double u;
    do {
      u = uniform01(eng);
    } while (u <= 0.0);
    return gamma(eng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal(eng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(eng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u <= 0.0) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// Symmetric Dirichlet(alpha) over k categories. The alpha -> 0 limit is a
// random vertex; that is also the underflow fallback.
inline std::vector<double> dirichlet(Engine& eng, double alpha, std::size_t k) {
  std::vector<double> p(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = gamma(eng, alpha);
    sum += p[i];
  }
  if (!(sum > 0.0)) {
    std::fill(p.begin(), p.end(), 0.0);
    p[below(eng, k)] = 1.0;
    return p;
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace fedprotip::rng
