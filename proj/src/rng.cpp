#include "dpmm/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dpmm {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  // splitmix64 expansion is the recommended way to fill xoshiro state.
  std::uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

Rng Rng::stream(std::uint64_t master_seed, std::string_view name,
                std::uint64_t index) {
  std::uint64_t x = master_seed;
  std::uint64_t a = splitmix64(x);
  x ^= fnv1a64(name);
  std::uint64_t b = splitmix64(x);
  x ^= index * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL;
  std::uint64_t c = splitmix64(x);
  return Rng(a ^ rotl(b, 17) ^ rotl(c, 43));
}

std::uint64_t Rng::next_u64() {
  std::uint64_t* s = state_;
  const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
  const std::uint64_t t = s[1] << 17;
  s[2] ^= s[0];
  s[3] ^= s[1];
  s[1] ^= s[2];
  s[0] ^= s[3];
  s[2] ^= t;
  s[3] = rotl(s[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // u1 must be strictly positive for the log.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

double Rng::gumbel() {
  // 1 - uniform() lies in (0, 1], so both logs are finite.
  return -std::log(-std::log(1.0 - uniform()));
}

double Rng::beta_one(double eta) {
  if (!(eta > 0.0)) {
    throw std::invalid_argument("beta_one: eta must be positive");
  }
  return 1.0 - std::pow(1.0 - uniform(), 1.0 / eta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) {
    throw std::invalid_argument("below: n must be positive");
  }
  // Lemire's multiply-shift rejection method, exact and branch-light.
  std::uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  std::uint64_t lo = static_cast<std::uint64_t>(m);
  if (lo < n) {
    std::uint64_t threshold = -n % n;
    while (lo < threshold) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * n;
      lo = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

}  // namespace dpmm
