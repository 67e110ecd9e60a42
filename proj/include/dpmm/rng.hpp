#pragma once

#include <cstdint>
#include <string_view>

namespace dpmm {

// Deterministic pseudo-random generator (xoshiro256** with splitmix64
// seeding). Every random quantity in the library flows from one master seed
// through named substreams, so runs reproduce exactly across platforms and
// compilers. std:: distributions are avoided on purpose: their output is
// implementation defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Derives an independent substream from a master seed, a stream name and an
  // optional index. Used as stream(seed, "data", sample_id) and similar, so
  // that per-sample draws do not depend on batch composition or ordering.
  static Rng stream(std::uint64_t master_seed, std::string_view name,
                    std::uint64_t index = 0);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Standard normal via the Box-Muller transform. Draws are produced in
  // pairs; the spare is cached, so a single stream yields a fixed sequence.
  double normal();

  // Standard Gumbel, -log(-log(U)).
  double gumbel();

  // Beta(1, eta) by inverse CDF: 1 - U^(1/eta). Errors on eta <= 0.
  double beta_one(double eta);

  // Unbiased integer in [0, n). Errors on n == 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace dpmm
