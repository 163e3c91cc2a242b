#pragma once

#include <cstdint>
#include <vector>

namespace ugvae {

/// Counter-based deterministic random stream (splitmix64 core).
///
/// The draw sequence is a pure function of (seed, counter), so identical seeds
/// reproduce identical sequences across runs and platforms. Independent
/// substreams are derived from the seed alone; a stream is single-owner and
/// must not be shared between concurrent tasks.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  // Derived child stream. Children with distinct purpose ids are independent
  // of each other and of the parent's own draw sequence.
  RngStream substream(std::uint64_t purpose) const;

  std::uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double next_double();

  // Standard normal via Box-Muller (two uniforms per draw, no caching).
  double next_gaussian();

  std::vector<double> gaussians(std::size_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace ugvae
