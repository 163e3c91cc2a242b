#include "ugvae/rng.hpp"

#include <cmath>
#include <numbers>

namespace ugvae {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream RngStream::substream(std::uint64_t purpose) const {
  return RngStream(mix(seed_ ^ (0xA0761D6478BD642FULL + kGolden * (purpose + 1))));
}

std::uint64_t RngStream::next_u64() {
  counter_ += 1;
  return mix(seed_ + kGolden * counter_);
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
  // u1 in (0, 1] so the log is finite.
  const double u1 = 1.0 - next_double();
  const double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> RngStream::gaussians(std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = next_gaussian();
  return out;
}

}  // namespace ugvae
