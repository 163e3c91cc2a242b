#pragma once

#include <cstddef>
#include <functional>

namespace ugvae {

// Worker cap from UGVAE_THREADS (positive integer); defaults to 1.
// Invalid values raise ContractViolation.
std::size_t worker_count();

// Runs fn(0..n-1), chunked across at most worker_count() threads. Each index
// must touch only its own outputs; results are order-independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ugvae
