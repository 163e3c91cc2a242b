#include "ugvae/parallel.hpp"

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "ugvae/errors.hpp"

namespace ugvae {

std::size_t worker_count() {
  const char* env = std::getenv("UGVAE_THREADS");
  if (!env || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) {
    throw ContractViolation("UGVAE_THREADS must be a positive integer, got \"" +
                            std::string(env) + "\"");
  }
  return static_cast<std::size_t>(v);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([w, n, workers, &fn]() {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace ugvae
