#pragma once

#include <stdexcept>
#include <string>

namespace ugvae {

// Caller broke a documented precondition (dimension mismatch, bad index, ...).
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed file contents. The message names the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Not enough samples to satisfy a batch request.
class CapacityError : public std::runtime_error {
 public:
  explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

// KL(q || p) with p_k = 0 where q_k > 0.
class InfiniteDivergence : public std::domain_error {
 public:
  explicit InfiniteDivergence(const std::string& what) : std::domain_error(what) {}
};

}  // namespace ugvae
