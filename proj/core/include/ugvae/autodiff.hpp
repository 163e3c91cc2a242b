#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ugvae/matrix.hpp"

namespace ugvae::ad {

/// Handle to a node on a Tape. Only valid for the tape that created it.
struct Var {
  std::uint32_t id = 0;
};

/// Immediate-mode reverse-mode tape over flat double vectors.
///
/// Values are computed eagerly as ops are recorded; backward() replays the
/// tape in reverse creation order (a topological order by construction) and
/// flushes leaf gradients into their bound sinks. One backward per tape.
class Tape {
 public:
  Var constant(Vec v);
  Var constant(std::span<const double> v);
  Var scalar(double v) { return constant(Vec{v}); }

  // Differentiable leaf. After backward(), d(loss)/d(leaf) is added into
  // *grad_sink (which must outlive the tape and match the value size).
  Var leaf(std::span<const double> values, Vec* grad_sink);

  const Vec& val(Var v) const { return nodes_[v.id].val; }
  double scalar_val(Var v) const { return nodes_[v.id].val[0]; }

  // Gradient of the last backward() with respect to v.
  const Vec& grad(Var v) const { return grads_[v.id]; }

  // Reverse sweep from a scalar loss. Throws ContractViolation when invoked a
  // second time without reset(), or when loss is not scalar.
  void backward(Var loss);

  void reset();

  std::size_t node_count() const { return nodes_.size(); }

  // --- op construction (used by the free functions below) ---
  using BackFn = std::function<void(Tape&, std::uint32_t self)>;
  Var make(Vec value, BackFn back);
  Vec& grad_mut(std::uint32_t id) { return grads_[id]; }

 private:
  struct Node {
    Vec val;
    BackFn back;  // empty for leaves and constants
  };
  std::vector<Node> nodes_;
  std::vector<Vec> grads_;
  std::vector<std::pair<std::uint32_t, Vec*>> sinks_;
  bool backward_done_ = false;
};

// Elementwise arithmetic (operands must agree in size).
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var div(Tape& t, Var a, Var b);
Var add_many(Tape& t, std::span<const Var> vs);
Var neg(Tape& t, Var a);
Var scale(Tape& t, Var a, double s);
Var add_const(Tape& t, Var a, double c);

// Elementwise functions.
Var vexp(Tape& t, Var a);
Var vlog(Tape& t, Var a);
Var square(Tape& t, Var a);
Var clampv(Tape& t, Var a, double lo, double hi);
Var relu(Tape& t, Var a);
Var vtanh(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);

// Log-sum-exp stabilized softmax over the whole vector.
Var softmax(Tape& t, Var a);

// Shape plumbing.
Var concat(Tape& t, Var a, Var b);
Var slice(Tape& t, Var a, std::size_t from, std::size_t len);

// Reductions (scalar results).
Var sum(Tape& t, Var a);
Var dot(Tape& t, Var a, Var b);

// sum_k weights[k] * scalars[k]; weights is a vector node, scalars are
// scalar nodes. Gradients flow into both.
Var weighted_sum(Tape& t, Var weights, std::span<const Var> scalars);

// sum_k p_k ln p_k (negative entropy); terms with p_k ~ 0 contribute 0.
Var xlogx_sum(Tape& t, Var probs);

// y = W x + b with W a flat row-major (|b| x |x|) vector node.
Var linear(Tape& t, Var w, Var b, Var x);

}  // namespace ugvae::ad
