#include "ugvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ugvae/errors.hpp"

namespace ugvae::ad {
namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace

Var Tape::constant(Vec v) {
  nodes_.push_back(Node{std::move(v), nullptr});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(std::span<const double> v) { return constant(Vec(v.begin(), v.end())); }

Var Tape::leaf(std::span<const double> values, Vec* grad_sink) {
  require(grad_sink != nullptr, "Tape::leaf: null gradient sink");
  Var v = constant(values);
  sinks_.emplace_back(v.id, grad_sink);
  return v;
}

Var Tape::make(Vec value, BackFn back) {
  nodes_.push_back(Node{std::move(value), std::move(back)});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  if (backward_done_) {
    throw ContractViolation("Tape::backward called twice without reset");
  }
  require(nodes_[loss.id].val.size() == 1, "Tape::backward: loss must be scalar");
  backward_done_ = true;

  grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    grads_[i].assign(nodes_[i].val.size(), 0.0);
  }
  grads_[loss.id][0] = 1.0;

  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    if (nodes_[id].back) nodes_[id].back(*this, id);
  }
  for (const auto& [id, sink] : sinks_) {
    require(sink->size() == grads_[id].size(), "Tape::backward: sink size mismatch");
    for (std::size_t i = 0; i < sink->size(); ++i) (*sink)[i] += grads_[id][i];
  }
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  sinks_.clear();
  backward_done_ = false;
}

namespace {

std::size_t same_size(const Tape& t, Var a, Var b, const char* what) {
  const std::size_t n = t.val(a).size();
  if (t.val(b).size() != n) throw ContractViolation(std::string(what) + ": size mismatch");
  return n;
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const std::size_t n = same_size(t, a, b, "add");
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = t.val(a)[i] + t.val(b)[i];
  return t.make(std::move(out), [a, b](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    Vec& ga = t.grad_mut(a.id);
    Vec& gb = t.grad_mut(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  const std::size_t n = same_size(t, a, b, "sub");
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = t.val(a)[i] - t.val(b)[i];
  return t.make(std::move(out), [a, b](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    Vec& ga = t.grad_mut(a.id);
    Vec& gb = t.grad_mut(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const std::size_t n = same_size(t, a, b, "mul");
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = t.val(a)[i] * t.val(b)[i];
  return t.make(std::move(out), [a, b](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& va = t.val(a);
    const Vec& vb = t.val(b);
    Vec& ga = t.grad_mut(a.id);
    Vec& gb = t.grad_mut(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb[i];
      gb[i] += g[i] * va[i];
    }
  });
}

Var div(Tape& t, Var a, Var b) {
  const std::size_t n = same_size(t, a, b, "div");
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = t.val(a)[i] / t.val(b)[i];
  return t.make(std::move(out), [a, b](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& va = t.val(a);
    const Vec& vb = t.val(b);
    Vec& ga = t.grad_mut(a.id);
    Vec& gb = t.grad_mut(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] / vb[i];
      gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
    }
  });
}

Var add_many(Tape& t, std::span<const Var> vs) {
  require(!vs.empty(), "add_many: empty operand list");
  const std::size_t n = t.val(vs.front()).size();
  Vec out(n, 0.0);
  for (Var v : vs) {
    same_size(t, vs.front(), v, "add_many");
    for (std::size_t i = 0; i < n; ++i) out[i] += t.val(v)[i];
  }
  std::vector<Var> operands(vs.begin(), vs.end());
  return t.make(std::move(out), [operands](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    for (Var v : operands) {
      Vec& gv = t.grad_mut(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var scale(Tape& t, Var a, double s) {
  Vec out(t.val(a));
  for (auto& v : out) v *= s;
  return t.make(std::move(out), [a, s](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_const(Tape& t, Var a, double c) {
  Vec out(t.val(a));
  for (auto& v : out) v += c;
  return t.make(std::move(out), [a](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var vexp(Tape& t, Var a) {
  Vec out(t.val(a));
  for (auto& v : out) v = std::exp(v);
  return t.make(std::move(out), [a](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& y = t.val(Var{self});
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var vlog(Tape& t, Var a) {
  Vec out(t.val(a));
  for (auto& v : out) v = std::log(v);
  return t.make(std::move(out), [a](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& x = t.val(a);
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

Var square(Tape& t, Var a) {
  Vec out(t.val(a));
  for (auto& v : out) v *= v;
  return t.make(std::move(out), [a](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& x = t.val(a);
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * x[i];
  });
}

Var clampv(Tape& t, Var a, double lo, double hi) {
  Vec out(t.val(a));
  for (auto& v : out) v = std::clamp(v, lo, hi);
  return t.make(std::move(out), [a, lo, hi](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& x = t.val(a);
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
    }
  });
}

Var relu(Tape& t, Var a) {
  Vec out(t.val(a));
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return t.make(std::move(out), [a](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& x = t.val(a);
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var vtanh(Tape& t, Var a) {
  Vec out(t.val(a));
  for (auto& v : out) v = std::tanh(v);
  return t.make(std::move(out), [a](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& y = t.val(Var{self});
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Tape& t, Var a) {
  Vec out(t.val(a));
  for (auto& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return t.make(std::move(out), [a](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& y = t.val(Var{self});
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var softmax(Tape& t, Var a) {
  const Vec& x = t.val(a);
  Vec out(x.size());
  const double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return t.make(std::move(out), [a](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& y = t.val(Var{self});
    Vec& ga = t.grad_mut(a.id);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
  });
}

Var concat(Tape& t, Var a, Var b) {
  const Vec& va = t.val(a);
  const Vec& vb = t.val(b);
  Vec out;
  out.reserve(va.size() + vb.size());
  out.insert(out.end(), va.begin(), va.end());
  out.insert(out.end(), vb.begin(), vb.end());
  const std::size_t na = va.size();
  return t.make(std::move(out), [a, b, na](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    Vec& ga = t.grad_mut(a.id);
    Vec& gb = t.grad_mut(b.id);
    for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    for (std::size_t i = na; i < g.size(); ++i) gb[i - na] += g[i];
  });
}

Var slice(Tape& t, Var a, std::size_t from, std::size_t len) {
  const Vec& va = t.val(a);
  require(from + len <= va.size(), "slice: out of range");
  Vec out(va.begin() + from, va.begin() + from + len);
  return t.make(std::move(out), [a, from, len](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    Vec& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < len; ++i) ga[from + i] += g[i];
  });
}

Var sum(Tape& t, Var a) {
  double acc = 0.0;
  for (double v : t.val(a)) acc += v;
  return t.make(Vec{acc}, [a](Tape& t, std::uint32_t self) {
    const double g = t.grad_mut(self)[0];
    Vec& ga = t.grad_mut(a.id);
    for (auto& v : ga) v += g;
  });
}

Var dot(Tape& t, Var a, Var b) {
  const std::size_t n = same_size(t, a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += t.val(a)[i] * t.val(b)[i];
  return t.make(Vec{acc}, [a, b](Tape& t, std::uint32_t self) {
    const double g = t.grad_mut(self)[0];
    const Vec& va = t.val(a);
    const Vec& vb = t.val(b);
    Vec& ga = t.grad_mut(a.id);
    Vec& gb = t.grad_mut(b.id);
    for (std::size_t i = 0; i < va.size(); ++i) {
      ga[i] += g * vb[i];
      gb[i] += g * va[i];
    }
  });
}

Var weighted_sum(Tape& t, Var weights, std::span<const Var> scalars) {
  const Vec& w = t.val(weights);
  require(w.size() == scalars.size(), "weighted_sum: weight count mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < scalars.size(); ++k) {
    require(t.val(scalars[k]).size() == 1, "weighted_sum: operands must be scalar");
    acc += w[k] * t.val(scalars[k])[0];
  }
  std::vector<Var> ops(scalars.begin(), scalars.end());
  return t.make(Vec{acc}, [weights, ops](Tape& t, std::uint32_t self) {
    const double g = t.grad_mut(self)[0];
    const Vec& w = t.val(weights);
    Vec& gw = t.grad_mut(weights.id);
    for (std::size_t k = 0; k < ops.size(); ++k) {
      gw[k] += g * t.val(ops[k])[0];
      t.grad_mut(ops[k].id)[0] += g * w[k];
    }
  });
}

Var xlogx_sum(Tape& t, Var probs) {
  constexpr double kTiny = 1e-300;
  double acc = 0.0;
  for (double p : t.val(probs)) {
    if (p > kTiny) acc += p * std::log(p);
  }
  return t.make(Vec{acc}, [probs](Tape& t, std::uint32_t self) {
    const double g = t.grad_mut(self)[0];
    const Vec& p = t.val(probs);
    Vec& gp = t.grad_mut(probs.id);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] > kTiny) gp[i] += g * (std::log(p[i]) + 1.0);
    }
  });
}

Var linear(Tape& t, Var w, Var b, Var x) {
  const Vec& wv = t.val(w);
  const Vec& bv = t.val(b);
  const Vec& xv = t.val(x);
  const std::size_t out_n = bv.size();
  const std::size_t in_n = xv.size();
  require(wv.size() == out_n * in_n, "linear: weight shape mismatch");

  Vec out(out_n);
  for (std::size_t o = 0; o < out_n; ++o) {
    double acc = bv[o];
    const double* row = wv.data() + o * in_n;
    for (std::size_t j = 0; j < in_n; ++j) acc += row[j] * xv[j];
    out[o] = acc;
  }
  return t.make(std::move(out), [w, b, x, out_n, in_n](Tape& t, std::uint32_t self) {
    const Vec& g = t.grad_mut(self);
    const Vec& wv = t.val(w);
    const Vec& xv = t.val(x);
    Vec& gw = t.grad_mut(w.id);
    Vec& gb = t.grad_mut(b.id);
    Vec& gx = t.grad_mut(x.id);
    for (std::size_t o = 0; o < out_n; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      gb[o] += go;
      const double* row = wv.data() + o * in_n;
      double* grow = gw.data() + o * in_n;
      for (std::size_t j = 0; j < in_n; ++j) {
        grow[j] += go * xv[j];
        gx[j] += go * row[j];
      }
    }
  });
}

}  // namespace ugvae::ad
