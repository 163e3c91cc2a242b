#include "ugvae/nets.hpp"

#include <algorithm>
#include <cmath>

#include "ugvae/errors.hpp"

namespace ugvae {
namespace {

void apply_activation(Vec& v, Activation act) {
  switch (act) {
    case Activation::kRelu:
      for (auto& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::kTanh:
      for (auto& x : v) x = std::tanh(x);
      break;
  }
}

ParamTensor make_tensor(std::string name, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return ParamTensor{std::move(name), std::move(shape), Vec(n, 0.0), Vec(n, 0.0)};
}

Mlp make_mlp(std::string name, MlpSpec spec) {
  Mlp net{std::move(name), std::move(spec), {}};
  const auto& sizes = net.spec.sizes;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::string prefix = net.name + ".l" + std::to_string(l);
    net.layers.push_back(LinearLayer{make_tensor(prefix + ".W", {sizes[l + 1], sizes[l]}),
                                     make_tensor(prefix + ".b", {sizes[l + 1]})});
  }
  return net;
}

void glorot_init(Mlp& net, RngStream& rng) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::size_t fan_out = net.spec.sizes[l + 1];
    const std::size_t fan_in = net.spec.sizes[l];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& w : net.layers[l].weight.values) {
      w = bound * (2.0 * rng.next_double() - 1.0);
    }
    // biases stay zero
  }
}

}  // namespace

Vec Mlp::raw(std::span<const double> x) const {
  if (x.size() != input_width()) {
    throw ContractViolation(name + ": input width " + std::to_string(x.size()) + ", expected " +
                            std::to_string(input_width()));
  }
  Vec cur(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weight.values;
    const auto& b = layers[l].bias.values;
    const std::size_t out_n = spec.sizes[l + 1];
    const std::size_t in_n = spec.sizes[l];
    Vec next(out_n);
    for (std::size_t o = 0; o < out_n; ++o) {
      double acc = b[o];
      const double* row = w.data() + o * in_n;
      for (std::size_t j = 0; j < in_n; ++j) acc += row[j] * cur[j];
      next[o] = acc;
    }
    if (l + 1 < layers.size()) apply_activation(next, spec.hidden);
    cur = std::move(next);
  }
  return cur;
}

DiagGaussian split_gaussian_head(const Vec& raw) {
  if (raw.size() % 2 != 0) {
    throw ContractViolation("split_gaussian_head: odd output width");
  }
  const std::size_t m = raw.size() / 2;
  DiagGaussian g{Vec(raw.begin(), raw.begin() + m), Vec(raw.begin() + m, raw.end())};
  clamp_log_var(g.log_var);
  return g;
}

CategoricalDist softmax_head(const Vec& raw) {
  Vec p(raw.size());
  const double m = *std::max_element(raw.begin(), raw.end());
  double z = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    p[i] = std::exp(raw[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return CategoricalDist{std::move(p)};
}

Vec sigmoid_head(const Vec& raw) {
  Vec out(raw);
  for (auto& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Vec relu_head(const Vec& raw) {
  Vec out(raw);
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return out;
}

ForwardOutput forward(const Mlp& net, std::span<const double> x) {
  Vec r = net.raw(x);
  switch (net.spec.head) {
    case Head::kLinear:
      return r;
    case Head::kRelu:
      return relu_head(r);
    case Head::kSigmoid:
      return sigmoid_head(r);
    case Head::kSoftmax:
      return softmax_head(r);
    case Head::kSplitGaussian:
      return split_gaussian_head(r);
  }
  throw ContractViolation("forward: unknown head");
}

void NetworkBundle::for_each_tensor(const std::function<void(ParamTensor&)>& fn) {
  auto walk = [&fn](Mlp& net) {
    for (auto& layer : net.layers) {
      fn(layer.weight);
      fn(layer.bias);
    }
  };
  walk(h);
  walk(phi_z);
  walk(phi_d);
  walk(phi_beta);
  for (auto& net : theta_z) walk(net);
  walk(theta_x);
}

void NetworkBundle::for_each_tensor(const std::function<void(const ParamTensor&)>& fn) const {
  const_cast<NetworkBundle*>(this)->for_each_tensor(
      [&fn](ParamTensor& t) { fn(static_cast<const ParamTensor&>(t)); });
}

std::size_t NetworkBundle::param_count() const {
  std::size_t n = 0;
  for_each_tensor([&n](const ParamTensor& t) { n += t.size(); });
  return n;
}

void NetworkBundle::zero_grads() {
  for_each_tensor([](ParamTensor& t) { std::fill(t.grad.begin(), t.grad.end(), 0.0); });
}

bool NetworkBundle::all_finite() const {
  bool ok = true;
  for_each_tensor([&ok](const ParamTensor& t) {
    for (double v : t.values) {
      if (!std::isfinite(v)) {
        ok = false;
        return;
      }
    }
  });
  return ok;
}

NetworkBundle init_bundle(const BundleDims& dims, RngStream& rng) {
  if (dims.local_dim < 1 || dims.global_dim < 1 || dims.components < 1) {
    throw ContractViolation("init_bundle: dims must be >= 1");
  }
  NetworkBundle bundle;
  bundle.dims = dims;
  const std::size_t D = dims.data_dim;
  const std::size_t d = dims.local_dim;
  const std::size_t g = dims.global_dim;
  const std::size_t K = dims.components;
  const std::size_t H = dims.hidden;

  bundle.h = make_mlp("h", {{D, H}, Activation::kRelu, Head::kRelu});
  bundle.phi_z = make_mlp("phi_z", {{H, 2 * d}, Activation::kRelu, Head::kSplitGaussian});
  bundle.phi_d = make_mlp("phi_d", {{d, H, K}, Activation::kTanh, Head::kSoftmax});
  bundle.phi_beta = make_mlp("phi_beta", {{H + K, 2 * g}, Activation::kRelu, Head::kSplitGaussian});
  // The component prior nets use a tanh hidden layer: the interpolation
  // grids traverse them in beta, so they stay smooth along that axis.
  for (std::size_t k = 0; k < K; ++k) {
    bundle.theta_z.push_back(make_mlp("theta_z" + std::to_string(k),
                                      {{g, H, 2 * d}, Activation::kTanh, Head::kSplitGaussian}));
  }
  bundle.theta_x = make_mlp("theta_x", {{d + g, H, D}, Activation::kRelu, Head::kSigmoid});

  glorot_init(bundle.h, rng);
  glorot_init(bundle.phi_z, rng);
  glorot_init(bundle.phi_d, rng);
  glorot_init(bundle.phi_beta, rng);
  for (auto& net : bundle.theta_z) glorot_init(net, rng);
  glorot_init(bundle.theta_x, rng);
  return bundle;
}

MlpVars bind_mlp(ad::Tape& tape, Mlp& net) {
  MlpVars vars;
  for (auto& layer : net.layers) {
    vars.layers.emplace_back(tape.leaf(layer.weight.values, &layer.weight.grad),
                             tape.leaf(layer.bias.values, &layer.bias.grad));
  }
  return vars;
}

BundleVars bind_bundle(ad::Tape& tape, NetworkBundle& bundle) {
  BundleVars vars;
  vars.h = bind_mlp(tape, bundle.h);
  vars.phi_z = bind_mlp(tape, bundle.phi_z);
  vars.phi_d = bind_mlp(tape, bundle.phi_d);
  vars.phi_beta = bind_mlp(tape, bundle.phi_beta);
  for (auto& net : bundle.theta_z) vars.theta_z.push_back(bind_mlp(tape, net));
  vars.theta_x = bind_mlp(tape, bundle.theta_x);
  return vars;
}

ad::Var mlp_raw_t(ad::Tape& tape, const Mlp& net, const MlpVars& vars, ad::Var input) {
  if (tape.val(input).size() != net.input_width()) {
    throw ContractViolation(net.name + ": tape input width mismatch");
  }
  ad::Var cur = input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    cur = ad::linear(tape, vars.layers[l].first, vars.layers[l].second, cur);
    if (l + 1 < net.layers.size()) {
      cur = net.spec.hidden == Activation::kRelu ? ad::relu(tape, cur) : ad::vtanh(tape, cur);
    }
  }
  return cur;
}

GradCheckReport gradient_check(NetworkBundle& bundle, const LossBuilder& build_loss,
                               double tolerance, double fd_step) {
  bundle.zero_grads();
  {
    ad::Tape tape;
    ad::Var loss = build_loss(tape, bundle);
    tape.backward(loss);
  }

  auto eval = [&bundle, &build_loss]() {
    ad::Tape tape;
    return tape.scalar_val(build_loss(tape, bundle));
  };

  GradCheckReport report;
  double rel_sum = 0.0;
  std::size_t within = 0;

  std::vector<ParamTensor*> tensors;
  bundle.for_each_tensor([&tensors](ParamTensor& t) { tensors.push_back(&t); });
  for (ParamTensor* t : tensors) {
    GradCheckTensorStat stat{t->name, 0.0, 0.0};
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = t->values[i];
      t->values[i] = saved + fd_step;
      const double plus = eval();
      t->values[i] = saved - fd_step;
      const double minus = eval();
      t->values[i] = saved;

      const double fd = (plus - minus) / (2.0 * fd_step);
      const double analytic = t->grad[i];
      const double denom = std::max(std::abs(fd), std::abs(analytic));
      const double rel = denom < 1e-10 ? 0.0 : std::abs(fd - analytic) / denom;

      stat.max_rel = std::max(stat.max_rel, rel);
      stat.mean_rel += rel;
      rel_sum += rel;
      if (rel <= tolerance) ++within;
      ++report.coords;
    }
    if (t->size() > 0) stat.mean_rel /= static_cast<double>(t->size());
    report.max_rel = std::max(report.max_rel, stat.max_rel);
    report.tensors.push_back(std::move(stat));
  }
  report.mean_rel = report.coords ? rel_sum / static_cast<double>(report.coords) : 0.0;
  report.frac_within_tol = report.coords ? static_cast<double>(within) / report.coords : 1.0;
  report.pass = report.mean_rel <= tolerance;
  return report;
}

}  // namespace ugvae
