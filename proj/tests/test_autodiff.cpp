#include <doctest.h>

#include <cmath>
#include <functional>

#include "ugvae/autodiff.hpp"
#include "ugvae/errors.hpp"
#include "ugvae/rng.hpp"

using namespace ugvae;

namespace {

using Builder = std::function<ad::Var(ad::Tape&, ad::Var)>;

double eval_at(const Builder& build, const Vec& x) {
  ad::Tape tape;
  Vec sink(x.size(), 0.0);
  return tape.scalar_val(build(tape, tape.leaf(x, &sink)));
}

Vec analytic_grad(const Builder& build, const Vec& x) {
  ad::Tape tape;
  Vec sink(x.size(), 0.0);
  ad::Var out = build(tape, tape.leaf(x, &sink));
  tape.backward(out);
  return sink;
}

void check_grad(const Builder& build, const Vec& x, double tol = 1e-6) {
  const Vec grad = analytic_grad(build, x);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (eval_at(build, xp) - eval_at(build, xm)) / (2.0 * h);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(tol));
  }
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  const Vec x{0.3, -0.7, 1.2, 0.01};

  check_grad([](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::square(t, v)); }, x);
  check_grad([](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::vexp(t, v)); }, x);
  check_grad([](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::vtanh(t, v)); }, x);
  check_grad([](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::sigmoid(t, v)); }, x);
  check_grad([](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::relu(t, v)); }, x);
  check_grad([](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::softmax(t, v)); }, x);
  check_grad([](ad::Tape& t, ad::Var v) { return ad::xlogx_sum(t, ad::softmax(t, v)); }, x);
  check_grad(
      [](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::scale(t, ad::add_const(t, v, 2.0), -3.0)); },
      x);

  const Vec pos{0.2, 1.5, 3.0, 0.7};
  check_grad([](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::vlog(t, v)); }, pos);

  // binary ops against a constant operand
  check_grad(
      [](ad::Tape& t, ad::Var v) {
        ad::Var c = t.constant(Vec{1.0, 2.0, -1.0, 0.5});
        return ad::sum(t, ad::mul(t, ad::add(t, v, c), ad::sub(t, v, c)));
      },
      x);
  check_grad(
      [](ad::Tape& t, ad::Var v) {
        ad::Var c = t.constant(Vec{1.0, 2.0, 4.0, 0.5});
        return ad::sum(t, ad::div(t, v, c));
      },
      x);
  check_grad(
      [](ad::Tape& t, ad::Var v) {
        ad::Var c = t.constant(Vec{1.0, 2.0, 4.0, 0.5});
        return ad::sum(t, ad::div(t, c, ad::add_const(t, ad::square(t, v), 1.0)));
      },
      x);
}

TEST_CASE("clamp passes gradient only inside the bounds") {
  const Vec x{-12.0, -3.0, 0.0, 4.0, 11.0};
  const Vec grad = analytic_grad(
      [](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::clampv(t, v, -10.0, 10.0)); }, x);
  CHECK(grad[0] == 0.0);
  CHECK(grad[1] == 1.0);
  CHECK(grad[2] == 1.0);
  CHECK(grad[3] == 1.0);
  CHECK(grad[4] == 0.0);
}

TEST_CASE("shape ops route gradients to the right slots") {
  const Vec x{1.0, 2.0, 3.0, 4.0};
  check_grad(
      [](ad::Tape& t, ad::Var v) {
        ad::Var left = ad::slice(t, v, 0, 2);
        ad::Var right = ad::slice(t, v, 2, 2);
        return ad::dot(t, left, right);
      },
      x);
  check_grad(
      [](ad::Tape& t, ad::Var v) {
        ad::Var c = t.constant(Vec{0.5, -0.5});
        return ad::sum(t, ad::square(t, ad::concat(t, v, c)));
      },
      x);
}

TEST_CASE("weighted_sum differentiates through weights and operands") {
  const Vec x{0.2, 0.5, 0.3, 1.0, -2.0, 0.7};
  // first three entries act as weights, last three as scalar operands
  check_grad(
      [](ad::Tape& t, ad::Var v) {
        ad::Var w = ad::softmax(t, ad::slice(t, v, 0, 3));
        std::vector<ad::Var> scalars;
        for (std::size_t k = 0; k < 3; ++k) {
          scalars.push_back(ad::square(t, ad::slice(t, v, 3 + k, 1)));
        }
        return ad::weighted_sum(t, w, scalars);
      },
      x);
}

TEST_CASE("linear layer gradients (W, b, x) match finite differences") {
  // pack W (2x3), b (2), x (3) into one leaf
  const Vec packed{0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.05, -0.05, 1.0, 2.0, -1.0};
  check_grad(
      [](ad::Tape& t, ad::Var v) {
        ad::Var w = ad::slice(t, v, 0, 6);
        ad::Var b = ad::slice(t, v, 6, 2);
        ad::Var x = ad::slice(t, v, 8, 3);
        return ad::sum(t, ad::square(t, ad::linear(t, w, b, x)));
      },
      packed);
}

TEST_CASE("quadratic loss gradient is exactly 2x") {
  const Vec x{1.0, -2.0, 3.5};
  const Vec grad =
      analytic_grad([](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::square(t, v)); }, x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(grad[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-14));
  }
}

TEST_CASE("gradient of an unused leaf stays zero") {
  ad::Tape tape;
  Vec used_sink(2, 0.0), unused_sink(2, 0.0);
  ad::Var used = tape.leaf(Vec{1.0, 2.0}, &used_sink);
  (void)tape.leaf(Vec{3.0, 4.0}, &unused_sink);
  tape.backward(ad::sum(tape, used));
  CHECK(used_sink == Vec{1.0, 1.0});
  CHECK(unused_sink == Vec{0.0, 0.0});
}

TEST_CASE("backward twice without reset throws") {
  ad::Tape tape;
  Vec sink(1, 0.0);
  ad::Var loss = ad::sum(tape, tape.leaf(Vec{2.0}, &sink));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ContractViolation);

  tape.reset();
  Vec sink2(1, 0.0);
  ad::Var loss2 = ad::sum(tape, tape.leaf(Vec{2.0}, &sink2));
  tape.backward(loss2);  // fine after reset
  CHECK(sink2[0] == 1.0);
}

TEST_CASE("backward is linear in the loss") {
  RngStream rng(13);
  Vec x(6);
  for (auto& v : x) v = 2.0 * rng.next_double() - 1.0;

  auto l1 = [](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::square(t, v)); };
  auto l2 = [](ad::Tape& t, ad::Var v) { return ad::sum(t, ad::vtanh(t, v)); };
  const double a = 2.5, b = -1.25;

  const Vec g1 = analytic_grad(l1, x);
  const Vec g2 = analytic_grad(l2, x);
  const Vec gc = analytic_grad(
      [&](ad::Tape& t, ad::Var v) {
        return ad::add(t, ad::scale(t, l1(t, v), a), ad::scale(t, l2(t, v), b));
      },
      x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(gc[i] == doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-10));
  }
}

TEST_CASE("softmax stays a simplex for large-magnitude inputs") {
  RngStream rng(19);
  for (int c = 0; c < 100; ++c) {
    ad::Tape tape;
    Vec x(8);
    for (auto& v : x) v = 50.0 * (2.0 * rng.next_double() - 1.0);
    const Vec& p = tape.val(ad::softmax(tape, tape.constant(x)));
    double sum = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}
