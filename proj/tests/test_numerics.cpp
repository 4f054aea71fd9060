#include "doctest.h"

#include <cmath>
#include <numbers>
#include <thread>

#include "fmtk/error.hpp"
#include "fmtk/gradcheck.hpp"
#include "fmtk/losses.hpp"
#include "fmtk/memory.hpp"
#include "fmtk/ops.hpp"
#include "fmtk/optim.hpp"
#include "fmtk/random.hpp"
#include "helpers.hpp"

using namespace fmtk;
using testing::random_tensor;

namespace {

// Gradient check of sum(w ⊙ op(params...)) with a fixed random weighting so
// every output element contributes a distinct cotangent.
GradCheckReport check_op(std::vector<Parameter*> ps, std::function<Var(std::vector<Var>&)> op,
                         double h = 1e-5) {
  ParameterSet set;
  for (std::size_t i = 0; i < ps.size(); ++i) set.add("p" + std::to_string(i), *ps[i]);
  auto f = [&](const ForwardContext& ctx) {
    std::vector<Var> vars;
    for (auto* p : ps) vars.push_back(ctx.param(*p));
    Var out = op(vars);
    Var w(random_tensor(out.shape(), 99, 1.0, "weights"));
    return sum(mul(out, w));
  };
  return finite_diff_check(f, set, h);
}

}  // namespace

TEST_CASE("matmul values") {
  Tensor a({2, 2}, {1, 2, 3, 4}), b({2, 1}, {5, 6});
  Tensor c = matmul(Var(a), Var(b)).value();
  CHECK(c[0] == 17);
  CHECK(c[1] == 39);
  Tensor eye({2, 2}, {1, 0, 0, 1});
  CHECK(bitwise_equal(matmul(Var(a), Var(eye)).value(), a));
  CHECK_THROWS_AS(matmul(Var(a), Var(Tensor({3, 1}))), ShapeError);
}

TEST_CASE("matmul gradient of sum") {
  Parameter a(random_tensor({3, 4}, 1)), b(random_tensor({4, 2}, 2));
  ParameterSet s;
  s.add("a", a);
  s.add("b", b);
  auto r = finite_diff_check([&](const ForwardContext& c) { return sum(matmul(c.param(a), c.param(b))); }, s, 1e-5);
  CHECK(r.max_rel_error < 1e-6);
  // dA = 1·Bᵀ: every row of grad A equals the row sums of B.
  Tape tape(s);
  ForwardContext ctx{&tape};
  a.zero_grad();
  tape.backward(sum(matmul(ctx.param(a), ctx.param(b))));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.grad(i, k) == doctest::Approx(b.value(k, 0) + b.value(k, 1)));
}

TEST_CASE("layernorm values") {
  Tensor g({2}, 1.0), s({2}, 0.0);
  Tensor out = layernorm(Var(Tensor({1, 2}, {1, 3})), Var(g), Var(s), 1e-12).value();
  CHECK(out[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-9));
  Tensor g4({4}, 1.0), s4({4}, 0.0);
  Tensor flat = layernorm(Var(Tensor({1, 4}, 2.5)), Var(g4), Var(s4)).value();
  for (double v : flat.values()) CHECK(v == 0.0);
  Tensor x = random_tensor({5, 8}, 3);
  Tensor g8({8}, 1.0), s8({8}, 0.0);
  Tensor y = layernorm(Var(x), Var(g8), Var(s8)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y(r, c) - m) * (y(r, c) - m) / 8;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("layernorm gradient") {
  Parameter x(random_tensor({3, 6}, 4)), g(random_tensor({6}, 5)), s(random_tensor({6}, 6));
  auto r = check_op({&x, &g, &s}, [](std::vector<Var>& v) { return layernorm(v[0], v[1], v[2]); });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("softmax values") {
  Tensor a = softmax(Var(Tensor({1, 2}, {0, 0}))).value();
  CHECK(a[0] == 0.5);
  Tensor b = softmax(Var(Tensor({1, 2}, {std::log(2.0), 0}))).value();
  CHECK(b[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(b[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  Tensor x = random_tensor({4, 7}, 7, 3.0);
  Tensor shifted = x;
  for (auto& v : shifted.values()) v += 11.0;
  Tensor sx = softmax(Var(x)).value(), ss = softmax(Var(shifted)).value();
  CHECK(max_abs_diff(sx, ss) < 1e-14);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(sx(r, c) > 0.0);
      CHECK(sx(r, c) < 1.0);
      total += sx(r, c);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  CHECK(softmax(Var(Tensor({1, 2}, {1000, 0}))).value().all_finite());
}

TEST_CASE("elementwise and activation gradients") {
  Parameter a(random_tensor({4, 5}, 8)), b(random_tensor({4, 5}, 9));
  CHECK(check_op({&a, &b}, [](auto& v) { return add(v[0], v[1]); }).max_rel_error < 1e-6);
  CHECK(check_op({&a, &b}, [](auto& v) { return sub(v[0], v[1]); }).max_rel_error < 1e-6);
  CHECK(check_op({&a, &b}, [](auto& v) { return mul(v[0], v[1]); }).max_rel_error < 1e-6);
  CHECK(check_op({&a}, [](auto& v) { return scale(v[0], -1.5); }).max_rel_error < 1e-6);
  CHECK(check_op({&a}, [](auto& v) { return gelu(v[0]); }).max_rel_error < 1e-6);
  CHECK(check_op({&a}, [](auto& v) { return softmax(v[0]); }).max_rel_error < 1e-6);
  CHECK(check_op({&a}, [](auto& v) { return reshape(v[0], {2, 10}); }).max_rel_error < 1e-6);
  CHECK(check_op({&a}, [](auto& v) { return mean_row_groups(v[0], 2); }).max_rel_error < 1e-6);
  Parameter r(random_tensor({3, 4}, 10));
  for (auto& v : r.value.values())
    if (std::abs(v) < 1e-3) v = 0.5;
  CHECK(check_op({&r}, [](auto& v) { return relu(v[0]); }).max_rel_error < 1e-6);
}

TEST_CASE("linear and bias gradients") {
  Parameter x(random_tensor({5, 4}, 11)), w(random_tensor({3, 4}, 12)), b(random_tensor({3}, 13));
  auto r = check_op({&x, &w, &b}, [](auto& v) { return linear(v[0], v[1], v[2]); });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("attention gradient") {
  const std::size_t rows = 2, tokens = 3, e = 4;
  Parameter q(random_tensor({rows * tokens, e}, 14)), k(random_tensor({rows * tokens, e}, 15)),
      v(random_tensor({rows * tokens, e}, 16));
  auto r = check_op({&q, &k, &v}, [&](auto& vs) { return attention(vs[0], vs[1], vs[2], tokens, 2); });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("attention with one head and uniform keys averages values") {
  Tensor q({2, 2}, 0.0), k({2, 2}, 0.0), v({2, 2}, {1, 2, 3, 4});
  Tensor out = attention(Var(q), Var(k), Var(v), 2, 1).value();
  CHECK(out(0, 0) == 2.0);
  CHECK(out(1, 1) == 3.0);
}

TEST_CASE("positional and channel mix gradients") {
  Parameter x(random_tensor({6, 4}, 17)), table(random_tensor({5, 4}, 18));
  CHECK(check_op({&x, &table}, [](auto& v) { return add_positional(v[0], v[1], 3); }).max_rel_error < 1e-6);
  Parameter s(random_tensor({2, 3, 5}, 19)), w(random_tensor({2, 3}, 20)), b(random_tensor({2}, 21));
  CHECK(check_op({&s, &w, &b}, [](auto& v) { return channel_mix(v[0], v[1], v[2]); }).max_rel_error < 1e-6);
}

TEST_CASE("losses") {
  Tensor x = random_tensor({3, 2}, 22);
  CHECK(mse(Var(x), x).value().item() == 0.0);
  CHECK(mse(Var(Tensor({2}, {1, 3})), Tensor({2}, {0, 0})).value().item() == 5.0);
  double ce = cross_entropy(Var(Tensor({1, 3}, 0.0)), {1}).value().item();
  CHECK(ce == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  CHECK(hinge(Var(Tensor({2, 2}, {2, -2, -3, 1.5})), {0, 1}).value().item() == 0.0);
  // One-vs-rest with margin 1: item scores (0.5, 0) for class 0 → (0.5) + (1) = 1.5.
  CHECK(hinge(Var(Tensor({1, 2}, {0.5, 0})), {0}).value().item() == 1.5);
  CHECK_THROWS_AS(cross_entropy(Var(Tensor({1, 3})), labels_from(Tensor({1}, {3}), 3)), InputError);
  CHECK_THROWS_AS(labels_from(Tensor({1}, {0.5}), 3), InputError);
}

TEST_CASE("loss gradients") {
  Parameter logits(random_tensor({4, 3}, 23));
  ParameterSet s;
  s.add("logits", logits);
  std::vector<std::size_t> labels{0, 2, 1, 2};
  auto ce = finite_diff_check([&](const ForwardContext& c) { return cross_entropy(c.param(logits), labels); }, s, 1e-5);
  CHECK(ce.max_rel_error < 1e-6);
  Tensor target = random_tensor({4, 3}, 24);
  auto m = finite_diff_check([&](const ForwardContext& c) { return mse(c.param(logits), target); }, s, 1e-5);
  CHECK(m.max_rel_error < 1e-6);
  auto hg = finite_diff_check([&](const ForwardContext& c) { return hinge(c.param(logits), labels); }, s, 1e-5);
  CHECK(hg.max_rel_error < 1e-6);
}

TEST_CASE("hinge subgradient at the kink is zero") {
  Parameter s(Tensor({1, 1}, {1.0}));
  ParameterSet set;
  set.add("s", s);
  Tape tape(set);
  ForwardContext ctx{&tape};
  tape.backward(hinge(ctx.param(s), {1}));
  CHECK(s.grad[0] == 0.0);
}

TEST_CASE("adam first step and zero gradient") {
  Parameter p(Tensor({1}, {5.0}));
  ParameterSet s;
  s.add("p", p);
  AdamState st;
  p.grad[0] = 1.0;
  adam_step(s, st, AdamConfig{0.1}, 1);
  CHECK(p.value[0] == doctest::Approx(4.9).epsilon(1e-9));
  Parameter z(random_tensor({3}, 25));
  Tensor before = z.value;
  ParameterSet zs;
  zs.add("z", z);
  AdamState zst;
  for (std::uint64_t t = 1; t <= 5; ++t) adam_step(zs, zst, AdamConfig{0.1}, t);
  CHECK(bitwise_equal(before, z.value));
  CHECK_THROWS(adam_step(zs, zst, AdamConfig{}, 0));
}

TEST_CASE("adam never touches frozen entries and is deterministic") {
  Parameter a(random_tensor({4}, 26)), b(random_tensor({4}, 27)), a2(random_tensor({4}, 26));
  b.frozen = true;
  Tensor b0 = b.value;
  ParameterSet s, s2;
  s.add("a", a);
  s.add("b", b);
  s2.add("a", a2);
  Adam opt(s, AdamConfig{0.01}), opt2(s2, AdamConfig{0.01});
  for (int i = 0; i < 100; ++i) {
    a.grad = random_tensor({4}, 100 + i);
    b.grad = random_tensor({4}, 200 + i);
    a2.grad = a.grad;
    opt.step();
    opt2.step();
  }
  CHECK(bitwise_equal(b.value, b0));
  CHECK(bitwise_equal(a.value, a2.value));
}

TEST_CASE("finite difference oracle on simple functions") {
  Parameter t(Tensor({1}, {3.0}));
  ParameterSet s;
  s.add("t", t);
  auto r = finite_diff_check([&](const ForwardContext& c) { return sum_squares(c.param(t)); }, s, 1e-5);
  CHECK(r.max_rel_error < 1e-9);
  CHECK(r.checked == 1);
  auto k = finite_diff_check([&](const ForwardContext&) { return Var(Tensor::scalar(4.0)); }, s, 1e-5);
  CHECK(k.max_rel_error == 0.0);
  CHECK(t.value[0] == 3.0);
  CHECK_THROWS_AS(finite_diff_check([&](const ForwardContext&) { return Var(Tensor::scalar(NAN)); }, s, 1e-5),
                  NumericalError);
}

TEST_CASE("unreachable parameters get zero gradient") {
  Parameter used(random_tensor({2}, 28)), unused(random_tensor({2}, 29));
  ParameterSet s;
  s.add("used", used);
  s.add("unused", unused);
  unused.grad.fill(7.0);
  s.zero_grad();
  Tape tape(s);
  ForwardContext ctx{&tape};
  ctx.param(unused);
  tape.backward(sum(ctx.param(used)));
  CHECK(unused.grad[0] == 0.0);
  CHECK(used.grad[1] == 1.0);
}

TEST_CASE("gradients flow through frozen ops without accumulating") {
  Parameter x(random_tensor({2, 3}, 30)), w(random_tensor({3, 3}, 31));
  w.frozen = true;
  ParameterSet targets;
  targets.add("x", x);
  Tape tape(targets);
  ForwardContext ctx{&tape};
  Tensor w_grad_before = w.grad;
  tape.backward(sum(linear(ctx.param(x), ctx.param(w))));
  CHECK(bitwise_equal(w.grad, w_grad_before));
  // d/dx sum(x Wᵀ) = column sums of W.
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(x.grad(0, j) == doctest::Approx(w.value(0, j) + w.value(1, j) + w.value(2, j)));
}

TEST_CASE("dropout mask is keyed by seed, stream and step") {
  Tensor x({100}, 1.0);
  Tensor a = dropout(Var(x), 0.5, 1, 2, 3).value();
  Tensor b = dropout(Var(x), 0.5, 1, 2, 3).value();
  Tensor c = dropout(Var(x), 0.5, 1, 2, 4).value();
  CHECK(bitwise_equal(a, b));
  CHECK(!bitwise_equal(a, c));
  std::size_t kept = 0;
  for (double v : a.values()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 30);
  CHECK(kept < 70);
  CHECK(bitwise_equal(dropout(Var(x), 0.0, 1, 2, 3).value(), x));
}

TEST_CASE("counter rng is a pure function of seed, stream and counter") {
  CounterRng a(42, stream_id("x")), b(42, stream_id("x")), c(42, stream_id("y"));
  CHECK(a.bits(17) == b.bits(17));
  CHECK(a.bits(17) != c.bits(17));
  double mean = 0, var = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += a.normal(i) / n;
  for (int i = 0; i < n; ++i) var += (a.normal(i) - mean) * (a.normal(i) - mean) / n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
  CounterRng s(1);
  double u = s.next_uniform();
  CHECK(u == CounterRng(1).uniform(0));
  CHECK(s.position() == 1);
}

TEST_CASE("tracking allocator sees tensor buffers") {
  auto& tr = AllocationTracker::instance();
  std::size_t before = tr.live_bytes();
  {
    Tensor t({1000});
    CHECK(tr.live_bytes() >= before + 8000);
  }
  CHECK(tr.live_bytes() == before);
  PeakMemoryScope outer;
  {
    Tensor t({1 << 20});
  }
  {
    Tensor t({1 << 20});
  }
  std::size_t peak = outer.finish();
  CHECK(peak >= outer.entry_live_bytes() + (8u << 20));
  CHECK(peak < outer.entry_live_bytes() + (16u << 20));
  CHECK(resident_set_bytes() > 0);
}
