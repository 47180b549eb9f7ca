// Copyright 2026 The thermofield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>

#include <doctest.h>

#include "gradcheck.hpp"
#include "thermofield/autodiff.hpp"

using namespace thermofield;
using namespace thermofield::ad;

namespace {

using MatD = Matrix<double>;

struct Net {
  ParamSet<double> params;
  MlpSpec spec;
  MlpBlocks blocks;
};

Net make_net(std::vector<int> widths, Activation out, std::uint64_t seed) {
  Net n;
  n.spec.layer_widths = std::move(widths);
  n.spec.output_activation = out;
  n.blocks = add_mlp(n.params, "net", n.spec);
  std::mt19937_64 rng(seed);
  init_mlp(n.params, n.blocks, n.spec, rng);
  return n;
}

void zero_all(ParamSet<double>& p) {
  for (auto& b : p.blocks()) std::fill(b.values.begin(), b.values.end(), 0.0);
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("zero weights give zero output without an output activation") {
  Net n = make_net({5, 4, 3}, Activation::None, 1);
  zero_all(n.params);
  Tape<double> t;
  const MlpTrace tr = mlp_forward<double>(n.spec, n.params, n.blocks,
                                          t.constant(MatD::Random(6, 5)), t, nullptr);
  CHECK(t.value(tr.output).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero weights with a sigmoid head give one half") {
  Net n = make_net({5, 4, 3}, Activation::Sigmoid, 1);
  zero_all(n.params);
  Tape<double> t;
  const MlpTrace tr = mlp_forward<double>(n.spec, n.params, n.blocks,
                                          t.constant(MatD::Random(6, 5)), t, nullptr);
  CHECK(((t.value(tr.output).array() - 0.5).abs() == 0.0).all());
}

TEST_CASE("mlp forward matches a straight-line evaluation") {
  Net n = make_net({3, 4, 4, 2}, Activation::Sigmoid, 7);
  for (auto b : n.blocks.biases) {
    for (auto& v : n.params.block(b).values) v = 0.1 * (&v - n.params.block(b).values.data()) - 0.15;
  }
  const MatD x = MatD::Random(5, 3);
  Tape<double> t;
  const MatD y = t.value(mlp_forward<double>(n.spec, n.params, n.blocks, t.constant(x), t, nullptr).output);
  for (int r = 0; r < x.rows(); ++r) {
    std::vector<double> h(x.row(r).data(), x.row(r).data() + 3);
    for (int l = 0; l < n.spec.num_layers(); ++l) {
      const auto& W = n.params.block(n.blocks.weights[l]);
      const auto& B = n.params.block(n.blocks.biases[l]);
      std::vector<double> next(W.rows);
      for (int o = 0; o < W.rows; ++o) {
        double s = B.values[o];
        for (int i = 0; i < W.cols; ++i) s += W.values[o * W.cols + i] * h[i];
        const bool last = l + 1 == n.spec.num_layers();
        next[o] = last ? 1.0 / (1.0 + std::exp(-s)) : std::max(0.0, s);
      }
      h = next;
    }
    for (int o = 0; o < 2; ++o) CHECK(std::abs(y(r, o) - h[o]) < 1e-12);
  }
}

TEST_CASE("mlp rejects a mismatched input width") {
  Net n = make_net({3, 4, 2}, Activation::None, 1);
  Tape<double> t;
  CHECK_THROWS_AS(mlp_forward<double>(n.spec, n.params, n.blocks, t.constant(MatD::Ones(2, 5)), t, nullptr),
                  ConfigError);
  MlpSpec bad;
  bad.layer_widths = {3, 2};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("constant loss leaves every gradient zero") {
  Net n = make_net({3, 4, 2}, Activation::None, 3);
  GradientBuffer<double> g(n.params, false);
  Tape<double> t;
  mlp_forward(n.spec, n.params, n.blocks, t.constant(MatD::Random(2, 3)), t, &g);
  Var c = t.constant(MatD::Constant(1, 1, 4.0));
  t.backward(c);
  for (std::size_t b = 0; b < n.params.size(); ++b) {
    for (double v : g.dense(b)) CHECK(v == 0.0);
  }
}

TEST_CASE("half squared norm of Wx has gradient (Wx) x^T") {
  ParamSet<double> p;
  const auto w = p.add("w", "w", 2, 2);
  p.block(w).values = {1.0, -2.0, 0.5, 3.0};
  const auto b = p.add("b", "b", 1, 2);
  GradientBuffer<double> g(p, false);
  Tape<double> t;
  MatD x(1, 2);
  x << 0.7, -1.3;
  Var y = t.linear(t.constant(x), t.parameter(p, w, &g), t.parameter(p, b, nullptr));
  t.backward(t.scale(t.sum(t.mul(y, y)), 0.5));
  const double y0 = 1.0 * 0.7 - 2.0 * -1.3, y1 = 0.5 * 0.7 + 3.0 * -1.3;
  const auto gw = g.dense(w);
  CHECK(gw[0] == doctest::Approx(y0 * 0.7).epsilon(1e-14));
  CHECK(gw[1] == doctest::Approx(y0 * -1.3).epsilon(1e-14));
  CHECK(gw[2] == doctest::Approx(y1 * 0.7).epsilon(1e-14));
  CHECK(gw[3] == doctest::Approx(y1 * -1.3).epsilon(1e-14));
}

TEST_CASE("backward on an empty tape is a state error") {
  Tape<double> t;
  CHECK_THROWS_AS(t.backward(Var{}), StateError);
  Var v = t.input(MatD::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(v), ConfigError);
}

TEST_CASE("mlp, sigmoid and squared error pass the finite-difference check") {
  for (const auto& r : testing::check_mlps(6, 11)) {
    INFO(r.name);
    CHECK(r.max_rel_error < testing::kGradTolerance);
  }
}

TEST_CASE("gather, concat, slice and softplus gradients") {
  std::mt19937_64 rng(5);
  MatD a = MatD::Random(4, 3), b = MatD::Random(4, 2);
  const MatD u = MatD::Random(3, 4);
  auto build = [&](Tape<double>& t, Var va, Var vb) {
    Var c = t.concat_cols({va, t.softplus(vb)});
    Var s = t.slice_cols(c, 1, 4);
    Var gr = t.gather_rows(s, {3, 0, 3});
    return t.sum(t.mul(t.sigmoid(gr), t.constant(u)));
  };
  Tape<double> t;
  Var va = t.input(a), vb = t.input(b);
  t.backward(build(t, va, vb));
  const MatD ga = t.grad(va), gb = t.grad(vb);
  auto f = [&] {
    Tape<double> q;
    return q.scalar(build(q, q.constant(a), q.constant(b)));
  };
  const double h = 1e-5;
  for (MatD* m : {&a, &b}) {
    const MatD& g = m == &a ? ga : gb;
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      const double x0 = m->data()[i];
      m->data()[i] = x0 + h;
      const double fp = f();
      m->data()[i] = x0 - h;
      const double fm = f();
      m->data()[i] = x0;
      CHECK(g.data()[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-6));
    }
  }
  (void)rng;
}

TEST_CASE("learning-rate schedule endpoints") {
  LrSchedule s{1e-2, 1e-3, 30000};
  CHECK(s.at(0) == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(s.at(30000) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(s.at(15000) == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-12));
}

TEST_CASE("adam with zero gradient keeps parameters and decays moments") {
  ParamSet<double> p;
  const auto b = p.add("w", "w", 1, 3);
  p.block(b).values = {1.0, 2.0, 3.0};
  auto st = OptimizerState<double>::zeros(p, {1e-2, 1e-3, 100});
  GradientBuffer<double> g(p, false);
  adam_step(st, p, g);
  CHECK(p.block(b).values == std::vector<double>{1.0, 2.0, 3.0});
  st.first_moment[0] = {0.5, 0.5, 0.5};
  st.second_moment[0] = {0.1, 0.1, 0.1};
  adam_step(st, p, g);
  CHECK(st.first_moment[0][0] == doctest::Approx(0.45));
  CHECK(st.second_moment[0][0] == doctest::Approx(0.0999));
  CHECK(st.step == 2);
}

TEST_CASE("adam with a constant gradient steps by -sign(g) * lr") {
  ParamSet<double> p;
  const auto b = p.add("w", "w", 1, 2);
  auto st = OptimizerState<double>::zeros(p, {1e-2, 1e-2, 1000});
  GradientBuffer<double> g(p, false);
  g.dense(b)[0] = 3.0;
  g.dense(b)[1] = -0.2;
  for (int i = 0; i < 200; ++i) adam_step(st, p, g);
  const std::vector<double> before = p.block(b).values;
  adam_step(st, p, g);
  CHECK(p.block(b).values[0] - before[0] == doctest::Approx(-1e-2).epsilon(1e-6));
  CHECK(p.block(b).values[1] - before[1] == doctest::Approx(1e-2).epsilon(1e-6));
}

TEST_CASE("adam minimises a scalar quadratic") {
  ParamSet<double> p;
  const auto b = p.add("w", "w", 1, 1);
  auto st = OptimizerState<double>::zeros(p, {1e-2, 1e-2, 2000});
  // Independent loop with the same constants.
  double w = 0.0, m = 0.0, v = 0.0;
  for (int k = 0; k < 2000; ++k) {
    GradientBuffer<double> g(p, false);
    g.dense(b)[0] = 2.0 * (p.block(b).values[0] - 3.0);
    adam_step(st, p, g);
    const double gr = 2.0 * (w - 3.0);
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1 - std::pow(0.9, k + 1)), vh = v / (1 - std::pow(0.999, k + 1));
    w -= 1e-2 * mh / (std::sqrt(vh) + 1e-15);
  }
  CHECK(p.block(b).values[0] == doctest::Approx(w).epsilon(1e-9));
  CHECK(std::abs(p.block(b).values[0] - 3.0) < 1e-2);
}

TEST_CASE("adam rejects a non-finite gradient and names the group") {
  ParamSet<double> p;
  p.add("a.w", "alpha", 1, 2);
  const auto b = p.add("b.w", "beta", 1, 2);
  auto st = OptimizerState<double>::zeros(p, {1e-2, 1e-3, 10});
  GradientBuffer<double> g(p, false);
  g.dense(b)[1] = NAN;
  try {
    adam_step(st, p, g);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.culprit() == "beta");
  }
  CHECK(st.step == 0);
}

TEST_CASE("sparse buffers merge deterministically into a dense total") {
  ParamSet<float> p;
  const auto b = p.add("grid", "grid", 8, 1, true);
  GradientBuffer<float> s1(p, true), s2(p, true), total(p, false);
  s1.add(b, 3, 1.0f);
  s1.add(b, 3, 2.0f);
  s2.add(b, 5, -1.0f);
  s1.accumulate_into(total);
  s2.accumulate_into(total);
  CHECK(total.dense(b)[3] == 3.0f);
  CHECK(total.dense(b)[5] == -1.0f);
  CHECK_THROWS_AS(s2.accumulate_into(s1), ConfigError);
}

}  // TEST_SUITE
