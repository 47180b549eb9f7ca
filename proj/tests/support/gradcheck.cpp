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

#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "oracles.hpp"
#include "thermofield/encodings.hpp"
#include "thermofield/field.hpp"
#include "thermofield/losses.hpp"
#include "thermofield/rendering.hpp"

namespace thermofield::testing {

namespace {

using Mat = ad::Matrix<double>;
using Tape = ad::Tape<double>;

// A scalar coordinate that can be perturbed in place, with its analytic
// derivative.
struct Coord {
  double* ptr;
  double analytic;
};

// With `skip_kinks`, coordinates whose forward and backward one-sided
// differences disagree sit on or straddle a ReLU kink and are left out.
double fd_error(const std::vector<Coord>& coords, const std::function<double()>& f,
                bool skip_kinks = false) {
  std::vector<double> a, n;
  const double f0 = skip_kinks ? f() : 0.0;
  for (const Coord& c : coords) {
    const double x0 = *c.ptr;
    *c.ptr = x0 + kFdStep;
    const double fp = f();
    *c.ptr = x0 - kFdStep;
    const double fm = f();
    *c.ptr = x0;
    const double d = (fp - fm) / (2.0 * kFdStep);
    if (skip_kinks) {
      const double fwd = (fp - f0) / kFdStep, bwd = (f0 - fm) / kFdStep;
      if (std::abs(fwd - bwd) > 1e-2 * std::max({std::abs(fwd), std::abs(bwd), 1e-3})) continue;
    }
    a.push_back(c.analytic);
    n.push_back(d);
  }
  // Most coordinates must survive the kink filter.
  if (2 * a.size() < coords.size()) return INFINITY;
  return relative_error(a, n);
}

void record(GradCheckResult& r, int instance, double err) {
  ++r.instances;
  const double e = std::isnan(err) ? INFINITY : err;
  if (r.worst_instance < 0 || e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst_instance = instance;
  }
}

Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double dot_sum(Tape& tape, ad::Var x, const Mat& weights) {
  return tape.scalar(tape.sum(tape.mul(x, tape.constant(weights))));
}

// Up to `count` coordinates of a parameter block, preferring ones with a
// nonzero analytic gradient.
void pick_params(ad::ParamSet<double>& P, const ad::GradientBuffer<double>& g, std::size_t block,
                 int count, std::mt19937_64& rng, std::vector<Coord>& out) {
  auto& values = P.block(block).values;
  const auto grad = g.dense(block);
  std::vector<std::size_t> touched;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (grad[i] != 0.0) touched.push_back(i);
  }
  std::vector<std::size_t> pool = touched;
  if (pool.empty()) {
    pool.resize(values.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  for (int k = 0; k < count && k < static_cast<int>(pool.size()); ++k) {
    out.push_back({&values[pool[k]], grad[pool[k]]});
  }
  // One untouched entry must come back with zero from both sides.
  if (touched.size() < values.size() && !touched.empty()) {
    for (int tries = 0; tries < 16; ++tries) {
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, values.size() - 1)(rng);
      if (grad[i] == 0.0) {
        out.push_back({&values[i], 0.0});
        break;
      }
    }
  }
}

void pick_inputs(Mat& m, const Mat& grad, std::vector<Coord>& out) {
  for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back({&m.data()[i], grad.data()[i]});
}

// Keeps positions away from voxel faces so central differences of the
// piecewise-trilinear encoding never straddle a kink.
bool clear_of_faces(const HashGridLayout& layout, const Mat& x, double margin) {
  for (const auto& level : layout.levels()) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double s = x.data()[i] * level.resolution;
      const double f = s - std::floor(s);
      if (f < margin || f > 1.0 - margin) return false;
    }
  }
  return true;
}

FieldConfig small_field(FieldMode mode) {
  FieldConfig c;
  c.mode = mode;
  c.grid = {4, 4, 32, 2, 10};
  c.proposal_grid = {2, 4, 16, 2, 10};
  c.proposal_hidden_width = 8;
  c.hidden_width = 12;
  c.appearance_dim = 4;
  return c;
}

const Aabb kUnitBox{Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Constant(1.0)};

}  // namespace

GradCheckResult check_hash_encode(int instances, std::uint64_t seed) {
  GradCheckResult r{"hash_encode", 0, 0.0, -1};
  std::mt19937_64 rng(seed);
  const HashGridConfig cfg{3, 4, 32, 2, 10};  // one dense and two hashed levels
  const HashGridLayout layout(cfg);
  for (int inst = 0; inst < instances; ++inst) {
    ad::ParamSet<double> P;
    const auto block = P.add("grid", "grid", static_cast<int>(layout.entry_count()),
                             cfg.features_per_level, true);
    Mat table = random_matrix(1, static_cast<Eigen::Index>(P.block(block).size()), rng);
    std::copy(table.data(), table.data() + table.size(), P.block(block).values.begin());
    Mat x;
    do {
      x = random_matrix(3, 3, rng, 0.0, 1.0);
    } while (!clear_of_faces(layout, x, 1e-3));
    const Mat u = random_matrix(3, cfg.num_levels * cfg.features_per_level, rng);

    ad::GradientBuffer<double> g(P, false);
    Tape tape;
    ad::Var pos = tape.input(x);
    ad::Var enc = hash_encode(tape, layout, P, block, &g, pos);
    tape.backward(tape.sum(tape.mul(enc, tape.constant(u))));
    const Mat gx = tape.grad(pos);

    std::vector<Coord> coords;
    pick_params(P, g, block, 24, rng, coords);
    pick_inputs(x, gx, coords);
    auto f = [&] {
      Tape t;
      return dot_sum(t, hash_encode<double>(t, layout, P, block, nullptr, t.constant(x)), u);
    };
    record(r, inst, fd_error(coords, f));
  }
  return r;
}

std::vector<GradCheckResult> check_mlps(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;
  struct Net {
    std::string name;
    FieldMode mode;
    std::function<const ad::MlpSpec&(const FieldModel<double>&)> spec;
    std::function<const ad::MlpBlocks&(const FieldModel<double>&)> blocks;
  };
  const std::vector<Net> nets = {
      {"mlp density", FieldMode::Thermo, &FieldModel<double>::density_spec,
       &FieldModel<double>::density_blocks},
      {"mlp proposal", FieldMode::Thermo, &FieldModel<double>::proposal_spec,
       &FieldModel<double>::proposal_blocks},
      {"mlp colour", FieldMode::Thermo, &FieldModel<double>::color_spec,
       &FieldModel<double>::color_blocks},
      {"mlp thermal", FieldMode::Thermo, &FieldModel<double>::thermal_spec,
       &FieldModel<double>::thermal_blocks},
      {"mlp thermal-only head", FieldMode::ThermalOnly, &FieldModel<double>::color_spec,
       &FieldModel<double>::color_blocks},
      {"mlp concat4 head", FieldMode::Concat4, &FieldModel<double>::color_spec,
       &FieldModel<double>::color_blocks},
  };
  for (const Net& net : nets) {
    GradCheckResult r{net.name, 0, 0.0, -1};
    for (int inst = 0; inst < instances; ++inst) {
      FieldModel<double> model(small_field(net.mode), 3, kUnitBox, {0.0, 100.0}, rng());
      // Default init leaves biases at zero; randomise them so every unit is
      // exercised.
      for (auto b : net.blocks(model).biases) {
        for (auto& v : model.params().block(b).values) v = std::uniform_real_distribution<>(-0.5, 0.5)(rng);
      }
      auto& P = model.params();
      const ad::MlpSpec& spec = net.spec(model);
      const ad::MlpBlocks& blocks = net.blocks(model);
      Mat x = random_matrix(4, spec.input_dim(), rng);
      const Mat u = random_matrix(4, spec.output_dim(), rng);

      ad::GradientBuffer<double> g(P, false);
      Tape tape;
      ad::Var in = tape.input(x);
      const ad::MlpTrace tr = ad::mlp_forward(spec, P, blocks, in, tape, &g);
      tape.backward(tape.sum(tape.mul(tr.output, tape.constant(u))));
      const Mat gx = tape.grad(in);

      std::vector<Coord> coords;
      for (auto b : blocks.weights) pick_params(P, g, b, 8, rng, coords);
      for (auto b : blocks.biases) pick_params(P, g, b, 4, rng, coords);
      pick_inputs(x, gx, coords);
      auto f = [&] {
        Tape t;
        return dot_sum(t, ad::mlp_forward<double>(spec, P, blocks, t.constant(x), t, nullptr).output, u);
      };
      record(r, inst, fd_error(coords, f));
    }
    out.push_back(r);
  }
  return out;
}

GradCheckResult check_composite(int instances, std::uint64_t seed) {
  GradCheckResult r{"composite", 0, 0.0, -1};
  std::mt19937_64 rng(seed);
  for (int inst = 0; inst < instances; ++inst) {
    const int R = 3, n = 7, C = 3;
    Mat sigma = random_matrix(R * n, 1, rng, 0.0, 3.0);
    const Mat deltas = random_matrix(R, n, rng, 0.05, 0.5);
    Mat values = random_matrix(R * n, C, rng);
    Mat bg = random_matrix(1, C, rng);
    const Mat u = random_matrix(R, C, rng);
    const Mat uw = random_matrix(R * n, 1, rng);

    auto build = [&](Tape& t, ad::Var s, ad::Var v, ad::Var b) {
      ad::Var w = composite_weights(t, s, deltas);
      ad::Var out = blend_background(t, w, composite_values(t, w, v, n), b, n);
      // Weights feed the regularisers directly, so they are checked too.
      return t.add(t.sum(t.mul(out, t.constant(u))), t.sum(t.mul(w, t.constant(uw))));
    };
    Tape tape;
    ad::Var s = tape.input(sigma), v = tape.input(values), b = tape.input(bg);
    tape.backward(build(tape, s, v, b));
    const Mat gs = tape.grad(s), gv = tape.grad(v), gb = tape.grad(b);

    std::vector<Coord> coords;
    pick_inputs(sigma, gs, coords);
    pick_inputs(values, gv, coords);
    pick_inputs(bg, gb, coords);
    auto f = [&] {
      Tape t;
      return t.scalar(build(t, t.constant(sigma), t.constant(values), t.constant(bg)));
    };
    record(r, inst, fd_error(coords, f));
  }
  return r;
}

std::vector<GradCheckResult> check_loss_terms(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCheckResult rgb{"loss rgb", 0, 0.0, -1}, th{"loss thermal", 0, 0.0, -1};
  GradCheckResult dist{"loss distortion", 0, 0.0, -1}, inter{"loss interlevel", 0, 0.0, -1};
  for (int inst = 0; inst < instances; ++inst) {
    const int R = 4, n = 6;
    {
      Mat pred = random_matrix(R, 3, rng, 0.0, 1.0);
      const Mat target = random_matrix(R, 3, rng, 0.0, 1.0);
      Tape t;
      ad::Var p = t.input(pred);
      t.backward(mse_loss(t, p, target));
      std::vector<Coord> c;
      pick_inputs(pred, t.grad(p), c);
      record(rgb, inst, fd_error(c, [&] {
               Tape q;
               return q.scalar(mse_loss(q, q.constant(pred), target));
             }));
    }
    {
      Mat pred = random_matrix(R, 1, rng, 0.0, 1.0);
      const Mat target = random_matrix(R, 1, rng, 0.0, 1.0);
      std::vector<std::uint8_t> mask(R);
      for (auto& m : mask) m = rng() % 4 != 0;
      mask[0] = 1;
      Tape t;
      ad::Var p = t.input(pred);
      t.backward(mse_loss(t, p, target, mask));
      std::vector<Coord> c;
      pick_inputs(pred, t.grad(p), c);
      record(th, inst, fd_error(c, [&] {
               Tape q;
               return q.scalar(mse_loss(q, q.constant(pred), target, mask));
             }));
    }
    {
      Mat w = random_matrix(R * n, 1, rng, 0.0, 0.3);
      Mat s(R, n + 1);
      for (int r = 0; r < R; ++r) {
        Mat steps = random_matrix(1, n + 1, rng, 0.01, 1.0);
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) s(r, i) = (acc += steps(0, i));
        s.row(r) /= acc;
      }
      Tape t;
      ad::Var p = t.input(w);
      t.backward(distortion_loss(t, p, s));
      std::vector<Coord> c;
      pick_inputs(w, t.grad(p), c);
      record(dist, inst, fd_error(c, [&] {
               Tape q;
               return q.scalar(distortion_loss(q, q.constant(w), s));
             }));
    }
    {
      // Proposal weights stay clear of the 1 / (p + eps) pole, where central
      // differences at kFdStep lose accuracy.
      Mat prop = random_matrix(R * n, 1, rng, 0.02, 0.3);
      const Mat fin = random_matrix(R * n, 1, rng, 0.0, 0.3);
      // Keep every bin clear of the hinge at final == proposal.
      for (Eigen::Index i = 0; i < prop.size(); ++i) {
        if (std::abs(prop(i) - fin(i)) < 1e-3) prop(i) += 2e-3;
      }
      Tape t;
      ad::Var p = t.input(prop);
      t.backward(interlevel_loss(t, p, fin, n, 1e-6));
      std::vector<Coord> c;
      pick_inputs(prop, t.grad(p), c);
      record(inter, inst, fd_error(c, [&] {
               Tape q;
               return q.scalar(interlevel_loss(q, q.constant(prop), fin, n, 1e-6));
             }));
    }
  }
  return {rgb, th, dist, inter};
}

GradCheckResult check_proposal_path(int instances, std::uint64_t seed) {
  GradCheckResult r{"proposal path", 0, 0.0, -1};
  std::mt19937_64 rng(seed);
  for (int inst = 0; inst < instances; ++inst) {
    FieldModel<double> model(small_field(FieldMode::Thermo), 2, kUnitBox, {0.0, 1.0}, rng());
    auto& P = model.params();
    for (auto& v : P.block(model.proposal_grid_block()).values) {
      v = std::uniform_real_distribution<>(-1.0, 1.0)(rng);
    }
    const int R = 3, n = 8;
    const Mat x = random_matrix(R * n, 3, rng, 0.0, 1.0);
    const Mat deltas = random_matrix(R, n, rng, 0.05, 0.4);
    const Mat fin = random_matrix(R * n, 1, rng, 0.0, 0.3);
    auto build = [&](Tape& t, ad::GradientBuffer<double>* g) {
      ad::Var sigma = build_proposal_graph(model, t, g, t.constant(x));
      ad::Var w = composite_weights(t, sigma, deltas);
      return interlevel_loss(t, w, fin, n, 1e-6);
    };
    ad::GradientBuffer<double> g(P, false);
    Tape tape;
    tape.backward(build(tape, &g));
    std::vector<Coord> coords;
    pick_params(P, g, model.proposal_grid_block(), 16, rng, coords);
    for (auto b : model.proposal_blocks().weights) pick_params(P, g, b, 6, rng, coords);
    for (auto b : model.proposal_blocks().biases) pick_params(P, g, b, 3, rng, coords);
    record(r, inst, fd_error(coords, [&] {
             Tape t;
             return t.scalar(build(t, nullptr));
           }));
  }
  return r;
}

GradCheckResult check_pipeline(int instances, std::uint64_t seed) {
  GradCheckResult r{"fused pipeline", 0, 0.0, -1};
  std::mt19937_64 rng(seed);
  const FieldMode modes[] = {FieldMode::Thermo, FieldMode::RgbOnly, FieldMode::ThermalOnly,
                             FieldMode::Concat4};
  for (int inst = 0; inst < instances; ++inst) {
    const FieldMode mode = modes[inst % 4];
    FieldModel<double> model(small_field(mode), 3, kUnitBox, {0.0, 100.0}, rng());
    auto& P = model.params();
    // Larger table values give the density a usable range at init.
    for (auto& v : P.block(model.grid_block()).values) {
      v = std::uniform_real_distribution<>(-1.0, 1.0)(rng);
    }
    model.set_background({0.3, 0.5, 0.7}, 0.4);
    // Zero biases put whole rows of pre-activations exactly on the ReLU kink
    // whenever the previous layer is dead for a sample.
    for (const ad::MlpBlocks* blocks : {&model.density_blocks(), &model.color_blocks(),
                                        &model.thermal_blocks()}) {
      for (auto b : blocks->biases) {
        for (auto& v : P.block(b).values) v = std::uniform_real_distribution<>(-0.5, 0.5)(rng);
      }
    }

    const int R = 3;
    std::vector<Ray> rays;
    while (static_cast<int>(rays.size()) < R) {
      Ray ray;
      ray.origin = random_matrix(1, 3, rng).transpose().normalized() * 3.0;
      const Eigen::Vector3d target = 0.4 * random_matrix(1, 3, rng).transpose();
      ray.direction = (target - ray.origin).normalized();
      if (auto c = clip_to_box(ray, kUnitBox, 0.05)) rays.push_back(*c);
    }
    std::vector<int> app(R);
    for (auto& a : app) a = static_cast<int>(rng() % 3);
    SamplerOptions so;
    so.proposal_samples = 8;
    so.final_samples = 6;
    RayTargets<double> targets;
    targets.rgb = random_matrix(R, 3, rng, 0.0, 1.0);
    targets.t_unit = random_matrix(R, 1, rng, 0.0, 1.0);
    targets.t_valid.assign(R, 1);
    LossWeights lw;
    // The interlevel penalty re-bins the final weights as constants, which
    // a finite difference cannot reproduce; it is covered by the proposal
    // path check.
    lw.lambda_interl = 0.0;

    RaySampling sampling;
    {
      Tape t;
      sampling = trace_rays<double>(model, t, nullptr, rays, app, so, &rng).sampling;
    }
    auto build = [&](Tape& t, ad::GradientBuffer<double>* g) {
      const RayGraph<double> graph = trace_rays(model, t, g, rays, app, so, nullptr, &sampling);
      return build_loss_graph(t, rays, graph, targets, lw).total;
    };
    ad::GradientBuffer<double> g(P, false);
    Tape tape;
    tape.backward(build(tape, &g));
    std::vector<Coord> coords;
    for (std::size_t b = 0; b < P.size(); ++b) {
      if (P.block(b).group.rfind("proposal", 0) == 0) continue;
      pick_params(P, g, b, 4, rng, coords);
    }
    record(r, inst, fd_error(coords, [&] {
             Tape t;
             return t.scalar(build(t, nullptr));
           }, true));
  }
  return r;
}

}  // namespace thermofield::testing
