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

#include "thermofield/rendering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Geometry>
#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>

namespace thermofield {

void Camera::validate() const {
  if (width < 1 || height < 1) throw ConfigError("camera image size must be positive");
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
  if (!cam_to_world.allFinite()) throw ConfigError("camera pose has non-finite entries");
  const Eigen::Matrix3d r = rotation();
  const double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (err > 1e-6 || r.determinant() <= 0.0) {
    throw ConfigError("camera rotation is not a proper orthonormal matrix");
  }
}

std::optional<Eigen::Vector2d> Camera::project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d p = rotation().transpose() * (world - center());
  if (p.z() >= 0.0) return std::nullopt;
  const double inv = 1.0 / -p.z();
  return Eigen::Vector2d(cx + fx * p.x() * inv, cy - fy * p.y() * inv);
}

Eigen::Matrix<double, 3, 4> look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                    const Eigen::Vector3d& up) {
  const Eigen::Vector3d f = (target - eye).normalized();
  Eigen::Vector3d x = f.cross(up);
  if (x.norm() < 1e-9) throw DomainError("look_at: view direction parallel to up");
  x.normalize();
  const Eigen::Vector3d y = x.cross(f);
  Eigen::Matrix<double, 3, 4> m;
  m.col(0) = x;
  m.col(1) = y;
  m.col(2) = -f;
  m.col(3) = eye;
  return m;
}

Ray generate_ray(const Camera& cam, double u, double v) {
  if (!(u >= 0.0 && u <= cam.width && v >= 0.0 && v <= cam.height)) {
    throw DomainError("pixel (" + std::to_string(u) + ", " + std::to_string(v) +
                      ") outside the image");
  }
  const Eigen::Vector3d d_cam((u - cam.cx) / cam.fx, -(v - cam.cy) / cam.fy, -1.0);
  Ray ray;
  ray.origin = cam.center();
  ray.direction = (cam.rotation() * d_cam).normalized();
  return ray;
}

std::optional<Ray> clip_to_box(const Ray& ray, const Aabb& box, double near_plane) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-12) {
      if (o < box.lo[a] || o > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - o) / d;
    double tb = (box.hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  Ray out = ray;
  out.near = std::max(t0, near_plane);
  out.far = t1;
  if (!(out.far > out.near)) return std::nullopt;
  return out;
}

namespace {

void check_ray(const Ray& ray) {
  if (!(ray.near > 0.0) || !(ray.far > ray.near) || !std::isfinite(ray.far)) {
    throw DomainError("ray requires 0 < near < far < inf");
  }
}

}  // namespace

double spacing_to_distance(const Ray& ray, double s) {
  const double mid = 0.5 * (ray.near + ray.far);
  if (s <= 0.5) return ray.near + 2.0 * s * (mid - ray.near);
  const double u = 2.0 * (s - 0.5);
  return 1.0 / ((1.0 - u) / mid + u / ray.far);
}

double distance_to_spacing(const Ray& ray, double t) {
  const double mid = 0.5 * (ray.near + ray.far);
  if (t <= mid) return 0.5 * (t - ray.near) / (mid - ray.near);
  const double u = (1.0 / t - 1.0 / mid) / (1.0 / ray.far - 1.0 / mid);
  return 0.5 + 0.5 * u;
}

void RaySamples::validate() const {
  if (edges.size() < 2) throw ConfigError("ray samples need at least one interval");
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (!(edges[i + 1] > edges[i])) throw DomainError("sample edges must be strictly increasing");
  }
}

RaySamples sample_stratified(const Ray& ray, int n, std::mt19937_64* rng) {
  if (n < 1) throw ConfigError("stratified sampling needs n >= 1");
  check_ray(ray);
  std::vector<double> s(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) s[i] = static_cast<double>(i) / n;
  if (rng != nullptr) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> jittered(s.size());
    for (int i = 0; i <= n; ++i) {
      const double lo = i == 0 ? s[0] : 0.5 * (s[i - 1] + s[i]);
      const double hi = i == n ? s[n] : 0.5 * (s[i] + s[i + 1]);
      jittered[i] = lo + (hi - lo) * uni(*rng);
    }
    s = std::move(jittered);
  }
  RaySamples out;
  out.edges.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out.edges[i] = spacing_to_distance(ray, s[i]);
  // Guard against ties produced by rounding at the spacing breakpoint.
  for (std::size_t i = 1; i < out.edges.size(); ++i) {
    if (!(out.edges[i] > out.edges[i - 1])) {
      out.edges[i] = std::nextafter(out.edges[i - 1], std::numeric_limits<double>::infinity());
    }
  }
  return out;
}

RaySamples resample_proposal(const Ray& ray, const RaySamples& proposal,
                             std::span<const double> weights, int n_final, double eps_pdf,
                             std::mt19937_64* rng, bool* fell_back) {
  if (n_final < 1) throw ConfigError("resampling needs n_final >= 1");
  if (!(eps_pdf > 0.0 && eps_pdf <= 1.0)) throw ConfigError("eps_pdf must lie in (0, 1]");
  proposal.validate();
  const int n = proposal.size();
  if (static_cast<int>(weights.size()) != n) {
    throw ConfigError("one proposal weight per interval required");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w)) throw DomainError("non-finite proposal weight");
    total += std::max(w, 0.0);
  }
  if (fell_back != nullptr) *fell_back = false;
  if (!(total > 0.0)) {
    if (fell_back != nullptr) *fell_back = true;
    return sample_stratified(ray, n_final, rng);
  }

  const double length = proposal.edges.back() - proposal.edges.front();
  std::vector<double> cdf(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    const double p = (1.0 - eps_pdf) * std::max(weights[i], 0.0) / total +
                     eps_pdf * proposal.delta(i) / length;
    cdf[i + 1] = cdf[i] + p;
  }
  for (auto& c : cdf) c /= cdf.back();

  std::vector<double> u(static_cast<std::size_t>(n_final) + 1);
  if (rng != nullptr) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double step = 1.0 / (n_final + 1);
    for (int j = 0; j <= n_final; ++j) u[j] = (j + uni(*rng)) * step;
  } else {
    for (int j = 0; j <= n_final; ++j) u[j] = static_cast<double>(j) / n_final;
  }

  RaySamples out;
  out.edges.resize(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) {
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u[j]);
    int i = static_cast<int>(it - cdf.begin()) - 1;
    i = std::clamp(i, 0, n - 1);
    const double mass = cdf[i + 1] - cdf[i];
    const double frac = mass > 0.0 ? std::clamp((u[j] - cdf[i]) / mass, 0.0, 1.0) : 0.0;
    out.edges[j] = proposal.edges[i] + frac * proposal.delta(i);
  }
  for (std::size_t j = 1; j < out.edges.size(); ++j) {
    if (!(out.edges[j] > out.edges[j - 1])) {
      out.edges[j] = std::nextafter(out.edges[j - 1], std::numeric_limits<double>::infinity());
    }
  }
  return out;
}

CompositeResult composite(const RaySamples& samples, std::span<const double> sigma,
                          std::span<const double> values, std::span<const double> background) {
  samples.validate();
  const int n = samples.size();
  const std::size_t channels = background.size();
  if (static_cast<int>(sigma.size()) != n) throw ConfigError("one density per interval required");
  if (values.size() != static_cast<std::size_t>(n) * channels) {
    throw ConfigError("values must hold one row of background.size() channels per interval");
  }
  CompositeResult r;
  r.weights.resize(n);
  r.transmittance.resize(n);
  r.value.assign(channels, 0.0);
  double optical = 0.0;
  double depth_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!(sigma[i] >= 0.0) || !std::isfinite(sigma[i])) {
      throw DomainError("density must be finite and non-negative");
    }
    const double a = sigma[i] * samples.delta(i);
    const double t = std::exp(-optical);
    const double w = t * -std::expm1(-a);
    r.transmittance[i] = t;
    r.weights[i] = w;
    r.accumulation += w;
    depth_sum += w * samples.center(i);
    for (std::size_t c = 0; c < channels; ++c) r.value[c] += w * values[i * channels + c];
    optical += a;
  }
  for (std::size_t c = 0; c < channels; ++c) {
    r.value[c] += (1.0 - r.accumulation) * background[c];
  }
  r.depth = depth_sum / std::max(r.accumulation, 1e-10);
  return r;
}

ProposalSamples sample_proposal(const Ray& ray, const DensityFn& density, int n_init,
                                int n_final, double eps_pdf, std::mt19937_64* rng) {
  ProposalSamples out;
  out.proposal = sample_stratified(ray, n_init, rng);
  std::vector<Eigen::Vector3d> x(static_cast<std::size_t>(n_init));
  for (int i = 0; i < n_init; ++i) x[i] = ray.origin + out.proposal.center(i) * ray.direction;
  std::vector<double> sigma(x.size());
  density(x, sigma);
  const CompositeResult c = composite(out.proposal, sigma, {}, {});
  out.proposal_weights = c.weights;
  out.final = resample_proposal(ray, out.proposal, out.proposal_weights, n_final, eps_pdf, rng,
                                &out.fell_back);
  return out;
}

// ---------------------------------------------------------------------------
// Tape compositing

namespace {

template <typename Real>
struct CompositeWeightsNode final : ad::Node<Real> {
  ad::Var sigma;
  ad::Matrix<Real> deltas;  // R x n
  ad::Matrix<Real> trans;   // R x (n+1), trans(r, i) = T_i

  void backward(ad::Tape<Real>& tape) override {
    const auto R = deltas.rows();
    const auto n = deltas.cols();
    auto& adj = tape.adjoint(sigma);
    for (Eigen::Index r = 0; r < R; ++r) {
      // d w_i / d sigma_k = delta_k (T_{k+1} [i == k] - w_i [i > k])
      Real suffix = 0;
      for (Eigen::Index k = n - 1; k >= 0; --k) {
        const Real g = this->grad(r * n + k, 0);
        adj(r * n + k, 0) += deltas(r, k) * (g * trans(r, k + 1) - suffix);
        suffix += g * this->value(r * n + k, 0);
      }
    }
  }
};

template <typename Real>
struct CompositeValuesNode final : ad::Node<Real> {
  ad::Var weights, values;
  int n = 0;

  void backward(ad::Tape<Real>& tape) override {
    const auto& w = tape.value(weights);
    const auto& v = tape.value(values);
    const auto R = this->grad.rows();
    const auto C = this->grad.cols();
    const bool gw = tape.requires_grad(weights);
    const bool gv = tape.requires_grad(values);
    for (Eigen::Index r = 0; r < R; ++r) {
      for (int i = 0; i < n; ++i) {
        const Eigen::Index row = r * n + i;
        if (gw) {
          Real acc = 0;
          for (Eigen::Index c = 0; c < C; ++c) acc += this->grad(r, c) * v(row, c);
          tape.adjoint(weights)(row, 0) += acc;
        }
        if (gv) {
          for (Eigen::Index c = 0; c < C; ++c) {
            tape.adjoint(values)(row, c) += this->grad(r, c) * w(row, 0);
          }
        }
      }
    }
  }
};

template <typename Real>
struct BlendBackgroundNode final : ad::Node<Real> {
  ad::Var weights, rendered, background;
  int n = 0;
  std::vector<Real> acc;  // per ray sum of weights

  void backward(ad::Tape<Real>& tape) override {
    const auto R = this->grad.rows();
    const auto C = this->grad.cols();
    if (tape.requires_grad(rendered)) tape.adjoint(rendered) += this->grad;
    const auto& bg = tape.value(background);
    if (tape.requires_grad(weights)) {
      auto& adj = tape.adjoint(weights);
      for (Eigen::Index r = 0; r < R; ++r) {
        Real g = 0;
        for (Eigen::Index c = 0; c < C; ++c) g -= this->grad(r, c) * bg(0, c);
        for (int i = 0; i < n; ++i) adj(r * n + i, 0) += g;
      }
    }
    if (tape.requires_grad(background)) {
      auto& adj = tape.adjoint(background);
      for (Eigen::Index r = 0; r < R; ++r) {
        for (Eigen::Index c = 0; c < C; ++c) adj(0, c) += this->grad(r, c) * (Real(1) - acc[r]);
      }
    }
  }
};

}  // namespace

template <typename Real>
ad::Var composite_weights(ad::Tape<Real>& tape, ad::Var sigma, const ad::Matrix<Real>& deltas) {
  const auto& s = tape.value(sigma);
  const auto R = deltas.rows();
  const auto n = deltas.cols();
  if (s.cols() != 1 || s.rows() != R * n) {
    throw ConfigError("composite_weights: sigma must be (R*n) x 1");
  }
  auto node = std::make_unique<CompositeWeightsNode<Real>>();
  node->sigma = sigma;
  node->deltas = deltas;
  node->trans.resize(R, n + 1);
  node->value.resize(R * n, 1);
  for (Eigen::Index r = 0; r < R; ++r) {
    Real optical = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Real sig = s(r * n + i, 0);
      if (!(sig >= Real(0)) || !std::isfinite(static_cast<double>(sig))) {
        throw DomainError("density must be finite and non-negative");
      }
      const Real a = sig * deltas(r, i);
      const Real t = std::exp(-optical);
      node->trans(r, i) = t;
      node->value(r * n + i, 0) = t * -std::expm1(-a);
      optical += a;
    }
    node->trans(r, n) = std::exp(-optical);
  }
  node->requires_grad = tape.requires_grad(sigma);
  return tape.push(std::move(node));
}

template <typename Real>
ad::Var composite_values(ad::Tape<Real>& tape, ad::Var weights, ad::Var values, int n) {
  const auto& w = tape.value(weights);
  const auto& v = tape.value(values);
  if (n < 1 || w.cols() != 1 || w.rows() % n != 0 || v.rows() != w.rows()) {
    throw ConfigError("composite_values: shape mismatch");
  }
  const auto R = w.rows() / n;
  auto node = std::make_unique<CompositeValuesNode<Real>>();
  node->weights = weights;
  node->values = values;
  node->n = n;
  node->value = ad::Matrix<Real>::Zero(R, v.cols());
  for (Eigen::Index r = 0; r < R; ++r) {
    for (int i = 0; i < n; ++i) {
      node->value.row(r) += w(r * n + i, 0) * v.row(r * n + i);
    }
  }
  node->requires_grad = tape.requires_grad(weights) || tape.requires_grad(values);
  return tape.push(std::move(node));
}

template <typename Real>
ad::Var blend_background(ad::Tape<Real>& tape, ad::Var weights, ad::Var rendered,
                         ad::Var background, int n) {
  const auto& w = tape.value(weights);
  const auto& c = tape.value(rendered);
  const auto& bg = tape.value(background);
  if (n < 1 || w.cols() != 1 || w.rows() != c.rows() * n || bg.rows() != 1 ||
      bg.cols() != c.cols()) {
    throw ConfigError("blend_background: shape mismatch");
  }
  const auto R = c.rows();
  auto node = std::make_unique<BlendBackgroundNode<Real>>();
  node->weights = weights;
  node->rendered = rendered;
  node->background = background;
  node->n = n;
  node->acc.assign(static_cast<std::size_t>(R), Real(0));
  node->value = c;
  for (Eigen::Index r = 0; r < R; ++r) {
    Real a = 0;
    for (int i = 0; i < n; ++i) a += w(r * n + i, 0);
    node->acc[r] = a;
    node->value.row(r) += (Real(1) - a) * bg.row(0);
  }
  node->requires_grad = tape.requires_grad(weights) || tape.requires_grad(rendered) ||
                        tape.requires_grad(background);
  return tape.push(std::move(node));
}

// ---------------------------------------------------------------------------
// Ray bundles on the tape

namespace {

template <typename Real>
ad::Matrix<Real> positions_from_edges(std::span<const Ray> rays, const std::vector<double>& edges,
                                      int n, const Aabb& box) {
  ad::Matrix<Real> pos(static_cast<Eigen::Index>(rays.size()) * n, 3);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const double* e = edges.data() + r * (n + 1);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d x = rays[r].origin + 0.5 * (e[i] + e[i + 1]) * rays[r].direction;
      const Eigen::Vector3d u = contract_to_unit_cube(x, box);
      for (int a = 0; a < 3; ++a) pos(static_cast<Eigen::Index>(r) * n + i, a) = u[a];
    }
  }
  return pos;
}

template <typename Real>
ad::Matrix<Real> deltas_from_edges(std::size_t R, const std::vector<double>& edges, int n) {
  ad::Matrix<Real> d(static_cast<Eigen::Index>(R), n);
  for (std::size_t r = 0; r < R; ++r) {
    const double* e = edges.data() + r * (n + 1);
    for (int i = 0; i < n; ++i) d(static_cast<Eigen::Index>(r), i) = static_cast<Real>(e[i + 1] - e[i]);
  }
  return d;
}

}  // namespace

template <typename Real>
RayGraph<Real> trace_rays(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                          ad::GradientBuffer<Real>* grads, std::span<const Ray> rays,
                          const std::vector<int>& appearance, const SamplerOptions& opts,
                          std::mt19937_64* rng, const RaySampling* fixed) {
  const std::size_t R = rays.size();
  if (R == 0) throw ConfigError("trace_rays needs at least one ray");
  if (!appearance.empty() && appearance.size() != R) {
    throw ConfigError("trace_rays: one appearance index per ray required");
  }
  for (int a : appearance) {
    if (a < 0 || a >= model.num_appearance()) {
      throw LookupError("appearance index " + std::to_string(a) + " outside the table");
    }
  }
  RayGraph<Real> g;
  const Aabb& box = model.scene_box();

  if (fixed != nullptr) {
    g.sampling.proposal_edges = fixed->proposal_edges;
    g.sampling.final_edges = fixed->final_edges;
    const auto np1 = g.sampling.proposal_edges.size() / R;
    const auto nf1 = g.sampling.final_edges.size() / R;
    if (np1 < 2 || nf1 < 2 || np1 * R != g.sampling.proposal_edges.size() ||
        nf1 * R != g.sampling.final_edges.size()) {
      throw ConfigError("trace_rays: fixed sampling does not match the ray count");
    }
    g.proposal_count = static_cast<int>(np1) - 1;
    g.final_count = static_cast<int>(nf1) - 1;
  } else {
    g.proposal_count = opts.proposal_samples;
    g.final_count = opts.final_samples;
    g.sampling.proposal_edges.reserve(R * (g.proposal_count + 1));
    for (const Ray& ray : rays) {
      const RaySamples s = sample_stratified(ray, g.proposal_count, rng);
      g.sampling.proposal_edges.insert(g.sampling.proposal_edges.end(), s.edges.begin(),
                                       s.edges.end());
    }
  }
  const int np = g.proposal_count;
  const int nf = g.final_count;

  ad::Var pos_p = tape.constant(positions_from_edges<Real>(rays, g.sampling.proposal_edges, np, box));
  ad::Var sigma_p = build_proposal_graph(model, tape, grads, pos_p);
  g.proposal_weights =
      composite_weights(tape, sigma_p, deltas_from_edges<Real>(R, g.sampling.proposal_edges, np));

  if (fixed == nullptr) {
    const auto& wp = tape.value(g.proposal_weights);
    g.sampling.final_edges.reserve(R * (nf + 1));
    std::vector<double> w(static_cast<std::size_t>(np));
    for (std::size_t r = 0; r < R; ++r) {
      RaySamples prop;
      prop.edges.assign(g.sampling.proposal_edges.begin() + r * (np + 1),
                        g.sampling.proposal_edges.begin() + (r + 1) * (np + 1));
      for (int i = 0; i < np; ++i) w[i] = wp(static_cast<Eigen::Index>(r) * np + i, 0);
      const RaySamples f = resample_proposal(rays[r], prop, w, nf, opts.eps_pdf, rng);
      g.sampling.final_edges.insert(g.sampling.final_edges.end(), f.edges.begin(), f.edges.end());
    }
  }

  ad::Var pos_f = tape.constant(positions_from_edges<Real>(rays, g.sampling.final_edges, nf, box));
  const ShConfig sh_cfg = model.sh_config();
  std::vector<Eigen::Vector3d> dirs(R);
  for (std::size_t r = 0; r < R; ++r) dirs[r] = rays[r].direction.normalized();
  const ad::Matrix<Real> sh_ray = sh_rows<Real>(dirs, sh_cfg);
  ad::Matrix<Real> sh(static_cast<Eigen::Index>(R) * nf, sh_ray.cols());
  std::vector<int> app;
  if (!appearance.empty()) app.reserve(R * nf);
  for (std::size_t r = 0; r < R; ++r) {
    for (int i = 0; i < nf; ++i) {
      sh.row(static_cast<Eigen::Index>(r) * nf + i) = sh_ray.row(static_cast<Eigen::Index>(r));
      if (!appearance.empty()) app.push_back(appearance[r]);
    }
  }
  ad::Var sh_var = tape.constant(std::move(sh));
  const FieldGraph fg = build_field_graph(model, tape, grads, pos_f, sh_var, app);
  g.weights = composite_weights(tape, fg.sigma, deltas_from_edges<Real>(R, g.sampling.final_edges, nf));
  if (fg.rgb.valid()) {
    ad::Var c = composite_values(tape, g.weights, fg.rgb, nf);
    g.rgb = blend_background(tape, g.weights, c, background_rgb_var(model, tape, grads), nf);
  }
  if (fg.t_unit.valid()) {
    ad::Var t = composite_values(tape, g.weights, fg.t_unit, nf);
    g.t_unit = blend_background(tape, g.weights, t, background_temp_var(model, tape, grads), nf);
  }
  return g;
}

// ---------------------------------------------------------------------------
// NeuralField

template <typename Real>
void NeuralField<Real>::proposal_density(std::span<const Eigen::Vector3d> x,
                                         std::span<double> sigma) const {
  if (x.empty()) return;
  ad::Tape<Real> tape;
  ad::Matrix<Real> pos(static_cast<Eigen::Index>(x.size()), 3);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Eigen::Vector3d u = contract_to_unit_cube(x[i], model_.scene_box());
    for (int a = 0; a < 3; ++a) pos(static_cast<Eigen::Index>(i), a) = static_cast<Real>(u[a]);
  }
  ad::Var s = build_proposal_graph<Real>(model_, tape, nullptr, tape.constant(std::move(pos)));
  const auto& v = tape.value(s);
  for (std::size_t i = 0; i < x.size(); ++i) sigma[i] = v(static_cast<Eigen::Index>(i), 0);
}

template <typename Real>
void NeuralField<Real>::evaluate(std::span<const Eigen::Vector3d> x,
                                 std::span<const Eigen::Vector3d> dirs, Samples& out) const {
  const std::size_t M = x.size();
  out.sigma.assign(M, 0.0);
  out.rgb.assign(has_rgb() ? 3 * M : 0, 0.0);
  out.t_unit.assign(has_thermal() ? M : 0, 0.0);
  if (M == 0) return;
  if (appearance_ && (*appearance_ < 0 || *appearance_ >= model_.num_appearance())) {
    throw LookupError("appearance index outside the table");
  }
  ad::Tape<Real> tape;
  ad::Matrix<Real> pos(static_cast<Eigen::Index>(M), 3);
  for (std::size_t i = 0; i < M; ++i) {
    const Eigen::Vector3d u = contract_to_unit_cube(x[i], model_.scene_box());
    for (int a = 0; a < 3; ++a) pos(static_cast<Eigen::Index>(i), a) = static_cast<Real>(u[a]);
  }
  std::vector<Eigen::Vector3d> d(dirs.begin(), dirs.end());
  for (auto& v : d) v.normalize();
  std::vector<int> app;
  if (appearance_) app.assign(M, *appearance_);
  const FieldGraph g = build_field_graph<Real>(model_, tape, nullptr, tape.constant(std::move(pos)),
                                         tape.constant(sh_rows<Real>(d, model_.sh_config())), app);
  const auto& s = tape.value(g.sigma);
  for (std::size_t i = 0; i < M; ++i) out.sigma[i] = s(static_cast<Eigen::Index>(i), 0);
  if (g.rgb.valid()) {
    const auto& c = tape.value(g.rgb);
    for (std::size_t i = 0; i < M; ++i) {
      for (int k = 0; k < 3; ++k) out.rgb[3 * i + k] = c(static_cast<Eigen::Index>(i), k);
    }
  }
  if (g.t_unit.valid()) {
    const auto& t = tape.value(g.t_unit);
    for (std::size_t i = 0; i < M; ++i) out.t_unit[i] = t(static_cast<Eigen::Index>(i), 0);
  }
}

// ---------------------------------------------------------------------------
// render_view

RenderedView render_view(const RadianceField& field, const Camera& cam,
                         const RenderOptions& opts) {
  cam.validate();
  if (opts.chunk_rays < 1) throw ConfigError("chunk_rays must be positive");
  const int W = cam.width;
  const int H = cam.height;
  const bool want_rgb = field.has_rgb();
  const bool want_t = field.has_thermal();
  const TemperatureBounds bounds = field.temperature_bounds();
  const auto bg_rgb = field.background_rgb();
  const double bg_t = field.background_t_unit();

  RenderedView view;
  if (want_rgb) view.rgb = Image<float>(W, H, 3);
  if (want_t) view.thermal = ThermalMap(W, H);
  view.depth = Image<float>(W, H, 1);
  view.accumulation = Image<float>(W, H, 1);

  const std::size_t pixels = static_cast<std::size_t>(W) * H;
  const std::size_t chunk = static_cast<std::size_t>(opts.chunk_rays);
  const std::size_t chunks = (pixels + chunk - 1) / chunk;
  const int np = opts.sampler.proposal_samples;
  const int nf = opts.sampler.final_samples;

  tbb::parallel_for(tbb::blocked_range<std::size_t>(0, chunks, 1), [&](const auto& range) {
    for (std::size_t ci = range.begin(); ci != range.end(); ++ci) {
      std::seed_seq seq{static_cast<std::uint64_t>(opts.seed), static_cast<std::uint64_t>(ci)};
      std::mt19937_64 chunk_rng(seq);
      std::mt19937_64* rng = opts.jitter ? &chunk_rng : nullptr;
      std::uniform_real_distribution<double> uni(0.0, 1.0);

      const std::size_t begin = ci * chunk;
      const std::size_t end = std::min(pixels, begin + chunk);
      struct Live {
        std::size_t pixel;
        Ray ray;
        RaySamples final;
      };
      std::vector<Live> live;
      live.reserve(end - begin);
      for (std::size_t p = begin; p < end; ++p) {
        const int px = static_cast<int>(p % W);
        const int py = static_cast<int>(p / W);
        const double ox = rng ? uni(*rng) : 0.5;
        const double oy = rng ? uni(*rng) : 0.5;
        const Ray ray = generate_ray(cam, px + ox, py + oy);
        const auto clipped = clip_to_box(ray, field.scene_box(), opts.sampler.near_plane);
        if (!clipped) {
          if (want_rgb) {
            for (int k = 0; k < 3; ++k) view.rgb.data[p * 3 + k] = static_cast<float>(bg_rgb[k]);
          }
          if (want_t) view.thermal[p] = static_cast<float>(bounds.denormalize(bg_t));
          continue;
        }
        live.push_back({p, *clipped, {}});
      }
      if (live.empty()) continue;

      // Proposal pass over every live ray at once.
      std::vector<RaySamples> props(live.size());
      std::vector<Eigen::Vector3d> xs;
      xs.reserve(live.size() * np);
      for (std::size_t r = 0; r < live.size(); ++r) {
        props[r] = sample_stratified(live[r].ray, np, rng);
        for (int i = 0; i < np; ++i) {
          xs.push_back(live[r].ray.origin + props[r].center(i) * live[r].ray.direction);
        }
      }
      std::vector<double> sig(xs.size());
      field.proposal_density(xs, sig);
      for (std::size_t r = 0; r < live.size(); ++r) {
        const auto s = std::span<const double>(sig).subspan(r * np, np);
        const CompositeResult c = composite(props[r], s, {}, {});
        live[r].final = resample_proposal(live[r].ray, props[r], c.weights, nf,
                                          opts.sampler.eps_pdf, rng);
      }

      xs.clear();
      std::vector<Eigen::Vector3d> ds;
      ds.reserve(live.size() * nf);
      for (const auto& l : live) {
        for (int i = 0; i < nf; ++i) {
          xs.push_back(l.ray.origin + l.final.center(i) * l.ray.direction);
          ds.push_back(l.ray.direction);
        }
      }
      RadianceField::Samples out;
      field.evaluate(xs, ds, out);

      for (std::size_t r = 0; r < live.size(); ++r) {
        const std::size_t p = live[r].pixel;
        const auto s = std::span<const double>(out.sigma).subspan(r * nf, nf);
        CompositeResult c;
        if (want_rgb) {
          c = composite(live[r].final, s, std::span<const double>(out.rgb).subspan(r * nf * 3, nf * 3),
                        bg_rgb);
          for (int k = 0; k < 3; ++k) view.rgb.data[p * 3 + k] = static_cast<float>(c.value[k]);
        }
        if (want_t) {
          const double bt[1] = {bg_t};
          c = composite(live[r].final, s, std::span<const double>(out.t_unit).subspan(r * nf, nf),
                        bt);
          view.thermal[p] = static_cast<float>(bounds.denormalize(c.value[0]));
        }
        view.depth.data[p] = static_cast<float>(c.accumulation > 0.0 ? c.depth : 0.0);
        view.accumulation.data[p] = static_cast<float>(c.accumulation);
      }
    }
  });
  return view;
}

#define THERMOFIELD_INSTANTIATE(Real)                                                          \
  template ad::Var composite_weights<Real>(ad::Tape<Real>&, ad::Var, const ad::Matrix<Real>&); \
  template ad::Var composite_values<Real>(ad::Tape<Real>&, ad::Var, ad::Var, int);             \
  template ad::Var blend_background<Real>(ad::Tape<Real>&, ad::Var, ad::Var, ad::Var, int);    \
  template RayGraph<Real> trace_rays<Real>(const FieldModel<Real>&, ad::Tape<Real>&,           \
                                           ad::GradientBuffer<Real>*, std::span<const Ray>,    \
                                           const std::vector<int>&, const SamplerOptions&,     \
                                           std::mt19937_64*, const RaySampling*);              \
  template class NeuralField<Real>;

THERMOFIELD_INSTANTIATE(float)
THERMOFIELD_INSTANTIATE(double)

#undef THERMOFIELD_INSTANTIATE

}  // namespace thermofield
