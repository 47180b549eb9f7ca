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

#include "thermofield/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace thermofield {

void LossWeights::validate() const {
  for (double v : {lambda_r, lambda_t, lambda_dist, lambda_interl}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (!(interlevel_eps > 0.0)) throw ConfigError("interlevel_eps must be positive");
}

double loss_rgb(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ConfigError("loss_rgb: size mismatch");
  if (pred.empty()) throw DomainError("loss_rgb: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    acc += e * e;
  }
  return acc / static_cast<double>(pred.size());
}

double loss_thermal(std::span<const double> pred, std::span<const double> target,
                    std::span<const std::uint8_t> mask) {
  if (pred.size() != target.size()) throw ConfigError("loss_thermal: size mismatch");
  if (!mask.empty() && mask.size() != pred.size()) throw ConfigError("loss_thermal: mask size");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    const double e = pred[i] - target[i];
    acc += e * e;
    ++count;
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(count);
}

namespace {

// Sum over all pairs plus the within-interval term, prefix-sum form. Also
// fills d/dw when `grad` is non-null.
template <typename Real>
Real distortion_one(const Real* w, const Real* s, int n, Real* grad) {
  Real w_before = 0, m_before = 0;
  Real w_total = 0, m_total = 0;
  for (int i = 0; i < n; ++i) {
    const Real m = Real(0.5) * (s[i] + s[i + 1]);
    w_total += w[i];
    m_total += w[i] * m;
  }
  Real pair = 0, uni = 0;
  for (int i = 0; i < n; ++i) {
    const Real m = Real(0.5) * (s[i] + s[i + 1]);
    const Real ds = s[i + 1] - s[i];
    pair += Real(2) * w[i] * (m * w_before - m_before);
    uni += w[i] * w[i] * ds;
    if (grad != nullptr) {
      const Real w_after = w_total - w_before - w[i];
      const Real m_after = m_total - m_before - w[i] * m;
      grad[i] = Real(2) * (m * w_before - m_before + m_after - m * w_after) +
                Real(2) / Real(3) * w[i] * ds;
    }
    w_before += w[i];
    m_before += w[i] * m;
  }
  return pair + uni / Real(3);
}

}  // namespace

double loss_distortion(std::span<const double> weights, std::span<const double> s_edges) {
  if (s_edges.size() != weights.size() + 1) {
    throw ConfigError("loss_distortion: need one more edge than weights");
  }
  return distortion_one<double>(weights.data(), s_edges.data(), static_cast<int>(weights.size()),
                                nullptr);
}

std::vector<double> resample_weights_to_bins(std::span<const double> src_edges,
                                             std::span<const double> src_weights,
                                             std::span<const double> dst_edges) {
  if (src_edges.size() != src_weights.size() + 1 || dst_edges.size() < 2) {
    throw ConfigError("resample_weights_to_bins: malformed edges");
  }
  std::vector<double> out(dst_edges.size() - 1, 0.0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < src_weights.size(); ++i) {
    const double a = src_edges[i];
    const double b = src_edges[i + 1];
    const double width = b - a;
    if (!(width > 0.0)) continue;
    while (j + 1 < dst_edges.size() && dst_edges[j + 1] <= a) ++j;
    for (std::size_t k = j; k + 1 < dst_edges.size() && dst_edges[k] < b; ++k) {
      const double overlap = std::min(b, dst_edges[k + 1]) - std::max(a, dst_edges[k]);
      if (overlap > 0.0) out[k] += src_weights[i] * overlap / width;
    }
  }
  return out;
}

double loss_interlevel(std::span<const double> final_hist, std::span<const double> prop_hist,
                       double eps) {
  if (final_hist.size() != prop_hist.size()) {
    throw ConfigError("loss_interlevel: histograms use different bins");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < final_hist.size(); ++i) {
    const double e = std::max(0.0, final_hist[i] - prop_hist[i]);
    acc += e * e / (prop_hist[i] + eps);
  }
  return acc;
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  const std::pair<const char*, double> terms[] = {{"rgb", parts.rgb},
                                                  {"thermal", parts.thermal},
                                                  {"distortion", parts.distortion},
                                                  {"interlevel", parts.interlevel}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw TrainingError(std::string("loss term '") + name + "' is not finite", name);
    }
  }
  return weights.lambda_r * parts.rgb + weights.lambda_t * parts.thermal + parts.distortion +
         parts.interlevel;
}

// ---------------------------------------------------------------------------
// Tape nodes

namespace {

template <typename Real>
struct MseNode final : ad::Node<Real> {
  ad::Var pred;
  ad::Matrix<Real> diff;  // masked rows zeroed
  Real norm = 0;

  void backward(ad::Tape<Real>& tape) override {
    tape.adjoint(pred) += (Real(2) * this->grad(0, 0) / norm) * diff;
  }
};

template <typename Real>
struct DistortionNode final : ad::Node<Real> {
  ad::Var weights;
  ad::Matrix<Real> dldw;  // (R*n) x 1, already divided by R

  void backward(ad::Tape<Real>& tape) override {
    tape.adjoint(weights) += this->grad(0, 0) * dldw;
  }
};

template <typename Real>
struct InterlevelNode final : ad::Node<Real> {
  ad::Var prop;
  ad::Matrix<Real> dldp;

  void backward(ad::Tape<Real>& tape) override { tape.adjoint(prop) += this->grad(0, 0) * dldp; }
};

}  // namespace

template <typename Real>
ad::Var mse_loss(ad::Tape<Real>& tape, ad::Var pred, const ad::Matrix<Real>& target,
                 const std::vector<std::uint8_t>& mask) {
  const auto& p = tape.value(pred);
  if (p.rows() != target.rows() || p.cols() != target.cols()) {
    throw ConfigError("mse_loss: shape mismatch");
  }
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != p.rows()) {
    throw ConfigError("mse_loss: one mask entry per row required");
  }
  if (p.size() == 0) throw DomainError("mse_loss: empty batch");
  auto node = std::make_unique<MseNode<Real>>();
  node->pred = pred;
  node->diff = p - target;
  Eigen::Index rows = p.rows();
  if (!mask.empty()) {
    rows = 0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      if (mask[r] == 0) {
        node->diff.row(r).setZero();
      } else {
        ++rows;
      }
    }
  }
  node->value.resize(1, 1);
  if (rows == 0) {
    node->value(0, 0) = 0;
    return tape.push(std::move(node));
  }
  node->norm = static_cast<Real>(rows * p.cols());
  node->value(0, 0) = node->diff.squaredNorm() / node->norm;
  node->requires_grad = tape.requires_grad(pred);
  return tape.push(std::move(node));
}

template <typename Real>
ad::Var distortion_loss(ad::Tape<Real>& tape, ad::Var weights, const ad::Matrix<Real>& s_edges) {
  const auto& w = tape.value(weights);
  const auto R = s_edges.rows();
  const auto n = s_edges.cols() - 1;
  if (R < 1 || n < 1 || w.cols() != 1 || w.rows() != R * n) {
    throw ConfigError("distortion_loss: shape mismatch");
  }
  auto node = std::make_unique<DistortionNode<Real>>();
  node->weights = weights;
  node->dldw.resize(R * n, 1);
  Real total = 0;
  for (Eigen::Index r = 0; r < R; ++r) {
    total += distortion_one<Real>(w.data() + r * n, s_edges.data() + r * (n + 1),
                                  static_cast<int>(n), node->dldw.data() + r * n);
  }
  node->dldw /= static_cast<Real>(R);
  node->value.resize(1, 1);
  node->value(0, 0) = total / static_cast<Real>(R);
  node->requires_grad = tape.requires_grad(weights);
  return tape.push(std::move(node));
}

template <typename Real>
ad::Var interlevel_loss(ad::Tape<Real>& tape, ad::Var proposal_weights,
                        const ad::Matrix<Real>& final_hist, int np, double eps) {
  const auto& p = tape.value(proposal_weights);
  if (np < 1 || p.rows() != final_hist.rows() || p.cols() != 1 || final_hist.cols() != 1 ||
      p.rows() % np != 0 || p.rows() == 0) {
    throw ConfigError("interlevel_loss: histograms use different bins");
  }
  const auto R = p.rows() / np;
  auto node = std::make_unique<InterlevelNode<Real>>();
  node->prop = proposal_weights;
  node->dldp = ad::Matrix<Real>::Zero(p.rows(), 1);
  const Real e0 = static_cast<Real>(eps);
  Real total = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const Real e = final_hist(i, 0) - p(i, 0);
    if (e <= Real(0)) continue;
    const Real den = p(i, 0) + e0;
    total += e * e / den;
    node->dldp(i, 0) = (-Real(2) * e * den - e * e) / (den * den) / static_cast<Real>(R);
  }
  node->value.resize(1, 1);
  node->value(0, 0) = total / static_cast<Real>(R);
  node->requires_grad = tape.requires_grad(proposal_weights);
  return tape.push(std::move(node));
}

template <typename Real>
LossGraph<Real> build_loss_graph(ad::Tape<Real>& tape, std::span<const Ray> rays,
                                 const RayGraph<Real>& graph, const RayTargets<Real>& targets,
                                 const LossWeights& weights) {
  weights.validate();
  const auto R = static_cast<Eigen::Index>(rays.size());
  const int np = graph.proposal_count;
  const int nf = graph.final_count;
  const auto& pe = graph.sampling.proposal_edges;
  const auto& fe = graph.sampling.final_edges;
  if (R == 0 || pe.size() != static_cast<std::size_t>(R) * (np + 1) ||
      fe.size() != static_cast<std::size_t>(R) * (nf + 1)) {
    throw ConfigError("build_loss_graph: ray graph does not match the rays");
  }

  LossGraph<Real> out;
  std::vector<std::pair<ad::Var, Real>> terms;

  if (graph.rgb.valid()) {
    out.rgb = mse_loss(tape, graph.rgb, targets.rgb);
    out.parts.rgb = tape.scalar(out.rgb);
    if (weights.lambda_r > 0.0) terms.emplace_back(out.rgb, static_cast<Real>(weights.lambda_r));
  }
  if (graph.t_unit.valid()) {
    out.thermal = mse_loss(tape, graph.t_unit, targets.t_unit, targets.t_valid);
    out.parts.thermal = tape.scalar(out.thermal);
    out.thermal_skipped =
        !targets.t_valid.empty() &&
        std::none_of(targets.t_valid.begin(), targets.t_valid.end(), [](auto v) { return v != 0; });
    if (weights.lambda_t > 0.0 && !out.thermal_skipped) {
      terms.emplace_back(out.thermal, static_cast<Real>(weights.lambda_t));
    }
  }

  ad::Matrix<Real> s_edges(R, nf + 1);
  for (Eigen::Index r = 0; r < R; ++r) {
    for (int i = 0; i <= nf; ++i) {
      s_edges(r, i) = static_cast<Real>(
          distance_to_spacing(rays[r], fe[static_cast<std::size_t>(r) * (nf + 1) + i]));
    }
  }
  out.distortion = distortion_loss(tape, graph.weights, s_edges);
  out.parts.distortion = weights.lambda_dist * tape.scalar(out.distortion);
  if (weights.lambda_dist > 0.0) {
    terms.emplace_back(out.distortion, static_cast<Real>(weights.lambda_dist));
  }

  // Final weights are re-binned as plain numbers, so no gradient reaches them.
  const auto& wf = tape.value(graph.weights);
  ad::Matrix<Real> hist(R * np, 1);
  std::vector<double> w(static_cast<std::size_t>(nf));
  for (Eigen::Index r = 0; r < R; ++r) {
    for (int i = 0; i < nf; ++i) w[i] = wf(r * nf + i, 0);
    const auto h = resample_weights_to_bins(
        std::span<const double>(fe).subspan(static_cast<std::size_t>(r) * (nf + 1), nf + 1), w,
        std::span<const double>(pe).subspan(static_cast<std::size_t>(r) * (np + 1), np + 1));
    for (int i = 0; i < np; ++i) hist(r * np + i, 0) = static_cast<Real>(h[i]);
  }
  out.interlevel = interlevel_loss(tape, graph.proposal_weights, hist, np, weights.interlevel_eps);
  out.parts.interlevel = weights.lambda_interl * tape.scalar(out.interlevel);
  if (weights.lambda_interl > 0.0) {
    terms.emplace_back(out.interlevel, static_cast<Real>(weights.lambda_interl));
  }

  total_loss(out.parts, weights);  // throws on a non-finite term
  out.total = tape.weighted_sum(terms);
  return out;
}

#define THERMOFIELD_INSTANTIATE(Real)                                                          \
  template ad::Var mse_loss<Real>(ad::Tape<Real>&, ad::Var, const ad::Matrix<Real>&,           \
                                  const std::vector<std::uint8_t>&);                           \
  template ad::Var distortion_loss<Real>(ad::Tape<Real>&, ad::Var, const ad::Matrix<Real>&);   \
  template ad::Var interlevel_loss<Real>(ad::Tape<Real>&, ad::Var, const ad::Matrix<Real>&,    \
                                         int, double);                                         \
  template LossGraph<Real> build_loss_graph<Real>(ad::Tape<Real>&, std::span<const Ray>,       \
                                                  const RayGraph<Real>&,                       \
                                                  const RayTargets<Real>&, const LossWeights&);

THERMOFIELD_INSTANTIATE(float)
THERMOFIELD_INSTANTIATE(double)

#undef THERMOFIELD_INSTANTIATE

}  // namespace thermofield
