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

#include "thermofield/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace thermofield::ad {

// ---------------------------------------------------------------------------
// ParamSet / GradientBuffer

template <typename Real>
std::size_t ParamSet<Real>::add(std::string name, std::string group, int rows, int cols,
                                bool sparse_grad) {
  if (rows < 1 || cols < 1) throw ConfigError("parameter block '" + name + "' is empty");
  ParamBlock<Real> b;
  b.name = std::move(name);
  b.group = std::move(group);
  b.rows = rows;
  b.cols = cols;
  b.sparse_grad = sparse_grad;
  b.values.assign(static_cast<std::size_t>(rows) * cols, Real(0));
  blocks_.push_back(std::move(b));
  return blocks_.size() - 1;
}

template <typename Real>
std::size_t ParamSet<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.size();
  return n;
}

template <typename Real>
std::size_t ParamSet<Real>::find(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return i;
  }
  throw LookupError("no parameter block named '" + name + "'");
}

template <typename Real>
GradientBuffer<Real>::GradientBuffer(const ParamSet<Real>& params, bool sparse) {
  const std::size_t n = params.size();
  dense_.resize(n);
  entries_.resize(n);
  sparse_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = params.block(i);
    sparse_[i] = sparse && b.sparse_grad;
    if (!sparse_[i]) dense_[i].assign(b.size(), Real(0));
  }
}

template <typename Real>
void GradientBuffer<Real>::zero() {
  for (auto& d : dense_) std::fill(d.begin(), d.end(), Real(0));
  for (auto& e : entries_) e.clear();
}

template <typename Real>
void GradientBuffer<Real>::accumulate_into(GradientBuffer& total) const {
  if (total.dense_.size() != dense_.size()) {
    throw ConfigError("gradient buffers describe different parameter sets");
  }
  for (std::size_t b = 0; b < dense_.size(); ++b) {
    if (total.sparse_[b]) throw ConfigError("accumulation target must be dense");
    auto& dst = total.dense_[b];
    if (sparse_[b]) {
      for (const auto& [idx, v] : entries_[b]) dst[idx] += v;
    } else {
      const auto& src = dense_[b];
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Nodes

namespace {

template <typename Real>
using Mat = Matrix<Real>;

template <typename Real>
struct LeafNode final : Node<Real> {
  void backward(Tape<Real>&) override {}
};

template <typename Real>
struct ParamNode final : Node<Real> {
  GradientBuffer<Real>* sink = nullptr;
  std::size_t block = 0;
  void backward(Tape<Real>&) override {
    auto dst = sink->dense(block);
    const Real* g = this->grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
};

template <typename Real>
struct LinearNode final : Node<Real> {
  Var x, w, b;
  void backward(Tape<Real>& tape) override {
    const Mat<Real>& g = this->grad;
    if (tape.requires_grad(x)) tape.adjoint(x).noalias() += g * tape.value(w);
    if (tape.requires_grad(w)) tape.adjoint(w).noalias() += g.transpose() * tape.value(x);
    if (tape.requires_grad(b)) tape.adjoint(b) += g.colwise().sum();
  }
};

template <typename Real>
struct ReluNode final : Node<Real> {
  Var x;
  void backward(Tape<Real>& tape) override {
    tape.adjoint(x).array() +=
        (this->value.array() > Real(0)).select(this->grad.array(), Real(0));
  }
};

template <typename Real>
struct SigmoidNode final : Node<Real> {
  Var x;
  void backward(Tape<Real>& tape) override {
    const auto& y = this->value.array();
    tape.adjoint(x).array() += this->grad.array() * y * (Real(1) - y);
  }
};

template <typename Real>
Real softplus_scalar(Real v) {
  return v > Real(20) ? v : std::log1p(std::exp(v));
}

template <typename Real>
struct SoftplusNode final : Node<Real> {
  Var x;
  void backward(Tape<Real>& tape) override {
    const auto& in = tape.value(x).array();
    tape.adjoint(x).array() +=
        this->grad.array() * (Real(1) / (Real(1) + (-in).exp()));
  }
};

template <typename Real>
struct ConcatNode final : Node<Real> {
  std::vector<Var> parts;
  void backward(Tape<Real>& tape) override {
    int col = 0;
    for (Var p : parts) {
      const auto cols = static_cast<int>(tape.value(p).cols());
      if (tape.requires_grad(p)) tape.adjoint(p) += this->grad.middleCols(col, cols);
      col += cols;
    }
  }
};

template <typename Real>
struct SliceNode final : Node<Real> {
  Var x;
  int begin = 0;
  void backward(Tape<Real>& tape) override {
    tape.adjoint(x).middleCols(begin, this->grad.cols()) += this->grad;
  }
};

template <typename Real>
struct GatherNode final : Node<Real> {
  Var table;
  std::vector<int> rows;
  void backward(Tape<Real>& tape) override {
    auto& dst = tape.adjoint(table);
    for (std::size_t r = 0; r < rows.size(); ++r) dst.row(rows[r]) += this->grad.row(r);
  }
};

template <typename Real>
struct AddNode final : Node<Real> {
  Var a, b;
  void backward(Tape<Real>& tape) override {
    if (tape.requires_grad(a)) tape.adjoint(a) += this->grad;
    if (tape.requires_grad(b)) tape.adjoint(b) += this->grad;
  }
};

template <typename Real>
struct ScaleNode final : Node<Real> {
  Var x;
  Real factor = 1;
  void backward(Tape<Real>& tape) override { tape.adjoint(x) += factor * this->grad; }
};

template <typename Real>
struct MulNode final : Node<Real> {
  Var a, b;
  void backward(Tape<Real>& tape) override {
    if (tape.requires_grad(a))
      tape.adjoint(a).array() += this->grad.array() * tape.value(b).array();
    if (tape.requires_grad(b))
      tape.adjoint(b).array() += this->grad.array() * tape.value(a).array();
  }
};

template <typename Real>
struct SumNode final : Node<Real> {
  Var x;
  void backward(Tape<Real>& tape) override {
    tape.adjoint(x).array() += this->grad(0, 0);
  }
};

template <typename Real>
struct WeightedSumNode final : Node<Real> {
  std::vector<std::pair<Var, Real>> terms;
  void backward(Tape<Real>& tape) override {
    for (const auto& [v, c] : terms) {
      if (tape.requires_grad(v)) tape.adjoint(v)(0, 0) += c * this->grad(0, 0);
    }
  }
};

void check_same_shape(Eigen::Index r0, Eigen::Index c0, Eigen::Index r1, Eigen::Index c1,
                      const char* op) {
  if (r0 != r1 || c0 != c1) throw ConfigError(std::string(op) + ": shape mismatch");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename Real>
Node<Real>& Tape<Real>::node(Var v) {
  if (!v.valid() || v.index >= nodes_.size()) throw StateError("invalid tape variable");
  return *nodes_[v.index];
}

template <typename Real>
const Node<Real>& Tape<Real>::node(Var v) const {
  if (!v.valid() || v.index >= nodes_.size()) throw StateError("invalid tape variable");
  return *nodes_[v.index];
}

template <typename Real>
Var Tape<Real>::push(std::unique_ptr<Node<Real>> n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename Real>
Var Tape<Real>::constant(Mat value) {
  auto n = std::make_unique<LeafNode<Real>>();
  n->value = std::move(value);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::input(Mat value) {
  auto n = std::make_unique<LeafNode<Real>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::parameter(const ParamSet<Real>& params, std::size_t block,
                          GradientBuffer<Real>* grads) {
  const auto& b = params.block(block);
  auto n = std::make_unique<ParamNode<Real>>();
  n->value = Eigen::Map<const Mat>(b.values.data(), b.rows, b.cols);
  if (grads != nullptr) {
    if (grads->is_sparse(block)) {
      throw ConfigError("block '" + b.name + "' needs a dense gradient buffer");
    }
    n->sink = grads;
    n->block = block;
    n->requires_grad = true;
  }
  if (!n->requires_grad) {
    auto leaf = std::make_unique<LeafNode<Real>>();
    leaf->value = std::move(n->value);
    return push(std::move(leaf));
  }
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::linear(Var x, Var weight, Var bias) {
  const Mat& xv = value(x);
  const Mat& wv = value(weight);
  const Mat& bv = value(bias);
  if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows()) {
    throw ConfigError("linear: input has " + std::to_string(xv.cols()) +
                      " columns, weight expects " + std::to_string(wv.cols()));
  }
  auto n = std::make_unique<LinearNode<Real>>();
  n->x = x;
  n->w = weight;
  n->b = bias;
  n->value.noalias() = xv * wv.transpose();
  n->value.rowwise() += bv.row(0);
  n->requires_grad = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::relu(Var x) {
  auto n = std::make_unique<ReluNode<Real>>();
  n->x = x;
  n->value = value(x).cwiseMax(Real(0));
  n->requires_grad = requires_grad(x);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::sigmoid(Var x) {
  auto n = std::make_unique<SigmoidNode<Real>>();
  n->x = x;
  n->value = (Real(1) / (Real(1) + (-value(x).array()).exp())).matrix();
  n->requires_grad = requires_grad(x);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::softplus(Var x) {
  auto n = std::make_unique<SoftplusNode<Real>>();
  n->x = x;
  n->value = value(x).unaryExpr([](Real v) { return softplus_scalar(v); });
  n->requires_grad = requires_grad(x);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const auto rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ConfigError("concat_cols: row count mismatch");
    cols += value(p).cols();
    rg = rg || requires_grad(p);
  }
  auto n = std::make_unique<ConcatNode<Real>>();
  n->parts.assign(parts.begin(), parts.end());
  n->value.resize(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    n->value.middleCols(c, value(p).cols()) = value(p);
    c += value(p).cols();
  }
  n->requires_grad = rg;
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::slice_cols(Var x, int begin, int count) {
  const Mat& xv = value(x);
  if (begin < 0 || count < 1 || begin + count > xv.cols()) {
    throw ConfigError("slice_cols: range out of bounds");
  }
  auto n = std::make_unique<SliceNode<Real>>();
  n->x = x;
  n->begin = begin;
  n->value = xv.middleCols(begin, count);
  n->requires_grad = requires_grad(x);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::gather_rows(Var table, std::vector<int> rows) {
  const Mat& t = value(table);
  auto n = std::make_unique<GatherNode<Real>>();
  n->value.resize(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= t.rows()) {
      throw LookupError("gather_rows: row " + std::to_string(rows[r]) + " outside table of " +
                        std::to_string(t.rows()));
    }
    n->value.row(static_cast<Eigen::Index>(r)) = t.row(rows[r]);
  }
  n->table = table;
  n->rows = std::move(rows);
  n->requires_grad = requires_grad(table);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::add(Var a, Var b) {
  check_same_shape(value(a).rows(), value(a).cols(), value(b).rows(), value(b).cols(), "add");
  auto n = std::make_unique<AddNode<Real>>();
  n->a = a;
  n->b = b;
  n->value = value(a) + value(b);
  n->requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::scale(Var x, Real factor) {
  auto n = std::make_unique<ScaleNode<Real>>();
  n->x = x;
  n->factor = factor;
  n->value = factor * value(x);
  n->requires_grad = requires_grad(x);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::mul(Var a, Var b) {
  check_same_shape(value(a).rows(), value(a).cols(), value(b).rows(), value(b).cols(), "mul");
  auto n = std::make_unique<MulNode<Real>>();
  n->a = a;
  n->b = b;
  n->value = value(a).cwiseProduct(value(b));
  n->requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::sum(Var x) {
  auto n = std::make_unique<SumNode<Real>>();
  n->x = x;
  n->value = Mat::Constant(1, 1, value(x).sum());
  n->requires_grad = requires_grad(x);
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::weighted_sum(std::span<const std::pair<Var, Real>> terms) {
  auto n = std::make_unique<WeightedSumNode<Real>>();
  Real total = 0;
  bool rg = false;
  for (const auto& [v, c] : terms) {
    if (value(v).size() != 1) throw ConfigError("weighted_sum: terms must be scalars");
    total += c * value(v)(0, 0);
    rg = rg || requires_grad(v);
  }
  n->terms.assign(terms.begin(), terms.end());
  n->value = Mat::Constant(1, 1, total);
  n->requires_grad = rg;
  return push(std::move(n));
}

template <typename Real>
Var Tape<Real>::detach(Var x) {
  return constant(value(x));
}

template <typename Real>
typename Tape<Real>::Mat Tape<Real>::grad(Var v) const {
  const auto& n = node(v);
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename Real>
typename Tape<Real>::Mat& Tape<Real>::adjoint(Var v) {
  auto& n = node(v);
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename Real>
void Tape<Real>::backward(Var root, Real seed) {
  if (nodes_.empty() || !root.valid() || root.index >= nodes_.size()) {
    throw StateError("backward called before a forward pass was recorded");
  }
  if (node(root).value.size() != 1) throw ConfigError("backward root must be a scalar");
  for (auto& n : nodes_) n->grad.resize(0, 0);
  if (!node(root).requires_grad) return;
  adjoint(root)(0, 0) = seed;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    Node<Real>& n = *nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    n.backward(*this);
  }
}

// ---------------------------------------------------------------------------
// MLPs

void MlpSpec::validate() const {
  if (layer_widths.size() < 3) {
    throw ConfigError("MLP needs an input, at least one hidden layer and an output");
  }
  for (int w : layer_widths) {
    if (w < 1) throw ConfigError("MLP layer widths must be positive");
  }
}

template <typename Real>
MlpBlocks add_mlp(ParamSet<Real>& params, const std::string& name, const MlpSpec& spec) {
  spec.validate();
  MlpBlocks blocks;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];
    const std::string prefix = name + "." + std::to_string(l);
    blocks.weights.push_back(params.add(prefix + ".weight", name, out, in));
    blocks.biases.push_back(params.add(prefix + ".bias", name, 1, out));
  }
  return blocks;
}

template <typename Real>
void init_mlp(ParamSet<Real>& params, const MlpBlocks& blocks, const MlpSpec& spec,
              std::mt19937_64& rng) {
  for (int l = 0; l < spec.num_layers(); ++l) {
    auto& w = params.block(blocks.weights[l]);
    const double bound = std::sqrt(6.0 / spec.layer_widths[l]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.values) v = static_cast<Real>(dist(rng));
    auto& b = params.block(blocks.biases[l]);
    std::fill(b.values.begin(), b.values.end(), Real(0));
  }
}

template <typename Real>
MlpTrace mlp_forward(const MlpSpec& spec, const ParamSet<Real>& params,
                     const MlpBlocks& blocks, Var input, Tape<Real>& tape,
                     GradientBuffer<Real>* grads) {
  spec.validate();
  if (static_cast<int>(blocks.weights.size()) != spec.num_layers() ||
      static_cast<int>(blocks.biases.size()) != spec.num_layers()) {
    throw ConfigError("MLP parameter blocks do not match the spec");
  }
  if (tape.value(input).cols() != spec.input_dim()) {
    throw ConfigError("MLP expects input width " + std::to_string(spec.input_dim()) +
                      ", got " + std::to_string(tape.value(input).cols()));
  }
  for (int l = 0; l < spec.num_layers(); ++l) {
    const auto& w = params.block(blocks.weights[l]);
    if (w.rows != spec.layer_widths[l + 1] || w.cols != spec.layer_widths[l]) {
      throw ConfigError("MLP weight block '" + w.name + "' has the wrong shape");
    }
  }
  MlpTrace trace;
  Var h = input;
  for (int l = 0; l < spec.num_layers(); ++l) {
    Var w = tape.parameter(params, blocks.weights[l], grads);
    Var b = tape.parameter(params, blocks.biases[l], grads);
    h = tape.linear(h, w, b);
    const bool last = l + 1 == spec.num_layers();
    const Activation act = last ? spec.output_activation : spec.hidden_activation;
    if (act == Activation::Relu) h = tape.relu(h);
    if (act == Activation::Sigmoid) h = tape.sigmoid(h);
    if (!last) trace.hidden.push_back(h);
  }
  trace.output = h;
  return trace;
}

// ---------------------------------------------------------------------------
// Adam

double LrSchedule::at(std::int64_t step) const {
  if (total_steps <= 0) return base_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * std::pow(final_lr / base_lr, frac);
}

template <typename Real>
OptimizerState<Real> OptimizerState<Real>::zeros(const ParamSet<Real>& params,
                                                 LrSchedule schedule,
                                                 AdamConstants constants) {
  OptimizerState s;
  s.schedule = schedule;
  s.constants = constants;
  for (const auto& b : params.blocks()) {
    s.first_moment.emplace_back(b.size(), Real(0));
    s.second_moment.emplace_back(b.size(), Real(0));
  }
  return s;
}

template <typename Real>
void adam_step(OptimizerState<Real>& state, ParamSet<Real>& params,
               const GradientBuffer<Real>& grads, double lr_scale) {
  if (state.first_moment.size() != params.size() || grads.block_count() != params.size()) {
    throw ConfigError("optimizer state, parameters and gradients disagree in shape");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (grads.is_sparse(b)) throw ConfigError("adam_step needs dense gradients");
    const auto g = grads.dense(b);
    if (g.size() != params.block(b).size() || state.first_moment[b].size() != g.size()) {
      throw ConfigError("shape mismatch in block '" + params.block(b).name + "'");
    }
    for (Real v : g) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw TrainingError("non-finite gradient in parameter group '" +
                                params.block(b).group + "'",
                            params.block(b).group);
      }
    }
  }

  const auto& c = state.constants;
  const double t = static_cast<double>(state.step + 1);
  const double lr = state.schedule.at(state.step) * lr_scale;
  const Real b1 = static_cast<Real>(c.beta1);
  const Real b2 = static_cast<Real>(c.beta2);
  const Real corr1 = static_cast<Real>(1.0 - std::pow(c.beta1, t));
  const Real corr2 = static_cast<Real>(1.0 - std::pow(c.beta2, t));
  const Real step_size = static_cast<Real>(lr);
  const Real eps = static_cast<Real>(c.epsilon);

  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& p = params.block(b).values;
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    const auto g = grads.dense(b);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
      const Real mhat = m[i] / corr1;
      const Real vhat = v[i] / corr2;
      p[i] -= step_size * mhat / (std::sqrt(vhat) + eps);
    }
  }
  ++state.step;
}

// ---------------------------------------------------------------------------

#define THERMOFIELD_INSTANTIATE(Real)                                                    \
  template class ParamSet<Real>;                                                        \
  template class GradientBuffer<Real>;                                                  \
  template class Tape<Real>;                                                            \
  template MlpBlocks add_mlp<Real>(ParamSet<Real>&, const std::string&, const MlpSpec&); \
  template void init_mlp<Real>(ParamSet<Real>&, const MlpBlocks&, const MlpSpec&,      \
                               std::mt19937_64&);                                        \
  template MlpTrace mlp_forward<Real>(const MlpSpec&, const ParamSet<Real>&,            \
                                      const MlpBlocks&, Var, Tape<Real>&,               \
                                      GradientBuffer<Real>*);                            \
  template struct OptimizerState<Real>;                                                 \
  template void adam_step<Real>(OptimizerState<Real>&, ParamSet<Real>&,                 \
                                const GradientBuffer<Real>&, double);

THERMOFIELD_INSTANTIATE(float)
THERMOFIELD_INSTANTIATE(double)

#undef THERMOFIELD_INSTANTIATE

}  // namespace thermofield::ad
