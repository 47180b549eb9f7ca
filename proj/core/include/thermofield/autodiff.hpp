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

// Reverse-mode differentiation over matrix-valued nodes, dense MLP kernels
// and the Adam optimiser.
//
// A Tape records nodes in creation order; each node owns its forward value
// and (after backward) its adjoint. Rows of a node are independent samples,
// so one MLP evaluation over a ray chunk is a handful of GEMMs. Parameters
// live outside the tape in a ParamSet; parameter nodes push their adjoint
// into a GradientBuffer when the backward sweep reaches them.

#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "thermofield/common.hpp"

namespace thermofield::ad {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle to a node on a Tape.
struct Var {
  static constexpr std::uint32_t kNone = 0xffffffffu;
  std::uint32_t index = kNone;
  bool valid() const { return index != kNone; }
};

// ---------------------------------------------------------------------------
// Parameters and gradients

template <typename Real>
struct ParamBlock {
  std::string name;   // e.g. "dens_mlp.0.weight"
  std::string group;  // e.g. "dens_mlp"; used in error messages
  int rows = 0;
  int cols = 0;
  bool sparse_grad = false;  // hash tables: only touched entries get gradients
  std::vector<Real> values;

  std::size_t size() const { return values.size(); }
};

template <typename Real>
class ParamSet {
 public:
  std::size_t add(std::string name, std::string group, int rows, int cols,
                  bool sparse_grad = false);

  ParamBlock<Real>& block(std::size_t i) { return blocks_.at(i); }
  const ParamBlock<Real>& block(std::size_t i) const { return blocks_.at(i); }
  std::size_t size() const { return blocks_.size(); }
  std::size_t parameter_count() const;
  /// Index of the named block; throws LookupError when absent.
  std::size_t find(const std::string& name) const;

  std::vector<ParamBlock<Real>>& blocks() { return blocks_; }
  const std::vector<ParamBlock<Real>>& blocks() const { return blocks_; }

 private:
  std::vector<ParamBlock<Real>> blocks_;
};

/// Gradient accumulator shaped like a ParamSet. In sparse mode, blocks with
/// `sparse_grad` collect (index, value) pairs that are later merged into a
/// dense buffer; this keeps per-chunk accumulators small for hash tables.
template <typename Real>
class GradientBuffer {
 public:
  GradientBuffer() = default;
  GradientBuffer(const ParamSet<Real>& params, bool sparse);

  bool is_sparse(std::size_t block) const { return sparse_[block]; }
  std::span<Real> dense(std::size_t block) { return dense_[block]; }
  std::span<const Real> dense(std::size_t block) const { return dense_[block]; }

  void add(std::size_t block, std::size_t index, Real value) {
    if (sparse_[block]) {
      entries_[block].emplace_back(static_cast<std::uint32_t>(index), value);
    } else {
      dense_[block][index] += value;
    }
  }

  void zero();
  /// Adds this buffer into `total`, which must be fully dense. Entries are
  /// applied in insertion order so merging is deterministic.
  void accumulate_into(GradientBuffer& total) const;
  std::size_t block_count() const { return dense_.size(); }

 private:
  std::vector<std::vector<Real>> dense_;
  std::vector<std::vector<std::pair<std::uint32_t, Real>>> entries_;
  std::vector<bool> sparse_;
};

// ---------------------------------------------------------------------------
// Tape

template <typename Real>
class Tape;

template <typename Real>
class Node {
 public:
  virtual ~Node() = default;
  /// Propagates `grad` of this node into the adjoints of its inputs.
  virtual void backward(Tape<Real>& tape) = 0;

  Matrix<Real> value;
  Matrix<Real> grad;  // empty until an adjoint arrives
  bool requires_grad = false;
};

template <typename Real>
class Tape {
 public:
  using Mat = Matrix<Real>;

  Var constant(Mat value);
  /// Leaf whose gradient is readable after backward().
  Var input(Mat value);
  /// View of a dense parameter block. With `grads == nullptr` the block is
  /// treated as a constant.
  Var parameter(const ParamSet<Real>& params, std::size_t block,
                GradientBuffer<Real>* grads);

  /// y = x * W^T + b with W stored out x in and b stored 1 x out.
  Var linear(Var x, Var weight, Var bias);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var softplus(Var x);
  Var concat_cols(std::span<const Var> parts);
  Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
  }
  Var slice_cols(Var x, int begin, int count);
  /// Row r of the result is row rows[r] of `table`.
  Var gather_rows(Var table, std::vector<int> rows);
  Var add(Var a, Var b);
  Var scale(Var x, Real factor);
  Var mul(Var a, Var b);  // elementwise
  /// 1 x 1 sum of all entries.
  Var sum(Var x);
  /// 1 x 1 sum of c_i * x_i over scalar nodes.
  Var weighted_sum(std::span<const std::pair<Var, Real>> terms);
  /// Copy of the value with no gradient path.
  Var detach(Var x);

  Var push(std::unique_ptr<Node<Real>> node);

  const Mat& value(Var v) const { return node(v).value; }
  Real scalar(Var v) const { return node(v).value(0, 0); }
  /// Adjoint after backward(); zeros when no gradient reached the node.
  Mat grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  /// Lazily zero-initialised adjoint accumulator of `v`.
  Mat& adjoint(Var v);

  /// Reverse sweep from a 1 x 1 node. Parameter adjoints are accumulated
  /// into the GradientBuffers bound at recording time.
  void backward(Var root, Real seed = Real(1));

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  Node<Real>& node(Var v);
  const Node<Real>& node(Var v) const;

 private:
  std::vector<std::unique_ptr<Node<Real>>> nodes_;
};

// ---------------------------------------------------------------------------
// MLPs

enum class Activation { None, Relu, Sigmoid };

struct MlpSpec {
  /// Input width, hidden widths..., output width.
  std::vector<int> layer_widths;
  Activation hidden_activation = Activation::Relu;
  Activation output_activation = Activation::None;

  void validate() const;
  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }
  int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
};

/// Indices of an MLP's blocks inside a ParamSet.
struct MlpBlocks {
  std::vector<std::size_t> weights;
  std::vector<std::size_t> biases;
};

template <typename Real>
MlpBlocks add_mlp(ParamSet<Real>& params, const std::string& name, const MlpSpec& spec);

/// Uniform fan-in (Kaiming) init, zero biases.
template <typename Real>
void init_mlp(ParamSet<Real>& params, const MlpBlocks& blocks, const MlpSpec& spec,
              std::mt19937_64& rng);

struct MlpTrace {
  Var output;
  std::vector<Var> hidden;  // post-activation outputs of each hidden layer
};

template <typename Real>
MlpTrace mlp_forward(const MlpSpec& spec, const ParamSet<Real>& params,
                     const MlpBlocks& blocks, Var input, Tape<Real>& tape,
                     GradientBuffer<Real>* grads);

// ---------------------------------------------------------------------------
// Adam with exponential learning-rate decay

struct LrSchedule {
  double base_lr = 1e-2;
  double final_lr = 1e-3;
  std::int64_t total_steps = 30000;

  /// base * (final / base)^(step / total).
  double at(std::int64_t step) const;
};

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
};

template <typename Real>
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;
  LrSchedule schedule;
  AdamConstants constants;

  static OptimizerState zeros(const ParamSet<Real>& params, LrSchedule schedule,
                              AdamConstants constants = {});
};

/// One bias-corrected Adam update at lr = schedule.at(step) * lr_scale.
/// Throws TrainingError naming the group when a gradient is non-finite; in
/// that case neither parameters nor state are modified.
template <typename Real>
void adam_step(OptimizerState<Real>& state, ParamSet<Real>& params,
               const GradientBuffer<Real>& grads, double lr_scale = 1.0);

}  // namespace thermofield::ad
