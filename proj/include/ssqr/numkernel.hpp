// Copyright 2026 The SSQR Authors.
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

#ifndef SSQR_NUMKERNEL_HPP
#define SSQR_NUMKERNEL_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssqr/rng.hpp"

namespace ssqr::nk {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient of the same
// length. The gradient is allocated on first accumulation.
class NdBuffer {
 public:
  NdBuffer() = default;
  explicit NdBuffer(Shape shape, double fill = 0.0);
  NdBuffer(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  // Allocates a zeroed gradient if none exists yet.
  std::span<double> grad();
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad();
  void clear_grad() noexcept { grad_.clear(); }

  // Views the same values under a different shape with the same element count.
  void reshape(Shape shape);

  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

using Tensor = std::shared_ptr<NdBuffer>;

Tensor make_tensor(Shape shape, std::vector<double> values);
Tensor zeros(Shape shape);
Tensor parameter(Shape shape, std::vector<double> values);
Tensor scalar(double value);

// Ordered log of backward rules. Every op that produces a gradient-carrying
// output appends one rule; backward() replays them in reverse.
//
// Stop-gradient outputs can be captured and later replayed as constants. A
// replayed tape evaluates the same expression with every sg() term pinned to
// its captured value, which is the smooth surrogate whose derivative the
// analytic gradient reports.
class Tape {
 public:
  enum class SgMode { kPassThrough, kCapture, kReplay };

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return rules_.size(); }

  void record(std::function<void()> rule);

  // loss must have shape [1]. Seeds d(loss)/d(loss) = 1 and runs every rule
  // once in reverse order. The tape is empty afterwards.
  void backward(const Tensor& loss);

  void set_sg_mode(SgMode mode) noexcept { sg_mode_ = mode; sg_cursor_ = 0; }
  SgMode sg_mode() const noexcept { return sg_mode_; }
  std::vector<NdBuffer>& sg_values() noexcept { return sg_values_; }
  void set_sg_values(std::vector<NdBuffer> values) {
    sg_values_ = std::move(values);
    sg_cursor_ = 0;
  }

 private:
  friend Tensor stop_gradient(Tape&, const Tensor&);

  bool recording_;
  std::vector<std::function<void()>> rules_;
  SgMode sg_mode_ = SgMode::kPassThrough;
  std::vector<NdBuffer> sg_values_;
  std::size_t sg_cursor_ = 0;
};

// Linear algebra.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);

// Pointwise. Binary ops need equal shapes, or one operand of shape [1].
enum class ElementwiseKind { kAdd, kSub, kMul, kSigmoid, kRelu, kDropout };

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor sigmoid(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);
// Inverted dropout: at train time survivors are scaled by 1/(1-p); at eval
// time the input passes through unchanged.
Tensor dropout(Tape& tape, const Tensor& a, double p, bool train, CounterRng& rng);

struct DropoutSpec {
  double p = 0.0;
  bool train = false;
  CounterRng* rng = nullptr;
};
Tensor elementwise(Tape& tape, ElementwiseKind kind, std::span<const Tensor> inputs,
                   const DropoutSpec& dropout_spec = {});

// a: [m x n], bias: [n]; adds bias to every row.
Tensor add_row_bias(Tape& tape, const Tensor& a, const Tensor& bias);

// Cross-correlation. input: [C_in x H x W] or [B x C_in x H x W];
// kernels: [C_out x C_in x kh x kw].
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels,
              std::size_t stride = 1, std::size_t padding = 0);
// x: [B x C x H x W], bias: [C].
Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias);

enum class ReduceKind { kSum, kMean, kSqL2Norm };
Tensor reduce(Tape& tape, ReduceKind kind, const Tensor& input,
              std::optional<std::size_t> axis = std::nullopt);
inline Tensor sum(Tape& tape, const Tensor& a) { return reduce(tape, ReduceKind::kSum, a); }
inline Tensor mean(Tape& tape, const Tensor& a) { return reduce(tape, ReduceKind::kMean, a); }
inline Tensor sq_l2_norm(Tape& tape, const Tensor& a) {
  return reduce(tape, ReduceKind::kSqL2Norm, a);
}

// Identity forward, nothing flows back to the input.
Tensor stop_gradient(Tape& tape, const Tensor& a);

Tensor reshape(Tape& tape, const Tensor& a, Shape shape);
// rows of a [n x d] selected by index -> [len x d].
Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::uint32_t> rows);
// row i of a [m x d] added into output row target[i] -> [out_rows x d].
Tensor scatter_add_rows(Tape& tape, const Tensor& a, std::span<const std::uint32_t> target,
                        std::size_t out_rows);
// [m x p] and [m x q] -> [m x (p+q)].
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);

// Mean over all entries of BCE(sigmoid(logits), targets), computed in the
// numerically stable logit form. targets are constants.
Tensor bce_with_logits(Tape& tape, const Tensor& logits, std::span<const double> targets);

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with an L2 term weight_decay * theta added to the gradient. Moments
// are kept per parameter slot, in the order parameters are passed.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<const Tensor> params);

  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t step_count() const noexcept { return steps_; }
  void set_step_count(std::uint64_t steps) noexcept { steps_ = steps; }

  // Moment buffers, allocated lazily on the first step.
  std::vector<std::vector<double>>& first_moments() noexcept { return m_; }
  std::vector<std::vector<double>>& second_moments() noexcept { return v_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace ssqr::nk

#endif  // SSQR_NUMKERNEL_HPP
