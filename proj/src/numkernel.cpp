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

#include "ssqr/numkernel.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ssqr/error.hpp"

namespace ssqr::nk {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MutMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return (*t)->requires_grad(); });
}

Tensor result(Shape shape, bool grad) {
  auto out = std::make_shared<NdBuffer>(std::move(shape));
  out->set_requires_grad(grad);
  return out;
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  fail(ErrorKind::kShape, op + ": incompatible shapes " + shape_string(a) + " and " +
                              shape_string(b));
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t->rank() != rank) {
    fail(ErrorKind::kShape, op + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(t->shape()));
  }
}

bool is_scalar(const NdBuffer& t) { return t.size() == 1 && t.rank() <= 1; }

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast check_binary(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a->shape() == b->shape()) return Broadcast::kNone;
  if (is_scalar(*a)) return Broadcast::kLeftScalar;
  if (is_scalar(*b)) return Broadcast::kRightScalar;
  shape_error(op, a->shape(), b->shape());
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary(Tape& tape, const std::string& op, const Tensor& a, const Tensor& b,
              Forward forward, GradA grad_a, GradB grad_b) {
  const Broadcast mode = check_binary(op, a, b);
  const Shape& shape = mode == Broadcast::kLeftScalar ? b->shape() : a->shape();
  Tensor out = result(shape, wants_grad(tape, {&a, &b}));
  const std::size_t n = out->size();
  const auto av = a->values();
  const auto bv = b->values();
  auto ov = out->values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = mode == Broadcast::kLeftScalar ? av[0] : av[i];
    const double y = mode == Broadcast::kRightScalar ? bv[0] : bv[i];
    ov[i] = forward(x, y);
  }
  if (out->requires_grad()) {
    tape.record([a, b, out, mode, grad_a, grad_b] {
      const auto g = out->grad();
      const auto av = a->values();
      const auto bv = b->values();
      const std::size_t n = out->size();
      if (a->requires_grad()) {
        auto ga = a->grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double x = mode == Broadcast::kLeftScalar ? av[0] : av[i];
          const double y = mode == Broadcast::kRightScalar ? bv[0] : bv[i];
          ga[mode == Broadcast::kLeftScalar ? 0 : i] += g[i] * grad_a(x, y);
        }
      }
      if (b->requires_grad()) {
        auto gb = b->grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double x = mode == Broadcast::kLeftScalar ? av[0] : av[i];
          const double y = mode == Broadcast::kRightScalar ? bv[0] : bv[i];
          gb[mode == Broadcast::kRightScalar ? 0 : i] += g[i] * grad_b(x, y);
        }
      }
    });
  }
  return out;
}

template <typename Forward, typename Derivative>
Tensor unary(Tape& tape, const Tensor& a, Forward forward, Derivative derivative) {
  Tensor out = result(a->shape(), wants_grad(tape, {&a}));
  const auto av = a->values();
  auto ov = out->values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = forward(av[i]);
  if (out->requires_grad()) {
    // derivative receives (input, output).
    tape.record([a, out, derivative] {
      const auto g = out->grad();
      const auto av = a->values();
      const auto ov = out->values();
      auto ga = a->grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * derivative(av[i], ov[i]);
    });
  }
  return out;
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NdBuffer::NdBuffer(Shape shape, double fill)
    : shape_(std::move(shape)), values_(element_count(shape_), fill) {
  for (std::size_t d : shape_) {
    if (d == 0) fail(ErrorKind::kShape, "zero-sized dimension in " + shape_string(shape_));
  }
}

NdBuffer::NdBuffer(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != element_count(shape_)) {
    fail(ErrorKind::kShape, "value count " + std::to_string(values_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

std::span<double> NdBuffer::grad() {
  if (grad_.empty()) grad_.assign(values_.size(), 0.0);
  return grad_;
}

void NdBuffer::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void NdBuffer::reshape(Shape shape) {
  if (element_count(shape) != values_.size()) {
    fail(ErrorKind::kShape, "cannot reshape " + shape_string(shape_) + " to " +
                                shape_string(shape));
  }
  shape_ = std::move(shape);
}

bool NdBuffer::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor make_tensor(Shape shape, std::vector<double> values) {
  return std::make_shared<NdBuffer>(std::move(shape), std::move(values));
}

Tensor zeros(Shape shape) { return std::make_shared<NdBuffer>(std::move(shape)); }

Tensor parameter(Shape shape, std::vector<double> values) {
  auto t = make_tensor(std::move(shape), std::move(values));
  t->set_requires_grad(true);
  return t;
}

Tensor scalar(double value) { return make_tensor({1}, {value}); }

void Tape::record(std::function<void()> rule) {
  if (recording_) rules_.push_back(std::move(rule));
}

void Tape::backward(const Tensor& loss) {
  if (loss->size() != 1 || loss->rank() != 1) {
    fail(ErrorKind::kShape, "backward: loss must have shape [1], got " +
                                shape_string(loss->shape()));
  }
  if (loss->requires_grad()) {
    loss->grad()[0] += 1.0;
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  }
  rules_.clear();
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
  if (b->dim(0) != k) shape_error("matmul", a->shape(), b->shape());
  Tensor out = result({m, n}, wants_grad(tape, {&a, &b}));
  as_matrix(out->values(), m, n).noalias() =
      as_matrix(std::as_const(*a).values(), m, k) * as_matrix(std::as_const(*b).values(), k, n);
  if (out->requires_grad()) {
    tape.record([a, b, out, m, k, n] {
      const auto g = as_matrix(std::as_const(*out).grad(), m, n);
      if (a->requires_grad()) {
        as_matrix(a->grad(), m, k).noalias() +=
            g * as_matrix(std::as_const(*b).values(), k, n).transpose();
      }
      if (b->requires_grad()) {
        as_matrix(b->grad(), k, n).noalias() +=
            as_matrix(std::as_const(*a).values(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a->dim(0), n = a->dim(1);
  Tensor out = result({n, m}, wants_grad(tape, {&a}));
  as_matrix(out->values(), n, m) = as_matrix(std::as_const(*a).values(), m, n).transpose();
  if (out->requires_grad()) {
    tape.record([a, out, m, n] {
      as_matrix(a->grad(), m, n) += as_matrix(std::as_const(*out).grad(), n, m).transpose();
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  return unary(
      tape, a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
  return unary(
      tape, a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tape& tape, const Tensor& a) {
  return unary(
      tape, a, [](double x) { return x < 0.0 ? 0.0 : x; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor dropout(Tape& tape, const Tensor& a, double p, bool train, CounterRng& rng) {
  if (p < 0.0 || p >= 1.0) {
    fail(ErrorKind::kParameter, "dropout: p must be in [0, 1), got " + std::to_string(p));
  }
  if (!train || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(a->size());
  for (double& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = result(a->shape(), wants_grad(tape, {&a}));
  const auto av = a->values();
  auto ov = out->values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * (*mask)[i];
  if (out->requires_grad()) {
    tape.record([a, out, mask] {
      const auto g = out->grad();
      auto ga = a->grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor elementwise(Tape& tape, ElementwiseKind kind, std::span<const Tensor> inputs,
                   const DropoutSpec& dropout_spec) {
  const bool is_binary =
      kind == ElementwiseKind::kAdd || kind == ElementwiseKind::kSub || kind == ElementwiseKind::kMul;
  if (inputs.size() != (is_binary ? 2u : 1u)) {
    fail(ErrorKind::kParameter, "elementwise: wrong number of inputs");
  }
  switch (kind) {
    case ElementwiseKind::kAdd: return add(tape, inputs[0], inputs[1]);
    case ElementwiseKind::kSub: return sub(tape, inputs[0], inputs[1]);
    case ElementwiseKind::kMul: return mul(tape, inputs[0], inputs[1]);
    case ElementwiseKind::kSigmoid: return sigmoid(tape, inputs[0]);
    case ElementwiseKind::kRelu: return relu(tape, inputs[0]);
    case ElementwiseKind::kDropout: {
      if (dropout_spec.train && dropout_spec.rng == nullptr) {
        fail(ErrorKind::kParameter, "elementwise: dropout at train time needs an rng");
      }
      CounterRng unused;
      return dropout(tape, inputs[0], dropout_spec.p, dropout_spec.train,
                     dropout_spec.rng ? *dropout_spec.rng : unused);
    }
  }
  fail(ErrorKind::kParameter, "elementwise: unknown kind");
}

Tensor add_row_bias(Tape& tape, const Tensor& a, const Tensor& bias) {
  require_rank("add_row_bias", a, 2);
  const std::size_t m = a->dim(0), n = a->dim(1);
  if (bias->size() != n) shape_error("add_row_bias", a->shape(), bias->shape());
  Tensor out = result(a->shape(), wants_grad(tape, {&a, &bias}));
  const auto av = a->values();
  const auto bv = bias->values();
  auto ov = out->values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = av[i * n + j] + bv[j];
  }
  if (out->requires_grad()) {
    tape.record([a, bias, out, m, n] {
      const auto g = out->grad();
      if (a->requires_grad()) {
        auto ga = a->grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bias->requires_grad()) {
        auto gb = bias->grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  const bool batched = input->rank() == 4;
  if (!batched && input->rank() != 3) {
    fail(ErrorKind::kShape, "conv2d: input must be [C x H x W] or [B x C x H x W], got " +
                                shape_string(input->shape()));
  }
  require_rank("conv2d", kernels, 4);
  if (stride == 0) fail(ErrorKind::kShape, "conv2d: stride must be positive");
  const std::size_t batch = batched ? input->dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t c_in = input->dim(off), h = input->dim(off + 1), w = input->dim(off + 2);
  const std::size_t c_out = kernels->dim(0), kh = kernels->dim(2), kw = kernels->dim(3);
  if (kernels->dim(1) != c_in) shape_error("conv2d", input->shape(), kernels->shape());
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    shape_error("conv2d (kernel larger than padded input)", input->shape(), kernels->shape());
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  Shape out_shape = batched ? Shape{batch, c_out, oh, ow} : Shape{c_out, oh, ow};
  Tensor out = result(std::move(out_shape), wants_grad(tape, {&input, &kernels}));

  // Visits every (output, input, kernel) index triple that lands inside the
  // unpadded input.
  auto visit = [=](auto&& fn) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t co = 0; co < c_out; ++co) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t o = ((b * c_out + co) * oh + y) * ow + x;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                            static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t i =
                      ((b * c_in + ci) * h + static_cast<std::size_t>(iy)) * w +
                      static_cast<std::size_t>(ix);
                  const std::size_t k = ((co * c_in + ci) * kh + ky) * kw + kx;
                  fn(o, i, k);
                }
              }
            }
          }
        }
      }
    }
  };

  {
    const auto iv = input->values();
    const auto kv = kernels->values();
    auto ov = out->values();
    visit([&](std::size_t o, std::size_t i, std::size_t k) { ov[o] += iv[i] * kv[k]; });
  }
  if (out->requires_grad()) {
    tape.record([input, kernels, out, visit] {
      const auto g = std::as_const(*out).grad();
      const auto iv = input->values();
      const auto kv = kernels->values();
      if (input->requires_grad()) {
        auto gi = input->grad();
        visit([&](std::size_t o, std::size_t i, std::size_t k) { gi[i] += g[o] * kv[k]; });
      }
      if (kernels->requires_grad()) {
        auto gk = kernels->grad();
        visit([&](std::size_t o, std::size_t i, std::size_t k) { gk[k] += g[o] * iv[i]; });
      }
    });
  }
  return out;
}

Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_rank("add_channel_bias", x, 4);
  const std::size_t batch = x->dim(0), c = x->dim(1), plane = x->dim(2) * x->dim(3);
  if (bias->size() != c) shape_error("add_channel_bias", x->shape(), bias->shape());
  Tensor out = result(x->shape(), wants_grad(tape, {&x, &bias}));
  const auto xv = x->values();
  const auto bv = bias->values();
  auto ov = out->values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) ov[base + p] = xv[base + p] + bv[ch];
    }
  }
  if (out->requires_grad()) {
    tape.record([x, bias, out, batch, c, plane] {
      const auto g = out->grad();
      if (x->requires_grad()) {
        auto gx = x->grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias->requires_grad()) {
        auto gb = bias->grad();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) gb[ch] += g[base + p];
          }
        }
      }
    });
  }
  return out;
}

Tensor reduce(Tape& tape, ReduceKind kind, const Tensor& input, std::optional<std::size_t> axis) {
  std::size_t outer = 1, length = input->size(), inner = 1;
  Shape out_shape{1};
  if (axis) {
    if (*axis >= input->rank()) {
      fail(ErrorKind::kShape, "reduce: axis " + std::to_string(*axis) + " out of range for " +
                                  shape_string(input->shape()));
    }
    const Shape& s = input->shape();
    outer = element_count(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(*axis)));
    length = s[*axis];
    inner = element_count(Shape(s.begin() + static_cast<std::ptrdiff_t>(*axis) + 1, s.end()));
    out_shape.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != *axis) out_shape.push_back(s[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
  }
  Tensor out = result(std::move(out_shape), wants_grad(tape, {&input}));
  const auto iv = input->values();
  auto ov = out->values();
  const double norm = kind == ReduceKind::kMean ? 1.0 / static_cast<double>(length) : 1.0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < length; ++l) {
        const double v = iv[(o * length + l) * inner + j];
        acc += kind == ReduceKind::kSqL2Norm ? v * v : v;
      }
      ov[o * inner + j] = acc * norm;
    }
  }
  if (out->requires_grad()) {
    tape.record([input, out, kind, outer, length, inner, norm] {
      const auto g = out->grad();
      const auto iv = input->values();
      auto gi = input->grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
          const double go = g[o * inner + j];
          for (std::size_t l = 0; l < length; ++l) {
            const std::size_t i = (o * length + l) * inner + j;
            gi[i] += kind == ReduceKind::kSqL2Norm ? 2.0 * iv[i] * go : go * norm;
          }
        }
      }
    });
  }
  return out;
}

Tensor stop_gradient(Tape& tape, const Tensor& a) {
  switch (tape.sg_mode_) {
    case Tape::SgMode::kPassThrough:
      return make_tensor(a->shape(), std::vector<double>(a->values().begin(), a->values().end()));
    case Tape::SgMode::kCapture: {
      auto out =
          make_tensor(a->shape(), std::vector<double>(a->values().begin(), a->values().end()));
      tape.sg_values_.push_back(*out);
      return out;
    }
    case Tape::SgMode::kReplay: {
      if (tape.sg_cursor_ >= tape.sg_values_.size()) {
        fail(ErrorKind::kState, "stop_gradient: replay exhausted captured values");
      }
      const NdBuffer& frozen = tape.sg_values_[tape.sg_cursor_++];
      if (frozen.shape() != a->shape()) shape_error("stop_gradient replay", frozen.shape(), a->shape());
      return make_tensor(frozen.shape(),
                         std::vector<double>(frozen.values().begin(), frozen.values().end()));
    }
  }
  fail(ErrorKind::kState, "stop_gradient: unknown mode");
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (element_count(shape) != a->size()) shape_error("reshape", a->shape(), shape);
  Tensor out = result(std::move(shape), wants_grad(tape, {&a}));
  std::copy(a->values().begin(), a->values().end(), out->values().begin());
  if (out->requires_grad()) {
    tape.record([a, out] {
      const auto g = out->grad();
      auto ga = a->grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::uint32_t> rows) {
  require_rank("gather_rows", a, 2);
  const std::size_t n = a->dim(0), d = a->dim(1);
  for (std::uint32_t r : rows) {
    if (r >= n) {
      fail(ErrorKind::kIndex, "gather_rows: row " + std::to_string(r) + " out of range for " +
                                  shape_string(a->shape()));
    }
  }
  if (rows.empty()) fail(ErrorKind::kShape, "gather_rows: empty row selection");
  Tensor out = result({rows.size(), d}, wants_grad(tape, {&a}));
  const auto av = a->values();
  auto ov = out->values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                ov.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (out->requires_grad()) {
    auto idx = std::make_shared<std::vector<std::uint32_t>>(rows.begin(), rows.end());
    tape.record([a, out, idx, d] {
      const auto g = out->grad();
      auto ga = a->grad();
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::size_t base = (*idx)[i] * d;
        for (std::size_t j = 0; j < d; ++j) ga[base + j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor scatter_add_rows(Tape& tape, const Tensor& a, std::span<const std::uint32_t> target,
                        std::size_t out_rows) {
  require_rank("scatter_add_rows", a, 2);
  const std::size_t m = a->dim(0), d = a->dim(1);
  if (target.size() != m) {
    fail(ErrorKind::kShape, "scatter_add_rows: " + std::to_string(target.size()) +
                                " targets for " + shape_string(a->shape()));
  }
  for (std::uint32_t t : target) {
    if (t >= out_rows) fail(ErrorKind::kIndex, "scatter_add_rows: target out of range");
  }
  Tensor out = result({out_rows, d}, wants_grad(tape, {&a}));
  const auto av = a->values();
  auto ov = out->values();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t base = target[i] * d;
    for (std::size_t j = 0; j < d; ++j) ov[base + j] += av[i * d + j];
  }
  if (out->requires_grad()) {
    auto idx = std::make_shared<std::vector<std::uint32_t>>(target.begin(), target.end());
    tape.record([a, out, idx, d] {
      const auto g = out->grad();
      auto ga = a->grad();
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::size_t base = (*idx)[i] * d;
        for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += g[base + j];
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  if (a->dim(0) != b->dim(0)) shape_error("concat_cols", a->shape(), b->shape());
  const std::size_t m = a->dim(0), p = a->dim(1), q = b->dim(1);
  Tensor out = result({m, p + q}, wants_grad(tape, {&a, &b}));
  const auto av = a->values();
  const auto bv = b->values();
  auto ov = out->values();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(i * p), p,
                ov.begin() + static_cast<std::ptrdiff_t>(i * (p + q)));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(i * q), q,
                ov.begin() + static_cast<std::ptrdiff_t>(i * (p + q) + p));
  }
  if (out->requires_grad()) {
    tape.record([a, b, out, m, p, q] {
      const auto g = out->grad();
      if (a->requires_grad()) {
        auto ga = a->grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
        }
      }
      if (b->requires_grad()) {
        auto gb = b->grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
        }
      }
    });
  }
  return out;
}

Tensor bce_with_logits(Tape& tape, const Tensor& logits, std::span<const double> targets) {
  if (targets.size() != logits->size()) {
    fail(ErrorKind::kShape, "bce_with_logits: " + std::to_string(targets.size()) +
                                " targets for " + shape_string(logits->shape()));
  }
  const std::size_t n = logits->size();
  Tensor out = result({1}, wants_grad(tape, {&logits}));
  const auto sv = logits->values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sv[i];
    acc += std::max(s, 0.0) - s * targets[i] + std::log1p(std::exp(-std::abs(s)));
  }
  out->values()[0] = acc / static_cast<double>(n);
  if (out->requires_grad()) {
    auto y = std::make_shared<std::vector<double>>(targets.begin(), targets.end());
    tape.record([logits, out, y, n] {
      const double g = out->grad()[0] / static_cast<double>(n);
      const auto sv = logits->values();
      auto gs = logits->grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double s = sv[i];
        const double p = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
        gs[i] += g * (p - (*y)[i]);
      }
    });
  }
  return out;
}

void Adam::step(std::span<const Tensor> params) {
  if (m_.size() < params.size()) {
    m_.resize(params.size());
    v_.resize(params.size());
  }
  for (const Tensor& p : params) {
    if (!p->has_grad()) fail(ErrorKind::kState, "adam_step: parameter " +
                                                    shape_string(p->shape()) + " has no gradient");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t slot = 0; slot < params.size(); ++slot) {
    NdBuffer& p = *params[slot];
    auto& m = m_[slot];
    auto& v = v_[slot];
    if (m.size() != p.size()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    auto values = p.values();
    const auto grad = std::as_const(p).grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] + config_.weight_decay * values[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      values[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace ssqr::nk
