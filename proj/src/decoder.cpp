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

#include "ssqr/decoder.hpp"

#include <cmath>

#include "ssqr/error.hpp"

namespace ssqr::decoder {

namespace {

Tensor uniform_parameter(nk::Shape shape, double bound, CounterRng& rng) {
  std::vector<double> values(nk::element_count(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return nk::parameter(std::move(shape), std::move(values));
}

double glorot(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

void ConvGeometry::validate() const {
  if (rows == 0 || cols == 0 || channels == 0 || kernel == 0) {
    fail(ErrorKind::kParameter, "conv geometry entries must be positive");
  }
  if (2 * rows < kernel || cols < kernel) {
    fail(ErrorKind::kParameter, "conv geometry " + std::to_string(2 * rows) + "x" +
                                    std::to_string(cols) + " is smaller than the kernel");
  }
}

DecoderParams init_decoder(std::size_t dim, std::size_t text_dim, const ConvGeometry& geometry,
                           bool strict, CounterRng& rng) {
  geometry.validate();
  DecoderParams p;
  p.geometry = geometry;
  p.strict = strict;
  const std::size_t proj = geometry.projection_length();
  const std::size_t k = geometry.kernel;
  p.head_w = uniform_parameter({dim, proj}, glorot(dim, proj), rng);
  p.head_b = nk::parameter({proj}, std::vector<double>(proj, 0.0));
  p.rel_w = uniform_parameter({dim, proj}, glorot(dim, proj), rng);
  p.rel_b = nk::parameter({proj}, std::vector<double>(proj, 0.0));
  p.conv_k = uniform_parameter({geometry.channels, 1, k, k}, glorot(k * k, geometry.channels), rng);
  p.conv_b = nk::parameter({geometry.channels}, std::vector<double>(geometry.channels, 0.0));
  p.wc = uniform_parameter({geometry.flat_length(), dim}, glorot(geometry.flat_length(), dim), rng);
  if (text_dim > 0) p.ws = uniform_parameter({dim, text_dim}, glorot(dim, text_dim), rng);
  return p;
}

Tensor conve_features(Tape& tape, const Tensor& heads, const Tensor& relations,
                      const DecoderParams& params) {
  if (heads->rank() != 2 || heads->shape() != relations->shape() ||
      heads->dim(1) != params.head_w->dim(0)) {
    fail(ErrorKind::kShape, "conve: heads " + nk::shape_string(heads->shape()) + ", relations " +
                                nk::shape_string(relations->shape()) + " vs projection " +
                                nk::shape_string(params.head_w->shape()));
  }
  const ConvGeometry& g = params.geometry;
  const std::size_t batch = heads->dim(0);
  const Tensor h_bar =
      nk::add_row_bias(tape, nk::matmul(tape, heads, params.head_w), params.head_b);
  const Tensor r_bar =
      nk::add_row_bias(tape, nk::matmul(tape, relations, params.rel_w), params.rel_b);
  const Tensor stacked = nk::reshape(tape, nk::concat_cols(tape, h_bar, r_bar),
                                     {batch, 1, 2 * g.rows, g.cols});
  Tensor conv = nk::conv2d(tape, stacked, params.conv_k);
  if (!params.strict) conv = nk::relu(tape, nk::add_channel_bias(tape, conv, params.conv_b));
  const Tensor flat = nk::reshape(tape, conv, {batch, g.flat_length()});
  return nk::matmul(tape, flat, params.wc);
}

Tensor conve_score(Tape& tape, const Tensor& heads, const Tensor& relations,
                   const Tensor& tails, const DecoderParams& params) {
  const Tensor features = conve_features(tape, heads, relations, params);
  if (tails->rank() != 2 || tails->dim(1) != features->dim(1)) {
    fail(ErrorKind::kShape, "conve_score: tails " + nk::shape_string(tails->shape()) +
                                " vs features " + nk::shape_string(features->shape()));
  }
  return nk::matmul(tape, features, nk::transpose(tape, tails));
}

std::vector<double> structure_targets(const kg::KnowledgeGraph& graph,
                                      std::span<const QueryKey> batch, double label_smoothing) {
  const std::size_t n = graph.entity_count();
  const double floor = label_smoothing / static_cast<double>(n);
  std::vector<double> targets(batch.size() * n, floor);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (kg::EntityId t : graph.train_tails(batch[b].first, batch[b].second)) {
      targets[b * n + t] = (1.0 - label_smoothing) + floor;
    }
  }
  return targets;
}

Tensor structure_loss(Tape& tape, const kg::KnowledgeGraph& graph, const Tensor& quantized,
                      const Tensor& relations, const DecoderParams& params,
                      std::span<const QueryKey> batch, double label_smoothing) {
  if (batch.empty()) fail(ErrorKind::kParameter, "structure_loss: empty batch");
  std::vector<std::uint32_t> heads(batch.size()), rels(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    heads[b] = batch[b].first;
    rels[b] = batch[b].second;
  }
  const Tensor scores = conve_score(tape, nk::gather_rows(tape, quantized, heads),
                                    nk::gather_rows(tape, relations, rels), quantized, params);
  const auto targets = structure_targets(graph, batch, label_smoothing);
  return nk::bce_with_logits(tape, scores, targets);
}

Tensor text_targets(const kg::TextEmbeddingTable& table, std::span<const kg::EntityId> ids) {
  std::vector<double> values;
  values.reserve(ids.size() * table.dim);
  for (kg::EntityId id : ids) {
    const auto it = table.vectors.find(id);
    if (it == table.vectors.end()) {
      fail(ErrorKind::kCoverage, "entity " + std::to_string(id) + " has no text embedding");
    }
    values.insert(values.end(), it->second.begin(), it->second.end());
  }
  return nk::make_tensor({ids.size(), table.dim}, std::move(values));
}

Tensor semantic_loss(Tape& tape, const Tensor& quantized, const Tensor& targets,
                     const Tensor& ws) {
  if (!ws) fail(ErrorKind::kState, "semantic_loss: model has no semantic head");
  const Tensor residual = nk::sub(tape, nk::matmul(tape, quantized, ws), targets);
  return nk::scale(tape, nk::sq_l2_norm(tape, residual),
                   1.0 / static_cast<double>(quantized->dim(0)));
}

Tensor semantic_loss(Tape& tape, const Tensor& quantized, const kg::TextEmbeddingTable& table,
                     std::span<const kg::EntityId> ids, const Tensor& ws) {
  if (ids.size() != quantized->dim(0)) {
    fail(ErrorKind::kShape, "semantic_loss: id count does not match the quantized rows");
  }
  return semantic_loss(tape, quantized, text_targets(table, ids), ws);
}

Tensor total_loss(Tape& tape, const Tensor& vq, const Tensor& structure,
                  const Tensor& semantic) {
  Tensor total = nk::add(tape, vq, structure);
  if (semantic) total = nk::add(tape, total, semantic);
  return total;
}

}  // namespace ssqr::decoder
