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

#ifndef SSQR_DECODER_HPP
#define SSQR_DECODER_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ssqr/kg_store.hpp"
#include "ssqr/numkernel.hpp"
#include "ssqr/rng.hpp"

namespace ssqr::decoder {

using nk::Tape;
using nk::Tensor;

// The head and relation projections are each reshaped to rows x cols and
// stacked into a single-channel (2*rows) x cols image.
struct ConvGeometry {
  std::size_t rows = 10;
  std::size_t cols = 20;
  std::size_t channels = 32;
  std::size_t kernel = 3;

  std::size_t projection_length() const noexcept { return rows * cols; }
  std::size_t out_height() const noexcept { return 2 * rows - kernel + 1; }
  std::size_t out_width() const noexcept { return cols - kernel + 1; }
  std::size_t flat_length() const noexcept { return channels * out_height() * out_width(); }
  void validate() const;
};

struct DecoderParams {
  Tensor head_w, head_b;  // [d x rows*cols], [rows*cols]
  Tensor rel_w, rel_b;    // [d x rows*cols], [rows*cols]
  Tensor conv_k;          // [channels x 1 x k x k]
  Tensor conv_b;          // [channels], unused when strict
  Tensor wc;              // [flat x d]
  Tensor ws;              // [d x text_dim], null without a semantic head
  ConvGeometry geometry;
  // Drops the post-convolution bias and rectifier.
  bool strict = false;
};

DecoderParams init_decoder(std::size_t dim, std::size_t text_dim, const ConvGeometry& geometry,
                           bool strict, CounterRng& rng);

// Flat(Conv(q_h_bar || v_r_bar)) W_c, one row per query: [B x d].
Tensor conve_features(Tape& tape, const Tensor& heads, const Tensor& relations,
                      const DecoderParams& params);

// Raw scores of every tail row for every query: [B x T].
Tensor conve_score(Tape& tape, const Tensor& heads, const Tensor& relations,
                   const Tensor& tails, const DecoderParams& params);

using QueryKey = kg::KnowledgeGraph::QueryKey;

// 1-vs-all targets, [B x |E|]: known training tails get 1, the rest 0, then
// smoothed as (1 - eps) * y + eps / |E|.
std::vector<double> structure_targets(const kg::KnowledgeGraph& graph,
                                      std::span<const QueryKey> batch, double label_smoothing);

Tensor structure_loss(Tape& tape, const kg::KnowledgeGraph& graph, const Tensor& quantized,
                      const Tensor& relations, const DecoderParams& params,
                      std::span<const QueryKey> batch, double label_smoothing);

// Dense [ids.size() x dim] text targets; every id must be covered.
Tensor text_targets(const kg::TextEmbeddingTable& table, std::span<const kg::EntityId> ids);

// (1/n) sum ||q_e W_s - t_e||^2 over the n rows.
Tensor semantic_loss(Tape& tape, const Tensor& quantized, const Tensor& targets,
                     const Tensor& ws);
Tensor semantic_loss(Tape& tape, const Tensor& quantized, const kg::TextEmbeddingTable& table,
                     std::span<const kg::EntityId> ids, const Tensor& ws);

// L_q + L_st + L_se; an absent semantic term contributes nothing.
Tensor total_loss(Tape& tape, const Tensor& vq, const Tensor& structure,
                  const Tensor& semantic);

}  // namespace ssqr::decoder

#endif  // SSQR_DECODER_HPP
