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

#ifndef SSQR_MODEL_HPP
#define SSQR_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssqr/decoder.hpp"
#include "ssqr/encoder.hpp"
#include "ssqr/kg_store.hpp"
#include "ssqr/numkernel.hpp"
#include "ssqr/quantizer.hpp"

namespace ssqr::model {

using nk::Tape;
using nk::Tensor;

struct ModelOptions {
  std::size_t dim = 200;
  std::size_t layers = 2;
  double dropout = 0.2;
  std::size_t heads = 32;
  std::size_t codebook_size = 2048;
  std::size_t ffn_hidden = 0;  // 0 selects 2 * heads * dim
  std::size_t text_dim = 0;    // 0 disables the semantic head
  decoder::ConvGeometry geometry;
  bool strict_eq6 = false;
  bool ablate_gcn = false;
  bool ablate_semantics = false;
  double beta = 0.25;
  double label_smoothing = 0.1;

  std::size_t hidden_width() const noexcept {
    return ffn_hidden ? ffn_hidden : 2 * heads * dim;
  }
  bool uses_semantics() const noexcept { return !ablate_semantics && text_dim > 0; }
};

// Every learnable array of the pipeline.
struct ModelParams {
  encoder::GcnParams gcn;
  quantizer::QuantizerParams quant;
  quantizer::Codebook codebook;
  decoder::DecoderParams dec;

  // Stable name -> array listing used by checkpoints and the optimizer.
  std::vector<std::pair<std::string, Tensor>> named() const;
  // Arrays that receive gradients under the given options.
  std::vector<std::pair<std::string, Tensor>> trainable(const ModelOptions& options) const;
};

ModelParams init_model(std::size_t entities, std::size_t relations, const ModelOptions& options,
                       std::uint64_t seed);

struct Forward {
  encoder::Encoded encoded;
  quantizer::Quantized quantized;
};

Forward forward(Tape& tape, const kg::KnowledgeGraph& graph, const ModelParams& params,
                const ModelOptions& options, bool train, CounterRng& dropout_rng,
                const std::vector<quantizer::CodeIndex>* fixed_indices = nullptr);

struct Losses {
  Tensor vq;
  Tensor structure;
  Tensor semantic;  // null when ablated
  Tensor total;
};

// text_targets is [|E| x text_dim] or null when semantics are off.
Losses compute_losses(Tape& tape, const kg::KnowledgeGraph& graph, const ModelParams& params,
                      const ModelOptions& options, const Forward& fwd,
                      std::span<const decoder::QueryKey> batch, const Tensor& text_targets);

// Frozen evaluation-mode snapshot: quantized entity table and final relation
// embeddings, scored through the decoder.
class Scorer {
 public:
  Scorer(const kg::KnowledgeGraph& graph, const ModelParams& params, const ModelOptions& options);

  std::size_t entity_count() const { return quantized_->dim(0); }
  // Scores of every entity as tail of (h, r).
  std::vector<double> score_tails(kg::EntityId h, kg::RelationId r) const;
  // Row-major [batch x |E|].
  std::vector<double> score_queries(std::span<const decoder::QueryKey> queries) const;

  const std::vector<quantizer::CodeIndex>& indices() const noexcept { return indices_; }
  quantizer::EntityCodeTable code_table() const;
  const Tensor& quantized() const noexcept { return quantized_; }

 private:
  decoder::DecoderParams dec_;
  std::size_t codebook_size_;
  std::size_t heads_;
  Tensor quantized_;
  Tensor relations_;
  std::vector<quantizer::CodeIndex> indices_;
};

}  // namespace ssqr::model

#endif  // SSQR_MODEL_HPP
