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

#include "ssqr/model.hpp"

#include <algorithm>

#include "ssqr/error.hpp"

namespace ssqr::model {

namespace {

constexpr std::uint64_t kInitStream = 0x494e4954ULL;

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("gcn.entity_table", gcn.entity_table);
  out.emplace_back("gcn.relation_table", gcn.relation_table);
  for (std::size_t l = 0; l < gcn.layers(); ++l) {
    const std::string suffix = "." + std::to_string(l);
    out.emplace_back("gcn.w_self" + suffix, gcn.w_self[l]);
    out.emplace_back("gcn.w_neighbor" + suffix, gcn.w_neighbor[l]);
    out.emplace_back("gcn.w_relation" + suffix, gcn.w_relation[l]);
  }
  out.emplace_back("quant.ffn_w1", quant.ffn_w1);
  out.emplace_back("quant.ffn_b1", quant.ffn_b1);
  out.emplace_back("quant.ffn_w2", quant.ffn_w2);
  out.emplace_back("quant.ffn_b2", quant.ffn_b2);
  out.emplace_back("quant.wq", quant.wq);
  out.emplace_back("codebook", codebook.codes);
  out.emplace_back("dec.head_w", dec.head_w);
  out.emplace_back("dec.head_b", dec.head_b);
  out.emplace_back("dec.rel_w", dec.rel_w);
  out.emplace_back("dec.rel_b", dec.rel_b);
  out.emplace_back("dec.conv_k", dec.conv_k);
  out.emplace_back("dec.conv_b", dec.conv_b);
  out.emplace_back("dec.wc", dec.wc);
  if (dec.ws) out.emplace_back("dec.ws", dec.ws);
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::trainable(
    const ModelOptions& options) const {
  auto all = named();
  std::erase_if(all, [&](const auto& entry) {
    const std::string& name = entry.first;
    if (options.ablate_gcn && name.starts_with("gcn.w_")) return true;
    if (options.strict_eq6 && name == "dec.conv_b") return true;
    if (!options.uses_semantics() && name == "dec.ws") return true;
    return false;
  });
  return all;
}

ModelParams init_model(std::size_t entities, std::size_t relations, const ModelOptions& options,
                       std::uint64_t seed) {
  CounterRng rng(seed, kInitStream);
  ModelParams p;
  p.gcn = encoder::init_gcn(entities, relations, options.dim, options.layers, options.dropout, rng);
  p.quant = quantizer::init_quantizer(options.dim, options.heads, options.hidden_width(), rng);
  p.codebook = quantizer::init_codebook(options.codebook_size, options.dim, rng);
  p.dec = decoder::init_decoder(options.dim, options.text_dim, options.geometry,
                                options.strict_eq6, rng);
  return p;
}

Forward forward(Tape& tape, const kg::KnowledgeGraph& graph, const ModelParams& params,
                const ModelOptions& options, bool train, CounterRng& dropout_rng,
                const std::vector<quantizer::CodeIndex>* fixed_indices) {
  Forward fwd;
  fwd.encoded = encoder::encode(tape, graph, params.gcn, train, options.ablate_gcn, dropout_rng);
  fwd.quantized =
      quantizer::quantize(tape, fwd.encoded.entities, params.quant, params.codebook, fixed_indices);
  return fwd;
}

Losses compute_losses(Tape& tape, const kg::KnowledgeGraph& graph, const ModelParams& params,
                      const ModelOptions& options, const Forward& fwd,
                      std::span<const decoder::QueryKey> batch, const Tensor& text_targets) {
  Losses l;
  l.vq = quantizer::vq_loss(tape, fwd.quantized.heads, fwd.quantized.picked, options.beta,
                            graph.entity_count());
  l.structure = decoder::structure_loss(tape, graph, fwd.quantized.vectors, fwd.encoded.relations,
                                        params.dec, batch, options.label_smoothing);
  if (options.uses_semantics()) {
    if (!text_targets) fail(ErrorKind::kCoverage, "semantic loss enabled without text embeddings");
    l.semantic = decoder::semantic_loss(tape, fwd.quantized.vectors, text_targets, params.dec.ws);
  }
  l.total = decoder::total_loss(tape, l.vq, l.structure, l.semantic);
  return l;
}

Scorer::Scorer(const kg::KnowledgeGraph& graph, const ModelParams& params,
               const ModelOptions& options)
    : dec_(params.dec),
      codebook_size_(params.codebook.size()),
      heads_(params.quant.heads) {
  Tape tape(false);
  CounterRng unused;
  const Forward fwd = forward(tape, graph, params, options, false, unused);
  quantized_ = fwd.quantized.vectors;
  relations_ = fwd.encoded.relations;
  indices_ = fwd.quantized.indices;
}

std::vector<double> Scorer::score_queries(std::span<const decoder::QueryKey> queries) const {
  if (queries.empty()) return {};
  std::vector<std::uint32_t> heads(queries.size()), rels(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    heads[i] = queries[i].first;
    rels[i] = queries[i].second;
  }
  Tape tape(false);
  const Tensor scores =
      decoder::conve_score(tape, nk::gather_rows(tape, quantized_, heads),
                           nk::gather_rows(tape, relations_, rels), quantized_, dec_);
  return {scores->values().begin(), scores->values().end()};
}

std::vector<double> Scorer::score_tails(kg::EntityId h, kg::RelationId r) const {
  const decoder::QueryKey q{h, r};
  return score_queries(std::span<const decoder::QueryKey>(&q, 1));
}

quantizer::EntityCodeTable Scorer::code_table() const {
  quantizer::EntityCodeTable table(codebook_size_, heads_, indices_);
  table.set_vectors(quantized_->dim(1),
                    std::vector<double>(quantized_->values().begin(), quantized_->values().end()));
  return table;
}

}  // namespace ssqr::model
