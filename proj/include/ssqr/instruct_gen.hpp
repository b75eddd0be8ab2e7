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

#ifndef SSQR_INSTRUCT_GEN_HPP
#define SSQR_INSTRUCT_GEN_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssqr/kg_store.hpp"
#include "ssqr/model.hpp"
#include "ssqr/quantizer.hpp"

namespace ssqr::instruct {

struct RenderConfig {
  std::string token_template = "[{q}]";
  std::size_t top_k_output = 3;
  std::size_t candidates_per_query = 20;
  std::size_t classification_negative_rate = 16;
  std::size_t n_render = 16;
};

void validate(const RenderConfig& config, const quantizer::EntityCodeTable& codes);

struct InstructionRecord {
  std::string instruction;
  std::string input;
  std::string output;

  friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

// Text helpers shared by both tasks. names may be null.
struct RenderContext {
  const kg::KnowledgeGraph* graph = nullptr;
  const quantizer::EntityCodeTable* codes = nullptr;
  const kg::DisplayNames* names = nullptr;
  RenderConfig config;

  std::string entity_name(kg::EntityId e) const;
  std::string relation_name(kg::RelationId r) const;
};

std::string render_token(quantizer::CodeIndex code, std::string_view token_template);
// First n_render codes of the entity, space-joined.
std::string render_codes(kg::EntityId entity, const quantizer::EntityCodeTable& codes,
                         const RenderConfig& config);
// Inverse of render_token; nullopt when the token does not fit the template.
std::optional<quantizer::CodeIndex> parse_code_token(std::string_view token,
                                                     std::string_view token_template);

// candidates are in model order. Sets *gold_injected when the gold had to
// replace the last candidate.
InstructionRecord gen_link_prediction(const RenderContext& ctx, kg::KnowledgeGraph::QueryKey query,
                                      kg::EntityId gold, std::span<const kg::EntityId> candidates,
                                      bool* gold_injected = nullptr);

InstructionRecord gen_triple_classification(const RenderContext& ctx, const kg::Triple& triple,
                                            bool label);

struct LinkPredictionDataset {
  std::vector<InstructionRecord> records;
  std::size_t gold_injected = 0;
};

// One tail query per triple; the reverse head query is added when the
// candidate table lists it.
LinkPredictionDataset build_link_prediction_dataset(const RenderContext& ctx,
                                                    std::span<const kg::Triple> split,
                                                    const kg::CandidateTable& candidates);

struct ClassificationDataset {
  std::vector<InstructionRecord> records;
  std::vector<std::string> warnings;
};

// Each positive is followed by its tail-corrupted negatives, none of which
// appears in the graph's filter index.
ClassificationDataset build_classification_dataset(const RenderContext& ctx,
                                                   std::span<const kg::Triple> split,
                                                   std::uint64_t seed);

std::pair<std::vector<kg::Triple>, std::vector<kg::Triple>> split_valid_for_preference(
    std::span<const kg::Triple> valid, std::uint64_t seed);

// Top-k tails per query by model score, ties to the lower id. Both
// directions of every triple are covered.
kg::CandidateTable candidates_from_scorer(const kg::KnowledgeGraph& graph,
                                          const model::Scorer& scorer,
                                          std::span<const kg::Triple> split, std::size_t k);

std::string to_jsonl(std::span<const InstructionRecord> records);
void write_jsonl(const std::filesystem::path& path, std::span<const InstructionRecord> records);
std::vector<InstructionRecord> read_jsonl(const std::filesystem::path& path);

}  // namespace ssqr::instruct

#endif  // SSQR_INSTRUCT_GEN_HPP
