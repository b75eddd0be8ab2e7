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

#ifndef SSQR_EVALUATOR_HPP
#define SSQR_EVALUATOR_HPP

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssqr/kg_store.hpp"
#include "ssqr/quantizer.hpp"

namespace ssqr::evaluator {

struct RankingReport {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::vector<double> ranks;
};

// Filtered rank of gold: every known tail except gold is removed, then
// rank = 1 + #(score > gold) + #(ties) / 2, i.e. the mean rank among ties.
double rank_query(std::span<const double> scores, kg::EntityId gold,
                  std::span<const kg::EntityId> known_tails);

RankingReport summarize_ranks(std::vector<double> ranks);

// Row-major [queries x |E|] scores.
using QueryScorer =
    std::function<std::vector<double>(std::span<const kg::KnowledgeGraph::QueryKey>)>;

// Tail queries (h, r, ?) and head queries rewritten as (t, reverse(r), ?),
// in split order, tail query first.
RankingReport link_prediction_eval(const kg::KnowledgeGraph& graph, const QueryScorer& scorer,
                                   std::span<const kg::Triple> split,
                                   std::size_t batch_size = 256);

// Shannon entropy (bits) of the distribution of whole code sequences.
double general_entropy(const quantizer::EntityCodeTable& table);
// Sum over code positions of the entropy of that position's code.
double position_entropy(const quantizer::EntityCodeTable& table);

// (|A u B| - |A n B|) / |A u B| over the code sets.
double jaccard_distance(std::span<const quantizer::CodeIndex> a,
                        std::span<const quantizer::CodeIndex> b);

// Mean distance from each entity to its k nearest others (ties by lower id).
double jaccard_distance_metric(const quantizer::EntityCodeTable& table, std::size_t k);

struct SimilarityMatrix {
  std::vector<std::string> labels;
  std::vector<double> values;  // row-major n x n
  std::size_t zero_vectors = 0;

  std::size_t size() const noexcept { return labels.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * size() + j]; }
};

// Cosine similarity; a zero vector has similarity 0 to everything.
SimilarityMatrix similarity_matrix(std::span<const std::vector<double>> vectors,
                                   std::vector<std::string> labels);
void write_similarity_csv(std::ostream& out, const SimilarityMatrix& matrix);

struct EvalReport {
  std::optional<RankingReport> ranking;
  std::optional<double> entropy;
  std::optional<double> position_entropy;
  std::map<std::size_t, double> jaccard;
};

nlohmann::ordered_json to_json(const EvalReport& report, bool include_ranks = true);
std::string to_table(const EvalReport& report);

}  // namespace ssqr::evaluator

#endif  // SSQR_EVALUATOR_HPP
