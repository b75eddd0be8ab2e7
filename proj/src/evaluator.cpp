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

#include "ssqr/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "ssqr/error.hpp"

namespace ssqr::evaluator {

namespace {

std::vector<quantizer::CodeIndex> code_set(std::span<const quantizer::CodeIndex> codes) {
  std::vector<quantizer::CodeIndex> set(codes.begin(), codes.end());
  std::sort(set.begin(), set.end());
  set.erase(std::unique(set.begin(), set.end()), set.end());
  return set;
}

double sorted_set_distance(const std::vector<quantizer::CodeIndex>& a,
                           const std::vector<quantizer::CodeIndex>& b) {
  std::size_t i = 0, j = 0, common = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++common;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t unite = a.size() + b.size() - common;
  if (unite == 0) return 0.0;
  return static_cast<double>(unite - common) / static_cast<double>(unite);
}

double entropy_of_counts(const std::map<std::vector<quantizer::CodeIndex>, std::size_t>& counts,
                         std::size_t total) {
  double h = 0.0;
  for (const auto& [key, count] : counts) {
    const double p = static_cast<double>(count) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

double rank_query(std::span<const double> scores, kg::EntityId gold,
                  std::span<const kg::EntityId> known_tails) {
  if (gold >= scores.size()) fail(ErrorKind::kIndex, "rank_query: gold entity out of range");
  const double gold_score = scores[gold];
  std::size_t higher = 0, ties = 0;
  auto filtered = known_tails.begin();
  for (std::size_t e = 0; e < scores.size(); ++e) {
    while (filtered != known_tails.end() && *filtered < e) ++filtered;
    if (e == gold) continue;
    if (filtered != known_tails.end() && *filtered == e) continue;
    if (scores[e] > gold_score) {
      ++higher;
    } else if (scores[e] == gold_score) {
      ++ties;
    }
  }
  return 1.0 + static_cast<double>(higher) + 0.5 * static_cast<double>(ties);
}

RankingReport summarize_ranks(std::vector<double> ranks) {
  RankingReport report;
  if (ranks.empty()) return report;
  for (double r : ranks) {
    report.mrr += 1.0 / r;
    report.hits1 += r <= 1.0 ? 1.0 : 0.0;
    report.hits3 += r <= 3.0 ? 1.0 : 0.0;
    report.hits10 += r <= 10.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ranks.size());
  report.mrr /= n;
  report.hits1 /= n;
  report.hits3 /= n;
  report.hits10 /= n;
  report.ranks = std::move(ranks);
  return report;
}

RankingReport link_prediction_eval(const kg::KnowledgeGraph& graph, const QueryScorer& scorer,
                                   std::span<const kg::Triple> split, std::size_t batch_size) {
  struct Query {
    kg::KnowledgeGraph::QueryKey key;
    kg::EntityId gold;
  };
  std::vector<Query> queries;
  queries.reserve(2 * split.size());
  for (const kg::Triple& t : split) {
    queries.push_back({{t.head, t.relation}, t.tail});
    queries.push_back({{t.tail, graph.reverse_of(t.relation)}, t.head});
  }
  std::vector<double> ranks;
  ranks.reserve(queries.size());
  const std::size_t n = graph.entity_count();
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < queries.size(); start += batch_size) {
    const std::size_t end = std::min(queries.size(), start + batch_size);
    std::vector<kg::KnowledgeGraph::QueryKey> keys;
    for (std::size_t i = start; i < end; ++i) keys.push_back(queries[i].key);
    const auto scores = scorer(keys);
    if (scores.size() != keys.size() * n) {
      fail(ErrorKind::kShape, "link_prediction_eval: scorer returned the wrong number of scores");
    }
    for (std::size_t i = start; i < end; ++i) {
      const auto row = std::span<const double>(scores).subspan((i - start) * n, n);
      const auto& q = queries[i];
      ranks.push_back(rank_query(row, q.gold, graph.known_tails(q.key.first, q.key.second)));
    }
  }
  return summarize_ranks(std::move(ranks));
}

double general_entropy(const quantizer::EntityCodeTable& table) {
  std::map<std::vector<quantizer::CodeIndex>, std::size_t> counts;
  for (std::size_t e = 0; e < table.entity_count(); ++e) {
    const auto codes = table.codes(e);
    ++counts[std::vector<quantizer::CodeIndex>(codes.begin(), codes.end())];
  }
  return entropy_of_counts(counts, table.entity_count());
}

double position_entropy(const quantizer::EntityCodeTable& table) {
  double total = 0.0;
  for (std::size_t pos = 0; pos < table.codes_per_entity(); ++pos) {
    std::map<std::vector<quantizer::CodeIndex>, std::size_t> counts;
    for (std::size_t e = 0; e < table.entity_count(); ++e) ++counts[{table.codes(e)[pos]}];
    total += entropy_of_counts(counts, table.entity_count());
  }
  return total;
}

double jaccard_distance(std::span<const quantizer::CodeIndex> a,
                        std::span<const quantizer::CodeIndex> b) {
  return sorted_set_distance(code_set(a), code_set(b));
}

double jaccard_distance_metric(const quantizer::EntityCodeTable& table, std::size_t k) {
  const std::size_t n = table.entity_count();
  if (k == 0 || k >= n) {
    fail(ErrorKind::kParameter, "jaccard k must be in [1, " + std::to_string(n) + "), got " +
                                    std::to_string(k));
  }
  std::vector<std::vector<quantizer::CodeIndex>> sets(n);
  for (std::size_t e = 0; e < n; ++e) sets[e] = code_set(table.codes(e));
  double total = 0.0;
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dist.emplace_back(sorted_set_distance(sets[i], sets[j]), j);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    double row = 0.0;
    for (std::size_t m = 0; m < k; ++m) row += dist[m].first;
    total += row;
  }
  return total / static_cast<double>(n * k);
}

SimilarityMatrix similarity_matrix(std::span<const std::vector<double>> vectors,
                                   std::vector<std::string> labels) {
  const std::size_t n = vectors.size();
  if (labels.size() != n) fail(ErrorKind::kShape, "similarity_matrix: one label per vector");
  SimilarityMatrix m;
  m.labels = std::move(labels);
  m.values.assign(n * n, 0.0);
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (vectors[i].size() != vectors[0].size()) {
      fail(ErrorKind::kShape, "similarity_matrix: vectors differ in length");
    }
    for (double v : vectors[i]) norms[i] += v * v;
    norms[i] = std::sqrt(norms[i]);
    if (norms[i] == 0.0) ++m.zero_vectors;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double sim = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        if (i == j) {
          sim = 1.0;
        } else {
          double dot = 0.0;
          for (std::size_t d = 0; d < vectors[i].size(); ++d) dot += vectors[i][d] * vectors[j][d];
          sim = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
        }
      }
      m.values[i * n + j] = sim;
      m.values[j * n + i] = sim;
    }
  }
  return m;
}

void write_similarity_csv(std::ostream& out, const SimilarityMatrix& matrix) {
  const std::size_t n = matrix.size();
  for (std::size_t j = 0; j < n; ++j) out << ',' << matrix.labels[j];
  out << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out << matrix.labels[i];
    for (std::size_t j = 0; j < n; ++j) out << ',' << format_double(matrix.at(i, j));
    out << '\n';
  }
}

nlohmann::ordered_json to_json(const EvalReport& report, bool include_ranks) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  if (report.ranking) {
    const auto& r = *report.ranking;
    j["mrr"] = r.mrr;
    j["hits@1"] = r.hits1;
    j["hits@3"] = r.hits3;
    j["hits@10"] = r.hits10;
    j["queries"] = r.ranks.size();
    if (include_ranks) j["ranks"] = r.ranks;
  }
  if (report.entropy) j["entropy"] = *report.entropy;
  if (report.position_entropy) j["position_entropy"] = *report.position_entropy;
  if (!report.jaccard.empty()) {
    nlohmann::ordered_json jac = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.jaccard) jac[std::to_string(k)] = v;
    j["jaccard"] = jac;
  }
  return j;
}

std::string to_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& name, double v) {
    os << std::left << std::setw(18) << name << v << '\n';
  };
  if (report.ranking) {
    row("MRR", report.ranking->mrr);
    row("Hits@1", report.ranking->hits1);
    row("Hits@3", report.ranking->hits3);
    row("Hits@10", report.ranking->hits10);
    os << std::left << std::setw(18) << "queries" << report.ranking->ranks.size() << '\n';
  }
  if (report.entropy) row("entropy", *report.entropy);
  if (report.position_entropy) row("position entropy", *report.position_entropy);
  for (const auto& [k, v] : report.jaccard) row("jaccard@" + std::to_string(k), v);
  return os.str();
}

}  // namespace ssqr::evaluator
