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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ssqr/error.hpp"
#include "ssqr/evaluator.hpp"
#include "ssqr/rng.hpp"

using namespace ssqr;
using namespace ssqr::evaluator;
using quantizer::CodeIndex;
using quantizer::EntityCodeTable;

namespace {

// Mean 1-based position of the gold's tie group after a full descending sort.
double sorted_rank(const std::vector<double>& scores, kg::EntityId gold,
                   const std::set<kg::EntityId>& filter) {
  std::vector<double> kept;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (e == gold || !filter.count(static_cast<kg::EntityId>(e))) kept.push_back(scores[e]);
  }
  std::sort(kept.begin(), kept.end(), std::greater<>());
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] == scores[gold]) {
      sum += static_cast<double>(i + 1);
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

double brute_jaccard(const EntityCodeTable& t, std::size_t k) {
  const std::size_t n = t.entity_count();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::set<CodeIndex> a(t.codes(i).begin(), t.codes(i).end());
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const std::set<CodeIndex> b(t.codes(j).begin(), t.codes(j).end());
      std::set<CodeIndex> uni = a;
      uni.insert(b.begin(), b.end());
      std::size_t inter = 0;
      for (CodeIndex c : a) inter += b.count(c);
      d.emplace_back(static_cast<double>(uni.size() - inter) / static_cast<double>(uni.size()), j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t m = 0; m < k; ++m) total += d[m].first;
  }
  return total / static_cast<double>(n * k);
}

}  // namespace

TEST_CASE("rank_query examples") {
  const std::vector<double> s{0.1, 0.9, 0.5, 0.3};
  CHECK(rank_query(s, 1, {}) == 1.0);
  CHECK(rank_query(s, 3, {}) == 3.0);
  const std::vector<double> tied{0.2, 0.7, 0.7, 0.1};
  CHECK(rank_query(tied, 1, {}) == 1.5);
  const kg::EntityId filter[] = {1, 2};
  CHECK(rank_query(tied, 1, filter) == 1.0);
  CHECK(rank_query(s, 3, filter) == 1.0);
  CHECK_THROWS_AS(rank_query(s, 4, {}), Error);
}

TEST_CASE("rank_query agrees with a sort-based oracle") {
  CounterRng rng(31, 0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> scores(n);
    for (double& v : scores) v = static_cast<double>(rng.below(trial % 3 == 0 ? 4 : 1000));
    const auto gold = static_cast<kg::EntityId>(rng.below(n));
    std::set<kg::EntityId> filter;
    for (std::size_t e = 0; e < n; ++e) {
      if (rng.uniform() < 0.3) filter.insert(static_cast<kg::EntityId>(e));
    }
    if (trial % 2) filter.insert(gold);
    const std::vector<kg::EntityId> sorted(filter.begin(), filter.end());
    CHECK(rank_query(scores, gold, sorted) == sorted_rank(scores, gold, filter));
  }
}

TEST_CASE("adding a known tail never worsens the rank") {
  CounterRng rng(32, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng.below(30);
    std::vector<double> scores(n);
    for (double& v : scores) v = static_cast<double>(rng.below(6));
    const auto gold = static_cast<kg::EntityId>(rng.below(n));
    std::set<kg::EntityId> filter;
    double previous = rank_query(scores, gold, {});
    for (std::size_t step = 0; step < n; ++step) {
      filter.insert(static_cast<kg::EntityId>(rng.below(n)));
      const std::vector<kg::EntityId> sorted(filter.begin(), filter.end());
      const double r = rank_query(scores, gold, sorted);
      CHECK(r <= previous);
      previous = r;
    }
  }
}

TEST_CASE("rank summaries") {
  const auto r = summarize_ranks({1, 2, 4});
  CHECK(r.mrr == doctest::Approx(0.58333333333).epsilon(1e-10));
  CHECK(r.hits1 == doctest::Approx(1.0 / 3.0));
  CHECK(r.hits3 == doctest::Approx(2.0 / 3.0));
  CHECK(r.hits10 == 1.0);
  const auto ones = summarize_ranks({1, 1, 1});
  CHECK(ones.mrr == 1.0);
  CHECK(ones.hits1 == 1.0);
  CHECK(ones.hits10 == 1.0);
  const auto tied = summarize_ranks({1.5, 3.5, 12});
  CHECK(tied.hits1 == 0.0);
  CHECK(tied.hits3 == doctest::Approx(1.0 / 3.0));
  CHECK(tied.hits3 <= tied.hits10);
}

TEST_CASE("link prediction evaluates both directions with filtering") {
  const auto g = kg::KnowledgeGraph::build({"a", "b", "c", "d"}, {"r"},
                                           {{0, 0, 1}, {0, 0, 2}}, {}, {{0, 0, 3}, {2, 0, 3}});
  std::vector<kg::KnowledgeGraph::QueryKey> seen;
  // Entity id as score: d is always top, then c, b, a.
  const QueryScorer scorer = [&](std::span<const kg::KnowledgeGraph::QueryKey> keys) {
    seen.insert(seen.end(), keys.begin(), keys.end());
    std::vector<double> s;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      for (int e = 0; e < 4; ++e) s.push_back(e);
    }
    return s;
  };
  const auto report = link_prediction_eval(g, scorer, g.test(), 3);
  const kg::RelationId rev = g.reverse_of(0);
  CHECK(seen == std::vector<kg::KnowledgeGraph::QueryKey>{{0, 0}, {3, rev}, {2, 0}, {3, rev}});
  // Head queries from d know tails {a, c}; d itself stays a candidate.
  CHECK(report.ranks == std::vector<double>{1, 3, 1, 2});
  CHECK(report.mrr == doctest::Approx((1 + 1.0 / 3 + 1 + 0.5) / 4));
}

TEST_CASE("entropy examples and bounds") {
  CHECK(general_entropy(EntityCodeTable(4, 2, {0, 1, 1, 0, 2, 2})) ==
        doctest::Approx(std::log2(3.0)));
  CHECK(general_entropy(EntityCodeTable(4, 2, {1, 1, 1, 1, 1, 1})) == 0.0);
  CHECK(general_entropy(EntityCodeTable(4, 1, {0, 0, 3, 3})) == doctest::Approx(1.0));
  // Positions {0,1,2} and {1,0,2}: 3 distinct values each.
  CHECK(position_entropy(EntityCodeTable(4, 2, {0, 1, 1, 0, 2, 2})) ==
        doctest::Approx(2.0 * std::log2(3.0)));
  const auto random = quantizer::random_code_assignment(64, 8, 3, 5);
  const double h = general_entropy(random);
  CHECK(h >= 0.0);
  CHECK(h <= std::log2(64.0) + 1e-12);
}

TEST_CASE("jaccard examples") {
  const CodeIndex a[] = {1, 2}, b[] = {2, 3}, c[] = {2, 1, 1};
  CHECK(jaccard_distance(a, b) == doctest::Approx(2.0 / 3.0));
  CHECK(jaccard_distance(a, c) == 0.0);
  CHECK(jaccard_distance_metric(EntityCodeTable(4, 2, {1, 2, 2, 1}), 1) == 0.0);
  CHECK(jaccard_distance_metric(EntityCodeTable(4, 2, {1, 2, 2, 3}), 1) ==
        doctest::Approx(2.0 / 3.0));
  CHECK(jaccard_distance_metric(EntityCodeTable(4, 2, {3, 3, 3, 3, 3, 3}), 2) == 0.0);
  CHECK_THROWS_AS(jaccard_distance_metric(EntityCodeTable(4, 2, {1, 2, 2, 3}), 2), Error);
  CHECK_THROWS_AS(jaccard_distance_metric(EntityCodeTable(4, 2, {1, 2, 2, 3}), 0), Error);
}

TEST_CASE("jaccard metric matches an all-pairs recomputation") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto t = quantizer::random_code_assignment(20, 6 + seed % 5, 4, seed);
    for (std::size_t k : {1, 3, 10, 19}) {
      const double v = jaccard_distance_metric(t, k);
      CHECK(v == doctest::Approx(brute_jaccard(t, k)).epsilon(1e-14));
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("similarity matrix") {
  const std::vector<std::vector<double>> v{{1, 0}, {2, 0}, {0, 3}, {0, 0}, {-1, 0}};
  const auto m = similarity_matrix(v, {"a", "b", "c", "z", "n"});
  CHECK(m.at(0, 1) == 1.0);
  CHECK(m.at(0, 2) == 0.0);
  CHECK(m.at(0, 4) == -1.0);
  CHECK(m.at(3, 3) == 0.0);
  CHECK(m.at(3, 0) == 0.0);
  CHECK(m.at(2, 2) == 1.0);
  CHECK(m.zero_vectors == 1);
  std::ostringstream os;
  const std::vector<std::vector<double>> two{{1, 0}, {1, 1}};
  write_similarity_csv(os, similarity_matrix(two, {"x", "y"}));
  CHECK(os.str() == ",x,y\nx,1,0.7071067811865475\ny,0.7071067811865475,1\n");

  CounterRng rng(33, 0);
  std::vector<std::vector<double>> r(8, std::vector<double>(5));
  for (auto& row : r) for (double& x : row) x = rng.uniform(-1.0, 1.0);
  const auto rm = similarity_matrix(r, {"0", "1", "2", "3", "4", "5", "6", "7"});
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        dot += r[i][k] * r[j][k];
        ni += r[i][k] * r[i][k];
        nj += r[j][k] * r[j][k];
      }
      CHECK(rm.at(i, j) == rm.at(j, i));
      CHECK(rm.at(i, j) == doctest::Approx(dot / std::sqrt(ni * nj)).epsilon(1e-12));
      CHECK(std::abs(rm.at(i, j)) <= 1.0);
    }
  }
}

TEST_CASE("report serialization") {
  EvalReport report;
  report.ranking = summarize_ranks({1, 2});
  report.entropy = 1.5;
  report.jaccard[3] = 0.25;
  const auto j = to_json(report);
  CHECK(j.dump() ==
        R"({"mrr":0.75,"hits@1":0.5,"hits@3":1.0,"hits@10":1.0,"queries":2,"ranks":[1.0,2.0],)"
        R"("entropy":1.5,"jaccard":{"3":0.25}})");
  CHECK_FALSE(to_json(report, false).contains("ranks"));
  const auto table = to_table(report);
  CHECK(table.find("MRR               0.7500\n") != std::string::npos);
  CHECK(table.find("jaccard@3         0.2500\n") != std::string::npos);
}
