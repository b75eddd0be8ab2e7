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
#include <set>
#include <sstream>

#include "ssqr/error.hpp"
#include "ssqr/instruct_gen.hpp"
#include "ssqr/trainer.hpp"
#include "tempdir.hpp"

using namespace ssqr;
using namespace ssqr::instruct;
using quantizer::EntityCodeTable;

namespace {

const std::string kToy = std::string(SSQR_FIXTURES) + "/toy";

struct Toy {
  kg::KnowledgeGraph graph = kg::load_dataset(kToy);
  EntityCodeTable codes;
  kg::DisplayNames names;
  kg::CandidateTable candidates;

  Toy() {
    std::vector<std::string> labels;
    for (std::size_t e = 0; e < graph.entity_count(); ++e) {
      labels.emplace_back(graph.entities().label(static_cast<kg::EntityId>(e)));
    }
    codes = quantizer::align_code_table(quantizer::read_code_table(kToy + "/codes.tsv"), labels);
    names = kg::DisplayNames::load(kToy + "/names.tsv", graph.entities());
    candidates = kg::load_candidates(kToy + "/candidates.tsv", graph);
  }

  RenderContext context(RenderConfig cfg = {}) const { return {&graph, &codes, &names, cfg}; }
};

struct Synthetic {
  kg::KnowledgeGraph graph;
  EntityCodeTable codes;

  explicit Synthetic(std::size_t n) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back("e" + std::to_string(i));
    CounterRng rng(61, 0);
    std::vector<kg::Triple> train;
    for (std::size_t i = 0; i < 3 * n; ++i) {
      train.push_back({static_cast<kg::EntityId>(rng.below(n)),
                       static_cast<kg::RelationId>(rng.below(2)),
                       static_cast<kg::EntityId>(rng.below(n))});
    }
    graph = kg::KnowledgeGraph::build(labels, {"r0", "r1"}, train, {}, {});
    codes = quantizer::random_code_assignment(n, 2048, 16, 5);
  }
};

std::vector<std::string> tokens_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string tok; in >> tok;) {
    if (tok.front() == '[') out.push_back(tok);
  }
  return out;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')) + 1;
}

}  // namespace

TEST_CASE("code tokens render and parse") {
  CHECK(render_token(2006, "[{q}]") == "[2006]");
  CHECK(render_token(7, "[CODE{q}]") == "[CODE7]");
  const EntityCodeTable t(4096, 3, {2006, 588, 350, 1, 2, 3});
  RenderConfig cfg;
  cfg.n_render = 2;
  CHECK(render_codes(0, t, cfg) == "[2006] [588]");
  cfg.token_template = "[CODE{q}]";
  CHECK(render_codes(1, t, cfg) == "[CODE1] [CODE2]");
  cfg.n_render = 1;
  CHECK(render_codes(1, t, cfg) == "[CODE1]");
  CHECK_THROWS_AS(render_codes(2, t, cfg), Error);
  cfg.n_render = 4;
  CHECK_THROWS_AS(render_codes(0, t, cfg), Error);

  CHECK(parse_code_token("[2006]", "[{q}]") == 2006u);
  CHECK(parse_code_token("[CODE12]", "[CODE{q}]") == 12u);
  CHECK_FALSE(parse_code_token("[CODE12]", "[{q}]").has_value());
  CHECK_FALSE(parse_code_token("[]", "[{q}]").has_value());
  CHECK_FALSE(parse_code_token("[1x]", "[{q}]").has_value());
  CHECK_FALSE(parse_code_token("[99999999999]", "[{q}]").has_value());
}

TEST_CASE("render config validation") {
  const EntityCodeTable t(8, 4, std::vector<quantizer::CodeIndex>(8, 1));
  RenderConfig cfg;
  cfg.n_render = 4;
  CHECK_NOTHROW(validate(cfg, t));
  cfg.n_render = 5;
  CHECK_THROWS_AS(validate(cfg, t), Error);
  cfg.n_render = 4;
  cfg.top_k_output = 21;
  CHECK_THROWS_AS(validate(cfg, t), Error);
  cfg.top_k_output = 3;
  cfg.token_template = "[q]";
  CHECK_THROWS_AS(validate(cfg, t), Error);
}

TEST_CASE("link prediction golden file") {
  const Toy toy;
  RenderConfig cfg;
  cfg.candidates_per_query = 5;
  const auto ds = build_link_prediction_dataset(toy.context(cfg), toy.graph.test(), toy.candidates);
  CHECK(ds.records.size() == 4);
  CHECK(ds.gold_injected == 1);
  CHECK(to_jsonl(ds.records) == ssqr::testing::read_file(kToy + "/golden_lp_test.jsonl"));
}

TEST_CASE("triple classification golden file") {
  const Toy toy;
  const auto ds = build_classification_dataset(toy.context(), toy.graph.test(), 42);
  CHECK(ds.records.size() == 20);
  CHECK(ds.warnings.size() == 2);
  CHECK(to_jsonl(ds.records) == ssqr::testing::read_file(kToy + "/golden_tc_test.jsonl"));
}

TEST_CASE("link prediction record structure") {
  const Synthetic s(30);
  RenderContext ctx{&s.graph, &s.codes, nullptr, {}};
  std::vector<kg::EntityId> candidates;
  for (kg::EntityId e = 29; e >= 5; --e) candidates.push_back(e);
  bool injected = true;
  const auto rec = gen_link_prediction(ctx, {0, 1}, 27, candidates, &injected);
  CHECK_FALSE(injected);
  // Query, head codes and header lines, 20 candidates, closing request.
  CHECK(count_lines(rec.input) == 24);
  CHECK(rec.input.starts_with("The query triplet is (e0, r1, ?).\n"));
  CHECK(rec.input.find("\ne29, " + render_codes(29, s.codes, ctx.config) + "\n") !=
        std::string::npos);
  CHECK(rec.input.find("\ne10, ") != std::string::npos);
  CHECK(rec.input.find("\ne9, ") == std::string::npos);
  CHECK(rec.output == "1. " + render_codes(27, s.codes, ctx.config) + "\n2. " +
                          render_codes(29, s.codes, ctx.config) + "\n3. " +
                          render_codes(28, s.codes, ctx.config));

  const auto moved = gen_link_prediction(ctx, {0, 1}, 3, candidates, &injected);
  CHECK(injected);
  CHECK(moved.input.find("\ne3, ") != std::string::npos);
  CHECK(moved.input.find("\ne10, ") == std::string::npos);
  CHECK(moved.output.starts_with("1. " + render_codes(3, s.codes, ctx.config) + "\n"));

  const kg::EntityId two[] = {1, 2};
  CHECK_THROWS_AS(gen_link_prediction(ctx, {0, 0}, 1, two), Error);
}

TEST_CASE("every rendered token parses back into the codebook") {
  const Synthetic s(40);
  for (const std::string tmpl : {"[{q}]", "[CODE{q}]", "<c{q}>"}) {
    RenderConfig cfg;
    cfg.token_template = tmpl;
    cfg.candidates_per_query = 10;
    RenderContext ctx{&s.graph, &s.codes, nullptr, cfg};
    kg::CandidateTable table;
    std::vector<kg::EntityId> list;
    for (kg::EntityId e = 0; e < 10; ++e) list.push_back(e);
    const auto split = std::span(s.graph.train()).first(10);
    for (const auto& t : split) table.queries[{t.head, t.relation}] = list;
    auto records = build_link_prediction_dataset(ctx, split, table).records;
    const auto tc = build_classification_dataset(ctx, split, 9).records;
    records.insert(records.end(), tc.begin(), tc.end());
    std::size_t seen = 0;
    for (const auto& r : records) {
      const std::string text = r.input + "\n" + r.output;
      std::istringstream in(text);
      for (std::string tok; in >> tok;) {
        if (tok.size() < 2 || !(tok.front() == '[' || tok.front() == '<')) continue;
        const auto code = parse_code_token(tok, tmpl);
        REQUIRE(code.has_value());
        CHECK(*code < 2048);
        ++seen;
      }
    }
    CHECK(seen > 0);
  }
}

TEST_CASE("link prediction output line 1 carries the gold codes") {
  const Toy toy;
  RenderConfig cfg;
  cfg.candidates_per_query = 5;
  const auto ds = build_link_prediction_dataset(toy.context(cfg), toy.graph.test(), toy.candidates);
  std::vector<kg::EntityId> golds;
  for (const auto& t : toy.graph.test()) {
    golds.push_back(t.tail);
    golds.push_back(t.head);
  }
  REQUIRE(ds.records.size() == golds.size());
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const auto& out = ds.records[i].output;
    CHECK(out.substr(0, out.find('\n')) == "1. " + render_codes(golds[i], toy.codes, cfg));
  }
  kg::CandidateTable empty;
  CHECK_THROWS_AS(build_link_prediction_dataset(toy.context(cfg), toy.graph.test(), empty),
                  Error);
}

TEST_CASE("classification negatives avoid known triples") {
  const Synthetic s(60);
  RenderContext ctx{&s.graph, &s.codes, nullptr, {}};
  const kg::Triple one[] = {s.graph.train()[0]};
  const auto single = build_classification_dataset(ctx, one, 1);
  CHECK(single.records.size() == 17);
  CHECK(single.warnings.empty());

  const auto split = std::span(s.graph.train()).first(25);
  const auto ds = build_classification_dataset(ctx, split, 77);
  CHECK(ds.records.size() == 25 * 17);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& in = ds.records[i].input;
    const auto open = in.find('('), close = in.find(')');
    std::string body = in.substr(open + 1, close - open - 1);
    const auto c1 = body.find(", "), c2 = body.rfind(", ");
    const auto h = s.graph.entities().find(body.substr(0, c1));
    const auto r = s.graph.relations().find(body.substr(c1 + 2, c2 - c1 - 2));
    const auto t = s.graph.entities().find(body.substr(c2 + 2));
    REQUIRE(h.has_value());
    REQUIRE(r.has_value());
    REQUIRE(t.has_value());
    const auto known = s.graph.known_tails(*h, *r);
    const bool is_known = std::find(known.begin(), known.end(), *t) != known.end();
    if (i % 17 == 0) {
      CHECK(ds.records[i].output == "True");
      CHECK(is_known);
      ++positives;
    } else {
      CHECK(ds.records[i].output == "False");
      CHECK_FALSE(is_known);
    }
  }
  CHECK(positives == 25);
  CHECK(to_jsonl(build_classification_dataset(ctx, split, 77).records) == to_jsonl(ds.records));
  CHECK(to_jsonl(build_classification_dataset(ctx, split, 78).records) != to_jsonl(ds.records));
  CHECK_THROWS_AS(build_classification_dataset(ctx, {}, 1), Error);
}

TEST_CASE("preference split sizes and determinism") {
  auto triples = [](std::size_t n) {
    std::vector<kg::Triple> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = {static_cast<kg::EntityId>(i), 0, 0};
    return v;
  };
  const auto ten = triples(10);
  const auto [tune10, hold10] = split_valid_for_preference(ten, 1);
  CHECK(tune10.size() == 9);
  CHECK(hold10.size() == 1);

  const auto big = triples(3034);
  const auto [tune, hold] = split_valid_for_preference(big, 7);
  CHECK(tune.size() == 2730);
  CHECK(hold.size() == 304);
  std::set<kg::EntityId> ids;
  for (const auto& t : tune) ids.insert(t.head);
  for (const auto& t : hold) ids.insert(t.head);
  CHECK(ids.size() == 3034);
  CHECK(split_valid_for_preference(big, 7) == std::make_pair(tune, hold));
  CHECK(split_valid_for_preference(big, 8).second != hold);
  CHECK_THROWS_AS(split_valid_for_preference(triples(9), 1), Error);
}

TEST_CASE("candidates from a model follow score order") {
  const Toy toy;
  trainer::TrainConfig c = trainer::load_config(kToy + "/config.txt");
  const auto state = trainer::init_state(c, toy.graph.entity_count(), toy.graph.relation_count(), 8);
  const model::Scorer scorer(toy.graph, state.params, trainer::model_options(c, 8));
  const auto table = candidates_from_scorer(toy.graph, scorer, toy.graph.test(), 4);
  CHECK(table.queries.size() == 4);
  for (const auto& [key, list] : table.queries) {
    const auto scores = scorer.score_tails(key.first, key.second);
    std::vector<kg::EntityId> order(scores.size());
    for (std::size_t e = 0; e < order.size(); ++e) order[e] = static_cast<kg::EntityId>(e);
    std::stable_sort(order.begin(), order.end(),
                     [&](kg::EntityId a, kg::EntityId b) { return scores[a] > scores[b]; });
    order.resize(4);
    CHECK(list == order);
  }
}

TEST_CASE("jsonl round trip") {
  ssqr::testing::TempDir dir;
  const std::vector<InstructionRecord> records{{"do \"this\"", "line1\nline2", "True"},
                                               {"ünïcode", "tab\there", "1. [3]"}};
  write_jsonl(dir / "out.jsonl", records);
  CHECK(read_jsonl(dir / "out.jsonl") == records);
  CHECK(ssqr::testing::read_file(dir / "out.jsonl") == to_jsonl(records));
  CHECK(to_jsonl(records).ends_with("}\n"));
  dir.write("bad.jsonl", "{\"instruction\": 1}\n");
  CHECK_THROWS_AS(read_jsonl(dir / "bad.jsonl"), Error);
}
