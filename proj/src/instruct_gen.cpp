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

#include "ssqr/instruct_gen.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "ssqr/error.hpp"
#include "ssqr/rng.hpp"

namespace ssqr::instruct {

namespace {

constexpr std::string_view kPlaceholder = "{q}";
constexpr std::uint64_t kNegativeStream = 0x4e454753;  // "NEGS"
constexpr std::uint64_t kPreferenceStream = 0x50524546;  // "PREF"

constexpr std::string_view kLinkInstruction =
    "This is a knowledge graph completion task, which needs to predict the tail entity for an "
    "incomplete query triplet.";
constexpr std::string_view kClassificationInstruction =
    "Given a triple in the knowledge graph, you need to predict its validity based on the triple "
    "itself and entities' quantized representations.";

std::pair<std::string_view, std::string_view> split_template(std::string_view tmpl) {
  const auto pos = tmpl.find(kPlaceholder);
  if (pos == std::string_view::npos || tmpl.find(kPlaceholder, pos + 1) != std::string_view::npos) {
    fail(ErrorKind::kParameter,
         "token template '" + std::string(tmpl) + "' must contain exactly one {q}");
  }
  return {tmpl.substr(0, pos), tmpl.substr(pos + kPlaceholder.size())};
}

void check_entity(const quantizer::EntityCodeTable& codes, kg::EntityId e) {
  if (e >= codes.entity_count()) {
    fail(ErrorKind::kCoverage, "entity " + std::to_string(e) + " has no codes (table covers " +
                                   std::to_string(codes.entity_count()) + " entities)");
  }
}

}  // namespace

void validate(const RenderConfig& config, const quantizer::EntityCodeTable& codes) {
  split_template(config.token_template);
  if (config.top_k_output == 0) fail(ErrorKind::kParameter, "top_k_output must be positive");
  if (config.top_k_output > config.candidates_per_query) {
    fail(ErrorKind::kParameter, "top_k_output exceeds candidates_per_query");
  }
  if (config.n_render == 0 || config.n_render > codes.codes_per_entity()) {
    fail(ErrorKind::kParameter, "n_render " + std::to_string(config.n_render) +
                                    " must be in [1, " +
                                    std::to_string(codes.codes_per_entity()) + "]");
  }
}

std::string RenderContext::entity_name(kg::EntityId e) const {
  if (names != nullptr) return std::string(names->name(e, graph->entities()));
  return std::string(graph->entities().label(e));
}

std::string RenderContext::relation_name(kg::RelationId r) const {
  return std::string(graph->relations().label(r));
}

std::string render_token(quantizer::CodeIndex code, std::string_view token_template) {
  const auto [prefix, suffix] = split_template(token_template);
  std::string out(prefix);
  out += std::to_string(code);
  out += suffix;
  return out;
}

std::string render_codes(kg::EntityId entity, const quantizer::EntityCodeTable& codes,
                         const RenderConfig& config) {
  check_entity(codes, entity);
  const auto row = codes.codes(entity);
  if (config.n_render > row.size()) {
    fail(ErrorKind::kParameter, "n_render exceeds the codes per entity");
  }
  std::string out;
  for (std::size_t i = 0; i < config.n_render; ++i) {
    if (i) out += ' ';
    out += render_token(row[i], config.token_template);
  }
  return out;
}

std::optional<quantizer::CodeIndex> parse_code_token(std::string_view token,
                                                     std::string_view token_template) {
  const auto [prefix, suffix] = split_template(token_template);
  if (token.size() <= prefix.size() + suffix.size()) return std::nullopt;
  if (!token.starts_with(prefix) || !token.ends_with(suffix)) return std::nullopt;
  const std::string_view digits =
      token.substr(prefix.size(), token.size() - prefix.size() - suffix.size());
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::nullopt;
  }
  quantizer::CodeIndex value = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return value;
}

InstructionRecord gen_link_prediction(const RenderContext& ctx, kg::KnowledgeGraph::QueryKey query,
                                      kg::EntityId gold, std::span<const kg::EntityId> candidates,
                                      bool* gold_injected) {
  const RenderConfig& cfg = ctx.config;
  std::vector<kg::EntityId> shown(
      candidates.begin(),
      candidates.begin() + static_cast<std::ptrdiff_t>(
                               std::min(candidates.size(), cfg.candidates_per_query)));
  if (shown.size() < cfg.top_k_output) {
    fail(ErrorKind::kParameter, "query needs at least " + std::to_string(cfg.top_k_output) +
                                    " candidates, got " + std::to_string(shown.size()));
  }
  const bool injected = std::find(shown.begin(), shown.end(), gold) == shown.end();
  if (injected) shown.back() = gold;
  if (gold_injected != nullptr) *gold_injected = injected;

  const auto [h, r] = query;
  std::string input = "The query triplet is (" + ctx.entity_name(h) + ", " + ctx.relation_name(r) +
                      ", ?).\n";
  input += "The quantized representation of entity " + ctx.entity_name(h) +
           " is: " + render_codes(h, *ctx.codes, cfg) + "\n";
  input += "The answer candidates and corresponding quantized representations are as follows:\n";
  for (kg::EntityId c : shown) {
    input += ctx.entity_name(c) + ", " + render_codes(c, *ctx.codes, cfg) + "\n";
  }
  input += "Please generate quantized representations of the top-" +
           std::to_string(cfg.top_k_output) + " potential answers, ranked from highest to lowest:";

  std::vector<kg::EntityId> ranked{gold};
  for (kg::EntityId c : shown) {
    if (ranked.size() == cfg.top_k_output) break;
    if (c != gold) ranked.push_back(c);
  }
  std::string output;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (i) output += '\n';
    output += std::to_string(i + 1) + ". " + render_codes(ranked[i], *ctx.codes, cfg);
  }
  return {std::string(kLinkInstruction), std::move(input), std::move(output)};
}

InstructionRecord gen_triple_classification(const RenderContext& ctx, const kg::Triple& triple,
                                            bool label) {
  const std::string head = ctx.entity_name(triple.head);
  const std::string tail = ctx.entity_name(triple.tail);
  std::string input = "The triple is: (" + head + ", " + ctx.relation_name(triple.relation) + ", " +
                      tail + ")\n";
  input += "The quantized representation of entity " + head +
           " is: " + render_codes(triple.head, *ctx.codes, ctx.config) + "\n";
  input += "The quantized representation of entity " + tail +
           " is: " + render_codes(triple.tail, *ctx.codes, ctx.config) + "\n";
  input += "Please determine the validity of the triple and respond True or False.";
  return {std::string(kClassificationInstruction), std::move(input), label ? "True" : "False"};
}

LinkPredictionDataset build_link_prediction_dataset(const RenderContext& ctx,
                                                    std::span<const kg::Triple> split,
                                                    const kg::CandidateTable& candidates) {
  validate(ctx.config, *ctx.codes);
  LinkPredictionDataset out;
  auto emit = [&](kg::EntityId h, kg::RelationId r, kg::EntityId gold,
                  const std::vector<kg::EntityId>& list) {
    bool injected = false;
    out.records.push_back(gen_link_prediction(ctx, {h, r}, gold, list, &injected));
    if (injected) ++out.gold_injected;
  };
  for (const kg::Triple& t : split) {
    const auto* tail_list = candidates.find(t.head, t.relation);
    if (tail_list == nullptr) {
      fail(ErrorKind::kCoverage, "no candidates for query (" +
                                     std::string(ctx.graph->entities().label(t.head)) + ", " +
                                     ctx.relation_name(t.relation) + ", ?)");
    }
    emit(t.head, t.relation, t.tail, *tail_list);
    const kg::RelationId rev = ctx.graph->reverse_of(t.relation);
    if (const auto* head_list = candidates.find(t.tail, rev)) emit(t.tail, rev, t.head, *head_list);
  }
  return out;
}

ClassificationDataset build_classification_dataset(const RenderContext& ctx,
                                                   std::span<const kg::Triple> split,
                                                   std::uint64_t seed) {
  if (split.empty()) fail(ErrorKind::kParameter, "classification split is empty");
  validate(ctx.config, *ctx.codes);
  ClassificationDataset out;
  CounterRng rng(seed, kNegativeStream);
  const std::size_t entities = ctx.graph->entity_count();
  const std::size_t rate = ctx.config.classification_negative_rate;
  for (const kg::Triple& t : split) {
    out.records.push_back(gen_triple_classification(ctx, t, true));
    const auto known = ctx.graph->known_tails(t.head, t.relation);
    std::vector<kg::EntityId> pool;
    for (std::size_t e = 0; e < entities; ++e) {
      const auto id = static_cast<kg::EntityId>(e);
      if (!std::binary_search(known.begin(), known.end(), id)) pool.push_back(id);
    }
    const std::size_t take = std::min(rate, pool.size());
    if (take < rate) {
      out.warnings.push_back("triple (" + ctx.entity_name(t.head) + ", " +
                             ctx.relation_name(t.relation) + ", " + ctx.entity_name(t.tail) +
                             "): " + std::to_string(take) + " of " + std::to_string(rate) +
                             " negatives available");
    }
    // Partial Fisher-Yates over the admissible tails.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.records.push_back(
          gen_triple_classification(ctx, {t.head, t.relation, pool[i]}, false));
    }
  }
  return out;
}

std::pair<std::vector<kg::Triple>, std::vector<kg::Triple>> split_valid_for_preference(
    std::span<const kg::Triple> valid, std::uint64_t seed) {
  if (valid.size() < 10) {
    fail(ErrorKind::kParameter, "preference split needs at least 10 triples, got " +
                                    std::to_string(valid.size()));
  }
  std::vector<kg::Triple> shuffled(valid.begin(), valid.end());
  CounterRng rng(seed, kPreferenceStream);
  rng.shuffle(std::span<kg::Triple>(shuffled));
  const std::size_t tune = shuffled.size() * 9 / 10;
  std::vector<kg::Triple> holdout(shuffled.begin() + static_cast<std::ptrdiff_t>(tune),
                                  shuffled.end());
  shuffled.resize(tune);
  return {std::move(shuffled), std::move(holdout)};
}

kg::CandidateTable candidates_from_scorer(const kg::KnowledgeGraph& graph,
                                          const model::Scorer& scorer,
                                          std::span<const kg::Triple> split, std::size_t k) {
  std::vector<kg::KnowledgeGraph::QueryKey> keys;
  for (const kg::Triple& t : split) {
    keys.emplace_back(t.head, t.relation);
    keys.emplace_back(t.tail, graph.reverse_of(t.relation));
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  const std::size_t n = graph.entity_count();
  k = std::min(k, n);
  kg::CandidateTable table;
  const auto scores = scorer.score_queries(keys);
  for (std::size_t q = 0; q < keys.size(); ++q) {
    const double* row = scores.data() + q * n;
    std::vector<kg::EntityId> order(n);
    std::iota(order.begin(), order.end(), kg::EntityId{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](kg::EntityId a, kg::EntityId b) {
                        return row[a] != row[b] ? row[a] > row[b] : a < b;
                      });
    order.resize(k);
    table.queries.emplace(keys[q], std::move(order));
  }
  return table;
}

std::string to_jsonl(std::span<const InstructionRecord> records) {
  std::string out;
  for (const InstructionRecord& r : records) {
    nlohmann::ordered_json j;
    j["instruction"] = r.instruction;
    j["input"] = r.input;
    j["output"] = r.output;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const InstructionRecord> records) {
  const std::string text = to_jsonl(records);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out << text;
    if (!out) fail(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<InstructionRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<InstructionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      records.push_back({j.at("instruction").get<std::string>(), j.at("input").get<std::string>(),
                         j.at("output").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace ssqr::instruct
