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

#include "ssqr/kg_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ssqr/error.hpp"

namespace ssqr::kg {

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return in;
}

std::uint32_t resolve(const Vocabulary& vocab, std::string_view label, const char* what,
                      const std::string& where) {
  const auto id = vocab.find(label);
  if (!id) fail(ErrorKind::kVocabulary, where + ": unknown " + what + " '" + std::string(label) + "'");
  return *id;
}

double parse_double(std::string_view text, const std::string& where) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    fail(ErrorKind::kFormat, where + ": invalid value '" + std::string(text) + "'");
  }
  return value;
}

std::size_t parse_count(std::string_view text, const std::string& where) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorKind::kFormat, where + ": invalid count '" + std::string(text) + "'");
  }
  return value;
}

void add_to_index(std::map<KnowledgeGraph::QueryKey, std::vector<EntityId>>& index, EntityId h,
                  RelationId r, EntityId t) {
  auto& tails = index[{h, r}];
  const auto it = std::lower_bound(tails.begin(), tails.end(), t);
  if (it == tails.end() || *it != t) tails.insert(it, t);
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> labels) {
  for (const auto& label : labels) {
    if (find(label)) fail(ErrorKind::kVocabulary, "duplicate label '" + label + "'");
    intern(label);
  }
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view label) const {
  const auto it = ids_.find(std::string(label));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t Vocabulary::intern(std::string_view label) {
  if (const auto id = find(label)) return *id;
  if (frozen_) fail(ErrorKind::kVocabulary, "unknown label '" + std::string(label) + "'");
  const auto id = static_cast<std::uint32_t>(labels_.size());
  labels_.emplace_back(label);
  ids_.emplace(labels_.back(), id);
  return id;
}

std::vector<Triple> parse_triples(std::istream& in, Vocabulary& entities, Vocabulary& relations,
                                  const std::string& source) {
  std::vector<Triple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() != 3) {
      fail(ErrorKind::kParse, where + ": expected 3 tab-separated fields, got " +
                                  std::to_string(fields.size()));
    }
    Triple t;
    try {
      t.head = entities.intern(fields[0]);
      t.relation = relations.intern(fields[1]);
      t.tail = entities.intern(fields[2]);
    } catch (const Error& e) {
      fail(e.kind(), where + ": " + e.what());
    }
    triples.push_back(t);
  }
  return triples;
}

std::vector<Triple> load_triples(const std::filesystem::path& path, Vocabulary& entities,
                                 Vocabulary& relations) {
  auto in = open_input(path);
  return parse_triples(in, entities, relations, path.string());
}

std::string reverse_relation_label(std::string_view label) {
  return "inverse relation of " + std::string(label);
}

KnowledgeGraph KnowledgeGraph::build(std::vector<std::string> entity_labels,
                                     std::vector<std::string> relation_labels,
                                     std::vector<Triple> train, std::vector<Triple> valid,
                                     std::vector<Triple> test) {
  KnowledgeGraph g;
  g.entities_ = Vocabulary(std::move(entity_labels));
  g.entities_.freeze();
  g.original_relations_ = relation_labels.size();
  std::vector<std::string> all_relations = relation_labels;
  for (const auto& label : relation_labels) all_relations.push_back(reverse_relation_label(label));
  g.relations_ = Vocabulary(std::move(all_relations));
  g.relations_.freeze();

  const std::size_t n_entities = g.entities_.size();
  auto check = [&](const std::vector<Triple>& split, const char* name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      const Triple& t = split[i];
      if (t.head >= n_entities || t.tail >= n_entities || t.relation >= g.original_relations_) {
        fail(ErrorKind::kIndex, std::string(name) + " triple " + std::to_string(i) + " (" +
                                    std::to_string(t.head) + "," + std::to_string(t.relation) +
                                    "," + std::to_string(t.tail) + ") out of range");
      }
    }
  };
  check(train, "train");
  check(valid, "valid");
  check(test, "test");
  g.train_ = std::move(train);
  g.valid_ = std::move(valid);
  g.test_ = std::move(test);

  std::vector<std::vector<Neighbor>> incoming(n_entities);
  for (const Triple& t : g.train_) {
    const auto rev = g.reverse_of(t.relation);
    incoming[t.tail].push_back({t.head, t.relation});
    incoming[t.head].push_back({t.tail, rev});
    add_to_index(g.train_filter_, t.head, t.relation, t.tail);
    add_to_index(g.train_filter_, t.tail, rev, t.head);
  }
  g.neighbor_offsets_.assign(n_entities + 1, 0);
  for (std::size_t e = 0; e < n_entities; ++e) {
    std::sort(incoming[e].begin(), incoming[e].end());
    g.neighbor_offsets_[e + 1] = g.neighbor_offsets_[e] + incoming[e].size();
    for (const Neighbor& nb : incoming[e]) {
      g.neighbor_pairs_.push_back(nb);
      g.edge_source_.push_back(nb.neighbor);
      g.edge_relation_.push_back(nb.relation);
      g.edge_target_.push_back(static_cast<std::uint32_t>(e));
    }
  }

  for (const auto* split : {&g.train_, &g.valid_, &g.test_}) {
    for (const Triple& t : *split) {
      add_to_index(g.filter_, t.head, t.relation, t.tail);
      add_to_index(g.filter_, t.tail, g.reverse_of(t.relation), t.head);
    }
  }
  return g;
}

const std::vector<Triple>& KnowledgeGraph::split(std::string_view name) const {
  if (name == "train") return train_;
  if (name == "valid") return valid_;
  if (name == "test") return test_;
  fail(ErrorKind::kParameter, "unknown split '" + std::string(name) + "'");
}

std::span<const Neighbor> KnowledgeGraph::neighbors(EntityId e) const {
  if (e >= entity_count()) fail(ErrorKind::kIndex, "entity " + std::to_string(e) + " out of range");
  return std::span<const Neighbor>(neighbor_pairs_)
      .subspan(neighbor_offsets_[e], neighbor_offsets_[e + 1] - neighbor_offsets_[e]);
}

std::span<const EntityId> KnowledgeGraph::known_tails(EntityId h, RelationId r) const {
  const auto it = filter_.find({h, r});
  if (it == filter_.end()) return {};
  return it->second;
}

std::span<const EntityId> KnowledgeGraph::train_tails(EntityId h, RelationId r) const {
  const auto it = train_filter_.find({h, r});
  if (it == train_filter_.end()) return {};
  return it->second;
}

KnowledgeGraph load_dataset(const std::filesystem::path& dir) {
  Vocabulary entities, relations;
  auto train = load_triples(dir / "train.txt", entities, relations);
  auto valid = load_triples(dir / "valid.txt", entities, relations);
  auto test = load_triples(dir / "test.txt", entities, relations);
  return KnowledgeGraph::build(entities.labels(), relations.labels(), std::move(train),
                               std::move(valid), std::move(test));
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  EmbeddingFile file;
  std::string line;
  const std::string source = path.string();
  if (!std::getline(in, line)) fail(ErrorKind::kFormat, source + ": missing header line");
  strip_cr(line);
  const auto header = split_whitespace(line);
  if (header.size() != 2) fail(ErrorKind::kFormat, source + ":1: header must be 'count dim'");
  const std::size_t count = parse_count(header[0], source + ":1");
  file.dim = parse_count(header[1], source + ":1");
  if (file.dim == 0) fail(ErrorKind::kFormat, source + ":1: dim must be positive");
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto fields = split_whitespace(line);
    if (fields.size() != file.dim + 1) {
      fail(ErrorKind::kFormat, where + ": expected " + std::to_string(file.dim) +
                                   " values, got " + std::to_string(fields.size() - 1));
    }
    if (!seen.emplace(fields[0]).second) {
      fail(ErrorKind::kFormat, where + ": duplicate label '" + std::string(fields[0]) + "'");
    }
    std::vector<double> vec(file.dim);
    for (std::size_t i = 0; i < file.dim; ++i) vec[i] = parse_double(fields[i + 1], where);
    file.labels.emplace_back(fields[0]);
    file.vectors.push_back(std::move(vec));
  }
  if (file.labels.size() != count) {
    fail(ErrorKind::kFormat, source + ": header announces " + std::to_string(count) +
                                 " vectors, found " + std::to_string(file.labels.size()));
  }
  return file;
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << file.labels.size() << ' ' << file.dim << '\n';
  char buf[64];
  for (std::size_t i = 0; i < file.labels.size(); ++i) {
    out << file.labels[i];
    for (double v : file.vectors[i]) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), v);
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

TextEmbeddingTable resolve_embeddings(const EmbeddingFile& file, const KnowledgeGraph& graph) {
  TextEmbeddingTable table;
  table.dim = file.dim;
  for (std::size_t i = 0; i < file.labels.size(); ++i) {
    if (const auto id = graph.entities().find(file.labels[i])) {
      table.vectors.emplace(*id, file.vectors[i]);
    }
  }
  if (table.vectors.size() != graph.entity_count()) {
    std::string missing;
    std::size_t shown = 0, absent = 0;
    for (std::size_t e = 0; e < graph.entity_count(); ++e) {
      if (table.vectors.count(static_cast<EntityId>(e))) continue;
      ++absent;
      if (shown < 10) {
        missing += (shown ? "," : "") + graph.entities().label(e);
        ++shown;
      }
    }
    if (absent > shown) missing += ",...";
    fail(ErrorKind::kCoverage, std::to_string(absent) +
                                   " entities lack a text embedding: " + missing);
  }
  return table;
}

TextEmbeddingTable load_text_embeddings(const std::filesystem::path& path,
                                        const KnowledgeGraph& graph) {
  return resolve_embeddings(read_embedding_file(path), graph);
}

void write_text_embeddings(const std::filesystem::path& path, const TextEmbeddingTable& table,
                           const Vocabulary& entities) {
  EmbeddingFile file;
  file.dim = table.dim;
  for (const auto& [id, vec] : table.vectors) {
    file.labels.push_back(entities.label(id));
    file.vectors.push_back(vec);
  }
  write_embedding_file(path, file);
}

const std::vector<EntityId>* CandidateTable::find(EntityId h, RelationId r) const {
  const auto it = queries.find({h, r});
  return it == queries.end() ? nullptr : &it->second;
}

CandidateTable load_candidates(const std::filesystem::path& path, const KnowledgeGraph& graph) {
  auto in = open_input(path);
  CandidateTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      fail(ErrorKind::kParse, where + ": expected 3 tab-separated fields, got " +
                                  std::to_string(fields.size()));
    }
    const EntityId h = resolve(graph.entities(), fields[0], "entity", where);
    const RelationId r = resolve(graph.relations(), fields[1], "relation", where);
    std::vector<EntityId> candidates;
    std::set<EntityId> seen;
    for (const auto label : split(fields[2], ',')) {
      const EntityId c = resolve(graph.entities(), label, "entity", where);
      if (!seen.insert(c).second) {
        fail(ErrorKind::kFormat, where + ": duplicate candidate '" + std::string(label) +
                                     "' for query (" + std::string(fields[0]) + ", " +
                                     std::string(fields[1]) + ")");
      }
      candidates.push_back(c);
    }
    if (!table.queries.emplace(KnowledgeGraph::QueryKey{h, r}, std::move(candidates)).second) {
      fail(ErrorKind::kFormat, where + ": query (" + std::string(fields[0]) + ", " +
                                   std::string(fields[1]) + ") listed twice");
    }
  }
  return table;
}

DisplayNames DisplayNames::load(const std::filesystem::path& path, const Vocabulary& entities) {
  auto in = open_input(path);
  DisplayNames names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (tab == std::string::npos) fail(ErrorKind::kParse, where + ": expected label<TAB>name");
    // Names for entities outside the graph are ignored.
    if (const auto id = entities.find(std::string_view(line).substr(0, tab))) {
      names.names_[*id] = line.substr(tab + 1);
    }
  }
  return names;
}

std::string_view DisplayNames::name(EntityId id, const Vocabulary& entities) const {
  const auto it = names_.find(id);
  if (it != names_.end()) return it->second;
  return entities.label(id);
}

}  // namespace ssqr::kg
