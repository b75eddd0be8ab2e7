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

#ifndef SSQR_KG_STORE_HPP
#define SSQR_KG_STORE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ssqr::kg {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Label <-> dense id map. Ids follow first-appearance order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> labels);

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::string& label(std::size_t id) const { return labels_.at(id); }
  std::optional<std::uint32_t> find(std::string_view label) const;
  // Returns the existing id or appends the label.
  std::uint32_t intern(std::string_view label);

  bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::uint32_t> ids_;
  bool frozen_ = false;
};

// Tab-separated "head<TAB>relation<TAB>tail" lines. Unseen labels are
// appended to growable vocabularies and rejected by frozen ones.
std::vector<Triple> parse_triples(std::istream& in, Vocabulary& entities, Vocabulary& relations,
                                  const std::string& source = "<stream>");
std::vector<Triple> load_triples(const std::filesystem::path& path, Vocabulary& entities,
                                 Vocabulary& relations);

struct Neighbor {
  EntityId neighbor = 0;
  RelationId relation = 0;

  friend auto operator<=>(const Neighbor&, const Neighbor&) = default;
};

std::string reverse_relation_label(std::string_view label);

class KnowledgeGraph {
 public:
  using QueryKey = std::pair<EntityId, RelationId>;

  // relation_labels holds the original relations only; reverses are appended.
  static KnowledgeGraph build(std::vector<std::string> entity_labels,
                              std::vector<std::string> relation_labels, std::vector<Triple> train,
                              std::vector<Triple> valid, std::vector<Triple> test);

  std::size_t entity_count() const noexcept { return entities_.size(); }
  std::size_t relation_count() const noexcept { return relations_.size(); }
  std::size_t original_relation_count() const noexcept { return original_relations_; }
  RelationId reverse_of(RelationId r) const noexcept {
    return r < original_relations_ ? r + static_cast<RelationId>(original_relations_)
                                   : r - static_cast<RelationId>(original_relations_);
  }

  const Vocabulary& entities() const noexcept { return entities_; }
  const Vocabulary& relations() const noexcept { return relations_; }

  const std::vector<Triple>& train() const noexcept { return train_; }
  const std::vector<Triple>& valid() const noexcept { return valid_; }
  const std::vector<Triple>& test() const noexcept { return test_; }
  const std::vector<Triple>& split(std::string_view name) const;

  // Incoming (neighbor, relation) pairs of entity e from the training split,
  // sorted ascending.
  std::span<const Neighbor> neighbors(EntityId e) const;

  // Flattened edge list, grouped by target and sorted by (neighbor, relation)
  // within each target.
  std::span<const std::uint32_t> edge_sources() const noexcept { return edge_source_; }
  std::span<const std::uint32_t> edge_relations() const noexcept { return edge_relation_; }
  std::span<const std::uint32_t> edge_targets() const noexcept { return edge_target_; }

  // Known tails of (h, r) over train, valid and test (reverses included).
  std::span<const EntityId> known_tails(EntityId h, RelationId r) const;
  // Known tails from the training split only.
  std::span<const EntityId> train_tails(EntityId h, RelationId r) const;
  std::size_t filter_key_count() const noexcept { return filter_.size(); }
  const std::map<QueryKey, std::vector<EntityId>>& train_queries() const noexcept {
    return train_filter_;
  }

 private:
  Vocabulary entities_;
  Vocabulary relations_;
  std::size_t original_relations_ = 0;
  std::vector<Triple> train_, valid_, test_;
  std::vector<std::size_t> neighbor_offsets_;
  std::vector<Neighbor> neighbor_pairs_;
  std::vector<std::uint32_t> edge_source_, edge_relation_, edge_target_;
  std::map<QueryKey, std::vector<EntityId>> filter_;
  std::map<QueryKey, std::vector<EntityId>> train_filter_;
};

// Reads train.txt, valid.txt and test.txt from a directory, assigning ids
// in that order.
KnowledgeGraph load_dataset(const std::filesystem::path& dir);

// Entity text-embedding vectors, dense and indexed by entity id.
struct TextEmbeddingTable {
  std::size_t dim = 0;
  std::map<EntityId, std::vector<double>> vectors;
};

// Unresolved contents of an embedding file, in file order.
struct EmbeddingFile {
  std::size_t dim = 0;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> vectors;
};

EmbeddingFile read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const std::filesystem::path& path, const EmbeddingFile& file);

// Every graph entity must be covered.
TextEmbeddingTable load_text_embeddings(const std::filesystem::path& path,
                                        const KnowledgeGraph& graph);
TextEmbeddingTable resolve_embeddings(const EmbeddingFile& file, const KnowledgeGraph& graph);
void write_text_embeddings(const std::filesystem::path& path, const TextEmbeddingTable& table,
                           const Vocabulary& entities);

struct CandidateTable {
  std::map<KnowledgeGraph::QueryKey, std::vector<EntityId>> queries;

  const std::vector<EntityId>* find(EntityId h, RelationId r) const;
};

// "head<TAB>relation<TAB>c1,c2,..." lines.
CandidateTable load_candidates(const std::filesystem::path& path, const KnowledgeGraph& graph);

// Optional id -> display-name map, "label<TAB>name" lines. Entities without
// an entry fall back to their label.
class DisplayNames {
 public:
  DisplayNames() = default;
  static DisplayNames load(const std::filesystem::path& path, const Vocabulary& entities);

  std::string_view name(EntityId id, const Vocabulary& entities) const;

 private:
  std::map<EntityId, std::string> names_;
};

}  // namespace ssqr::kg

#endif  // SSQR_KG_STORE_HPP
