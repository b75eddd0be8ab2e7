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

#ifndef SSQR_QUANTIZER_HPP
#define SSQR_QUANTIZER_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssqr/numkernel.hpp"
#include "ssqr/rng.hpp"

namespace ssqr::quantizer {

using nk::Tape;
using nk::Tensor;
using CodeIndex = std::uint32_t;

struct Codebook {
  Tensor codes;  // [M x d]

  std::size_t size() const { return codes->dim(0); }
  std::size_t dim() const { return codes->dim(1); }
};

// FFN: d -> hidden (ReLU) -> N*d, then the combining map [(N*d) x d].
struct QuantizerParams {
  Tensor ffn_w1, ffn_b1;  // [d x hidden], [hidden]
  Tensor ffn_w2, ffn_b2;  // [hidden x N*d], [N*d]
  Tensor wq;              // [(N*d) x d]
  std::size_t heads = 1;
};

QuantizerParams init_quantizer(std::size_t dim, std::size_t heads, std::size_t hidden,
                               CounterRng& rng);
// Uniform placeholder rows; training reseeds them from head outputs.
Codebook init_codebook(std::size_t size, std::size_t dim, CounterRng& rng);

// argmin_m ||v - x_m||^2, lowest index on ties.
CodeIndex nearest_code(std::span<const double> v, const nk::NdBuffer& codebook);
// One assignment per row of rows [n x d].
std::vector<CodeIndex> assign_codes(const nk::NdBuffer& rows, const nk::NdBuffer& codebook);

// FFN(e) reshaped to one row per head: [n x d] -> [(n*N) x d].
Tensor project_heads(Tape& tape, const Tensor& entities, const QuantizerParams& params);

struct Quantized {
  std::vector<CodeIndex> indices;  // n*N, entity-major
  Tensor heads;                    // [(n*N) x d]
  Tensor picked;                   // [(n*N) x d], codebook rows
  Tensor vectors;                  // [n x d], W_q applied to the flattened picks
};

// picked enters q_e through heads + sg(picked - heads), so the forward value
// is the codebook row while gradients reach heads unchanged. With
// fixed_indices the nearest-code search is skipped.
Quantized quantize(Tape& tape, const Tensor& entities, const QuantizerParams& params,
                   const Codebook& codebook,
                   const std::vector<CodeIndex>* fixed_indices = nullptr);

// Single-entity form; e_final is [d] or [1 x d].
Quantized quantize_entity(Tape& tape, const Tensor& e_final, const QuantizerParams& params,
                          const Codebook& codebook);

// (||sg(heads) - picked||^2 + beta ||heads - sg(picked)||^2) / entity_count.
Tensor vq_loss(Tape& tape, const Tensor& heads, const Tensor& picked, double beta,
               std::size_t entity_count);

class EntityCodeTable {
 public:
  EntityCodeTable() = default;
  EntityCodeTable(std::size_t codebook_size, std::size_t codes_per_entity,
                  std::vector<CodeIndex> codes);

  std::size_t entity_count() const noexcept { return n_ ? codes_.size() / n_ : 0; }
  std::size_t codebook_size() const noexcept { return m_; }
  std::size_t codes_per_entity() const noexcept { return n_; }
  std::span<const CodeIndex> codes(std::size_t entity) const;
  const std::vector<CodeIndex>& flat() const noexcept { return codes_; }

  // Optional quantized vectors, [entity_count x dim] row-major.
  bool has_vectors() const noexcept { return !vectors_.empty(); }
  std::size_t vector_dim() const noexcept { return dim_; }
  void set_vectors(std::size_t dim, std::vector<double> values);
  std::span<const double> vector(std::size_t entity) const;

  friend bool operator==(const EntityCodeTable&, const EntityCodeTable&) = default;

 private:
  std::size_t m_ = 0;
  std::size_t n_ = 0;
  std::vector<CodeIndex> codes_;
  std::size_t dim_ = 0;
  std::vector<double> vectors_;
};

// Uniform with replacement; used as the random-assignment baseline.
EntityCodeTable random_code_assignment(std::size_t entity_count, std::size_t codebook_size,
                                       std::size_t codes_per_entity, std::uint64_t seed);

struct CodeTableMeta {
  std::size_t codebook_size = 0;
  std::size_t codes_per_entity = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
};

// "label<TAB>q1 q2 ... qN" lines plus a JSON sidecar at <path>.json.
void write_code_table(const std::filesystem::path& path, const EntityCodeTable& table,
                      const std::vector<std::string>& labels, const CodeTableMeta& meta);

struct LoadedCodeTable {
  std::vector<std::string> labels;
  EntityCodeTable table;
  std::optional<CodeTableMeta> meta;
};

// Without a sidecar the codebook size is taken as max index + 1.
LoadedCodeTable read_code_table(const std::filesystem::path& path);

// Reorders a loaded table to follow the given entity order.
EntityCodeTable align_code_table(const LoadedCodeTable& loaded,
                                 const std::vector<std::string>& entity_labels);

}  // namespace ssqr::quantizer

#endif  // SSQR_QUANTIZER_HPP
