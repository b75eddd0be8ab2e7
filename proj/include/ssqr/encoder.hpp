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

#ifndef SSQR_ENCODER_HPP
#define SSQR_ENCODER_HPP

#include <cstddef>
#include <vector>

#include "ssqr/kg_store.hpp"
#include "ssqr/numkernel.hpp"
#include "ssqr/rng.hpp"

namespace ssqr::encoder {

using nk::Tape;
using nk::Tensor;

// Weights are stored for row-vector products: an embedding row e maps to e * W.
struct GcnParams {
  Tensor entity_table;    // [|E| x d]
  Tensor relation_table;  // [|R| x d]
  std::vector<Tensor> w_self;      // per layer [d x d]
  std::vector<Tensor> w_neighbor;  // per layer [d x d]
  std::vector<Tensor> w_relation;  // per layer [d x d]
  double dropout = 0.0;

  std::size_t layers() const noexcept { return w_self.size(); }
  std::size_t dim() const { return entity_table->dim(1); }
};

// Uniform [-0.1, 0.1] tables, weights near identity-scaled uniform.
GcnParams init_gcn(std::size_t entities, std::size_t relations, std::size_t dim,
                   std::size_t layers, double dropout, CounterRng& rng);

// e_j' = e_j W1 + sum over incoming (e_i, r) of (e_i * v_r) W2, then dropout
// at train time.
Tensor gcn_layer(Tape& tape, const Tensor& entities, const Tensor& relations,
                 const GcnParams& params, std::size_t layer, const kg::KnowledgeGraph& graph,
                 bool train, CounterRng& rng);

Tensor relation_update(Tape& tape, const Tensor& relations, const GcnParams& params,
                       std::size_t layer);

struct Encoded {
  Tensor entities;   // [|E| x d]
  Tensor relations;  // [|R| x d]
};

// With ablate_gcn the raw tables are returned untouched.
Encoded encode(Tape& tape, const kg::KnowledgeGraph& graph, const GcnParams& params, bool train,
               bool ablate_gcn, CounterRng& rng);

}  // namespace ssqr::encoder

#endif  // SSQR_ENCODER_HPP
