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

#include "ssqr/encoder.hpp"

#include <cmath>

#include "ssqr/error.hpp"

namespace ssqr::encoder {

namespace {

Tensor uniform_parameter(nk::Shape shape, double bound, CounterRng& rng) {
  std::vector<double> values(nk::element_count(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return nk::parameter(std::move(shape), std::move(values));
}

void check_layer(const GcnParams& params, std::size_t layer) {
  if (layer >= params.layers()) {
    fail(ErrorKind::kParameter, "layer " + std::to_string(layer) + " >= layer count " +
                                    std::to_string(params.layers()));
  }
}

}  // namespace

GcnParams init_gcn(std::size_t entities, std::size_t relations, std::size_t dim,
                   std::size_t layers, double dropout, CounterRng& rng) {
  if (layers == 0) fail(ErrorKind::kParameter, "GCN needs at least one layer");
  GcnParams p;
  p.entity_table = uniform_parameter({entities, dim}, 0.1, rng);
  p.relation_table = uniform_parameter({relations, dim}, 0.1, rng);
  // Glorot-style bound keeps the layer output scale comparable to its input.
  const double bound = std::sqrt(6.0 / static_cast<double>(2 * dim));
  for (std::size_t l = 0; l < layers; ++l) {
    p.w_self.push_back(uniform_parameter({dim, dim}, bound, rng));
    p.w_neighbor.push_back(uniform_parameter({dim, dim}, bound, rng));
    p.w_relation.push_back(uniform_parameter({dim, dim}, bound, rng));
  }
  p.dropout = dropout;
  return p;
}

Tensor gcn_layer(Tape& tape, const Tensor& entities, const Tensor& relations,
                 const GcnParams& params, std::size_t layer, const kg::KnowledgeGraph& graph,
                 bool train, CounterRng& rng) {
  check_layer(params, layer);
  if (entities->rank() != 2 || entities->dim(0) != graph.entity_count()) {
    fail(ErrorKind::kShape, "gcn_layer: entity input " + nk::shape_string(entities->shape()) +
                                " does not match " + std::to_string(graph.entity_count()) +
                                " entities");
  }
  if (relations->rank() != 2 || relations->dim(1) != entities->dim(1)) {
    fail(ErrorKind::kShape, "gcn_layer: relation input " + nk::shape_string(relations->shape()) +
                                " incompatible with " + nk::shape_string(entities->shape()));
  }
  Tensor out = nk::matmul(tape, entities, params.w_self[layer]);
  if (!graph.edge_sources().empty()) {
    const Tensor sources = nk::gather_rows(tape, entities, graph.edge_sources());
    const Tensor rels = nk::gather_rows(tape, relations, graph.edge_relations());
    const Tensor messages = nk::mul(tape, sources, rels);
    const Tensor aggregated =
        nk::scatter_add_rows(tape, messages, graph.edge_targets(), graph.entity_count());
    out = nk::add(tape, out, nk::matmul(tape, aggregated, params.w_neighbor[layer]));
  }
  return nk::dropout(tape, out, params.dropout, train, rng);
}

Tensor relation_update(Tape& tape, const Tensor& relations, const GcnParams& params,
                       std::size_t layer) {
  check_layer(params, layer);
  return nk::matmul(tape, relations, params.w_relation[layer]);
}

Encoded encode(Tape& tape, const kg::KnowledgeGraph& graph, const GcnParams& params, bool train,
               bool ablate_gcn, CounterRng& rng) {
  if (params.entity_table->dim(0) != graph.entity_count() ||
      params.relation_table->dim(0) != graph.relation_count()) {
    fail(ErrorKind::kShape, "encode: parameter tables " +
                                nk::shape_string(params.entity_table->shape()) + ", " +
                                nk::shape_string(params.relation_table->shape()) +
                                " do not match the graph");
  }
  Encoded enc{params.entity_table, params.relation_table};
  if (ablate_gcn) return enc;
  for (std::size_t l = 0; l < params.layers(); ++l) {
    Tensor next_entities =
        gcn_layer(tape, enc.entities, enc.relations, params, l, graph, train, rng);
    enc.relations = relation_update(tape, enc.relations, params, l);
    enc.entities = next_entities;
  }
  return enc;
}

}  // namespace ssqr::encoder
