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

#include "gradcheck.hpp"
#include "ssqr/encoder.hpp"
#include "ssqr/error.hpp"
#include "ssqr/kg_store.hpp"

using namespace ssqr;
using namespace ssqr::encoder;
using nk::Tensor;

namespace {

Tensor identity(std::size_t d, double s = 1.0) {
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = s;
  return nk::parameter({d, d}, v);
}

GcnParams identity_params(Tensor entities, Tensor relations, std::size_t layers) {
  GcnParams p;
  const std::size_t d = entities->dim(1);
  p.entity_table = std::move(entities);
  p.relation_table = std::move(relations);
  for (std::size_t l = 0; l < layers; ++l) {
    p.w_self.push_back(identity(d));
    p.w_neighbor.push_back(identity(d));
    p.w_relation.push_back(identity(d));
  }
  return p;
}

kg::KnowledgeGraph graph_of(std::size_t entities, std::size_t relations,
                            std::vector<kg::Triple> train) {
  std::vector<std::string> el, rl;
  for (std::size_t i = 0; i < entities; ++i) el.push_back("e" + std::to_string(i));
  for (std::size_t i = 0; i < relations; ++i) rl.push_back("r" + std::to_string(i));
  return kg::KnowledgeGraph::build(el, rl, std::move(train), {}, {});
}

std::vector<double> vals(const Tensor& t) { return {t->values().begin(), t->values().end()}; }

}  // namespace

TEST_CASE("isolated entity with identity self weight passes through") {
  const auto g = graph_of(3, 1, {{0, 0, 1}});
  CounterRng rng(1, 0);
  auto p = identity_params(ssqr::testing::random_param(rng, {3, 2}),
                           ssqr::testing::random_param(rng, {2, 2}), 1);
  nk::Tape tape(false);
  const auto out = gcn_layer(tape, p.entity_table, p.relation_table, p, 0, g, false, rng);
  CHECK(out->values()[4] == p.entity_table->values()[4]);
  CHECK(out->values()[5] == p.entity_table->values()[5]);
}

TEST_CASE("one neighbor composes by element-wise product") {
  const auto g = graph_of(2, 1, {{0, 0, 1}});
  // Rows: e_0 = [2, 3], e_1 = [1, 1]; v_r = [4, 5], reverse relation zeroed.
  auto p = identity_params(nk::parameter({2, 2}, {2, 3, 1, 1}),
                           nk::parameter({2, 2}, {4, 5, 0, 0}), 1);
  CounterRng rng(1, 0);
  nk::Tape tape(false);
  const auto out = gcn_layer(tape, p.entity_table, p.relation_table, p, 0, g, false, rng);
  CHECK(out->values()[2] == 9.0);
  CHECK(out->values()[3] == 16.0);
  CHECK(out->values()[0] == 2.0);
  CHECK(out->values()[1] == 3.0);
}

TEST_CASE("gcn_layer matches a dense adjacency recomputation") {
  CounterRng rng(2, 0);
  const std::size_t n = 5, r = 2, d = 3;
  std::vector<kg::Triple> train;
  for (int i = 0; i < 9; ++i) {
    train.push_back({static_cast<kg::EntityId>(rng.below(n)),
                     static_cast<kg::RelationId>(rng.below(r)),
                     static_cast<kg::EntityId>(rng.below(n))});
  }
  const auto g = graph_of(n, r, train);
  auto p = init_gcn(n, g.relation_count(), d, 1, 0.0, rng);
  nk::Tape tape(false);
  const auto out = gcn_layer(tape, p.entity_table, p.relation_table, p, 0, g, false, rng);

  const auto E = p.entity_table->values();
  const auto V = p.relation_table->values();
  const auto W1 = p.w_self[0]->values();
  const auto W2 = p.w_neighbor[0]->values();
  // Dense A[r][j][i] counts edges i -(r)-> j including reverses.
  std::vector<double> A(g.relation_count() * n * n, 0.0);
  for (const auto& t : train) {
    A[(t.relation * n + t.tail) * n + t.head] += 1.0;
    A[(g.reverse_of(t.relation) * n + t.head) * n + t.tail] += 1.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> msg(d, 0.0);
    for (std::size_t rr = 0; rr < g.relation_count(); ++rr) {
      for (std::size_t i = 0; i < n; ++i) {
        const double a = A[(rr * n + j) * n + i];
        for (std::size_t k = 0; k < d; ++k) msg[k] += a * E[i * d + k] * V[rr * d + k];
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      double expect = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        expect += E[j * d + k] * W1[k * d + c] + msg[k] * W2[k * d + c];
      }
      CHECK(std::abs(out->values()[j * d + c] - expect) < 1e-10);
    }
  }
}

TEST_CASE("triple order does not change the layer output") {
  CounterRng rng(3, 0);
  std::vector<kg::Triple> train;
  for (int i = 0; i < 30; ++i) {
    train.push_back({static_cast<kg::EntityId>(rng.below(8)),
                     static_cast<kg::RelationId>(rng.below(3)),
                     static_cast<kg::EntityId>(rng.below(8))});
  }
  auto shuffled = train;
  std::reverse(shuffled.begin(), shuffled.end());
  rng.shuffle(std::span<kg::Triple>(shuffled));
  const auto g1 = graph_of(8, 3, train);
  const auto g2 = graph_of(8, 3, shuffled);
  CounterRng init(4, 0);
  auto p = init_gcn(8, 6, 4, 1, 0.0, init);
  nk::Tape tape(false);
  const auto a = gcn_layer(tape, p.entity_table, p.relation_table, p, 0, g1, false, rng);
  const auto b = gcn_layer(tape, p.entity_table, p.relation_table, p, 0, g2, false, rng);
  CHECK(vals(a) == vals(b));
}

TEST_CASE("relation_update is a matrix product") {
  CounterRng rng(5, 0);
  auto p = identity_params(ssqr::testing::random_param(rng, {2, 3}),
                           ssqr::testing::random_param(rng, {4, 3}), 1);
  nk::Tape tape(false);
  CHECK(vals(relation_update(tape, p.relation_table, p, 0)) == vals(p.relation_table));
  p.w_relation[0] = identity(3, 2.0);
  const auto doubled = relation_update(tape, p.relation_table, p, 0);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(doubled->values()[i] == 2.0 * p.relation_table->values()[i]);
  }
  p.w_relation[0] = ssqr::testing::random_param(rng, {3, 3});
  const auto out = relation_update(tape, p.relation_table, p, 0);
  const auto ref = nk::matmul(tape, p.relation_table, p.w_relation[0]);
  CHECK(vals(out) == vals(ref));
  CHECK_THROWS_AS(relation_update(tape, p.relation_table, p, 1), Error);
}

TEST_CASE("encode ablation returns the raw tables") {
  const auto g = kg::load_dataset(std::string(SSQR_FIXTURES) + "/toy");
  CounterRng rng(6, 0);
  auto p = init_gcn(g.entity_count(), g.relation_count(), 8, 2, 0.2, rng);
  nk::Tape tape;
  const auto enc = encode(tape, g, p, true, true, rng);
  CHECK(enc.entities == p.entity_table);
  CHECK(enc.relations == p.relation_table);
}

TEST_CASE("two identity layers on one triple match the closed form") {
  const auto g = graph_of(2, 1, {{0, 0, 1}});
  // a = e_0, b = e_1, v = forward relation, w = reverse relation.
  const double a[2] = {0.3, -0.2}, b[2] = {0.5, 0.7}, v[2] = {1.5, -0.5}, w[2] = {0.25, 2.0};
  auto p = identity_params(nk::parameter({2, 2}, {a[0], a[1], b[0], b[1]}),
                           nk::parameter({2, 2}, {v[0], v[1], w[0], w[1]}), 2);
  CounterRng rng(7, 0);
  nk::Tape tape(false);
  const auto enc = encode(tape, g, p, false, false, rng);
  for (int k = 0; k < 2; ++k) {
    const double a1 = a[k] + b[k] * w[k];
    const double b1 = b[k] + a[k] * v[k];
    CHECK(enc.entities->values()[k] == doctest::Approx(a1 + b1 * w[k]).epsilon(1e-14));
    CHECK(enc.entities->values()[2 + k] == doctest::Approx(b1 + a1 * v[k]).epsilon(1e-14));
  }
  CHECK(vals(enc.relations) == std::vector<double>{v[0], v[1], w[0], w[1]});
}

TEST_CASE("toy graph forward has finite values and the right shapes") {
  const auto g = kg::load_dataset(std::string(SSQR_FIXTURES) + "/toy");
  CounterRng rng(8, 0);
  auto p = init_gcn(g.entity_count(), g.relation_count(), 16, 2, 0.2, rng);
  nk::Tape tape;
  const auto enc = encode(tape, g, p, true, false, rng);
  CHECK(enc.entities->shape() == nk::Shape{10, 16});
  CHECK(enc.relations->shape() == nk::Shape{6, 16});
  CHECK(enc.entities->all_finite());
  CHECK(enc.relations->all_finite());
}

TEST_CASE("encoder gradients match central differences") {
  const auto g = graph_of(4, 2, {{0, 0, 1}, {1, 1, 2}, {2, 0, 3}, {3, 1, 0}, {0, 1, 2}});
  CounterRng rng(9, 0);
  auto p = init_gcn(4, g.relation_count(), 3, 2, 0.0, rng);
  const auto w = ssqr::testing::random_values(rng, 12);
  std::vector<Tensor> params{p.entity_table, p.relation_table};
  for (std::size_t l = 0; l < 2; ++l) {
    params.push_back(p.w_self[l]);
    params.push_back(p.w_neighbor[l]);
    params.push_back(p.w_relation[l]);
  }
  const auto r = ssqr::testing::check_gradients(
      [&](nk::Tape& t) {
        CounterRng unused;
        const auto enc = encode(t, g, p, false, false, unused);
        return nk::add(t, ssqr::testing::weighted_sum(t, enc.entities, w),
                       nk::sq_l2_norm(t, enc.relations));
      },
      params);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-3);
}
