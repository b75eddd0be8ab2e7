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
#include "ssqr/decoder.hpp"
#include "ssqr/error.hpp"

using namespace ssqr;
using namespace ssqr::decoder;
using nk::Tensor;

namespace {

kg::KnowledgeGraph small_graph() {
  return kg::KnowledgeGraph::build({"a", "b", "c"}, {"r"}, {{0, 0, 1}, {0, 0, 2}, {1, 0, 2}},
                                   {}, {});
}

ConvGeometry tiny_geometry() {
  ConvGeometry g;
  g.rows = 2;
  g.cols = 3;
  g.channels = 2;
  return g;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("zero output map gives zero scores") {
  CounterRng rng(21, 0);
  auto p = init_decoder(4, 0, tiny_geometry(), false, rng);
  for (double& v : p.wc->values()) v = 0.0;
  const auto h = ssqr::testing::random_param(rng, {3, 4});
  const auto r = ssqr::testing::random_param(rng, {3, 4});
  const auto tails = ssqr::testing::random_param(rng, {7, 4});
  nk::Tape tape(false);
  const auto s = conve_score(tape, h, r, tails, p);
  CHECK(s->shape() == nk::Shape{3, 7});
  for (double v : s->values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(conve_score(tape, h, r, ssqr::testing::random_param(rng, {7, 3}), p), Error);
  CHECK_THROWS_AS(conve_score(tape, h, ssqr::testing::random_param(rng, {2, 4}), tails, p),
                  Error);
}

TEST_CASE("geometry validation") {
  ConvGeometry g;
  g.rows = 1;
  g.cols = 4;
  CHECK_THROWS_AS(g.validate(), Error);
  g.rows = 2;
  g.cols = 2;
  CHECK_THROWS_AS(g.validate(), Error);
  g.cols = 5;
  g.channels = 3;
  CHECK_NOTHROW(g.validate());
  CHECK(g.out_height() == 2);
  CHECK(g.out_width() == 3);
  CHECK(g.flat_length() == 18);
  g.channels = 0;
  CHECK_THROWS_AS(g.validate(), Error);
}

TEST_CASE("score matches a step-by-step manual computation") {
  const std::size_t d = 10;
  ConvGeometry g;
  g.rows = 2;
  g.cols = 5;
  g.channels = 1;
  CounterRng rng(22, 0);
  for (bool strict : {false, true}) {
    auto p = init_decoder(d, 0, g, strict, rng);
    // Identity projections plus a small bias.
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        p.head_w->values()[i * d + j] = i == j ? 1.0 : 0.0;
        p.rel_w->values()[i * d + j] = i == j ? 1.0 : 0.0;
      }
      p.head_b->values()[i] = 0.01 * static_cast<double>(i);
      p.rel_b->values()[i] = -0.02;
    }
    for (std::size_t i = 0; i < 9; ++i) {
      p.conv_k->values()[i] = (static_cast<double>(i) - 4.0) / 10.0;
    }
    p.conv_b->values()[0] = 0.05;
    const auto h = ssqr::testing::random_param(rng, {1, d});
    const auto r = ssqr::testing::random_param(rng, {1, d});
    const auto t = ssqr::testing::random_param(rng, {2, d});

    // Image: rows 0-1 hold h + b_h, rows 2-3 hold r + b_r.
    double img[4][5];
    for (std::size_t i = 0; i < d; ++i) {
      img[i / 5][i % 5] = h->values()[i] + p.head_b->values()[i];
      img[2 + i / 5][i % 5] = r->values()[i] + p.rel_b->values()[i];
    }
    double feat_in[6];
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 3; ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) acc += img[y + ky][x + kx] * p.conv_k->values()[ky * 3 + kx];
        }
        if (!strict) acc = std::max(0.0, acc + 0.05);
        feat_in[y * 3 + x] = acc;
      }
    }
    double feat[10] = {};
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < 6; ++i) feat[j] += feat_in[i] * p.wc->values()[i * d + j];
    }
    nk::Tape tape(false);
    const auto s = conve_score(tape, h, r, t, p);
    for (std::size_t c = 0; c < 2; ++c) {
      double expect = 0.0;
      for (std::size_t j = 0; j < d; ++j) expect += feat[j] * t->values()[c * d + j];
      CHECK(std::abs(s->values()[c] - expect) < 1e-12);
    }
  }
}

TEST_CASE("structure targets smooth over the entity count") {
  const auto g = small_graph();
  const QueryKey batch[] = {{0, 0}, {2, 0}};
  const auto y = structure_targets(g, batch, 0.1);
  const double lo = 0.1 / 3.0, hi = 0.9 + 0.1 / 3.0;
  CHECK(y == std::vector<double>{lo, hi, hi, lo, lo, lo});
  const auto plain = structure_targets(g, batch, 0.0);
  CHECK(plain == std::vector<double>{0, 1, 1, 0, 0, 0});
}

TEST_CASE("structure loss at zero scores is ln 2") {
  const auto g = small_graph();
  CounterRng rng(23, 0);
  auto p = init_decoder(4, 0, tiny_geometry(), false, rng);
  for (double& v : p.wc->values()) v = 0.0;
  const auto q = ssqr::testing::random_param(rng, {3, 4});
  const auto rel = ssqr::testing::random_param(rng, {2, 4});
  const QueryKey batch[] = {{0, 0}, {1, 0}, {2, 1}};
  nk::Tape tape(false);
  for (double eps : {0.0, 0.1}) {
    CHECK(structure_loss(tape, g, q, rel, p, batch, eps)->values()[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(structure_loss(tape, g, q, rel, p, {}, 0.1), Error);
}

TEST_CASE("confident correct logits drive the loss to zero") {
  nk::Tape tape(false);
  const auto logits = nk::make_tensor({1, 4}, {60, -60, -60, 60});
  const std::vector<double> y{1, 0, 0, 1};
  CHECK(nk::bce_with_logits(tape, logits, y)->values()[0] < 1e-25);
}

TEST_CASE("structure loss matches a scalar recomputation") {
  const auto g = small_graph();
  CounterRng rng(24, 0);
  auto p = init_decoder(4, 0, tiny_geometry(), false, rng);
  const auto q = ssqr::testing::random_param(rng, {3, 4});
  const auto rel = ssqr::testing::random_param(rng, {2, 4});
  const QueryKey batch[] = {{0, 0}, {1, 0}, {2, 1}, {1, 1}};
  nk::Tape tape(false);
  const double loss = structure_loss(tape, g, q, rel, p, batch, 0.1)->values()[0];

  double oracle = 0.0;
  for (const auto& [h, r] : batch) {
    const std::uint32_t hi[] = {h}, ri[] = {r};
    const auto s = conve_score(tape, nk::gather_rows(tape, q, hi), nk::gather_rows(tape, rel, ri),
                               q, p);
    const auto tails = g.train_tails(h, r);
    double row = 0.0;
    for (kg::EntityId e = 0; e < 3; ++e) {
      const bool pos = std::find(tails.begin(), tails.end(), e) != tails.end();
      const double y = (pos ? 0.9 : 0.0) + 0.1 / 3.0;
      const double prob = sigmoid(s->values()[e]);
      row += -(y * std::log(prob) + (1.0 - y) * std::log(1.0 - prob));
    }
    oracle += row / 3.0;
  }
  oracle /= 4.0;
  CHECK(std::abs(loss - oracle) < 1e-10);

  const QueryKey shuffled[] = {{1, 1}, {2, 1}, {0, 0}, {1, 0}};
  CHECK(std::abs(structure_loss(tape, g, q, rel, p, shuffled, 0.1)->values()[0] - loss) < 1e-9);
}

TEST_CASE("raw score order equals sigmoid order") {
  CounterRng rng(25, 0);
  auto p = init_decoder(4, 0, tiny_geometry(), false, rng);
  const auto h = ssqr::testing::random_param(rng, {1, 4});
  const auto r = ssqr::testing::random_param(rng, {1, 4});
  const auto t = ssqr::testing::random_param(rng, {20, 4});
  nk::Tape tape(false);
  const auto s = conve_score(tape, h, r, t, p)->values();
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 20; ++j) {
      if (s[i] < s[j]) CHECK(sigmoid(s[i]) <= sigmoid(s[j]));
    }
  }
}

TEST_CASE("semantic loss examples") {
  nk::Tape tape(false);
  const auto ws = nk::parameter({2, 2}, {1, 0, 0, 1});
  const auto q = nk::make_tensor({1, 2}, {1, 0});
  CHECK(semantic_loss(tape, q, nk::make_tensor({1, 2}, {1, 0}), ws)->values()[0] == 0.0);
  CHECK(semantic_loss(tape, q, nk::make_tensor({1, 2}, {-2, -4}), ws)->values()[0] == 25.0);
  CHECK_THROWS_AS(semantic_loss(tape, q, nk::make_tensor({1, 2}, {0, 0}), nullptr), Error);

  kg::TextEmbeddingTable table;
  table.dim = 2;
  table.vectors[3] = {-2, -4};
  const kg::EntityId ids[] = {3};
  CHECK(semantic_loss(tape, q, table, ids, ws)->values()[0] == 25.0);
  const kg::EntityId missing[] = {4};
  try {
    semantic_loss(tape, q, table, missing, ws);
    FAIL("expected a coverage error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCoverage);
  }
}

TEST_CASE("semantic loss matches a scalar recomputation") {
  CounterRng rng(26, 0);
  const std::size_t n = 5, d = 3, t = 4;
  const auto q = ssqr::testing::random_param(rng, {n, d});
  const auto ws = ssqr::testing::random_param(rng, {d, t});
  const auto target = nk::make_tensor({n, t}, ssqr::testing::random_values(rng, n * t));
  nk::Tape tape(false);
  const double loss = semantic_loss(tape, q, target, ws)->values()[0];
  double oracle = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      double proj = 0.0;
      for (std::size_t k = 0; k < d; ++k) proj += q->values()[i * d + k] * ws->values()[k * t + j];
      const double r = proj - target->values()[i * t + j];
      oracle += r * r;
    }
  }
  CHECK(std::abs(loss - oracle / n) < 1e-12);
}

TEST_CASE("total loss sums its terms") {
  nk::Tape tape(false);
  auto scalar = [](double v) { return nk::make_tensor({}, {v}); };
  CHECK(total_loss(tape, scalar(0), scalar(0), scalar(0))->values()[0] == 0.0);
  CHECK(total_loss(tape, scalar(1.25), scalar(0.6931), scalar(25))->values()[0] ==
        doctest::Approx(26.9431).epsilon(1e-12));
  CHECK(total_loss(tape, scalar(1.25), scalar(0.6931), nullptr)->values()[0] ==
        doctest::Approx(1.9431).epsilon(1e-12));
}

TEST_CASE("decoder gradients match central differences") {
  const auto g = small_graph();
  CounterRng rng(27, 0);
  for (bool strict : {false, true}) {
    auto p = init_decoder(4, 3, tiny_geometry(), strict, rng);
    const auto q = ssqr::testing::random_param(rng, {3, 4});
    const auto rel = ssqr::testing::random_param(rng, {2, 4});
    const auto target = nk::make_tensor({3, 3}, ssqr::testing::random_values(rng, 9));
    const QueryKey batch[] = {{0, 0}, {1, 0}, {2, 1}};
    std::vector<Tensor> params{q, rel, p.head_w, p.head_b, p.rel_w, p.rel_b, p.conv_k, p.wc, p.ws};
    if (!strict) params.push_back(p.conv_b);
    const auto r = ssqr::testing::check_gradients(
        [&](nk::Tape& t) {
          return total_loss(t, nk::make_tensor({}, {0.0}),
                            structure_loss(t, g, q, rel, p, batch, 0.1),
                            semantic_loss(t, q, target, p.ws));
        },
        params);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}
