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

#include "ssqr/quantizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

#include "ssqr/error.hpp"

namespace ssqr::quantizer {

namespace {

Tensor uniform_parameter(nk::Shape shape, double bound, CounterRng& rng) {
  std::vector<double> values(nk::element_count(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return nk::parameter(std::move(shape), std::move(values));
}

double glorot(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

QuantizerParams init_quantizer(std::size_t dim, std::size_t heads, std::size_t hidden,
                               CounterRng& rng) {
  if (heads == 0) fail(ErrorKind::kParameter, "quantizer needs at least one head");
  QuantizerParams p;
  p.heads = heads;
  p.ffn_w1 = uniform_parameter({dim, hidden}, glorot(dim, hidden), rng);
  p.ffn_b1 = nk::parameter({hidden}, std::vector<double>(hidden, 0.0));
  p.ffn_w2 = uniform_parameter({hidden, heads * dim}, glorot(hidden, heads * dim), rng);
  p.ffn_b2 = nk::parameter({heads * dim}, std::vector<double>(heads * dim, 0.0));
  p.wq = uniform_parameter({heads * dim, dim}, glorot(heads * dim, dim), rng);
  return p;
}

Codebook init_codebook(std::size_t size, std::size_t dim, CounterRng& rng) {
  if (size < 2) fail(ErrorKind::kParameter, "codebook size must be at least 2");
  return {uniform_parameter({size, dim}, 0.1, rng)};
}

CodeIndex nearest_code(std::span<const double> v, const nk::NdBuffer& codebook) {
  if (codebook.rank() != 2 || codebook.dim(1) != v.size()) {
    fail(ErrorKind::kShape, "nearest_code: vector of length " + std::to_string(v.size()) +
                                " vs codebook " + nk::shape_string(codebook.shape()));
  }
  const std::size_t m = codebook.dim(0), d = codebook.dim(1);
  const auto codes = codebook.values();
  CodeIndex best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    double dist = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = v[j] - codes[i * d + j];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<CodeIndex>(i);
    }
  }
  return best;
}

std::vector<CodeIndex> assign_codes(const nk::NdBuffer& rows, const nk::NdBuffer& codebook) {
  if (rows.rank() != 2) {
    fail(ErrorKind::kShape, "assign_codes: rows must be rank 2, got " +
                                nk::shape_string(rows.shape()));
  }
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  std::vector<CodeIndex> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = nearest_code(rows.values().subspan(i * d, d), codebook);
  return out;
}

Tensor project_heads(Tape& tape, const Tensor& entities, const QuantizerParams& params) {
  const std::size_t n = entities->dim(0);
  const std::size_t d = entities->dim(1);
  Tensor hidden = nk::relu(tape, nk::add_row_bias(tape, nk::matmul(tape, entities, params.ffn_w1),
                                                  params.ffn_b1));
  Tensor flat =
      nk::add_row_bias(tape, nk::matmul(tape, hidden, params.ffn_w2), params.ffn_b2);
  return nk::reshape(tape, flat, {n * params.heads, d});
}

Quantized quantize(Tape& tape, const Tensor& entities, const QuantizerParams& params,
                   const Codebook& codebook, const std::vector<CodeIndex>* fixed_indices) {
  if (entities->rank() != 2 || entities->dim(1) != codebook.dim()) {
    fail(ErrorKind::kShape, "quantize: entities " + nk::shape_string(entities->shape()) +
                                " vs codebook " + nk::shape_string(codebook.codes->shape()));
  }
  const std::size_t n = entities->dim(0);
  const std::size_t d = entities->dim(1);
  Quantized q;
  q.heads = project_heads(tape, entities, params);
  if (fixed_indices) {
    if (fixed_indices->size() != n * params.heads) {
      fail(ErrorKind::kShape, "quantize: fixed assignment has the wrong length");
    }
    q.indices = *fixed_indices;
  } else {
    q.indices = assign_codes(*q.heads, *codebook.codes);
  }
  q.picked = nk::gather_rows(tape, codebook.codes, q.indices);
  const Tensor offset = nk::stop_gradient(tape, nk::sub(tape, q.picked, q.heads));
  const Tensor straight_through = nk::add(tape, q.heads, offset);
  const Tensor flat = nk::reshape(tape, straight_through, {n, params.heads * d});
  q.vectors = nk::matmul(tape, flat, params.wq);
  return q;
}

Quantized quantize_entity(Tape& tape, const Tensor& e_final, const QuantizerParams& params,
                          const Codebook& codebook) {
  if (e_final->rank() == 1) {
    return quantize(tape, nk::reshape(tape, e_final, {1, e_final->size()}), params, codebook);
  }
  if (e_final->rank() != 2 || e_final->dim(0) != 1) {
    fail(ErrorKind::kShape, "quantize_entity: expected one vector, got " +
                                nk::shape_string(e_final->shape()));
  }
  return quantize(tape, e_final, params, codebook);
}

Tensor vq_loss(Tape& tape, const Tensor& heads, const Tensor& picked, double beta,
               std::size_t entity_count) {
  if (heads->shape() != picked->shape()) {
    fail(ErrorKind::kShape, "vq_loss: heads " + nk::shape_string(heads->shape()) +
                                " vs picked " + nk::shape_string(picked->shape()));
  }
  if (entity_count == 0) fail(ErrorKind::kParameter, "vq_loss: empty batch");
  const Tensor codebook_term =
      nk::sq_l2_norm(tape, nk::sub(tape, nk::stop_gradient(tape, heads), picked));
  const Tensor commit_term =
      nk::sq_l2_norm(tape, nk::sub(tape, heads, nk::stop_gradient(tape, picked)));
  const Tensor total = nk::add(tape, codebook_term, nk::scale(tape, commit_term, beta));
  return nk::scale(tape, total, 1.0 / static_cast<double>(entity_count));
}

EntityCodeTable::EntityCodeTable(std::size_t codebook_size, std::size_t codes_per_entity,
                                 std::vector<CodeIndex> codes)
    : m_(codebook_size), n_(codes_per_entity), codes_(std::move(codes)) {
  if (n_ == 0) fail(ErrorKind::kParameter, "code table needs at least one code per entity");
  if (codes_.size() % n_ != 0) {
    fail(ErrorKind::kShape, "code count " + std::to_string(codes_.size()) +
                                " is not a multiple of " + std::to_string(n_));
  }
  for (CodeIndex c : codes_) {
    if (c >= m_) {
      fail(ErrorKind::kIndex, "code " + std::to_string(c) + " >= codebook size " +
                                  std::to_string(m_));
    }
  }
}

std::span<const CodeIndex> EntityCodeTable::codes(std::size_t entity) const {
  if (entity >= entity_count()) {
    fail(ErrorKind::kCoverage, "entity " + std::to_string(entity) + " has no codes");
  }
  return std::span<const CodeIndex>(codes_).subspan(entity * n_, n_);
}

void EntityCodeTable::set_vectors(std::size_t dim, std::vector<double> values) {
  if (values.size() != dim * entity_count()) {
    fail(ErrorKind::kShape, "quantized vectors do not match the code table");
  }
  dim_ = dim;
  vectors_ = std::move(values);
}

std::span<const double> EntityCodeTable::vector(std::size_t entity) const {
  if (!has_vectors() || entity >= entity_count()) {
    fail(ErrorKind::kCoverage, "entity " + std::to_string(entity) + " has no quantized vector");
  }
  return std::span<const double>(vectors_).subspan(entity * dim_, dim_);
}

EntityCodeTable random_code_assignment(std::size_t entity_count, std::size_t codebook_size,
                                       std::size_t codes_per_entity, std::uint64_t seed) {
  if (codebook_size == 0) fail(ErrorKind::kParameter, "codebook size must be at least 1");
  CounterRng rng(seed, 0x52414e44ULL);
  std::vector<CodeIndex> codes(entity_count * codes_per_entity);
  for (CodeIndex& c : codes) c = static_cast<CodeIndex>(rng.below(codebook_size));
  return EntityCodeTable(codebook_size, codes_per_entity, std::move(codes));
}

void write_code_table(const std::filesystem::path& path, const EntityCodeTable& table,
                      const std::vector<std::string>& labels, const CodeTableMeta& meta) {
  if (labels.size() != table.entity_count()) {
    fail(ErrorKind::kShape, "write_code_table: label count does not match the table");
  }
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
    for (std::size_t e = 0; e < labels.size(); ++e) {
      out << labels[e] << '\t';
      const auto codes = table.codes(e);
      for (std::size_t i = 0; i < codes.size(); ++i) out << (i ? " " : "") << codes[i];
      out << '\n';
    }
    if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
  }
  nlohmann::ordered_json side;
  side["M"] = meta.codebook_size;
  side["N"] = meta.codes_per_entity;
  side["d"] = meta.dim;
  side["seed"] = meta.seed;
  side["entities"] = table.entity_count();
  std::ofstream out(sidecar_path(path), std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + sidecar_path(path).string());
  out << side.dump(2) << '\n';
}

LoadedCodeTable read_code_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  LoadedCodeTable loaded;
  std::vector<CodeIndex> codes;
  std::size_t per_entity = 0;
  CodeIndex max_code = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string::npos) fail(ErrorKind::kParse, where + ": expected label<TAB>codes");
    loaded.labels.push_back(line.substr(0, tab));
    std::size_t count = 0;
    const char* p = line.data() + tab + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      CodeIndex c = 0;
      const auto [next, ec] = std::from_chars(p, end, c);
      if (ec != std::errc() || (next != end && *next != ' ')) {
        fail(ErrorKind::kParse, where + ": invalid code index");
      }
      codes.push_back(c);
      max_code = std::max(max_code, c);
      ++count;
      p = next;
    }
    if (per_entity == 0) per_entity = count;
    if (count == 0 || count != per_entity) {
      fail(ErrorKind::kFormat, where + ": expected " + std::to_string(per_entity) + " codes");
    }
  }
  if (per_entity == 0) fail(ErrorKind::kFormat, path.string() + ": empty code table");
  std::size_t codebook_size = static_cast<std::size_t>(max_code) + 1;
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream sin(side);
    nlohmann::json j;
    try {
      sin >> j;
      CodeTableMeta meta;
      meta.codebook_size = j.at("M").get<std::size_t>();
      meta.codes_per_entity = j.at("N").get<std::size_t>();
      meta.dim = j.at("d").get<std::size_t>();
      meta.seed = j.at("seed").get<std::uint64_t>();
      loaded.meta = meta;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, side.string() + ": " + e.what());
    }
    if (loaded.meta->codes_per_entity != per_entity) {
      fail(ErrorKind::kFormat, side.string() + ": N disagrees with the code table");
    }
    codebook_size = loaded.meta->codebook_size;
  }
  loaded.table = EntityCodeTable(codebook_size, per_entity, std::move(codes));
  return loaded;
}

EntityCodeTable align_code_table(const LoadedCodeTable& loaded,
                                 const std::vector<std::string>& entity_labels) {
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < loaded.labels.size(); ++i) index.emplace(loaded.labels[i], i);
  const std::size_t n = loaded.table.codes_per_entity();
  std::vector<CodeIndex> codes;
  codes.reserve(entity_labels.size() * n);
  std::string missing;
  std::size_t absent = 0;
  for (const auto& label : entity_labels) {
    const auto it = index.find(label);
    if (it == index.end()) {
      if (absent++ < 10) missing += (missing.empty() ? "" : ",") + label;
      continue;
    }
    const auto row = loaded.table.codes(it->second);
    codes.insert(codes.end(), row.begin(), row.end());
  }
  if (absent) {
    fail(ErrorKind::kCoverage, std::to_string(absent) + " entities have no codes: " + missing);
  }
  return EntityCodeTable(loaded.table.codebook_size(), n, std::move(codes));
}

}  // namespace ssqr::quantizer
