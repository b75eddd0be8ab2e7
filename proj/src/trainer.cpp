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

#include "ssqr/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "ssqr/error.hpp"
#include "ssqr/evaluator.hpp"

namespace ssqr::trainer {

namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDropoutStream = 2;
constexpr std::uint64_t kResetStream = 3;
constexpr char kMagic[4] = {'S', 'S', 'Q', 'R'};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorKind::kParse, "config key '" + std::string(key) + "': invalid value '" +
                                std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorKind::kParse, "config key '" + std::string(key) + "': expected true or false, got '" +
                              std::string(text) + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

const ConfigField& find_field(std::string_view key) {
  for (const auto& f : config_fields()) {
    if (f.name == key) return f;
  }
  fail(ErrorKind::kParse, "unknown config key '" + std::string(key) + "'");
}

// Binary writer/reader for the checkpoint format.
class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  const std::string& data() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(checked_size(u64(), 1)); }
  // Guards length fields against values that cannot fit in the remaining data.
  std::size_t checked_size(std::uint64_t count, std::size_t element) const {
    if (element != 0 && count > (data_.size() - pos_) / element) truncated();
    return static_cast<std::size_t>(count);
  }
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(data_[i]); }
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) truncated();
  }
  [[noreturn]] static void truncated() {
    fail(ErrorKind::kCorruption, "checkpoint is truncated");
  }

  std::string data_;
  std::size_t pos_ = 0;
};

std::map<std::string, std::string> parse_meta(std::string_view text) {
  std::map<std::string, std::string> meta;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    meta[std::string(trim(std::string_view(line).substr(0, eq)))] =
        std::string(trim(std::string_view(line).substr(eq + 1)));
  }
  return meta;
}

std::uint64_t meta_u64(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) fail(ErrorKind::kCorruption, "checkpoint meta lacks '" + key + "'");
  std::uint64_t v = 0;
  const auto* end = it->second.data() + it->second.size();
  const auto [ptr, ec] = std::from_chars(it->second.data(), end, v, 16);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorKind::kCorruption, "checkpoint meta '" + key + "' is malformed");
  }
  return v;
}

std::string hex(std::uint64_t v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, 16);
  return std::string(buf, res.ptr);
}

// Copy of the model whose values come from the best snapshot when present.
model::ModelParams effective_params(const TrainState& state) {
  if (state.best.empty()) return state.params;
  const std::size_t entities = state.params.gcn.entity_table->dim(0);
  const std::size_t relations = state.params.gcn.relation_table->dim(0);
  model::ModelParams copy = model::init_model(
      entities, relations, model_options(state.config, state.text_dim), state.config.seed);
  for (const auto& [name, tensor] : copy.named()) {
    const auto it = state.best.find(name);
    if (it == state.best.end() || it->second.size() != tensor->size()) {
      fail(ErrorKind::kCorruption, "best snapshot lacks '" + name + "'");
    }
    std::copy(it->second.begin(), it->second.end(), tensor->values().begin());
  }
  return copy;
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      {"d", &TrainConfig::d, "embedding and code dimension"},
      {"L", &TrainConfig::L, "GCN layers"},
      {"dropout", &TrainConfig::dropout, "GCN layer-output dropout rate"},
      {"batch_size", &TrainConfig::batch_size, "(h, r) query pairs per optimizer step"},
      {"lr", &TrainConfig::lr, "Adam learning rate"},
      {"l2", &TrainConfig::l2, "L2 regularization weight"},
      {"epochs", &TrainConfig::epochs, "maximum training epochs"},
      {"beta", &TrainConfig::beta, "commitment weight of the VQ loss"},
      {"M", &TrainConfig::M, "codebook size"},
      {"N", &TrainConfig::N, "codes per entity"},
      {"label_smoothing", &TrainConfig::label_smoothing, "1-vs-all label smoothing"},
      {"seed", &TrainConfig::seed, "random seed"},
      {"ablate_gcn", &TrainConfig::ablate_gcn, "skip the GCN encoder"},
      {"ablate_semantics", &TrainConfig::ablate_semantics, "drop the semantic loss"},
      {"strict_eq6", &TrainConfig::strict_eq6, "no bias or rectifier after the convolution"},
      {"eval_every", &TrainConfig::eval_every, "validate every n epochs (0 = never)"},
      {"patience", &TrainConfig::patience, "stop after n stagnant validations (0 = never)"},
      {"conv_rows", &TrainConfig::conv_rows, "rows of each reshaped decoder projection"},
      {"conv_cols", &TrainConfig::conv_cols, "columns of each reshaped decoder projection"},
      {"conv_channels", &TrainConfig::conv_channels, "decoder convolution channels"},
      {"ffn_hidden", &TrainConfig::ffn_hidden, "quantizer FFN hidden width (0 = 2*N*d)"},
  };
  return fields;
}

void set_config_value(TrainConfig& config, std::string_view key, std::string_view value) {
  const ConfigField& field = find_field(key);
  value = trim(value);
  std::visit(
      [&](auto member) {
        using T = std::remove_cvref_t<decltype(config.*member)>;
        if constexpr (std::is_same_v<T, bool>) {
          config.*member = parse_bool(key, value);
        } else {
          config.*member = parse_number<T>(key, value);
        }
      },
      field.member);
}

std::string get_config_value(const TrainConfig& config, std::string_view key) {
  const ConfigField& field = find_field(key);
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(config.*member)>;
        if constexpr (std::is_same_v<T, bool>) {
          return config.*member ? "true" : "false";
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(config.*member);
        } else {
          return std::to_string(config.*member);
        }
      },
      field.member);
}

std::vector<std::pair<std::string, std::string>> parse_config_entries(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  std::vector<std::pair<std::string, std::string>> entries;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::kParse, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(trim(line.substr(0, eq)));
    if (!seen.insert(key).second) {
      fail(ErrorKind::kParse, "config line " + std::to_string(line_no) + ": duplicate key '" +
                                  key + "'");
    }
    find_field(key);
    entries.emplace_back(std::move(key), std::string(trim(line.substr(eq + 1))));
  }
  return entries;
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  for (const auto& [key, value] : parse_config_entries(text)) set_config_value(base, key, value);
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str(), base);
}

std::string config_text(const TrainConfig& config) {
  std::string out;
  for (const auto& f : config_fields()) {
    out += std::string(f.name) + " = " + get_config_value(config, f.name) + "\n";
  }
  return out;
}

void validate(const TrainConfig& c) {
  auto positive = [](std::string_view name, double v) {
    if (!(v > 0.0)) fail(ErrorKind::kParameter, "config: " + std::string(name) + " must be positive");
  };
  positive("d", static_cast<double>(c.d));
  positive("L", static_cast<double>(c.L));
  positive("batch_size", static_cast<double>(c.batch_size));
  positive("lr", c.lr);
  positive("epochs", static_cast<double>(c.epochs));
  positive("conv_rows", static_cast<double>(c.conv_rows));
  positive("conv_cols", static_cast<double>(c.conv_cols));
  positive("conv_channels", static_cast<double>(c.conv_channels));
  if (c.l2 < 0.0) fail(ErrorKind::kParameter, "config: l2 must be non-negative");
  if (c.beta < 0.0) fail(ErrorKind::kParameter, "config: beta must be non-negative");
  if (c.dropout < 0.0 || c.dropout >= 1.0) {
    fail(ErrorKind::kParameter, "config: dropout must be in [0, 1)");
  }
  if (c.label_smoothing < 0.0 || c.label_smoothing >= 1.0) {
    fail(ErrorKind::kParameter, "config: label_smoothing must be in [0, 1)");
  }
  if (c.M < 2) fail(ErrorKind::kParameter, "config: M must be at least 2");
  if (c.N < 1) fail(ErrorKind::kParameter, "config: N must be at least 1");
  model_options(c, 0).geometry.validate();
}

model::ModelOptions model_options(const TrainConfig& config, std::size_t text_dim) {
  model::ModelOptions o;
  o.dim = config.d;
  o.layers = config.L;
  o.dropout = config.dropout;
  o.heads = config.N;
  o.codebook_size = config.M;
  o.ffn_hidden = config.ffn_hidden;
  o.text_dim = config.ablate_semantics ? 0 : text_dim;
  o.geometry.rows = config.conv_rows;
  o.geometry.cols = config.conv_cols;
  o.geometry.channels = config.conv_channels;
  o.strict_eq6 = config.strict_eq6;
  o.ablate_gcn = config.ablate_gcn;
  o.ablate_semantics = config.ablate_semantics;
  o.beta = config.beta;
  o.label_smoothing = config.label_smoothing;
  return o;
}

TrainState init_state(const TrainConfig& config, std::size_t entities, std::size_t relations,
                      std::size_t text_dim) {
  validate(config);
  TrainState s;
  s.config = config;
  s.text_dim = config.ablate_semantics ? 0 : text_dim;
  s.params = model::init_model(entities, relations, model_options(config, s.text_dim), config.seed);
  nk::AdamConfig adam;
  adam.lr = config.lr;
  adam.weight_decay = config.l2;
  s.adam = nk::Adam(adam);
  s.shuffle_rng = CounterRng(config.seed, kShuffleStream);
  s.dropout_rng = CounterRng(config.seed, kDropoutStream);
  s.reset_rng = CounterRng(config.seed, kResetStream);
  return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(config_text(state.config));
  std::string meta;
  meta += "text_dim = " + hex(state.text_dim) + "\n";
  meta += "epoch = " + hex(state.epoch) + "\n";
  meta += "adam_steps = " + hex(state.adam.step_count()) + "\n";
  meta += "shuffle_counter = " + hex(state.shuffle_rng.counter()) + "\n";
  meta += "dropout_counter = " + hex(state.dropout_rng.counter()) + "\n";
  meta += "reset_counter = " + hex(state.reset_rng.counter()) + "\n";
  meta += "codebook_seeded = " + hex(state.codebook_seeded ? 1 : 0) + "\n";
  meta += "best_mrr_bits = " + hex(std::bit_cast<std::uint64_t>(state.best_mrr)) + "\n";
  meta += "stagnant = " + hex(state.stagnant) + "\n";
  meta += "stopped = " + hex(state.stopped ? 1 : 0) + "\n";
  w.str(meta);

  struct Entry {
    std::string name;
    nk::Shape shape;
    std::span<const double> values;
  };
  std::vector<Entry> entries;
  for (const auto& [name, t] : state.params.named()) {
    entries.push_back({name, t->shape(), t->values()});
  }
  const auto trainable = state.params.trainable(model_options(state.config, state.text_dim));
  const auto& m = state.adam.first_moments();
  const auto& v = state.adam.second_moments();
  for (std::size_t slot = 0; slot < trainable.size() && slot < m.size(); ++slot) {
    if (m[slot].empty()) continue;
    entries.push_back({"adam.m." + trainable[slot].first, trainable[slot].second->shape(), m[slot]});
    entries.push_back({"adam.v." + trainable[slot].first, trainable[slot].second->shape(), v[slot]});
  }
  for (const auto& [name, t] : state.params.named()) {
    const auto it = state.best.find(name);
    if (it != state.best.end()) entries.push_back({"best." + name, t->shape(), it->second});
  }
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const Entry& e : entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.u64(d);
    w.u64(e.values.size());
    for (double x : e.values) w.f64(x);
  }

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) fail(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  ByteReader r(os.str());
  if (r.bytes(4) != std::string_view(kMagic, 4)) {
    fail(ErrorKind::kCorruption, path.string() + ": not an SSQR checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kCompatibility, path.string() + ": checkpoint version " +
                                        std::to_string(version) + ", expected " +
                                        std::to_string(kCheckpointVersion));
  }
  const TrainConfig config = parse_config(r.str());
  const auto meta = parse_meta(r.str());

  std::map<std::string, nk::NdBuffer> arrays;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    nk::Shape shape(r.checked_size(rank, 8));
    for (auto& d : shape) d = r.checked_size(r.u64(), 0);
    const std::size_t n = r.checked_size(r.u64(), 8);
    if (n != nk::element_count(shape)) {
      fail(ErrorKind::kCorruption, "checkpoint array '" + name + "' has inconsistent size");
    }
    std::vector<double> values(n);
    for (double& x : values) x = r.f64();
    arrays.emplace(std::move(name), nk::NdBuffer(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) fail(ErrorKind::kCorruption, path.string() + ": trailing bytes");

  auto array = [&](const std::string& name) -> const nk::NdBuffer& {
    const auto it = arrays.find(name);
    if (it == arrays.end()) fail(ErrorKind::kCorruption, "checkpoint lacks array '" + name + "'");
    return it->second;
  };
  const std::size_t entities = array("gcn.entity_table").dim(0);
  const std::size_t relations = array("gcn.relation_table").dim(0);
  TrainState s = init_state(config, entities, relations, meta_u64(meta, "text_dim"));
  for (const auto& [name, t] : s.params.named()) {
    const nk::NdBuffer& stored = array(name);
    if (stored.shape() != t->shape()) {
      fail(ErrorKind::kCorruption, "checkpoint array '" + name + "' has shape " +
                                       nk::shape_string(stored.shape()) + ", expected " +
                                       nk::shape_string(t->shape()));
    }
    std::copy(stored.values().begin(), stored.values().end(), t->values().begin());
  }
  s.epoch = meta_u64(meta, "epoch");
  s.adam.set_step_count(meta_u64(meta, "adam_steps"));
  s.shuffle_rng.set_counter(meta_u64(meta, "shuffle_counter"));
  s.dropout_rng.set_counter(meta_u64(meta, "dropout_counter"));
  s.reset_rng.set_counter(meta_u64(meta, "reset_counter"));
  s.codebook_seeded = meta_u64(meta, "codebook_seeded") != 0;
  s.best_mrr = std::bit_cast<double>(meta_u64(meta, "best_mrr_bits"));
  s.stagnant = meta_u64(meta, "stagnant");
  s.stopped = meta_u64(meta, "stopped") != 0;

  const auto trainable = s.params.trainable(model_options(s.config, s.text_dim));
  if (s.adam.step_count() > 0) {
    auto& m = s.adam.first_moments();
    auto& v = s.adam.second_moments();
    m.resize(trainable.size());
    v.resize(trainable.size());
    for (std::size_t slot = 0; slot < trainable.size(); ++slot) {
      const auto& mv = array("adam.m." + trainable[slot].first).values();
      const auto& vv = array("adam.v." + trainable[slot].first).values();
      m[slot].assign(mv.begin(), mv.end());
      v[slot].assign(vv.begin(), vv.end());
    }
  }
  for (const auto& [name, t] : s.params.named()) {
    const auto it = arrays.find("best." + name);
    if (it != arrays.end()) s.best[name].assign(it->second.values().begin(), it->second.values().end());
  }
  return s;
}

Trainer::Trainer(const kg::KnowledgeGraph& graph, const kg::TextEmbeddingTable* text,
                 TrainConfig config)
    : graph_(&graph), text_(text) {
  if (!config.ablate_semantics && text == nullptr) {
    fail(ErrorKind::kCoverage, "text embeddings are required unless ablate_semantics is set");
  }
  state_ = init_state(config, graph.entity_count(), graph.relation_count(), text ? text->dim : 0);
  check_inputs();
}

Trainer::Trainer(const kg::KnowledgeGraph& graph, const kg::TextEmbeddingTable* text,
                 TrainState state)
    : graph_(&graph), text_(text), state_(std::move(state)) {
  check_inputs();
}

void Trainer::check_inputs() const {
  auto& self = const_cast<Trainer&>(*this);
  self.options_ = model_options(state_.config, state_.text_dim);
  if (state_.params.gcn.entity_table->dim(0) != graph_->entity_count() ||
      state_.params.gcn.relation_table->dim(0) != graph_->relation_count()) {
    fail(ErrorKind::kShape, "model was built for " +
                                std::to_string(state_.params.gcn.entity_table->dim(0)) +
                                " entities and " +
                                std::to_string(state_.params.gcn.relation_table->dim(0)) +
                                " relations; graph has " + std::to_string(graph_->entity_count()) +
                                " and " + std::to_string(graph_->relation_count()));
  }
  if (options_.uses_semantics()) {
    if (text_ == nullptr) {
      fail(ErrorKind::kCoverage, "text embeddings are required unless ablate_semantics is set");
    }
    if (text_->dim != state_.text_dim) {
      fail(ErrorKind::kFormat, "text embedding dim " + std::to_string(text_->dim) +
                                   " does not match the model's " +
                                   std::to_string(state_.text_dim));
    }
    std::vector<kg::EntityId> ids(graph_->entity_count());
    for (std::size_t e = 0; e < ids.size(); ++e) ids[e] = static_cast<kg::EntityId>(e);
    self.text_targets_ = decoder::text_targets(*text_, ids);
  }
  if (graph_->train().empty()) fail(ErrorKind::kParameter, "training split is empty");
  self.trainable_ = state_.params.trainable(options_);
}

void Trainer::seed_codebook() {
  nk::Tape tape(false);
  CounterRng unused;
  const auto fwd = model::forward(tape, *graph_, state_.params, options_, false, unused);
  const nk::NdBuffer& heads = *fwd.quantized.heads;
  const std::size_t rows = heads.dim(0), d = heads.dim(1);
  const std::size_t m = state_.params.codebook.size();
  auto codes = state_.params.codebook.codes->values();
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  CounterRng& rng = state_.reset_rng;
  for (std::size_t c = 0; c < m; ++c) {
    std::size_t pick;
    if (c < rows) {
      // Partial Fisher-Yates: distinct rows while they last.
      const std::size_t j = c + rng.below(rows - c);
      std::swap(order[c], order[j]);
      pick = order[c];
    } else {
      pick = rng.below(rows);
    }
    for (std::size_t k = 0; k < d; ++k) {
      double v = heads[pick * d + k];
      if (c >= rows) v += rng.uniform(-1e-3, 1e-3);
      codes[c * d + k] = v;
    }
  }
  state_.codebook_seeded = true;
}

void Trainer::reset_dead_codes(const std::vector<std::size_t>& usage, const nk::NdBuffer& heads,
                               std::size_t& resets) {
  const std::size_t d = heads.dim(1);
  auto codes = state_.params.codebook.codes->values();
  std::size_t slot = trainable_.size();
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    if (trainable_[i].first == "codebook") slot = i;
  }
  auto& m = state_.adam.first_moments();
  auto& v = state_.adam.second_moments();
  for (std::size_t c = 0; c < usage.size(); ++c) {
    if (usage[c] != 0) continue;
    const std::size_t pick = state_.reset_rng.below(heads.dim(0));
    for (std::size_t k = 0; k < d; ++k) codes[c * d + k] = heads[pick * d + k];
    if (slot < m.size() && !m[slot].empty()) {
      std::fill_n(m[slot].begin() + static_cast<std::ptrdiff_t>(c * d), d, 0.0);
      std::fill_n(v[slot].begin() + static_cast<std::ptrdiff_t>(c * d), d, 0.0);
    }
    ++resets;
  }
}

EpochLog Trainer::run_epoch() {
  if (!state_.codebook_seeded) seed_codebook();
  std::vector<decoder::QueryKey> pairs;
  pairs.reserve(graph_->train_queries().size());
  for (const auto& [key, tails] : graph_->train_queries()) pairs.push_back(key);
  state_.shuffle_rng.shuffle(std::span<decoder::QueryKey>(pairs));

  std::vector<nk::Tensor> tensors;
  for (const auto& [name, t] : trainable_) tensors.push_back(t);

  EpochLog log;
  log.epoch = static_cast<std::size_t>(state_.epoch) + 1;
  std::vector<std::size_t> usage(state_.params.codebook.size(), 0);
  nk::NdBuffer last_heads;
  const std::size_t batch_size = state_.config.batch_size;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t end = std::min(pairs.size(), start + batch_size);
    const std::span<const decoder::QueryKey> batch(pairs.data() + start, end - start);
    nk::Tape tape;
    const auto fwd =
        model::forward(tape, *graph_, state_.params, options_, true, state_.dropout_rng);
    for (auto idx : fwd.quantized.indices) ++usage[idx];
    const auto losses =
        model::compute_losses(tape, *graph_, state_.params, options_, fwd, batch, text_targets_);
    const double total = losses.total->values()[0];
    if (!std::isfinite(total)) {
      fail(ErrorKind::kDivergence, "non-finite loss at epoch " + std::to_string(log.epoch) +
                                       ", batch " + std::to_string(log.batches + 1));
    }
    for (const auto& t : tensors) {
      t->grad();
      t->zero_grad();
    }
    tape.backward(losses.total);
    state_.adam.step(tensors);

    log.total += total;
    log.vq += losses.vq->values()[0];
    log.structure += losses.structure->values()[0];
    if (losses.semantic) log.semantic += losses.semantic->values()[0];
    ++log.batches;
    last_heads = *fwd.quantized.heads;
  }
  if (log.batches > 0) {
    const double n = static_cast<double>(log.batches);
    log.total /= n;
    log.vq /= n;
    log.structure /= n;
    log.semantic /= n;
    log.codes_used = static_cast<std::size_t>(
        std::count_if(usage.begin(), usage.end(), [](std::size_t u) { return u > 0; }));
    reset_dead_codes(usage, last_heads, log.dead_codes_reset);
  }
  ++state_.epoch;

  const std::size_t every = state_.config.eval_every;
  if (every > 0 && state_.epoch % every == 0 && !graph_->valid().empty()) {
    const double mrr = validation_mrr();
    log.valid_mrr = mrr;
    if (mrr > state_.best_mrr) {
      state_.best_mrr = mrr;
      state_.stagnant = 0;
      state_.best.clear();
      for (const auto& [name, t] : state_.params.named()) {
        state_.best[name].assign(t->values().begin(), t->values().end());
      }
    } else {
      ++state_.stagnant;
      if (state_.config.patience > 0 && state_.stagnant >= state_.config.patience) {
        state_.stopped = true;
      }
    }
  }
  return log;
}

bool Trainer::done() const noexcept {
  return state_.stopped || state_.epoch >= state_.config.epochs;
}

std::vector<EpochLog> Trainer::run(const std::function<void(const EpochLog&)>& on_epoch) {
  std::vector<EpochLog> logs;
  while (!done()) {
    logs.push_back(run_epoch());
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

double Trainer::validation_mrr() const {
  const model::Scorer scorer(*graph_, state_.params, options_);
  const auto report = evaluator::link_prediction_eval(
      *graph_, [&](auto queries) { return scorer.score_queries(queries); }, graph_->valid());
  return report.mrr;
}

quantizer::EntityCodeTable Trainer::final_codes() {
  const model::ModelParams params = effective_params(state_);
  return model::Scorer(*graph_, params, options_).code_table();
}

TrainOutput train(const kg::KnowledgeGraph& graph, const kg::TextEmbeddingTable* text,
                  const TrainConfig& config) {
  Trainer trainer(graph, text, config);
  TrainOutput out;
  out.log = trainer.run();
  out.codes = trainer.final_codes();
  out.state = std::move(trainer.state());
  return out;
}

std::unique_ptr<model::Scorer> make_scorer(const kg::KnowledgeGraph& graph,
                                           const TrainState& state) {
  if (state.params.gcn.entity_table->dim(0) != graph.entity_count() ||
      state.params.gcn.relation_table->dim(0) != graph.relation_count()) {
    fail(ErrorKind::kShape, "checkpoint does not match the graph's entity/relation counts");
  }
  const model::ModelParams params = effective_params(state);
  return std::make_unique<model::Scorer>(graph, params,
                                         model_options(state.config, state.text_dim));
}

}  // namespace ssqr::trainer
