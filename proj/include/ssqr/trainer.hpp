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

#ifndef SSQR_TRAINER_HPP
#define SSQR_TRAINER_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "ssqr/kg_store.hpp"
#include "ssqr/model.hpp"
#include "ssqr/numkernel.hpp"
#include "ssqr/quantizer.hpp"
#include "ssqr/rng.hpp"

namespace ssqr::trainer {

struct TrainConfig {
  std::size_t d = 200;
  std::size_t L = 2;
  double dropout = 0.2;
  std::size_t batch_size = 1024;
  double lr = 0.0005;
  double l2 = 1e-8;
  std::size_t epochs = 800;
  double beta = 0.25;
  std::size_t M = 2048;
  std::size_t N = 32;
  double label_smoothing = 0.1;
  std::uint64_t seed = 42;
  bool ablate_gcn = false;
  bool ablate_semantics = false;
  bool strict_eq6 = false;
  std::size_t eval_every = 0;  // 0 disables validation
  std::size_t patience = 0;    // 0 disables early stopping
  // Decoder geometry and FFN width.
  std::size_t conv_rows = 10;
  std::size_t conv_cols = 20;
  std::size_t conv_channels = 32;
  std::size_t ffn_hidden = 0;  // 0 selects 2 * N * d

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed is stored as a size_t field");
using ConfigMember =
    std::variant<std::size_t TrainConfig::*, double TrainConfig::*, bool TrainConfig::*>;

struct ConfigField {
  std::string_view name;
  ConfigMember member;
  std::string_view help;
};

// Every TrainConfig field in declaration order.
const std::vector<ConfigField>& config_fields();

void set_config_value(TrainConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const TrainConfig& config, std::string_view key);

// Flat "key = value" lines; '#' starts a comment. Unknown keys are rejected.
std::vector<std::pair<std::string, std::string>> parse_config_entries(std::string_view text);
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
std::string config_text(const TrainConfig& config);
void validate(const TrainConfig& config);

model::ModelOptions model_options(const TrainConfig& config, std::size_t text_dim);

struct EpochLog {
  std::size_t epoch = 0;
  double total = 0.0;
  double vq = 0.0;
  double structure = 0.0;
  double semantic = 0.0;
  std::size_t batches = 0;
  std::size_t codes_used = 0;
  std::size_t dead_codes_reset = 0;
  std::optional<double> valid_mrr;
};

struct TrainState {
  TrainConfig config;
  std::size_t text_dim = 0;
  model::ModelParams params;
  nk::Adam adam;
  std::uint64_t epoch = 0;
  CounterRng shuffle_rng;
  CounterRng dropout_rng;
  CounterRng reset_rng;
  bool codebook_seeded = false;
  double best_mrr = -std::numeric_limits<double>::infinity();
  std::uint64_t stagnant = 0;
  bool stopped = false;
  // Parameter values at the best validation MRR, keyed by parameter name.
  std::map<std::string, std::vector<double>> best;
};

TrainState init_state(const TrainConfig& config, std::size_t entities, std::size_t relations,
                      std::size_t text_dim);

// Little-endian: "SSQR", u32 version, config text, meta text, then
// length-prefixed named arrays (parameters, Adam moments, best snapshot).
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

class Trainer {
 public:
  // text may be null only when semantics are ablated.
  Trainer(const kg::KnowledgeGraph& graph, const kg::TextEmbeddingTable* text,
          TrainConfig config);
  Trainer(const kg::KnowledgeGraph& graph, const kg::TextEmbeddingTable* text, TrainState state);

  EpochLog run_epoch();
  bool done() const noexcept;
  std::vector<EpochLog> run(const std::function<void(const EpochLog&)>& on_epoch = {});

  // Loads the best validation snapshot, if any, and runs a full eval-mode
  // quantization pass.
  quantizer::EntityCodeTable final_codes();

  double validation_mrr() const;

  const TrainState& state() const noexcept { return state_; }
  TrainState& state() noexcept { return state_; }
  const model::ModelOptions& options() const noexcept { return options_; }

 private:
  void check_inputs() const;
  void seed_codebook();
  void reset_dead_codes(const std::vector<std::size_t>& usage, const nk::NdBuffer& heads,
                        std::size_t& resets);

  const kg::KnowledgeGraph* graph_;
  const kg::TextEmbeddingTable* text_;
  TrainState state_;
  model::ModelOptions options_;
  nk::Tensor text_targets_;
  std::vector<std::pair<std::string, nk::Tensor>> trainable_;
};

struct TrainOutput {
  TrainState state;
  quantizer::EntityCodeTable codes;
  std::vector<EpochLog> log;
};

TrainOutput train(const kg::KnowledgeGraph& graph, const kg::TextEmbeddingTable* text,
                  const TrainConfig& config);

// Rebuilds the model held by a checkpoint against a graph.
std::unique_ptr<model::Scorer> make_scorer(const kg::KnowledgeGraph& graph,
                                           const TrainState& state);

}  // namespace ssqr::trainer

#endif  // SSQR_TRAINER_HPP
