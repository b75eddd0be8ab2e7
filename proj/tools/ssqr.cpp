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

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssqr/embed_client.hpp"
#include "ssqr/error.hpp"
#include "ssqr/evaluator.hpp"
#include "ssqr/instruct_gen.hpp"
#include "ssqr/kg_store.hpp"
#include "ssqr/quantizer.hpp"
#include "ssqr/trainer.hpp"

#ifndef SSQR_VERSION
#define SSQR_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) ssqr::fail(ssqr::ErrorKind::kIo, "cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) ssqr::fail(ssqr::ErrorKind::kIo, "cannot write " + tmp.string());
    out << text;
    if (!out) ssqr::fail(ssqr::ErrorKind::kIo, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    ssqr::fail(ssqr::ErrorKind::kIo, "cannot create directory " + dir.string());
  }
}

class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), started_(iso_now()) {}

  void input(const std::string& role, const fs::path& path) {
    if (fs::is_directory(path)) {
      for (const char* name : {"train.txt", "valid.txt", "test.txt"}) {
        if (fs::exists(path / name)) input(role + "/" + name, path / name);
      }
      return;
    }
    inputs_[role] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
  }
  void output(const fs::path& path) { outputs_.push_back(path); }
  ordered_json& config() { return config_; }
  ordered_json& sources() { return sources_; }
  void seed(std::uint64_t s) { seed_ = s; }

  void write(const fs::path& dir) const {
    ordered_json j;
    j["command"] = command_;
    j["version"] = SSQR_VERSION;
    j["config"] = config_;
    if (!sources_.empty()) j["config_sources"] = sources_;
    if (seed_) j["seed"] = *seed_;
    j["inputs"] = inputs_;
    ordered_json outs = ordered_json::object();
    for (const auto& p : outputs_) {
      outs[p.filename().string()] = {{"path", p.string()}, {"sha256", sha256_file(p)}};
    }
    j["outputs"] = outs;
    j["started"] = started_;
    j["finished"] = iso_now();
    write_atomic(dir / "manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string started_;
  ordered_json config_ = ordered_json::object();
  ordered_json sources_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::object();
  std::vector<fs::path> outputs_;
  std::optional<std::uint64_t> seed_;
};

std::string flag_name(std::string_view key) {
  std::string out(key);
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

// Flags > config file > SSQR_SEED (seed only) > defaults.
struct ConfigFlags {
  std::optional<std::string> path;
  std::map<std::string, std::optional<std::string>> values;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", path, "flat key = value config file")->check(CLI::ExistingFile);
    for (const auto& f : ssqr::trainer::config_fields()) {
      auto& slot = values[std::string(f.name)];
      if (std::holds_alternative<bool ssqr::trainer::TrainConfig::*>(f.member)) {
        cmd.add_flag("--" + flag_name(f.name) + "{true}", slot, std::string(f.help));
      } else {
        cmd.add_option("--" + flag_name(f.name), slot, std::string(f.help));
      }
    }
  }

  ssqr::trainer::TrainConfig resolve(Manifest& manifest) const {
    ssqr::trainer::TrainConfig config;
    std::map<std::string, std::string> source;
    for (const auto& f : ssqr::trainer::config_fields()) source[std::string(f.name)] = "default";
    if (path) {
      std::ifstream in(*path, std::ios::binary);
      std::ostringstream os;
      os << in.rdbuf();
      for (const auto& [key, value] : ssqr::trainer::parse_config_entries(os.str())) {
        ssqr::trainer::set_config_value(config, key, value);
        source[key] = "file";
      }
      manifest.input("config", *path);
    }
    for (const auto& [key, value] : values) {
      if (value) {
        ssqr::trainer::set_config_value(config, key, *value);
        source[key] = "flag";
      }
    }
    if (source["seed"] == "default") {
      if (const char* env = std::getenv("SSQR_SEED"); env != nullptr && *env != '\0') {
        ssqr::trainer::set_config_value(config, "seed", env);
        source["seed"] = "env";
      }
    }
    for (const auto& f : ssqr::trainer::config_fields()) {
      manifest.config()[std::string(f.name)] =
          ssqr::trainer::get_config_value(config, f.name);
      manifest.sources()[std::string(f.name)] = source[std::string(f.name)];
    }
    manifest.seed(config.seed);
    return config;
  }
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SSQR_SEED"); env != nullptr && *env != '\0') {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      ssqr::fail(ssqr::ErrorKind::kParse, std::string("SSQR_SEED is not an integer: ") + env);
    }
  }
  return fallback;
}

ordered_json epoch_json(const ssqr::trainer::EpochLog& log) {
  ordered_json j;
  j["epoch"] = log.epoch;
  j["total"] = log.total;
  j["vq"] = log.vq;
  j["structure"] = log.structure;
  j["semantic"] = log.semantic;
  j["batches"] = log.batches;
  j["codes_used"] = log.codes_used;
  j["dead_codes_reset"] = log.dead_codes_reset;
  if (log.valid_mrr) j["valid_mrr"] = *log.valid_mrr;
  return j;
}

void write_codes(const fs::path& path, const ssqr::quantizer::EntityCodeTable& codes,
                 const ssqr::kg::KnowledgeGraph& graph, const ssqr::trainer::TrainConfig& config) {
  ssqr::quantizer::CodeTableMeta meta;
  meta.codebook_size = codes.codebook_size();
  meta.codes_per_entity = codes.codes_per_entity();
  meta.dim = config.d;
  meta.seed = config.seed;
  ssqr::quantizer::write_code_table(path, codes, graph.entities().labels(), meta);
}

struct TrainArgs {
  ConfigFlags config;
  std::string data_dir;
  std::optional<std::string> embeddings;
  std::optional<std::string> resume;
  std::string out;
  bool verbose = false;
};

int cmd_train(const TrainArgs& args) {
  Manifest manifest("train");
  const fs::path out(args.out);
  ensure_dir(out);
  const auto graph = ssqr::kg::load_dataset(args.data_dir);
  manifest.input("data", args.data_dir);

  std::optional<ssqr::trainer::TrainState> resumed;
  ssqr::trainer::TrainConfig config;
  if (args.resume) {
    resumed = ssqr::trainer::load_checkpoint(*args.resume);
    manifest.input("resume", *args.resume);
    config = resumed->config;
    if (const auto& epochs = args.config.values.at("epochs")) {
      ssqr::trainer::set_config_value(config, "epochs", *epochs);
      resumed->config.epochs = config.epochs;
    }
    for (const auto& f : ssqr::trainer::config_fields()) {
      manifest.config()[std::string(f.name)] = ssqr::trainer::get_config_value(config, f.name);
    }
    manifest.seed(config.seed);
  } else {
    config = args.config.resolve(manifest);
  }

  std::optional<ssqr::kg::TextEmbeddingTable> text;
  if (!config.ablate_semantics) {
    if (!args.embeddings) {
      ssqr::fail(ssqr::ErrorKind::kCoverage,
                 "text embeddings are required unless ablate_semantics is set");
    }
    text = ssqr::kg::load_text_embeddings(*args.embeddings, graph);
    manifest.input("embeddings", *args.embeddings);
  }
  const ssqr::kg::TextEmbeddingTable* text_ptr = text ? &*text : nullptr;
  ssqr::trainer::Trainer trainer = resumed
      ? ssqr::trainer::Trainer(graph, text_ptr, std::move(*resumed))
      : ssqr::trainer::Trainer(graph, text_ptr, config);

  std::string log_text;
  trainer.run([&](const ssqr::trainer::EpochLog& log) {
    const std::string line = epoch_json(log).dump();
    log_text += line + "\n";
    if (args.verbose) std::cerr << line << "\n";
  });

  const fs::path checkpoint = out / "checkpoint.ssqr";
  const fs::path codes_path = out / "codes.tsv";
  const fs::path log_path = out / "train_log.jsonl";
  ssqr::trainer::save_checkpoint(trainer.state(), checkpoint);
  write_codes(codes_path, trainer.final_codes(), graph, trainer.state().config);
  write_atomic(log_path, log_text);
  manifest.output(checkpoint);
  manifest.output(codes_path);
  manifest.output(fs::path(codes_path.string() + ".json"));
  manifest.output(log_path);
  manifest.write(out);
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string out;
  bool ranks = false;
  bool table = false;
};

int cmd_eval(const EvalArgs& args) {
  Manifest manifest("eval");
  const fs::path out(args.out);
  ensure_dir(out);
  const auto graph = ssqr::kg::load_dataset(args.data_dir);
  manifest.input("data", args.data_dir);
  const auto state = ssqr::trainer::load_checkpoint(args.checkpoint);
  manifest.input("checkpoint", args.checkpoint);
  manifest.config()["split"] = args.split;
  manifest.seed(state.config.seed);

  const auto scorer = ssqr::trainer::make_scorer(graph, state);
  ssqr::evaluator::EvalReport report;
  report.ranking = ssqr::evaluator::link_prediction_eval(
      graph, [&](auto queries) { return scorer->score_queries(queries); }, graph.split(args.split));
  const auto codes = scorer->code_table();
  report.entropy = ssqr::evaluator::general_entropy(codes);
  report.position_entropy = ssqr::evaluator::position_entropy(codes);

  const fs::path report_path = out / "report.json";
  write_atomic(report_path, ssqr::evaluator::to_json(report, args.ranks).dump(2) + "\n");
  if (args.table) {
    std::cout << ssqr::evaluator::to_table(report);
  } else {
    std::cout << ssqr::evaluator::to_json(report, false).dump() << "\n";
  }
  manifest.output(report_path);
  manifest.write(out);
  return 0;
}

struct MetricsArgs {
  std::string codes;
  std::vector<std::size_t> k{1, 5, 10};
  bool k_given = false;
  std::string out;
};

int cmd_metrics(const MetricsArgs& args) {
  Manifest manifest("metrics");
  const fs::path out(args.out);
  ensure_dir(out);
  const auto loaded = ssqr::quantizer::read_code_table(args.codes);
  manifest.input("codes", args.codes);
  manifest.config()["k"] = args.k;

  ssqr::evaluator::EvalReport report;
  report.entropy = ssqr::evaluator::general_entropy(loaded.table);
  report.position_entropy = ssqr::evaluator::position_entropy(loaded.table);
  for (std::size_t k : args.k) {
    if (!args.k_given && k >= loaded.table.entity_count()) {
      std::cerr << "warning: skipping jaccard@" << k << " for " << loaded.table.entity_count()
                << " entities\n";
      continue;
    }
    report.jaccard[k] = ssqr::evaluator::jaccard_distance_metric(loaded.table, k);
  }
  const std::string text = ssqr::evaluator::to_json(report).dump(2) + "\n";
  const fs::path report_path = out / "metrics.json";
  write_atomic(report_path, text);
  std::cout << ssqr::evaluator::to_json(report).dump() << "\n";
  manifest.output(report_path);
  manifest.write(out);
  return 0;
}

struct ExportArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string out;
};

int cmd_export_codes(const ExportArgs& args) {
  Manifest manifest("export-codes");
  const fs::path out(args.out);
  ensure_dir(out);
  const auto graph = ssqr::kg::load_dataset(args.data_dir);
  manifest.input("data", args.data_dir);
  const auto state = ssqr::trainer::load_checkpoint(args.checkpoint);
  manifest.input("checkpoint", args.checkpoint);
  manifest.seed(state.config.seed);
  const auto scorer = ssqr::trainer::make_scorer(graph, state);
  const fs::path codes_path = out / "codes.tsv";
  write_codes(codes_path, scorer->code_table(), graph, state.config);
  manifest.output(codes_path);
  manifest.output(fs::path(codes_path.string() + ".json"));
  manifest.write(out);
  return 0;
}

struct GenArgs {
  std::string task;
  std::string codes;
  std::string data_dir;
  std::optional<std::string> candidates;
  std::optional<std::string> checkpoint;
  std::optional<std::string> names;
  std::string split = "train";
  bool preference_split = false;
  std::optional<std::uint64_t> seed;
  ssqr::instruct::RenderConfig render;
  std::string out;
};

int cmd_gen_instructions(const GenArgs& args) {
  Manifest manifest("gen-instructions");
  const fs::path out(args.out);
  ensure_dir(out);
  const auto graph = ssqr::kg::load_dataset(args.data_dir);
  manifest.input("data", args.data_dir);
  const auto loaded = ssqr::quantizer::read_code_table(args.codes);
  manifest.input("codes", args.codes);
  const auto codes = ssqr::quantizer::align_code_table(loaded, graph.entities().labels());
  std::optional<ssqr::kg::DisplayNames> names;
  if (args.names) {
    names = ssqr::kg::DisplayNames::load(*args.names, graph.entities());
    manifest.input("names", *args.names);
  }
  const std::uint64_t seed = resolve_seed(args.seed, 42);
  manifest.seed(seed);
  auto& cfg = manifest.config();
  cfg["task"] = args.task;
  cfg["split"] = args.split;
  cfg["token_template"] = args.render.token_template;
  cfg["top_k_output"] = args.render.top_k_output;
  cfg["candidates_per_query"] = args.render.candidates_per_query;
  cfg["classification_negative_rate"] = args.render.classification_negative_rate;
  cfg["n_render"] = args.render.n_render;

  ssqr::instruct::RenderContext ctx;
  ctx.graph = &graph;
  ctx.codes = &codes;
  ctx.names = names ? &*names : nullptr;
  ctx.config = args.render;

  std::vector<std::pair<std::string, std::vector<ssqr::kg::Triple>>> parts;
  const auto& split = graph.split(args.split);
  if (args.preference_split) {
    auto [tune, holdout] = ssqr::instruct::split_valid_for_preference(split, seed);
    parts.emplace_back(args.task + "_" + args.split + "_tune", std::move(tune));
    parts.emplace_back(args.task + "_" + args.split + "_holdout", std::move(holdout));
  } else {
    parts.emplace_back(args.task + "_" + args.split,
                       std::vector<ssqr::kg::Triple>(split.begin(), split.end()));
  }

  std::optional<ssqr::kg::CandidateTable> candidates;
  if (args.task == "lp") {
    if (args.candidates) {
      candidates = ssqr::kg::load_candidates(*args.candidates, graph);
      manifest.input("candidates", *args.candidates);
    } else if (args.checkpoint) {
      const auto state = ssqr::trainer::load_checkpoint(*args.checkpoint);
      manifest.input("checkpoint", *args.checkpoint);
      const auto scorer = ssqr::trainer::make_scorer(graph, state);
      candidates = ssqr::instruct::candidates_from_scorer(graph, *scorer, split,
                                                          args.render.candidates_per_query);
    } else {
      ssqr::fail(ssqr::ErrorKind::kParameter,
                 "link prediction needs --candidates or --checkpoint to rank candidates");
    }
  }

  std::size_t injected = 0;
  for (const auto& [stem, triples] : parts) {
    std::vector<ssqr::instruct::InstructionRecord> records;
    if (args.task == "lp") {
      auto ds = ssqr::instruct::build_link_prediction_dataset(ctx, triples, *candidates);
      injected += ds.gold_injected;
      records = std::move(ds.records);
    } else {
      auto ds = ssqr::instruct::build_classification_dataset(ctx, triples, seed);
      for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
      records = std::move(ds.records);
    }
    const fs::path path = out / (stem + ".jsonl");
    ssqr::instruct::write_jsonl(path, records);
    manifest.output(path);
    std::cout << path.string() << ": " << records.size() << " records\n";
  }
  if (args.task == "lp") {
    cfg["gold_injected"] = injected;
    std::cout << "gold injected: " << injected << "\n";
  }
  manifest.write(out);
  return 0;
}

struct FetchArgs {
  std::string endpoint;
  std::string descriptions;
  std::string out;
  std::string model = "text-embedding-3-large";
  std::string api_key_env = "OPENAI_API_KEY";
  std::size_t batch_size = 64;
};

int cmd_fetch_embeddings(const FetchArgs& args) {
  Manifest manifest("fetch-embeddings");
  const fs::path out(args.out);
  ensure_dir(out);
  const auto texts = ssqr::kg::read_descriptions(args.descriptions);
  manifest.input("descriptions", args.descriptions);
  ssqr::kg::FetchOptions options;
  options.endpoint = args.endpoint;
  options.model = args.model;
  options.batch_size = args.batch_size;
  if (const char* key = std::getenv(args.api_key_env.c_str())) options.api_key = key;
  manifest.config()["endpoint"] = args.endpoint;
  manifest.config()["model"] = args.model;
  manifest.config()["batch_size"] = args.batch_size;

  const auto file = ssqr::kg::fetch_embedding_file(options, texts);
  const fs::path path = out / "embeddings.txt";
  ssqr::kg::write_embedding_file(path, file);
  manifest.output(path);
  manifest.write(out);
  return 0;
}

struct SimilarityArgs {
  std::string data_dir;
  std::optional<std::string> checkpoint;
  std::optional<std::string> embeddings;
  std::vector<std::string> entities;
  std::string out;
};

int cmd_similarity(const SimilarityArgs& args) {
  Manifest manifest("similarity");
  const fs::path out(args.out);
  ensure_dir(out);
  const auto graph = ssqr::kg::load_dataset(args.data_dir);
  manifest.input("data", args.data_dir);
  std::vector<std::string> labels = args.entities;
  if (labels.empty()) labels = graph.entities().labels();
  std::vector<ssqr::kg::EntityId> ids;
  for (const auto& label : labels) {
    const auto id = graph.entities().find(label);
    if (!id) ssqr::fail(ssqr::ErrorKind::kVocabulary, "unknown entity '" + label + "'");
    ids.push_back(*id);
  }
  std::vector<std::vector<double>> vectors;
  if (args.checkpoint) {
    const auto state = ssqr::trainer::load_checkpoint(*args.checkpoint);
    manifest.input("checkpoint", *args.checkpoint);
    const auto codes = ssqr::trainer::make_scorer(graph, state)->code_table();
    for (auto id : ids) {
      const auto v = codes.vector(id);
      vectors.emplace_back(v.begin(), v.end());
    }
  } else if (args.embeddings) {
    const auto table = ssqr::kg::load_text_embeddings(*args.embeddings, graph);
    manifest.input("embeddings", *args.embeddings);
    for (auto id : ids) vectors.push_back(table.vectors.at(id));
  } else {
    ssqr::fail(ssqr::ErrorKind::kParameter, "similarity needs --checkpoint or --embeddings");
  }
  const auto matrix = ssqr::evaluator::similarity_matrix(vectors, labels);
  std::ostringstream os;
  ssqr::evaluator::write_similarity_csv(os, matrix);
  const fs::path path = out / "similarity.csv";
  write_atomic(path, os.str());
  if (matrix.zero_vectors) {
    std::cerr << "warning: " << matrix.zero_vectors << " zero vectors\n";
  }
  manifest.output(path);
  manifest.write(out);
  return 0;
}

struct RandomArgs {
  std::string data_dir;
  std::size_t m = 2048;
  std::size_t n = 32;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_random_codes(const RandomArgs& args) {
  Manifest manifest("random-codes");
  const fs::path out(args.out);
  ensure_dir(out);
  const auto graph = ssqr::kg::load_dataset(args.data_dir);
  manifest.input("data", args.data_dir);
  const std::uint64_t seed = resolve_seed(args.seed, 42);
  manifest.seed(seed);
  manifest.config()["M"] = args.m;
  manifest.config()["N"] = args.n;
  const auto codes =
      ssqr::quantizer::random_code_assignment(graph.entity_count(), args.m, args.n, seed);
  ssqr::quantizer::CodeTableMeta meta{args.m, args.n, 0, seed};
  const fs::path path = out / "codes.tsv";
  ssqr::quantizer::write_code_table(path, codes, graph.entities().labels(), meta);
  manifest.output(path);
  manifest.output(fs::path(path.string() + ".json"));
  manifest.write(out);
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SSQR knowledge-graph quantization toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SSQR_VERSION);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "learn entity codes");
  train.config.attach(*train_cmd);
  train_cmd->add_option("--data-dir", train.data_dir, "directory with train/valid/test.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--embeddings", train.embeddings, "entity text-embedding file")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", train.resume, "continue from a checkpoint")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_flag("--verbose", train.verbose, "print per-epoch losses");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "filtered link-prediction evaluation");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data-dir", eval.data_dir)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", eval.split)->check(CLI::IsMember({"valid", "test"}));
  eval_cmd->add_option("--out", eval.out, "output directory")->required();
  eval_cmd->add_flag("--ranks", eval.ranks, "include per-query ranks in report.json");
  eval_cmd->add_flag("--table", eval.table, "print a text table instead of JSON");

  MetricsArgs metrics;
  auto* metrics_cmd = app.add_subcommand("metrics", "entropy and Jaccard metrics of a code table");
  metrics_cmd->add_option("--codes", metrics.codes)->required()->check(CLI::ExistingFile);
  auto* metrics_k =
      metrics_cmd->add_option("--k", metrics.k, "neighbor counts for the Jaccard metric")
          ->delimiter(',');
  metrics_cmd->add_option("--out", metrics.out, "output directory")->required();

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export-codes", "write the code table of a checkpoint");
  export_cmd->add_option("--checkpoint", exp.checkpoint)->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--data-dir", exp.data_dir)->required()->check(CLI::ExistingDirectory);
  export_cmd->add_option("--out", exp.out, "output directory")->required();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-instructions", "render instruction-tuning JSONL");
  gen_cmd->add_option("--task", gen.task)->required()->check(CLI::IsMember({"lp", "tc"}));
  gen_cmd->add_option("--codes", gen.codes)->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--data-dir", gen.data_dir)->required()->check(CLI::ExistingDirectory);
  gen_cmd->add_option("--candidates", gen.candidates, "candidate TSV for lp")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "rank lp candidates with this model")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--names", gen.names, "label<TAB>display-name file")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--split", gen.split)->check(CLI::IsMember({"train", "valid", "test"}));
  gen_cmd->add_flag("--preference-split", gen.preference_split, "emit 9:1 tune/holdout files");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--token-template", gen.render.token_template);
  gen_cmd->add_option("--top-k", gen.render.top_k_output);
  gen_cmd->add_option("--candidates-per-query", gen.render.candidates_per_query);
  gen_cmd->add_option("--negative-rate", gen.render.classification_negative_rate);
  gen_cmd->add_option("--n-render", gen.render.n_render);
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  FetchArgs fetch;
  auto* fetch_cmd = app.add_subcommand("fetch-embeddings", "embed entity descriptions over HTTP");
  fetch_cmd->add_option("--endpoint", fetch.endpoint)->required();
  fetch_cmd->add_option("--descriptions", fetch.descriptions, "label<TAB>text file")
      ->required()
      ->check(CLI::ExistingFile);
  fetch_cmd->add_option("--model", fetch.model);
  fetch_cmd->add_option("--api-key-env", fetch.api_key_env, "variable holding the API key");
  fetch_cmd->add_option("--batch-size", fetch.batch_size);
  fetch_cmd->add_option("--out", fetch.out, "output directory")->required();

  SimilarityArgs sim;
  auto* sim_cmd = app.add_subcommand("similarity", "cosine similarity of entity vectors");
  sim_cmd->add_option("--data-dir", sim.data_dir)->required()->check(CLI::ExistingDirectory);
  auto* sim_ckpt = sim_cmd->add_option("--checkpoint", sim.checkpoint)->check(CLI::ExistingFile);
  sim_cmd->add_option("--embeddings", sim.embeddings)->check(CLI::ExistingFile)->excludes(sim_ckpt);
  sim_cmd->add_option("--entities", sim.entities, "comma-separated labels, default all")
      ->delimiter(',');
  sim_cmd->add_option("--out", sim.out, "output directory")->required();

  RandomArgs rnd;
  auto* rnd_cmd = app.add_subcommand("random-codes", "uniform random code-assignment baseline");
  rnd_cmd->add_option("--data-dir", rnd.data_dir)->required()->check(CLI::ExistingDirectory);
  rnd_cmd->add_option("--M", rnd.m);
  rnd_cmd->add_option("--N", rnd.n);
  rnd_cmd->add_option("--seed", rnd.seed);
  rnd_cmd->add_option("--out", rnd.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval);
    if (*metrics_cmd) {
      metrics.k_given = metrics_k->count() > 0;
      return cmd_metrics(metrics);
    }
    if (*export_cmd) return cmd_export_codes(exp);
    if (*gen_cmd) return cmd_gen_instructions(gen);
    if (*fetch_cmd) return cmd_fetch_embeddings(fetch);
    if (*sim_cmd) return cmd_similarity(sim);
    if (*rnd_cmd) return cmd_random_codes(rnd);
  } catch (const ssqr::Error& e) {
    std::cerr << "error: kind=" << ssqr::to_string(e.kind()) << " message=" << one_line(e.what())
              << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: kind=io message=" << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: kind=internal message=" << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}
