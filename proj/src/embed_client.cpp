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

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "ssqr/embed_client.hpp"

#include <algorithm>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "ssqr/error.hpp"

namespace ssqr::kg {

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) {
    fail(ErrorKind::kParameter, "endpoint '" + url + "' lacks a scheme");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

bool retryable(int status) { return status == 429 || status >= 500; }

std::vector<std::vector<double>> request_batch(httplib::Client& client, const Url& url,
                                               const FetchOptions& options,
                                               const std::vector<std::string>& inputs) {
  nlohmann::ordered_json body;
  body["input"] = inputs;
  body["model"] = options.model;
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!options.api_key.empty()) headers.emplace("Authorization", "Bearer " + options.api_key);

  std::string last_error;
  auto backoff = options.initial_backoff;
  for (std::size_t attempt = 1; attempt <= options.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    const auto res = client.Post(url.path, headers, payload, "application/json");
    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      if (retryable(res->status)) continue;
      break;
    }
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kProtocol, std::string("embedding response is not JSON: ") + e.what());
    }
    if (!reply.is_object() || !reply.contains("data") || !reply["data"].is_array()) {
      fail(ErrorKind::kProtocol, "embedding response lacks a data array");
    }
    const auto& data = reply["data"];
    if (data.size() != inputs.size()) {
      fail(ErrorKind::kProtocol, "embedding response has " + std::to_string(data.size()) +
                                     " vectors for " + std::to_string(inputs.size()) + " inputs");
    }
    std::vector<std::vector<double>> vectors(inputs.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& item = data[i];
      std::size_t slot = i;
      if (item.contains("index")) slot = item["index"].get<std::size_t>();
      if (slot >= vectors.size() || !vectors[slot].empty() || !item.contains("embedding")) {
        fail(ErrorKind::kProtocol, "embedding response item " + std::to_string(i) +
                                       " is malformed");
      }
      try {
        vectors[slot] = item["embedding"].get<std::vector<double>>();
      } catch (const nlohmann::json::exception&) {
        fail(ErrorKind::kProtocol,
             "embedding response item " + std::to_string(i) + " is not a number list");
      }
    }
    return vectors;
  }
  fail(ErrorKind::kTransport, "embedding request to " + url.origin + url.path + " failed after " +
                                  std::to_string(options.max_attempts) + " attempts (" +
                                  last_error + ")");
}

}  // namespace

EmbeddingFile fetch_embedding_file(const FetchOptions& options,
                                   std::span<const std::pair<std::string, std::string>> texts) {
  EmbeddingFile file;
  if (texts.empty()) return file;
  if (options.batch_size == 0) fail(ErrorKind::kParameter, "batch_size must be positive");
  if (options.max_attempts == 0) fail(ErrorKind::kParameter, "max_attempts must be positive");
  const Url url = split_url(options.endpoint);
  httplib::Client client(url.origin);
  client.set_connection_timeout(options.timeout);
  client.set_read_timeout(options.timeout);
  client.set_write_timeout(options.timeout);

  for (std::size_t start = 0; start < texts.size(); start += options.batch_size) {
    const std::size_t end = std::min(texts.size(), start + options.batch_size);
    std::vector<std::string> inputs;
    for (std::size_t i = start; i < end; ++i) inputs.push_back(texts[i].second);
    auto vectors = request_batch(client, url, options, inputs);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      if (file.dim == 0) file.dim = vectors[i].size();
      if (vectors[i].empty() || vectors[i].size() != file.dim) {
        fail(ErrorKind::kProtocol, "embedding for '" + texts[start + i].first + "' has dim " +
                                       std::to_string(vectors[i].size()) + ", expected " +
                                       std::to_string(file.dim));
      }
      file.labels.push_back(texts[start + i].first);
      file.vectors.push_back(std::move(vectors[i]));
    }
  }
  return file;
}

TextEmbeddingTable fetch_embeddings(const FetchOptions& options,
                                    const std::map<EntityId, std::string>& descriptions) {
  std::vector<std::pair<std::string, std::string>> texts;
  std::vector<EntityId> ids;
  for (const auto& [id, text] : descriptions) {
    texts.emplace_back(std::to_string(id), text);
    ids.push_back(id);
  }
  const EmbeddingFile file = fetch_embedding_file(options, texts);
  TextEmbeddingTable table;
  table.dim = file.dim;
  for (std::size_t i = 0; i < ids.size() && i < file.vectors.size(); ++i) {
    table.vectors.emplace(ids[i], file.vectors[i]);
  }
  return table;
}

std::vector<std::pair<std::string, std::string>> read_descriptions(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) +
                                  ": expected label<TAB>description");
    }
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

}  // namespace ssqr::kg
