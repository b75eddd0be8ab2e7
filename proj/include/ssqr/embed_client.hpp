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

#ifndef SSQR_EMBED_CLIENT_HPP
#define SSQR_EMBED_CLIENT_HPP

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssqr/kg_store.hpp"

namespace ssqr::kg {

struct FetchOptions {
  std::string endpoint;  // full URL, e.g. https://api.openai.com/v1/embeddings
  std::string api_key;   // sent as a bearer token when non-empty
  std::string model = "text-embedding-3-large";
  std::size_t batch_size = 64;
  std::size_t max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{60};
};

// POSTs {"input": [...], "model": ...} per batch and reads data[].embedding.
// 5xx, 429 and connection failures are retried with doubling backoff.
EmbeddingFile fetch_embedding_file(const FetchOptions& options,
                                   std::span<const std::pair<std::string, std::string>> texts);

TextEmbeddingTable fetch_embeddings(const FetchOptions& options,
                                    const std::map<EntityId, std::string>& descriptions);

// "label<TAB>description" lines, file order kept.
std::vector<std::pair<std::string, std::string>> read_descriptions(
    const std::filesystem::path& path);

}  // namespace ssqr::kg

#endif  // SSQR_EMBED_CLIENT_HPP
