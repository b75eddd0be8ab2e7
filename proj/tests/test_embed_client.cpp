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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <httplib.h>

#include <atomic>
#include <deque>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "ssqr/embed_client.hpp"
#include "ssqr/error.hpp"
#include "tempdir.hpp"

using namespace ssqr;
using namespace ssqr::kg;

namespace {

std::vector<double> vector_for(const std::string& text) {
  return {static_cast<double>(text.size()), static_cast<double>(text.front()), 0.5};
}

// Local stand-in for the embeddings endpoint. Scripted statuses are served
// first; after that every request succeeds.
class StubServer {
 public:
  StubServer() {
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      ++requests_;
      bodies_.push_back(nlohmann::json::parse(req.body));
      auth_ = req.get_header_value("Authorization");
      if (!script_.empty()) {
        const int status = script_.front();
        script_.pop_front();
        if (status != 200) {
          res.status = status;
          res.set_content("{\"error\":\"busy\"}", "application/json");
          return;
        }
      }
      const auto& inputs = bodies_.back()["input"];
      nlohmann::json data = nlohmann::json::array();
      // Reversed order with explicit indices.
      for (std::size_t i = inputs.size(); i-- > 0;) {
        data.push_back({{"index", i}, {"embedding", vector_for(inputs[i].get<std::string>())}});
      }
      if (drop_one_ && !data.empty()) data.erase(data.begin());
      res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  FetchOptions options() const {
    FetchOptions o;
    o.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/embeddings";
    o.api_key = "sk-test";
    o.initial_backoff = std::chrono::milliseconds(1);
    o.timeout = std::chrono::seconds(5);
    return o;
  }
  void script(std::initializer_list<int> statuses) {
    std::lock_guard lock(mu_);
    script_.assign(statuses);
  }
  void drop_one() { drop_one_ = true; }
  int requests() {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::vector<nlohmann::json> bodies() {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::string auth() {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  std::deque<int> script_;
  std::atomic<bool> drop_one_{false};
  int requests_ = 0;
  std::vector<nlohmann::json> bodies_;
  std::string auth_;
};

const std::vector<std::pair<std::string, std::string>> kTexts{
    {"a", "alpha"}, {"b", "bravo!"}, {"c", "c"}, {"d", "delta delta"}, {"e", "echo"}};

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kIo;
}

}  // namespace

TEST_CASE("vectors arrive in input order across batches") {
  StubServer stub;
  auto o = stub.options();
  o.batch_size = 2;
  o.model = "m-small";
  const auto file = fetch_embedding_file(o, kTexts);
  CHECK(file.dim == 3);
  CHECK(file.labels == std::vector<std::string>{"a", "b", "c", "d", "e"});
  for (std::size_t i = 0; i < kTexts.size(); ++i) CHECK(file.vectors[i] == vector_for(kTexts[i].second));
  CHECK(stub.requests() == 3);
  const auto bodies = stub.bodies();
  CHECK(bodies[0] == nlohmann::json{{"input", {"alpha", "bravo!"}}, {"model", "m-small"}});
  CHECK(bodies[2]["input"] == nlohmann::json{"echo"});
  CHECK(stub.auth() == "Bearer sk-test");
}

TEST_CASE("transient failures are retried") {
  StubServer stub;
  stub.script({500, 503, 200});
  const auto file = fetch_embedding_file(stub.options(), kTexts);
  CHECK(file.vectors.size() == 5);
  CHECK(stub.requests() == 3);

  stub.script({429, 200});
  CHECK(fetch_embedding_file(stub.options(), kTexts).vectors.size() == 5);
  CHECK(stub.requests() == 5);
}

TEST_CASE("persistent failures raise transport errors") {
  StubServer stub;
  stub.script({500, 500, 500, 500});
  CHECK(kind_of([&] { fetch_embedding_file(stub.options(), kTexts); }) == ErrorKind::kTransport);
  CHECK(stub.requests() == 3);

  stub.script({401});
  CHECK(kind_of([&] { fetch_embedding_file(stub.options(), kTexts); }) == ErrorKind::kTransport);
  CHECK(stub.requests() == 4);

  auto o = stub.options();
  o.endpoint = "http://127.0.0.1:1/v1/embeddings";
  o.max_attempts = 2;
  CHECK(kind_of([&] { fetch_embedding_file(o, kTexts); }) == ErrorKind::kTransport);
}

TEST_CASE("short replies raise protocol errors") {
  StubServer stub;
  stub.drop_one();
  CHECK(kind_of([&] { fetch_embedding_file(stub.options(), kTexts); }) == ErrorKind::kProtocol);
}

TEST_CASE("no descriptions make no request") {
  StubServer stub;
  CHECK(fetch_embedding_file(stub.options(), {}).vectors.empty());
  CHECK(fetch_embeddings(stub.options(), {}).vectors.empty());
  CHECK(stub.requests() == 0);
}

TEST_CASE("id-keyed fetch and description files") {
  StubServer stub;
  const auto table = fetch_embeddings(stub.options(), {{3, "three"}, {1, "one"}});
  CHECK(table.dim == 3);
  CHECK(table.vectors.at(1) == vector_for("one"));
  CHECK(table.vectors.at(3) == vector_for("three"));

  ssqr::testing::TempDir dir;
  dir.write("desc.tsv", "x\tan x\r\ny\tthe letter y\n");
  const auto desc = read_descriptions(dir / "desc.tsv");
  CHECK(desc == std::vector<std::pair<std::string, std::string>>{{"x", "an x"},
                                                                 {"y", "the letter y"}});
  dir.write("bad.tsv", "no tab here\n");
  CHECK(kind_of([&] { read_descriptions(dir / "bad.tsv"); }) == ErrorKind::kParse);
  auto o = stub.options();
  o.endpoint = "127.0.0.1/v1";
  CHECK(kind_of([&] { fetch_embedding_file(o, kTexts); }) == ErrorKind::kParameter);
}
