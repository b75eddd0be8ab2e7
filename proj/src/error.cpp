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

#include "ssqr/error.hpp"

namespace ssqr {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kVocabulary: return "vocabulary";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kCoverage: return "coverage";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kState: return "state";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kCompatibility: return "compatibility";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kParameter: return "parameter";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace ssqr
