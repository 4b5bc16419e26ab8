// Copyright 2026 The CVR Clean Room Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CVR_CLI_H_
#define CVR_CLI_H_

#include <string>
#include <vector>

#include "json.hpp"

namespace cvr::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat configuration keyed by dotted names. Every key must exist in the
// defaults; nested JSON objects are flattened on load.
class Config {
 public:
  explicit Config(nlohmann::ordered_json defaults);

  void merge(const nlohmann::json& doc);
  void merge_file(const std::string& path);
  // "key=value"; value is parsed as JSON, falling back to a plain string.
  void apply_override(const std::string& assignment);

  template <typename T>
  T get(const std::string& key) const {
    return at(key).get<T>();
  }
  const nlohmann::json& at(const std::string& key) const;
  const nlohmann::ordered_json& values() const { return values_; }

 private:
  void set(const std::string& key, nlohmann::json value);

  nlohmann::ordered_json values_;
};

nlohmann::json flatten(const nlohmann::json& doc);

// argv[0] is the program name.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace cvr::cli

#endif  // CVR_CLI_H_
