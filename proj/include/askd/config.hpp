// SPDX-License-Identifier: Apache-2.0
//
// CLI configuration plumbing: defaults document, file merge, flag overrides
// and the content hash that makes run directories self-describing.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "askd/task.hpp"
#include "askd/trainer.hpp"

namespace askd {

struct ResolvedConfig {
  nlohmann::json doc;

  // Built-in defaults: the published schedule constants plus desk-scale
  // model/task sizes.
  static nlohmann::json defaults();

  // defaults <- config file (if any) <- dotted-path overrides, validated
  // against the default schema (unknown keys are config errors).
  static ResolvedConfig resolve(
      const std::string& config_path,
      const std::vector<std::pair<std::string, nlohmann::json>>& overrides = {});

  // Hash of the canonical (key-sorted) serialization.
  uint64_t hash() const;

  TrainConfig train_config() const;
  TaskSpec task_spec() const;
  EncoderConfig encoder_config() const;
  int64_t n_train() const;
  int64_t n_val() const;
  int64_t n_test() const;

  void write(const std::string& path) const;
};

}  // namespace askd
