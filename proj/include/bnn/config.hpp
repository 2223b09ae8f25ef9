#pragma once

// Text configuration: UTF-8 lines of `key = value`, `#` starts a comment.
// Unknown keys, repeated keys and malformed values raise ConfigError.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bnn/network.hpp"
#include "bnn/train.hpp"

namespace bnn {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

std::vector<ConfigEntry> parse_config_lines(std::string_view text);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Model keys only; train keys are rejected.
ModelConfig parse_model_config(std::string_view text);
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

std::string model_config_text(const ModelConfig& m);
std::string run_config_text(const RunConfig& r);

}  // namespace bnn
