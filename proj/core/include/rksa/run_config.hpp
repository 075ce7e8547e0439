#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rksa/train.hpp"

namespace rksa {

/// Everything a CLI run needs: training hyperparameters plus paths.
struct RunConfig {
  TrainConfig train;
  std::string dataset_name = "dataset";
  std::filesystem::path raw_path;
  std::filesystem::path data_dir;
  std::filesystem::path output_dir;
  std::vector<std::uint64_t> eval_seeds = {0};
};

/// Flat JSON object; nested "kernel" holds active/item_variant/jitter and
/// nested "attention" holds the remaining attention options. Unknown keys
/// throw ConfigError naming the key.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

std::string train_config_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

/// FNV-1a over the canonical config JSON.
std::uint64_t config_hash(const TrainConfig& config);

}  // namespace rksa
