// SPDX-License-Identifier: Apache-2.0
//
// Pipeline configuration: every tunable in one INI-style file
// ("key = value" lines under [section] headers). Unknown keys are errors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "igds/identify.hpp"
#include "igds/sae.hpp"
#include "igds/select.hpp"
#include "igds/tasks.hpp"
#include "igds/toymodel.hpp"

namespace igds {

struct PretrainStageConfig {
  PretrainSpec corpus;
  TrainConfig train;
};

struct SaeStageConfig {
  std::vector<std::uint32_t> layers;
  std::size_t d_sae = 256;
  std::size_t n_sequences = 2000;  // corpus sequences tapped for training states
  SaeTrainConfig train;
};

struct IdentifyStageConfig {
  std::size_t prior_size = 200;
  std::size_t val_size = 64;
  double tau_freq = 0.8;
  std::size_t k = 1;
  double alpha = 1.0;
  std::string metric = "exact";
  bool recompute = false;
};

struct SelectStageConfig {
  Strategy strategy = Strategy::igds;
  double ratio = 0.5;
  std::uint64_t seed = 0;
};

struct EvalStageConfig {
  std::size_t test_size = 300;
  std::size_t pass_n = 8;
  double temperature = 0.7;
};

struct ExperimentStageConfig {
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> seeds;
  std::vector<std::uint64_t> ablation_seeds;
  std::vector<std::size_t> ablation_k;
};

struct PipelineConfig {
  ModelConfig model;
  PretrainStageConfig pretrain;
  SaeStageConfig sae;
  TaskSpec task;
  PoolSpec pool;  // pool.seed is derived from data_seed
  // Identification set, pool and test set are generated from data_seed,
  // data_seed + 1 and data_seed + 2.
  std::uint64_t data_seed = 0;
  IdentifyStageConfig identify;
  SelectStageConfig select;
  TrainConfig sft;
  EvalStageConfig eval;
  ExperimentStageConfig experiment;

  void validate() const;
};

// CI-sized and desk-sized presets.
PipelineConfig smoke_config();
PipelineConfig desk_config();

PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
// Canonical text: every key in a fixed order; parse_config(format_config(c)) == c.
std::string format_config(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

}  // namespace igds
