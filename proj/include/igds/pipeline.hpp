// SPDX-License-Identifier: Apache-2.0
//
// Staged execution over a work directory. Every stage reads its inputs from
// files written by earlier stages, writes its outputs atomically and records
// input/output digests in manifest.json, so re-running a finished stage is a
// no-op and tampered inputs are detected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "igds/config.hpp"
#include "igds/manifest.hpp"

namespace igds {

// The chained stages in execution order; dump-acts sits outside the chain.
const std::vector<std::string>& chain_stages();
const std::vector<std::string>& all_stages();

// How a strategy's feature set is built for ablations.
enum class FeatureVariant { standard, no_recall, no_filter };

// One selection arm: a label used in file names plus how it selects.
struct Arm {
  std::string label;
  Strategy strategy = Strategy::igds;
  FeatureVariant variant = FeatureVariant::standard;
  std::size_t k = 1;
  double ratio = 0.5;
  bool full_control = false;  // select everything (ratio 1)

  static Arm for_strategy(Strategy s, double ratio);
  static Arm full();
};

struct StageOptions {
  std::optional<std::uint64_t> seed;
  std::optional<Strategy> strategy;
  std::optional<double> ratio;
};

// Runs one named stage (CLI spelling) for the arm implied by the options.
RunManifest run_stage(const PipelineConfig& cfg, const std::string& stage,
                      const std::filesystem::path& workdir, const StageOptions& opts = {});
// Runs the chained stages in order.
RunManifest run_chain(const PipelineConfig& cfg, const std::filesystem::path& workdir,
                      const StageOptions& opts = {});

// Stage entry points by arm; each returns the record it wrote.
StageRecord run_arm_stage(const PipelineConfig& cfg, const std::string& stage, const Arm& arm,
                          std::uint64_t seed, const std::filesystem::path& workdir);

RunManifest read_manifest(const std::filesystem::path& workdir);

struct EvalMetrics {
  double exact = 0.0;
  double pass_at_n = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double token_f1 = 0.0;
};

struct ExperimentRow {
  std::string label;
  std::uint64_t seed = 0;
  EvalMetrics metrics;
  double on_task_fraction = 0.0;   // of the selected set; 1 for no selection
  double median_activation = 0.0;  // top task feature on the probe set
};

struct SummaryRow {
  std::string label;
  std::size_t n = 0;
  double exact_mean = 0.0, exact_std = 0.0;
  double pass_mean = 0.0, pass_std = 0.0;
  double median_activation_mean = 0.0;
};

struct ExperimentTable {
  std::vector<ExperimentRow> rows;  // per (arm, seed), then the two controls
  std::vector<SummaryRow> summary;
  double activation_accuracy_correlation = 0.0;
};

// Selection -> SFT -> evaluation per (strategy, seed) from one pretrained
// model, plus the Original (no SFT) and Full (ratio 1) controls. Writes
// results.tsv and summary.tsv into the workdir.
ExperimentTable run_experiment(const PipelineConfig& cfg, const std::filesystem::path& workdir,
                               const std::vector<Strategy>& strategies,
                               const std::vector<std::uint64_t>& seeds);

// Full IGDS, without frequency recall, without causal filtering, and k from
// cfg.experiment.ablation_k. Writes ablation.tsv.
ExperimentTable ablation_suite(const PipelineConfig& cfg, const std::filesystem::path& workdir,
                               const std::vector<std::uint64_t>& seeds);

enum class PlantedStatus { pass, fail, inconclusive };
const char* to_string(PlantedStatus s);

struct PlantedReport {
  PlantedStatus status = PlantedStatus::inconclusive;
  std::size_t candidates = 0;
  std::optional<FeatureId> pipeline_top1;
  std::optional<FeatureId> oracle_top1;
  double oracle_delta = 0.0;
  double pipeline_delta = 0.0;
};

// Trains a model and SAEs from `cfg` with every seed shifted by `seed`, finds
// the best recalled feature by brute-force amplification through an
// independent forward route, and checks the identification pipeline agrees.
PlantedReport planted_feature_test(const PipelineConfig& cfg, std::uint64_t seed);

// Identification on the set generated from `ident_seed` (prior then val),
// using the workdir's trained model and SAEs.
TaskFeatureSet identify_with_seed(const PipelineConfig& cfg, const std::filesystem::path& workdir,
                                  std::uint64_t ident_seed);

}  // namespace igds
