// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc analyses over trained artifacts: feature activation distributions
// after fine-tuning, feature placement by layer, token-frequency shift under
// amplification, and per-strategy scoring cost.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "igds/identify.hpp"
#include "igds/manifest.hpp"
#include "igds/sae.hpp"
#include "igds/toymodel.hpp"

namespace igds {

struct QuantileSummary {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

// Linear-interpolation quantiles of the sorted values; input error when empty.
QuantileSummary summarize(std::vector<double> values);

struct ActivationDistribution {
  std::string strategy;
  FeatureId feature;
  std::vector<double> values;  // probe order
  QuantileSummary summary;
};

ActivationDistribution activation_distribution(const ToyModel& model, const SaeParams& sae,
                                               const FeatureId& feature,
                                               const std::vector<DataSample>& probe,
                                               const std::string& strategy = {});

struct TopologyRecord {
  std::string task;
  std::uint32_t layer = 0;
  std::uint32_t index = 0;
};

std::vector<TopologyRecord> topology_report(
    const std::vector<std::pair<std::string, TaskFeatureSet>>& sets_by_task);

struct TokenShift {
  TokenId token = 0;
  std::size_t original = 0;
  std::size_t amplified = 0;
  long long delta = 0;  // amplified - original
};

struct LexicalShift {
  std::vector<TokenShift> tokens;  // descending delta, then token id
  std::size_t total_original = 0;
  std::size_t total_amplified = 0;
};

// Greedy generations of `max_new` tokens with and without the feature's
// influence vector (read at each prompt's t*) added with scale alpha.
LexicalShift lexical_shift(const ToyModel& model, const SaeParams& sae, const FeatureId& feature,
                           const std::vector<DataSample>& prompts, std::size_t max_new,
                           double alpha);

struct CostRow {
  std::string strategy;
  std::size_t pool_size = 0;
  std::uint64_t forward_passes = 0;
  double wall_time_s = 0.0;
};

// One row per scoring record across the manifests; comparison error when the
// pool sizes differ.
std::vector<CostRow> cost_report(const std::vector<RunManifest>& manifests);

// Spearman rank correlation with average ranks for ties.
double rank_correlation(const std::vector<double>& x, const std::vector<double>& y);

// Tab-separated table: optional '#' comment lines, a header, then rows.
std::string format_tsv(const std::vector<std::string>& comments,
                       const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows);

}  // namespace igds
