// SPDX-License-Identifier: Apache-2.0
//
// Task-feature identification: frequency recall over a prior set, then
// causal filtering by amplifying each candidate's influence vector in the
// residual stream and measuring the task-metric gain on a validation set.

#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "igds/sae.hpp"
#include "igds/toymodel.hpp"

namespace igds {

struct FeatureId {
  std::uint32_t layer = 0;
  std::uint32_t index = 0;

  auto operator<=>(const FeatureId&) const = default;
};

std::string to_string(const FeatureId& f);  // "l<layer>_p<index>"

// Finds the SAE attached to `layer`; configuration error if there is none.
const SaeParams& sae_for_layer(const std::vector<SaeParams>& saes, std::uint32_t layer);
std::vector<std::size_t> sae_layers(const std::vector<SaeParams>& saes);

struct FrequencyTable {
  std::map<FeatureId, double> frequency;
  std::size_t n_samples = 0;
};

// Fraction of prior samples whose code at t* is positive, for every feature
// of every SAE. One forward pass per sample.
FrequencyTable activation_frequency(const ToyModel& model, const std::vector<SaeParams>& saes,
                                    const std::vector<DataSample>& prior);

struct CandidateSet {
  std::vector<FeatureId> features;  // (layer, index) ascending
  std::vector<double> frequencies;
  double tau_freq = 0.8;
  std::size_t prior_size = 0;
};

CandidateSet recall_candidates(const FrequencyTable& freqs, double tau_freq);

struct TaskMetric {
  std::string name;
  std::function<double(const DataSample&, std::span<const TokenId> output)> score;
};

TaskMetric exact_match_metric();
TaskMetric token_f1_metric();
TaskMetric rouge1_metric();
TaskMetric metric_from_name(const std::string& name);

struct CausalImpact {
  FeatureId feature;
  double delta = 0.0;
  std::vector<double> per_sample_gains;
  std::string metric_name;
};

struct ImpactOptions {
  double alpha = 1.0;
  PositionPolicy position_policy = PositionPolicy::all_from_critical;
  // Re-derive the influence vector from the residual at every edited
  // position instead of freezing the one read at t*.
  bool recompute = false;
  std::size_t threads = 1;
};

// Mean over `val` of metric(amplified generation) - metric(original
// generation); both generations are greedy and as long as the target.
CausalImpact causal_impact(const ToyModel& model, const SaeParams& sae, const FeatureId& feature,
                           const std::vector<DataSample>& val, const TaskMetric& metric,
                           const ImpactOptions& opts = {});

// Same as calling causal_impact per feature, with original generations and
// residual taps shared across features.
std::vector<CausalImpact> causal_impacts(const ToyModel& model, const std::vector<SaeParams>& saes,
                                         const std::vector<FeatureId>& features,
                                         const std::vector<DataSample>& val,
                                         const TaskMetric& metric, const ImpactOptions& opts = {});

struct TaskFeature {
  FeatureId feature;
  double delta = 0.0;
  double frequency = 0.0;
};

struct TaskFeatureSet {
  std::vector<TaskFeature> features;  // descending delta, (layer, index) tie-break
  std::size_t k = 1;
  std::string source_tag;
};

// Keeps strictly positive deltas, sorts, truncates to k. Frequencies are
// copied from `candidates` when given.
TaskFeatureSet rank_and_select(const std::vector<CausalImpact>& impacts, std::size_t k,
                               const std::string& source_tag,
                               const CandidateSet* candidates = nullptr);

struct StabilityReport {
  std::vector<std::vector<double>> jaccard;
  bool top1_agree = false;
};

StabilityReport stability_report(const std::vector<TaskFeatureSet>& sets);

// One line per feature: layer=<u32> index=<u32> delta=<f64> freq=<f64> source=<tag>
std::string format_feature_set(const TaskFeatureSet& set);
TaskFeatureSet parse_feature_set(const std::string& text);

}  // namespace igds
