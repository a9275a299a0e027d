// SPDX-License-Identifier: Apache-2.0

#include "igds/analysis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace igds {

QuantileSummary summarize(std::vector<double> values) {
  if (values.empty()) fail(ErrorKind::input, "cannot summarize an empty list");
  std::sort(values.begin(), values.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
  };
  return {q(0.25), q(0.5), q(0.75)};
}

ActivationDistribution activation_distribution(const ToyModel& model, const SaeParams& sae,
                                               const FeatureId& feature,
                                               const std::vector<DataSample>& probe,
                                               const std::string& strategy) {
  if (probe.empty()) fail(ErrorKind::input, "empty probe set");
  if (feature.layer != sae.layer) {
    fail(ErrorKind::configuration, fmt::format("feature {} read with the layer-{} SAE",
                                               to_string(feature), sae.layer));
  }
  ActivationDistribution d;
  d.strategy = strategy;
  d.feature = feature;
  const std::vector<std::size_t> layers{feature.layer};
  for (const auto& s : probe) {
    s.validate();
    const ForwardResult r = forward_with_taps(model, s.prompt, layers);
    d.values.push_back(feature_activation(sae, r.taps[s.critical_pos].state.span(), feature.index));
  }
  d.summary = summarize(d.values);
  return d;
}

std::vector<TopologyRecord> topology_report(
    const std::vector<std::pair<std::string, TaskFeatureSet>>& sets_by_task) {
  std::vector<TopologyRecord> out;
  for (const auto& [task, set] : sets_by_task) {
    for (const auto& f : set.features) out.push_back({task, f.feature.layer, f.feature.index});
  }
  return out;
}

LexicalShift lexical_shift(const ToyModel& model, const SaeParams& sae, const FeatureId& feature,
                           const std::vector<DataSample>& prompts, std::size_t max_new,
                           double alpha) {
  if (prompts.empty()) fail(ErrorKind::input, "empty prompt list");
  std::map<TokenId, std::pair<std::size_t, std::size_t>> counts;
  LexicalShift shift;
  const auto greedy = GenerationMode::make_greedy();
  const std::vector<std::size_t> layers{feature.layer};
  for (const auto& s : prompts) {
    s.validate();
    const ForwardResult r = forward_with_taps(model, s.prompt, layers);
    InterventionSpec spec;
    spec.layer = feature.layer;
    spec.vector = feature_vector(sae, r.taps[s.critical_pos].state.span(), feature.index);
    spec.scale = alpha;
    spec.critical_pos = s.critical_pos;
    for (TokenId t : generate(model, s.prompt, max_new, greedy)) {
      ++counts[t].first;
      ++shift.total_original;
    }
    for (TokenId t : generate_with_intervention(model, s.prompt, max_new, greedy, spec)) {
      ++counts[t].second;
      ++shift.total_amplified;
    }
  }
  for (const auto& [tok, c] : counts) {
    shift.tokens.push_back({tok, c.first, c.second,
                            static_cast<long long>(c.second) - static_cast<long long>(c.first)});
  }
  std::stable_sort(shift.tokens.begin(), shift.tokens.end(),
                   [](const TokenShift& a, const TokenShift& b) { return a.delta > b.delta; });
  return shift;
}

std::vector<CostRow> cost_report(const std::vector<RunManifest>& manifests) {
  std::vector<CostRow> rows;
  for (const auto& m : manifests) {
    for (const auto& s : m.stages) {
      if (s.stage != "score") continue;
      if (!rows.empty() && rows.front().pool_size != s.items) {
        fail(ErrorKind::comparison, fmt::format("pool of {} compared with pool of {}", s.items,
                                                rows.front().pool_size));
      }
      rows.push_back({s.strategy, s.items, s.forward_passes, s.wall_time_s});
    }
  }
  return rows;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail(ErrorKind::dimension, "rank correlation of unequal lengths");
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::string format_tsv(const std::vector<std::string>& comments,
                       const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& c : comments) out += "# " + c + "\n";
  out += fmt::format("{}\n", fmt::join(header, "\t"));
  for (const auto& r : rows) {
    if (r.size() != header.size()) fail(ErrorKind::dimension, "TSV row width differs from header");
    out += fmt::format("{}\n", fmt::join(r, "\t"));
  }
  return out;
}

}  // namespace igds
