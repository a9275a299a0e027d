// SPDX-License-Identifier: Apache-2.0

#include "igds/identify.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "igds/parallel.hpp"
#include "igds/tasks.hpp"
#include "records.hpp"

namespace igds {

std::string to_string(const FeatureId& f) { return fmt::format("l{}_p{}", f.layer, f.index); }

const SaeParams& sae_for_layer(const std::vector<SaeParams>& saes, std::uint32_t layer) {
  for (const auto& s : saes)
    if (s.layer == layer) return s;
  fail(ErrorKind::configuration, fmt::format("no SAE attached to layer {}", layer));
}

std::vector<std::size_t> sae_layers(const std::vector<SaeParams>& saes) {
  std::vector<std::size_t> layers;
  for (const auto& s : saes) {
    if (std::find(layers.begin(), layers.end(), s.layer) != layers.end()) {
      fail(ErrorKind::configuration, fmt::format("two SAEs attached to layer {}", s.layer));
    }
    layers.push_back(s.layer);
  }
  std::sort(layers.begin(), layers.end());
  return layers;
}

namespace {

// Residual states at t* for each requested layer, in `layers` order.
std::vector<RealVector> critical_states(const ToyModel& model, const DataSample& s,
                                        const std::vector<std::size_t>& layers) {
  s.validate();
  ForwardResult r = forward_with_taps(model, s.prompt, layers);
  const std::size_t T = s.prompt.size();
  std::vector<RealVector> out;
  out.reserve(layers.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    out.push_back(std::move(r.taps[li * T + s.critical_pos].state));
  }
  return out;
}

std::size_t layer_slot_of(const std::vector<std::size_t>& layers, std::uint32_t layer) {
  const auto it = std::find(layers.begin(), layers.end(), layer);
  if (it == layers.end()) {
    fail(ErrorKind::configuration, fmt::format("no SAE attached to layer {}", layer));
  }
  return static_cast<std::size_t>(it - layers.begin());
}

}  // namespace

FrequencyTable activation_frequency(const ToyModel& model, const std::vector<SaeParams>& saes,
                                    const std::vector<DataSample>& prior) {
  if (prior.empty()) fail(ErrorKind::input, "empty prior set");
  if (saes.empty()) fail(ErrorKind::configuration, "no SAEs to read features from");
  const auto layers = sae_layers(saes);
  std::vector<std::vector<std::size_t>> counts(layers.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    counts[li].assign(sae_for_layer(saes, static_cast<std::uint32_t>(layers[li])).d_sae(), 0);
  }
  for (const auto& s : prior) {
    const auto states = critical_states(model, s, layers);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto& sae = sae_for_layer(saes, static_cast<std::uint32_t>(layers[li]));
      const RealVector a = encode(sae, states[li].span());
      for (std::size_t f = 0; f < a.dim(); ++f)
        if (a[f] > 0.0) ++counts[li][f];
    }
  }
  FrequencyTable table;
  table.n_samples = prior.size();
  const double n = static_cast<double>(prior.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (std::size_t f = 0; f < counts[li].size(); ++f) {
      table.frequency[{static_cast<std::uint32_t>(layers[li]), static_cast<std::uint32_t>(f)}] =
          static_cast<double>(counts[li][f]) / n;
    }
  }
  return table;
}

CandidateSet recall_candidates(const FrequencyTable& freqs, double tau_freq) {
  if (!(tau_freq > 0.0 && tau_freq <= 1.0)) {
    fail(ErrorKind::parameter, fmt::format("tau_freq {} outside (0, 1]", tau_freq));
  }
  CandidateSet c;
  c.tau_freq = tau_freq;
  c.prior_size = freqs.n_samples;
  // std::map iterates in (layer, index) order already.
  for (const auto& [f, v] : freqs.frequency) {
    if (v >= tau_freq) {
      c.features.push_back(f);
      c.frequencies.push_back(v);
    }
  }
  return c;
}

TaskMetric exact_match_metric() {
  return {"exact", [](const DataSample& s, std::span<const TokenId> out) {
            return std::equal(s.target.begin(), s.target.end(), out.begin(), out.end()) ? 1.0
                                                                                        : 0.0;
          }};
}

TaskMetric token_f1_metric() {
  return {"token_f1",
          [](const DataSample& s, std::span<const TokenId> out) { return token_f1(s.target, out); }};
}

TaskMetric rouge1_metric() {
  return {"rouge1", [](const DataSample& s, std::span<const TokenId> out) {
            return rouge_n(s.target, out, 1).f1;
          }};
}

TaskMetric metric_from_name(const std::string& name) {
  if (name == "exact") return exact_match_metric();
  if (name == "token_f1") return token_f1_metric();
  if (name == "rouge1") return rouge1_metric();
  fail(ErrorKind::configuration, fmt::format("unknown task metric '{}'", name));
}

std::vector<CausalImpact> causal_impacts(const ToyModel& model, const std::vector<SaeParams>& saes,
                                         const std::vector<FeatureId>& features,
                                         const std::vector<DataSample>& val,
                                         const TaskMetric& metric, const ImpactOptions& opts) {
  if (val.empty()) fail(ErrorKind::input, "empty validation set");
  if (features.empty()) return {};
  const auto layers = sae_layers(saes);
  for (const auto& f : features) {
    const auto& sae = sae_for_layer(saes, f.layer);
    if (f.index >= sae.d_sae()) {
      fail(ErrorKind::index, fmt::format("feature {} outside d_sae {}", to_string(f), sae.d_sae()));
    }
  }
  const auto greedy = GenerationMode::make_greedy();
  auto with_sample_context = [](std::size_t i, auto&& body) {
    try {
      return body();
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::length) {
        fail(ErrorKind::length, fmt::format("validation sample {}: {}", i, e.what()));
      }
      throw;
    }
  };

  const std::size_t m = val.size();
  std::vector<std::vector<RealVector>> states(m);
  std::vector<double> base(m);
  for (std::size_t i = 0; i < m; ++i) {
    with_sample_context(i, [&] {
      states[i] = critical_states(model, val[i], layers);
      const auto out = generate(model, val[i].prompt, val[i].target.size(), greedy);
      base[i] = metric.score(val[i], out);
      return 0;
    });
  }

  std::vector<CausalImpact> impacts(features.size());
  parallel_for(features.size(), opts.threads, [&](std::size_t fi) {
    const FeatureId f = features[fi];
    const SaeParams& sae = sae_for_layer(saes, f.layer);
    const std::size_t slot = layer_slot_of(layers, f.layer);
    CausalImpact& ci = impacts[fi];
    ci.feature = f;
    ci.metric_name = metric.name;
    ci.per_sample_gains.resize(m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      InterventionSpec spec;
      spec.layer = f.layer;
      spec.vector = feature_vector(sae, states[i][slot].span(), f.index);
      spec.scale = opts.alpha;
      spec.position_policy = opts.position_policy;
      spec.critical_pos = val[i].critical_pos;
      if (opts.recompute) {
        spec.recompute = [&sae, f](std::span<const double> h) {
          return feature_vector(sae, h, f.index);
        };
      } else if (std::all_of(spec.vector.values().begin(), spec.vector.values().end(),
                             [](double v) { return v == 0.0; })) {
        // Adding a zero vector leaves every logit unchanged.
        ci.per_sample_gains[i] = 0.0;
        continue;
      }
      const double gain = with_sample_context(i, [&] {
        const auto out =
            generate_with_intervention(model, val[i].prompt, val[i].target.size(), greedy, spec);
        return metric.score(val[i], out) - base[i];
      });
      ci.per_sample_gains[i] = gain;
      total += gain;
    }
    ci.delta = total / static_cast<double>(m);
  });
  return impacts;
}

CausalImpact causal_impact(const ToyModel& model, const SaeParams& sae, const FeatureId& feature,
                           const std::vector<DataSample>& val, const TaskMetric& metric,
                           const ImpactOptions& opts) {
  if (feature.layer != sae.layer) {
    fail(ErrorKind::configuration, fmt::format("feature {} does not belong to the layer-{} SAE",
                                               to_string(feature), sae.layer));
  }
  return causal_impacts(model, {sae}, {feature}, val, metric, opts).front();
}

TaskFeatureSet rank_and_select(const std::vector<CausalImpact>& impacts, std::size_t k,
                               const std::string& source_tag, const CandidateSet* candidates) {
  if (k == 0) fail(ErrorKind::parameter, "k must be >= 1");
  TaskFeatureSet set;
  set.k = k;
  set.source_tag = source_tag;
  for (const auto& ci : impacts) {
    if (!(ci.delta > 0.0) || !std::isfinite(ci.delta)) continue;
    TaskFeature tf{ci.feature, ci.delta, 0.0};
    if (candidates != nullptr) {
      const auto& fs = candidates->features;
      const auto it = std::lower_bound(fs.begin(), fs.end(), ci.feature);
      if (it != fs.end() && *it == ci.feature) {
        tf.frequency = candidates->frequencies[static_cast<std::size_t>(it - fs.begin())];
      }
    }
    set.features.push_back(tf);
  }
  std::sort(set.features.begin(), set.features.end(),
            [](const TaskFeature& a, const TaskFeature& b) {
              if (a.delta != b.delta) return a.delta > b.delta;
              return a.feature < b.feature;
            });
  if (set.features.size() > k) set.features.resize(k);
  return set;
}

StabilityReport stability_report(const std::vector<TaskFeatureSet>& sets) {
  if (sets.size() < 2) fail(ErrorKind::parameter, "stability needs at least two feature sets");
  std::vector<std::set<FeatureId>> ids;
  for (const auto& s : sets) {
    std::set<FeatureId> id;
    for (const auto& f : s.features) id.insert(f.feature);
    ids.push_back(std::move(id));
  }
  StabilityReport r;
  r.jaccard.assign(sets.size(), std::vector<double>(sets.size(), 0.0));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = 0; j < sets.size(); ++j) {
      std::size_t inter = 0;
      for (const auto& f : ids[i]) inter += ids[j].count(f);
      const std::size_t uni = ids[i].size() + ids[j].size() - inter;
      r.jaccard[i][j] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
  }
  r.top1_agree = std::all_of(sets.begin(), sets.end(), [&](const TaskFeatureSet& s) {
    return !s.features.empty() && s.features.front().feature == sets.front().features.front().feature;
  });
  return r;
}

std::string format_feature_set(const TaskFeatureSet& set) {
  std::string out;
  for (const auto& f : set.features) {
    out += fmt::format("layer={} index={} delta={} freq={} source={}\n", f.feature.layer,
                       f.feature.index, records::f64(f.delta), records::f64(f.frequency),
                       set.source_tag);
  }
  return out;
}

TaskFeatureSet parse_feature_set(const std::string& text) {
  TaskFeatureSet set;
  std::size_t lineno = 0;
  bool have_source = false;
  for (const auto& line : records::lines(text)) {
    ++lineno;
    if (line.empty()) continue;
    TaskFeature tf;
    int seen = 0;
    std::string source;
    for (const auto& [key, val] : records::split(line, "feature set", lineno)) {
      if (key == "layer") {
        tf.feature.layer = static_cast<std::uint32_t>(records::to_u64(val, "feature set", lineno));
      } else if (key == "index") {
        tf.feature.index = static_cast<std::uint32_t>(records::to_u64(val, "feature set", lineno));
      } else if (key == "delta") {
        tf.delta = records::to_f64(val, "feature set", lineno);
      } else if (key == "freq") {
        tf.frequency = records::to_f64(val, "feature set", lineno);
      } else if (key == "source") {
        source = val;
      } else {
        fail(ErrorKind::format, fmt::format("feature set line {}: unknown key '{}'", lineno, key));
      }
      ++seen;
    }
    if (seen != 5) fail(ErrorKind::format, fmt::format("feature set line {}: expected 5 fields", lineno));
    if (have_source && source != set.source_tag) {
      fail(ErrorKind::format, fmt::format("feature set line {}: mixed source tags", lineno));
    }
    set.source_tag = source;
    have_source = true;
    set.features.push_back(tf);
  }
  set.k = std::max<std::size_t>(1, set.features.size());
  return set;
}

}  // namespace igds
