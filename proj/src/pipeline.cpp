// SPDX-License-Identifier: Apache-2.0

#include "igds/pipeline.hpp"

#include <fcntl.h>
#include <fmt/format.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "igds/analysis.hpp"
#include "igds/parallel.hpp"
#include "records.hpp"

namespace igds {

namespace fs = std::filesystem;

const std::vector<std::string>& chain_stages() {
  static const std::vector<std::string> stages{"pretrain", "train-sae", "identify", "score",
                                               "select",   "sft",       "eval",     "analyze"};
  return stages;
}

const std::vector<std::string>& all_stages() {
  static const std::vector<std::string> stages{"pretrain", "train-sae", "dump-acts",
                                               "identify", "score",     "select",
                                               "sft",      "eval",      "analyze"};
  return stages;
}

Arm Arm::for_strategy(Strategy s, double ratio) {
  Arm a;
  a.label = to_string(s);
  a.strategy = s;
  a.ratio = ratio;
  return a;
}

Arm Arm::full() {
  Arm a;
  a.label = "full";
  a.strategy = Strategy::random;
  a.ratio = 1.0;
  a.full_control = true;
  return a;
}

const char* to_string(PlantedStatus s) {
  switch (s) {
    case PlantedStatus::pass: return "pass";
    case PlantedStatus::fail: return "fail";
    case PlantedStatus::inconclusive: return "inconclusive";
  }
  return "unknown";
}

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kOriginalLabel = "original";

// ---- file naming -----------------------------------------------------------

namespace names {
std::string model() { return "model.bin"; }
std::string pool() { return "pool.txt"; }
std::string identification() { return "identification.txt"; }
std::string test() { return "test.txt"; }
std::string topology() { return "topology.tsv"; }
std::string sae(std::uint32_t layer) { return fmt::format("sae_l{}.bin", layer); }
std::string acts(std::uint32_t layer) { return fmt::format("acts_l{}.igda", layer); }
std::string candidates(const std::string& label) { return fmt::format("candidates_{}.tsv", label); }
std::string impacts(const std::string& label) { return fmt::format("impacts_{}.tsv", label); }
std::string features(const std::string& label) { return fmt::format("features_{}.txt", label); }
std::string scores(const std::string& label) { return fmt::format("scores_{}.txt", label); }
std::string run(const char* kind, const std::string& label, std::uint64_t seed, const char* ext) {
  return fmt::format("{}_{}_s{}.{}", kind, label, seed, ext);
}
std::string selection(const std::string& l, std::uint64_t s) { return run("selection", l, s, "txt"); }
std::string sft_model(const std::string& l, std::uint64_t s) { return run("sft", l, s, "bin"); }
std::string eval(const std::string& l, std::uint64_t s) { return run("eval", l, s, "tsv"); }
std::string activation(const std::string& l, std::uint64_t s) { return run("activation", l, s, "tsv"); }
std::string lexical(const std::string& l, std::uint64_t s) { return run("lexical", l, s, "tsv"); }
}  // namespace names

std::string producer_of(const std::string& file) {
  static const std::vector<std::pair<std::string, std::string>> prefixes{
      {"model.bin", "pretrain"},     {"pool.txt", "pretrain"},  {"sae_l", "train-sae"},
      {"features_", "identify"},     {"identification", "identify"},
      {"scores_", "score"},          {"selection_", "select"},  {"sft_", "sft"},
  };
  for (const auto& [prefix, stage] : prefixes) {
    if (file.rfind(prefix, 0) == 0) return stage;
  }
  return "an earlier stage";
}

// Config text restricted to the given sections, so a stage only goes stale
// when settings it actually reads change.
std::string config_sections(const PipelineConfig& cfg, std::initializer_list<const char*> wanted) {
  std::string out;
  bool keep = false;
  for (const auto& line : records::lines(format_config(cfg))) {
    if (!line.empty() && line.front() == '[') {
      const std::string name = line.substr(1, line.size() - 2);
      keep = std::any_of(wanted.begin(), wanted.end(), [&](const char* w) { return name == w; });
    }
    if (keep) out += line + "\n";
  }
  return out;
}

std::string feature_label(const Arm& arm) {
  return arm.strategy == Strategy::igds ? arm.label : std::string("igds");
}

// ---- workdir ---------------------------------------------------------------

class Workdir {
 public:
  Workdir(const PipelineConfig& cfg, fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) fail(ErrorKind::io, fmt::format("cannot create workdir {}: {}", root_.string(), ec.message()));
    const fs::path lock = root_ / ".lock";
    lock_fd_ = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (lock_fd_ < 0) {
      fail(ErrorKind::io, fmt::format("workdir {} is locked by another run (remove {} if stale)",
                                      root_.string(), lock.string()));
    }
    const fs::path mpath = root_ / kManifestName;
    if (fs::exists(mpath)) {
      manifest = manifest_from_json(binio::read_text(mpath));
    } else {
      manifest.run_id = config_hash(cfg).substr(0, 16);
      manifest.notes = {
          "identification reuses the pretrained model that the selected data fine-tunes",
          "compress scores approximate a greedy zlib-gain ordering; score is the pick rank",
          "token_f1 stands in for a learned translation metric",
          "activation distributions probe the full candidate pool",
      };
    }
    manifest.config_hash = config_hash(cfg);
  }
  ~Workdir() {
    if (lock_fd_ >= 0) {
      ::close(lock_fd_);
      std::error_code ec;
      fs::remove(root_ / ".lock", ec);
    }
  }
  Workdir(const Workdir&) = delete;
  Workdir& operator=(const Workdir&) = delete;

  fs::path path(const std::string& name) const { return root_ / name; }
  void save() const {
    binio::write_text_atomic(root_ / kManifestName, manifest_to_json(manifest) + "\n");
  }

  RunManifest manifest;

 private:
  fs::path root_;
  int lock_fd_ = -1;
};

struct StageStats {
  std::size_t items = 0;
  std::uint64_t forward_passes = 0;
};

struct StagePlan {
  std::string key;
  std::string stage;
  std::string strategy;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string params;  // settings the stage depends on
};

FileDigests input_digests(const Workdir& wd, const StagePlan& plan) {
  FileDigests d;
  for (const auto& in : plan.inputs) d.emplace_back(in, file_sha256(wd.path(in)));
  d.emplace_back("@params", sha256_hex(plan.params));
  return d;
}

StageRecord execute(Workdir& wd, const StagePlan& plan, const std::function<StageStats()>& body) {
  for (const auto& in : plan.inputs) {
    if (!fs::exists(wd.path(in))) {
      fail(ErrorKind::dependency, fmt::format("stage '{}' needs {}; run stage '{}' first",
                                              plan.key, in, producer_of(in)));
    }
  }
  const FileDigests inputs = input_digests(wd, plan);
  if (const StageRecord* prev = wd.manifest.find(plan.key)) {
    const bool outputs_present = std::all_of(plan.outputs.begin(), plan.outputs.end(),
                                             [&](const std::string& o) { return fs::exists(wd.path(o)); });
    if (outputs_present) {
      if (prev->inputs != inputs) {
        std::string changed;
        for (const auto& [name, digest] : inputs) {
          auto it = std::find_if(prev->inputs.begin(), prev->inputs.end(),
                                 [&](const auto& p) { return p.first == name; });
          if (it == prev->inputs.end() || it->second != digest) changed += " " + name;
        }
        fail(ErrorKind::staleness,
             fmt::format("stage '{}' is out of date (changed:{}); remove its outputs to re-run",
                         plan.key, changed));
      }
      for (const auto& [name, digest] : prev->outputs) {
        if (file_sha256(wd.path(name)) != digest) {
          fail(ErrorKind::staleness,
               fmt::format("output {} of stage '{}' was modified; remove it to re-run", name, plan.key));
        }
      }
      StageRecord rec = *prev;
      rec.action = "skipped";
      wd.manifest.upsert(rec);
      wd.save();
      return *wd.manifest.find(plan.key);
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  const StageStats stats = body();
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  StageRecord rec;
  rec.key = plan.key;
  rec.stage = plan.stage;
  rec.strategy = plan.strategy;
  rec.seed = plan.seed;
  rec.items = stats.items;
  rec.inputs = inputs;
  for (const auto& out : plan.outputs) rec.outputs.emplace_back(out, file_sha256(wd.path(out)));
  rec.forward_passes = stats.forward_passes;
  rec.wall_time_s = wall;
  rec.action = "ran";
  wd.manifest.upsert(rec);
  wd.save();
  return *wd.manifest.find(plan.key);
}

// ---- shared computation ------------------------------------------------------

struct IdentificationSplit {
  std::vector<DataSample> prior;
  std::vector<DataSample> val;
};

IdentificationSplit split_identification(const std::vector<DataSample>& all, std::size_t prior_size) {
  if (all.size() < prior_size) fail(ErrorKind::input, "identification set smaller than its prior");
  IdentificationSplit s;
  s.prior.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(prior_size));
  s.val.assign(all.begin() + static_cast<std::ptrdiff_t>(prior_size), all.end());
  return s;
}

std::vector<DataSample> identification_data(const PipelineConfig& cfg, std::uint64_t seed) {
  return gen_task_data(cfg.task, cfg.identify.prior_size + cfg.identify.val_size, seed);
}

std::vector<DataSample> test_data(const PipelineConfig& cfg) {
  return gen_task_data(cfg.task, cfg.eval.test_size, cfg.data_seed + 2);
}

ToyModel pretrain_model(const PipelineConfig& cfg, std::uint64_t* passes, std::size_t* items) {
  const auto corpus = gen_pretrain_corpus(cfg.task, cfg.pretrain.corpus);
  const ToyModel init = ToyModel::initialize(cfg.model);
  TrainResult r = train(init, corpus, cfg.pretrain.train);
  if (passes) *passes = r.model.forward_passes.get();
  if (items) *items = corpus.size();
  r.model.forward_passes.reset();
  return r.model;
}

// Residual states at every position of the first n_sequences corpus
// sequences, per configured SAE layer.
std::vector<std::vector<RealVector>> corpus_states(const ToyModel& model, const PipelineConfig& cfg) {
  auto corpus = gen_pretrain_corpus(cfg.task, cfg.pretrain.corpus);
  corpus.resize(std::min(corpus.size(), cfg.sae.n_sequences));
  std::vector<std::size_t> layers(cfg.sae.layers.begin(), cfg.sae.layers.end());
  std::sort(layers.begin(), layers.end());
  std::vector<std::vector<RealVector>> states(cfg.sae.layers.size());
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t i = 0; i < cfg.sae.layers.size(); ++i) slot[cfg.sae.layers[i]] = i;
  for (const auto& seq : corpus) {
    const ForwardResult r = forward_with_taps(model, seq, layers);
    for (const auto& t : r.taps) states[slot.at(t.layer)].push_back(t.state);
  }
  return states;
}

SaeTrainConfig sae_train_config(const PipelineConfig& cfg, std::uint32_t layer) {
  SaeTrainConfig t = cfg.sae.train;
  t.seed = derive_seed(cfg.sae.train.seed, layer);
  return t;
}

std::vector<SaeParams> train_saes(const ToyModel& model, const PipelineConfig& cfg) {
  const auto states = corpus_states(model, cfg);
  std::vector<SaeParams> saes;
  for (std::size_t i = 0; i < cfg.sae.layers.size(); ++i) {
    const std::uint32_t layer = cfg.sae.layers[i];
    saes.push_back(train_sae(states[i], sae_train_config(cfg, layer), layer, cfg.sae.d_sae).sae);
  }
  return saes;
}

ImpactOptions impact_options(const PipelineConfig& cfg) {
  ImpactOptions o;
  o.alpha = cfg.identify.alpha;
  o.recompute = cfg.identify.recompute;
  o.threads = thread_cap();
  return o;
}

struct IdentifyOutcome {
  CandidateSet candidates;
  std::vector<CausalImpact> impacts;
  TaskFeatureSet features;
};

IdentifyOutcome identify_features(const ToyModel& model, const std::vector<SaeParams>& saes,
                                  const PipelineConfig& cfg, const IdentificationSplit& split,
                                  FeatureVariant variant, std::size_t k, const std::string& tag) {
  IdentifyOutcome out;
  out.candidates = recall_candidates(activation_frequency(model, saes, split.prior),
                                     cfg.identify.tau_freq);
  const TaskMetric metric = metric_from_name(cfg.identify.metric);
  switch (variant) {
    case FeatureVariant::standard:
      out.impacts = causal_impacts(model, saes, out.candidates.features, split.val, metric,
                                   impact_options(cfg));
      out.features = rank_and_select(out.impacts, k, tag, &out.candidates);
      break;
    case FeatureVariant::no_recall: {
      // As many features as recall would keep, drawn uniformly from all SAE features.
      std::vector<FeatureId> all;
      for (const auto& s : saes) {
        for (std::uint32_t f = 0; f < s.d_sae(); ++f) all.push_back({s.layer, f});
      }
      Rng rng(derive_seed(cfg.data_seed, 0x6e6f7263));
      const std::size_t m = std::min(all.size(), out.candidates.features.size());
      for (std::size_t i = 0; i < m; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
      all.resize(m);
      std::sort(all.begin(), all.end());
      out.impacts = causal_impacts(model, saes, all, split.val, metric, impact_options(cfg));
      out.features = rank_and_select(out.impacts, k, tag);
      break;
    }
    case FeatureVariant::no_filter:
      out.features.k = std::max<std::size_t>(1, out.candidates.features.size());
      out.features.source_tag = tag;
      for (std::size_t i = 0; i < out.candidates.features.size(); ++i) {
        out.features.features.push_back(
            {out.candidates.features[i], 0.0, out.candidates.frequencies[i]});
      }
      break;
  }
  return out;
}

std::vector<SaeParams> load_saes(const Workdir& wd, const PipelineConfig& cfg) {
  std::vector<SaeParams> saes;
  for (auto l : cfg.sae.layers) saes.push_back(load_sae(wd.path(names::sae(l))));
  return saes;
}

std::vector<std::string> sae_files(const PipelineConfig& cfg) {
  std::vector<std::string> files;
  for (auto l : cfg.sae.layers) files.push_back(names::sae(l));
  return files;
}

std::vector<DataSample> read_dataset(const Workdir& wd, const std::string& name) {
  return parse_dataset(binio::read_text(wd.path(name)));
}

std::string fmt_real(double v) { return records::f64(v); }

std::string tsv_candidates(const CandidateSet& c) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < c.features.size(); ++i) {
    rows.push_back({std::to_string(c.features[i].layer), std::to_string(c.features[i].index),
                    fmt_real(c.frequencies[i])});
  }
  return format_tsv({fmt::format("tau_freq={} prior_size={}", fmt_real(c.tau_freq), c.prior_size)},
                    {"layer", "index", "frequency"}, rows);
}

std::string tsv_impacts(const std::vector<CausalImpact>& impacts) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& i : impacts) {
    rows.push_back({std::to_string(i.feature.layer), std::to_string(i.feature.index),
                    fmt_real(i.delta), i.metric_name});
  }
  return format_tsv({}, {"layer", "index", "delta", "metric"}, rows);
}

EvalMetrics evaluate(const ToyModel& model, const std::vector<DataSample>& test,
                     const PipelineConfig& cfg, std::uint64_t seed) {
  EvalMetrics m;
  m.exact = eval_exact(model, test);
  m.pass_at_n = eval_pass_at_n(model, test, cfg.eval.pass_n, cfg.eval.temperature,
                               derive_seed(seed, 0x70617373));
  const auto greedy = GenerationMode::make_greedy();
  for (const auto& s : test) {
    const auto out = generate(model, s.prompt, s.target.size(), greedy);
    const RougeScores r = rouge(s.target, out);
    m.rouge1 += r.rouge1.f1;
    m.rouge2 += r.rouge2.f1;
    m.rougeL += r.rougeL.f1;
    m.token_f1 += token_f1(s.target, out);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, test.size()));
  m.rouge1 /= n;
  m.rouge2 /= n;
  m.rougeL /= n;
  m.token_f1 /= n;
  return m;
}

std::string format_eval(const EvalMetrics& m, std::size_t pass_n) {
  return format_tsv({}, {"metric", "value"},
                    {{"exact", fmt_real(m.exact)},
                     {fmt::format("pass@{}", pass_n), fmt_real(m.pass_at_n)},
                     {"rouge1", fmt_real(m.rouge1)},
                     {"rouge2", fmt_real(m.rouge2)},
                     {"rougeL", fmt_real(m.rougeL)},
                     {"token_f1", fmt_real(m.token_f1)}});
}

// Rows of a TSV written by format_tsv, without comments and header.
std::vector<std::vector<std::string>> tsv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  for (const auto& line : records::lines(text)) {
    if (line.empty() || line.front() == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

EvalMetrics parse_eval(const std::string& text) {
  std::vector<double> v;
  for (const auto& row : tsv_rows(text)) {
    if (row.size() != 2) fail(ErrorKind::format, "evaluation table row needs two cells");
    v.push_back(records::to_f64(row[1], "metric value", 0));
  }
  if (v.size() != 6) fail(ErrorKind::format, "evaluation table needs six metrics");
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

// ---- stage bodies ------------------------------------------------------------

bool is_original(const Arm& arm) { return arm.label == kOriginalLabel; }

std::string model_for(const Arm& arm, std::uint64_t seed) {
  return is_original(arm) ? names::model() : names::sft_model(arm.label, seed);
}

std::string arm_params(const Arm& arm) {
  return fmt::format("label={} strategy={} variant={} k={} ratio={} full={}\n", arm.label,
                     to_string(arm.strategy), static_cast<int>(arm.variant), arm.k,
                     fmt_real(arm.ratio), arm.full_control);
}

StageRecord stage_pretrain(Workdir& wd, const PipelineConfig& cfg) {
  StagePlan p{"pretrain", "pretrain", "", 0, {}, {names::model(), names::pool()},
              config_sections(cfg, {"model", "pretrain", "task", "data"})};
  return execute(wd, p, [&] {
    StageStats st;
    const ToyModel model = pretrain_model(cfg, &st.forward_passes, &st.items);
    save_model(model, wd.path(names::model()));
    binio::write_text_atomic(wd.path(names::pool()), format_dataset(gen_pool(cfg.task, cfg.pool)));
    return st;
  });
}

std::string sae_params(const PipelineConfig& cfg) {
  return config_sections(cfg, {"pretrain", "task", "sae"});
}

StageRecord stage_train_sae(Workdir& wd, const PipelineConfig& cfg) {
  StagePlan p{"train-sae", "train-sae", "", 0, {names::model()}, sae_files(cfg), sae_params(cfg)};
  return execute(wd, p, [&] {
    const ToyModel model = load_model(wd.path(names::model()));
    const auto states = corpus_states(model, cfg);
    StageStats st;
    st.forward_passes = model.forward_passes.get();
    for (std::size_t i = 0; i < cfg.sae.layers.size(); ++i) {
      const std::uint32_t layer = cfg.sae.layers[i];
      // Training reads states through the on-disk dump format, so the SAE sees
      // exactly what dump-acts would hand to an external trainer.
      ActivationDump dump{layer, cfg.model.d_model, states[i]};
      const ActivationDump stored = decode_activation_dump(encode_activation_dump(dump));
      const auto r = train_sae(stored.rows, sae_train_config(cfg, layer), layer, cfg.sae.d_sae);
      save_sae(r.sae, wd.path(names::sae(layer)));
      st.items += stored.rows.size();
    }
    return st;
  });
}

StageRecord stage_dump_acts(Workdir& wd, const PipelineConfig& cfg) {
  std::vector<std::string> outs;
  for (auto l : cfg.sae.layers) outs.push_back(names::acts(l));
  StagePlan p{"dump-acts", "dump-acts", "", 0, {names::model()}, outs, sae_params(cfg)};
  return execute(wd, p, [&] {
    const ToyModel model = load_model(wd.path(names::model()));
    const auto states = corpus_states(model, cfg);
    StageStats st;
    st.forward_passes = model.forward_passes.get();
    for (std::size_t i = 0; i < cfg.sae.layers.size(); ++i) {
      save_activation_dump({cfg.sae.layers[i], cfg.model.d_model, states[i]},
                           wd.path(names::acts(cfg.sae.layers[i])));
      st.items += states[i].size();
    }
    return st;
  });
}

StageRecord stage_identify(Workdir& wd, const PipelineConfig& cfg, const Arm& arm) {
  const std::string label = feature_label(arm);
  std::vector<std::string> inputs{names::model()};
  for (const auto& s : sae_files(cfg)) inputs.push_back(s);
  StagePlan p{label == "igds" ? std::string("identify") : "identify/" + label,
              "identify",
              label,
              0,
              inputs,
              {names::identification(), names::candidates(label), names::impacts(label),
               names::features(label)},
              config_sections(cfg, {"task", "data", "identify"}) + arm_params(arm)};
  return execute(wd, p, [&] {
    const ToyModel model = load_model(wd.path(names::model()));
    const auto saes = load_saes(wd, cfg);
    const auto all = identification_data(cfg, cfg.data_seed);
    binio::write_text_atomic(wd.path(names::identification()), format_dataset(all));
    const auto out = identify_features(model, saes, cfg, split_identification(all, cfg.identify.prior_size),
                                       arm.variant, arm.k, label);
    binio::write_text_atomic(wd.path(names::candidates(label)), tsv_candidates(out.candidates));
    binio::write_text_atomic(wd.path(names::impacts(label)), tsv_impacts(out.impacts));
    binio::write_text_atomic(wd.path(names::features(label)), format_feature_set(out.features));
    return StageStats{all.size(), model.forward_passes.get()};
  });
}

StageRecord stage_score(Workdir& wd, const PipelineConfig& cfg, const Arm& arm) {
  if (arm.full_control) fail(ErrorKind::configuration, "the full control selects without scores");
  std::vector<std::string> inputs{names::pool()};
  if (arm.strategy == Strategy::igds || arm.strategy == Strategy::loss || arm.strategy == Strategy::ifd) {
    inputs.push_back(names::model());
  }
  if (arm.strategy == Strategy::igds) {
    for (const auto& s : sae_files(cfg)) inputs.push_back(s);
    inputs.push_back(names::features(arm.label));
  }
  StagePlan p{"score/" + arm.label, "score", arm.label, 0, inputs, {names::scores(arm.label)},
              arm_params(arm)};
  return execute(wd, p, [&] {
    const auto pool = read_dataset(wd, names::pool());
    std::vector<ScoredSample> scores;
    std::uint64_t passes = 0;
    const std::size_t threads = thread_cap();
    switch (arm.strategy) {
      case Strategy::igds: {
        const ToyModel model = load_model(wd.path(names::model()));
        const auto features = parse_feature_set(binio::read_text(wd.path(names::features(arm.label))));
        if (features.features.empty()) {
          // No task feature survived: every sample scores zero and the
          // tie-break keeps pool order.
          for (std::size_t i = 0; i < pool.size(); ++i) scores.push_back({i, 0.0, Strategy::igds, 0});
        } else {
          scores = frs_score(model, load_saes(wd, cfg), features, pool, threads);
        }
        passes = model.forward_passes.get();
        break;
      }
      case Strategy::loss: {
        const ToyModel model = load_model(wd.path(names::model()));
        scores = loss_score(model, pool, threads);
        passes = model.forward_passes.get();
        break;
      }
      case Strategy::ifd: {
        const ToyModel model = load_model(wd.path(names::model()));
        scores = ifd_score(model, pool, threads);
        passes = model.forward_passes.get();
        break;
      }
      case Strategy::compress:
        scores = compress_score(pool);
        break;
      case Strategy::random:
        for (std::size_t i = 0; i < pool.size(); ++i) scores.push_back({i, 0.0, Strategy::random, 0});
        break;
    }
    binio::write_text_atomic(wd.path(names::scores(arm.label)), format_scores(scores));
    return StageStats{pool.size(), passes};
  });
}

StageRecord stage_select(Workdir& wd, const PipelineConfig& cfg, const Arm& arm, std::uint64_t seed) {
  (void)cfg;
  const bool seeded = arm.full_control || arm.strategy == Strategy::random;
  std::vector<std::string> inputs{names::pool()};
  if (!seeded) inputs.push_back(names::scores(arm.label));
  StagePlan p{fmt::format("select/{}/s{}", arm.label, seed), "select", arm.label, seed, inputs,
              {names::selection(arm.label, seed)}, arm_params(arm)};
  return execute(wd, p, [&] {
    SelectionResult sel;
    if (seeded) {
      const auto pool = read_dataset(wd, names::pool());
      sel = random_select(pool.size(), arm.full_control ? 1.0 : arm.ratio, seed);
    } else {
      const auto scores = parse_scores(binio::read_text(wd.path(names::scores(arm.label))));
      sel = select_by_score(scores, arm.ratio, selection_direction(arm.strategy));
      sel.seed = seed;
    }
    binio::write_text_atomic(wd.path(names::selection(arm.label, seed)), format_selection(sel));
    return StageStats{sel.selected.size(), 0};
  });
}

StageRecord stage_sft(Workdir& wd, const PipelineConfig& cfg, const Arm& arm, std::uint64_t seed) {
  StagePlan p{fmt::format("sft/{}/s{}", arm.label, seed), "sft", arm.label, seed,
              {names::model(), names::pool(), names::selection(arm.label, seed)},
              {names::sft_model(arm.label, seed)}, config_sections(cfg, {"sft"})};
  return execute(wd, p, [&] {
    const ToyModel base = load_model(wd.path(names::model()));
    const auto pool = read_dataset(wd, names::pool());
    auto sel = parse_selection(binio::read_text(wd.path(names::selection(arm.label, seed)))).selected;
    std::sort(sel.begin(), sel.end());
    std::vector<DataSample> data;
    data.reserve(sel.size());
    for (auto i : sel) {
      if (i >= pool.size()) fail(ErrorKind::index, fmt::format("selected index {} outside the pool", i));
      data.push_back(pool[i]);
    }
    TrainConfig t = cfg.sft;
    t.seed = derive_seed(cfg.sft.seed, seed);
    TrainResult r = sft(base, data, t);
    const std::uint64_t passes = r.model.forward_passes.get();
    r.model.forward_passes.reset();
    save_model(r.model, wd.path(names::sft_model(arm.label, seed)));
    return StageStats{data.size(), passes};
  });
}

StageRecord stage_eval(Workdir& wd, const PipelineConfig& cfg, const Arm& arm, std::uint64_t seed) {
  StagePlan p{fmt::format("eval/{}/s{}", arm.label, seed), "eval", arm.label, seed,
              {model_for(arm, seed)}, {names::test(), names::eval(arm.label, seed)},
              config_sections(cfg, {"task", "data", "eval"})};
  return execute(wd, p, [&] {
    const ToyModel model = load_model(wd.path(model_for(arm, seed)));
    const auto test = test_data(cfg);
    binio::write_text_atomic(wd.path(names::test()), format_dataset(test));
    const EvalMetrics m = evaluate(model, test, cfg, seed);
    binio::write_text_atomic(wd.path(names::eval(arm.label, seed)), format_eval(m, cfg.eval.pass_n));
    return StageStats{test.size(), model.forward_passes.get()};
  });
}

std::string cost_tsv(const RunManifest& m) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : cost_report({m})) {
    rows.push_back({r.strategy, std::to_string(r.pool_size), std::to_string(r.forward_passes),
                    fmt::format("{:.3f}", r.wall_time_s)});
  }
  return format_tsv({"scoring cost per strategy"}, {"strategy", "pool_size", "forward_passes", "wall_time_s"},
                    rows);
}

StageRecord stage_analyze(Workdir& wd, const PipelineConfig& cfg, const Arm& arm, std::uint64_t seed) {
  std::vector<std::string> inputs{model_for(arm, seed), names::pool(), names::identification(),
                                  names::features("igds")};
  for (const auto& s : sae_files(cfg)) inputs.push_back(s);
  StagePlan p{fmt::format("analyze/{}/s{}", arm.label, seed), "analyze", arm.label, seed, inputs,
              {names::activation(arm.label, seed), names::lexical(arm.label, seed), names::topology()},
              config_sections(cfg, {"task", "identify"})};
  const StageRecord rec = execute(wd, p, [&] {
    const ToyModel model = load_model(wd.path(model_for(arm, seed)));
    const auto pool = read_dataset(wd, names::pool());
    const auto features = parse_feature_set(binio::read_text(wd.path(names::features("igds"))));
    const auto saes = load_saes(wd, cfg);
    std::string act_tsv, lex_tsv;
    if (features.features.empty()) {
      act_tsv = format_tsv({"no task feature identified"}, {"sample", "on_task", "activation"}, {});
      lex_tsv = format_tsv({"no task feature identified"}, {"token", "original", "amplified", "delta"}, {});
    } else {
      const FeatureId top = features.features.front().feature;
      const SaeParams& sae = sae_for_layer(saes, top.layer);
      const auto dist = activation_distribution(model, sae, top, pool, arm.label);
      std::vector<std::vector<std::string>> rows;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        rows.push_back({std::to_string(i), pool[i].on_task ? "1" : "0", fmt_real(dist.values[i])});
      }
      act_tsv = format_tsv({fmt::format("feature={} probe=full pool ({} samples)", to_string(top), pool.size()),
                            fmt::format("q1={} median={} q3={}", fmt_real(dist.summary.q1),
                                        fmt_real(dist.summary.median), fmt_real(dist.summary.q3))},
                           {"sample", "on_task", "activation"}, rows);
      const auto val = split_identification(read_dataset(wd, names::identification()),
                                            cfg.identify.prior_size).val;
      std::size_t max_new = 1;
      for (const auto& s : val) max_new = std::max(max_new, s.target.size());
      const auto shift = lexical_shift(model, sae, top, val, max_new, cfg.identify.alpha);
      std::vector<std::vector<std::string>> lrows;
      for (const auto& t : shift.tokens) {
        lrows.push_back({vocab::token_name(t.token), std::to_string(t.original),
                         std::to_string(t.amplified), std::to_string(t.delta)});
      }
      lex_tsv = format_tsv({fmt::format("feature={} alpha={}", to_string(top), fmt_real(cfg.identify.alpha))},
                           {"token", "original", "amplified", "delta"}, lrows);
    }
    binio::write_text_atomic(wd.path(names::activation(arm.label, seed)), act_tsv);
    binio::write_text_atomic(wd.path(names::lexical(arm.label, seed)), lex_tsv);
    std::vector<std::vector<std::string>> trows;
    for (const auto& t : topology_report({{to_string(cfg.task.family), features}})) {
      trows.push_back({t.task, std::to_string(t.layer), std::to_string(t.index)});
    }
    binio::write_text_atomic(wd.path(names::topology()), format_tsv({}, {"task", "layer", "index"}, trows));
    return StageStats{pool.size(), model.forward_passes.get()};
  });
  // Wall times differ run to run, so the cost table is derived output that
  // is not tracked by digest.
  binio::write_text_atomic(wd.path("cost.tsv"), cost_tsv(wd.manifest));
  return rec;
}

StageRecord dispatch(Workdir& wd, const PipelineConfig& cfg, const std::string& stage, const Arm& arm,
                     std::uint64_t seed) {
  if (stage == "pretrain") return stage_pretrain(wd, cfg);
  if (stage == "train-sae") return stage_train_sae(wd, cfg);
  if (stage == "dump-acts") return stage_dump_acts(wd, cfg);
  if (stage == "identify") return stage_identify(wd, cfg, arm);
  if (stage == "score") return stage_score(wd, cfg, arm);
  if (stage == "select") return stage_select(wd, cfg, arm, seed);
  if (stage == "sft") return stage_sft(wd, cfg, arm, seed);
  if (stage == "eval") return stage_eval(wd, cfg, arm, seed);
  if (stage == "analyze") return stage_analyze(wd, cfg, arm, seed);
  fail(ErrorKind::configuration, fmt::format("unknown stage '{}'", stage));
  return {};
}

Arm arm_from_options(const PipelineConfig& cfg, const StageOptions& opts) {
  Arm arm = Arm::for_strategy(opts.strategy.value_or(cfg.select.strategy),
                              opts.ratio.value_or(cfg.select.ratio));
  arm.k = cfg.identify.k;
  return arm;
}

// ---- experiment helpers ------------------------------------------------------

double on_task_fraction(const Workdir& wd, const Arm& arm, std::uint64_t seed) {
  const auto pool = read_dataset(wd, names::pool());
  const auto sel = parse_selection(binio::read_text(wd.path(names::selection(arm.label, seed)))).selected;
  if (sel.empty()) return 0.0;
  std::size_t on = 0;
  for (auto i : sel) on += pool.at(i).on_task ? 1 : 0;
  return static_cast<double>(on) / static_cast<double>(sel.size());
}

double median_activation(const Workdir& wd, const Arm& arm, std::uint64_t seed) {
  std::vector<double> v;
  for (const auto& row : tsv_rows(binio::read_text(wd.path(names::activation(arm.label, seed))))) {
    if (row.size() != 3) fail(ErrorKind::format, "activation table row needs three cells");
    v.push_back(records::to_f64(row[2], "activation", 0));
  }
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return summarize(v).median;
}

ExperimentRow run_arm(Workdir& wd, const PipelineConfig& cfg, const Arm& arm, std::uint64_t seed) {
  if (!is_original(arm)) {
    if (arm.strategy == Strategy::igds && !arm.full_control) dispatch(wd, cfg, "identify", arm, seed);
    if (!arm.full_control) dispatch(wd, cfg, "score", arm, seed);
    dispatch(wd, cfg, "select", arm, seed);
    dispatch(wd, cfg, "sft", arm, seed);
  }
  dispatch(wd, cfg, "eval", arm, seed);
  dispatch(wd, cfg, "analyze", arm, seed);
  ExperimentRow row;
  row.label = arm.label;
  row.seed = seed;
  row.metrics = parse_eval(binio::read_text(wd.path(names::eval(arm.label, seed))));
  row.on_task_fraction = is_original(arm) ? 1.0 : on_task_fraction(wd, arm, seed);
  row.median_activation = median_activation(wd, arm, seed);
  return row;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void summarize_table(ExperimentTable& t) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ExperimentRow*>> by_label;
  for (const auto& r : t.rows) {
    if (!by_label.count(r.label)) order.push_back(r.label);
    by_label[r.label].push_back(&r);
  }
  std::vector<double> act, exact;
  for (const auto& label : order) {
    std::vector<double> e, p, a;
    for (const auto* r : by_label[label]) {
      e.push_back(r->metrics.exact);
      p.push_back(r->metrics.pass_at_n);
      a.push_back(r->median_activation);
    }
    SummaryRow s;
    s.label = label;
    s.n = e.size();
    s.exact_mean = mean_of(e);
    s.exact_std = sample_std(e);
    s.pass_mean = mean_of(p);
    s.pass_std = sample_std(p);
    s.median_activation_mean = mean_of(a);
    t.summary.push_back(s);
    if (std::isfinite(s.median_activation_mean)) {
      act.push_back(s.median_activation_mean);
      exact.push_back(s.exact_mean);
    }
  }
  t.activation_accuracy_correlation = rank_correlation(act, exact);
}

std::string rows_tsv(const ExperimentTable& t, std::size_t pass_n) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : t.rows) {
    rows.push_back({r.label, std::to_string(r.seed), fmt_real(r.metrics.exact), fmt_real(r.metrics.pass_at_n),
                    fmt_real(r.metrics.rouge1), fmt_real(r.metrics.rouge2), fmt_real(r.metrics.rougeL),
                    fmt_real(r.metrics.token_f1), fmt_real(r.on_task_fraction),
                    fmt_real(r.median_activation)});
  }
  return format_tsv({}, {"label", "seed", "exact", fmt::format("pass@{}", pass_n), "rouge1", "rouge2",
                         "rougeL", "token_f1", "on_task_fraction", "median_activation"},
                    rows);
}

std::string summary_tsv(const ExperimentTable& t, std::size_t pass_n) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : t.summary) {
    rows.push_back({s.label, std::to_string(s.n), fmt::format("{:.4f}", s.exact_mean),
                    fmt::format("{:.4f}", s.exact_std), fmt::format("{:.4f}", s.pass_mean),
                    fmt::format("{:.4f}", s.pass_std), fmt::format("{:.4f}", s.median_activation_mean)});
  }
  return format_tsv(
      {fmt::format("spearman(median_activation, exact) = {:.4f}", t.activation_accuracy_correlation)},
      {"label", "n", "exact_mean", "exact_std", fmt::format("pass@{}_mean", pass_n),
       fmt::format("pass@{}_std", pass_n), "median_activation_mean"},
      rows);
}

// ---- independent amplification route -----------------------------------------

double scalar_activation(const SaeParams& sae, std::span<const double> h, std::size_t f) {
  double pre = sae.b_enc[f];
  for (std::size_t d = 0; d < h.size(); ++d) pre += sae.w_enc(d, f) * h[d];
  const double cut = sae.activation == SaeActivation::jumprelu ? sae.theta : 0.0;
  return pre > cut ? pre : 0.0;
}

std::vector<double> scalar_feature_vector(const SaeParams& sae, std::span<const double> h, std::size_t f) {
  const double a = scalar_activation(sae, h, f);
  std::vector<double> v(h.size());
  for (std::size_t d = 0; d < h.size(); ++d) v[d] = a * sae.w_dec(f, d);
  return v;
}

// Greedy decoding where the edit is applied to an explicit residual block and
// the remaining blocks run through forward_from_layer.
std::vector<TokenId> route_generate(const ToyModel& model, const DataSample& s, const SaeParams* sae,
                                    std::size_t f, double alpha, bool recompute) {
  const std::vector<std::size_t> layers{sae ? sae->layer : 0};
  std::vector<TokenId> seq = s.prompt;
  std::vector<TokenId> out;
  std::vector<double> frozen;
  for (std::size_t step = 0; step < s.target.size(); ++step) {
    const ForwardResult base = forward_with_taps(model, seq, layers);
    RealMatrix logits;
    if (!sae) {
      logits = base.logits;
    } else {
      const std::size_t T = seq.size();
      const std::size_t d = model.config.d_model;
      RealMatrix resid(T, d);
      for (std::size_t p = 0; p < T; ++p) {
        const auto& st = base.taps[p].state;
        for (std::size_t j = 0; j < d; ++j) resid(p, j) = st[j];
      }
      if (frozen.empty()) {
        std::vector<double> h(resid.row(s.critical_pos).begin(), resid.row(s.critical_pos).end());
        frozen = scalar_feature_vector(*sae, h, f);
      }
      for (std::size_t p = s.critical_pos; p < T; ++p) {
        std::vector<double> h(resid.row(p).begin(), resid.row(p).end());
        const std::vector<double> v = recompute ? scalar_feature_vector(*sae, h, f) : frozen;
        for (std::size_t j = 0; j < d; ++j) resid(p, j) += alpha * v[j];
      }
      logits = forward_from_layer(model, resid, sae->layer);
    }
    const auto last = logits.row(logits.rows() - 1);
    const TokenId next = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

double route_delta(const ToyModel& model, const SaeParams& sae, std::size_t f,
                   const std::vector<DataSample>& val, const TaskMetric& metric, double alpha,
                   bool recompute, const std::vector<double>& original_scores) {
  double total = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    total += metric.score(val[i], route_generate(model, val[i], &sae, f, alpha, recompute)) -
             original_scores[i];
  }
  return total / static_cast<double>(val.size());
}

PipelineConfig shifted(const PipelineConfig& base, std::uint64_t seed) {
  PipelineConfig c = base;
  c.model.seed = static_cast<std::uint32_t>(derive_seed(base.model.seed, seed));
  c.pretrain.corpus.seed = derive_seed(base.pretrain.corpus.seed, seed);
  c.pretrain.train.seed = derive_seed(base.pretrain.train.seed, seed);
  c.sae.train.seed = derive_seed(base.sae.train.seed, seed);
  c.data_seed = derive_seed(base.data_seed, seed) >> 1;
  c.pool.seed = c.data_seed + 1;
  return c;
}

}  // namespace

// ---- public API ----------------------------------------------------------------

RunManifest run_stage(const PipelineConfig& cfg, const std::string& stage, const fs::path& workdir,
                      const StageOptions& opts) {
  cfg.validate();
  Workdir wd(cfg, workdir);
  dispatch(wd, cfg, stage, arm_from_options(cfg, opts), opts.seed.value_or(cfg.select.seed));
  return wd.manifest;
}

RunManifest run_chain(const PipelineConfig& cfg, const fs::path& workdir, const StageOptions& opts) {
  cfg.validate();
  Workdir wd(cfg, workdir);
  const Arm arm = arm_from_options(cfg, opts);
  const std::uint64_t seed = opts.seed.value_or(cfg.select.seed);
  for (const auto& stage : chain_stages()) {
    if (stage == "identify" && arm.strategy != Strategy::igds) continue;
    dispatch(wd, cfg, stage, arm, seed);
  }
  return wd.manifest;
}

StageRecord run_arm_stage(const PipelineConfig& cfg, const std::string& stage, const Arm& arm,
                          std::uint64_t seed, const fs::path& workdir) {
  cfg.validate();
  Workdir wd(cfg, workdir);
  return dispatch(wd, cfg, stage, arm, seed);
}

RunManifest read_manifest(const fs::path& workdir) {
  const fs::path p = workdir / kManifestName;
  if (!fs::exists(p)) fail(ErrorKind::io, fmt::format("no manifest in {}", workdir.string()));
  return manifest_from_json(binio::read_text(p));
}

ExperimentTable run_experiment(const PipelineConfig& cfg, const fs::path& workdir,
                               const std::vector<Strategy>& strategies,
                               const std::vector<std::uint64_t>& seeds) {
  cfg.validate();
  if (strategies.empty() || seeds.empty()) fail(ErrorKind::parameter, "experiment needs strategies and seeds");
  Workdir wd(cfg, workdir);
  dispatch(wd, cfg, "pretrain", {}, 0);
  dispatch(wd, cfg, "train-sae", {}, 0);
  Arm standard = Arm::for_strategy(Strategy::igds, cfg.select.ratio);
  standard.k = cfg.identify.k;
  // The analysis reads the standard feature set for every arm.
  dispatch(wd, cfg, "identify", standard, 0);

  ExperimentTable t;
  for (auto s : strategies) {
    Arm arm = Arm::for_strategy(s, cfg.select.ratio);
    arm.k = cfg.identify.k;
    for (auto seed : seeds) t.rows.push_back(run_arm(wd, cfg, arm, seed));
  }
  Arm original;
  original.label = kOriginalLabel;
  t.rows.push_back(run_arm(wd, cfg, original, seeds.front()));
  t.rows.push_back(run_arm(wd, cfg, Arm::full(), seeds.front()));
  summarize_table(t);
  binio::write_text_atomic(wd.path("results.tsv"), rows_tsv(t, cfg.eval.pass_n));
  binio::write_text_atomic(wd.path("summary.tsv"), summary_tsv(t, cfg.eval.pass_n));
  return t;
}

ExperimentTable ablation_suite(const PipelineConfig& cfg, const fs::path& workdir,
                               const std::vector<std::uint64_t>& seeds) {
  cfg.validate();
  if (seeds.empty()) fail(ErrorKind::parameter, "ablation needs seeds");
  Workdir wd(cfg, workdir);
  dispatch(wd, cfg, "pretrain", {}, 0);
  dispatch(wd, cfg, "train-sae", {}, 0);
  Arm standard = Arm::for_strategy(Strategy::igds, cfg.select.ratio);
  standard.k = cfg.identify.k;
  dispatch(wd, cfg, "identify", standard, 0);

  std::vector<Arm> arms;
  Arm full = Arm::for_strategy(Strategy::igds, cfg.select.ratio);
  full.k = 1;
  if (cfg.identify.k != 1) full.label = "igds_k1";
  arms.push_back(full);
  Arm no_recall = full;
  no_recall.label = "igds_norecall";
  no_recall.variant = FeatureVariant::no_recall;
  arms.push_back(no_recall);
  Arm no_filter = full;
  no_filter.label = "igds_nofilter";
  no_filter.variant = FeatureVariant::no_filter;
  arms.push_back(no_filter);
  for (auto k : cfg.experiment.ablation_k) {
    if (k == 1) continue;
    Arm a = full;
    a.k = k;
    a.label = k == cfg.identify.k ? std::string("igds") : fmt::format("igds_k{}", k);
    arms.push_back(a);
  }
  ExperimentTable t;
  for (const auto& arm : arms) {
    for (auto seed : seeds) t.rows.push_back(run_arm(wd, cfg, arm, seed));
  }
  summarize_table(t);
  binio::write_text_atomic(wd.path("ablation.tsv"), summary_tsv(t, cfg.eval.pass_n));
  binio::write_text_atomic(wd.path("ablation_runs.tsv"), rows_tsv(t, cfg.eval.pass_n));
  return t;
}

PlantedReport planted_feature_test(const PipelineConfig& base, std::uint64_t seed) {
  const PipelineConfig cfg = shifted(base, seed);
  cfg.validate();
  const ToyModel model = pretrain_model(cfg, nullptr, nullptr);
  const auto saes = train_saes(model, cfg);
  const auto split = split_identification(identification_data(cfg, cfg.data_seed), cfg.identify.prior_size);
  const IdentifyOutcome pipe =
      identify_features(model, saes, cfg, split, FeatureVariant::standard, 1, "planted");

  PlantedReport rep;
  rep.candidates = pipe.candidates.features.size();
  if (!pipe.features.features.empty()) {
    rep.pipeline_top1 = pipe.features.features.front().feature;
    rep.pipeline_delta = pipe.features.features.front().delta;
  }

  const TaskMetric metric = metric_from_name(cfg.identify.metric);
  std::vector<double> original(split.val.size());
  for (std::size_t i = 0; i < split.val.size(); ++i) {
    original[i] = metric.score(split.val[i], route_generate(model, split.val[i], nullptr, 0, 0.0, false));
  }
  const auto& cands = pipe.candidates.features;
  std::vector<double> deltas(cands.size());
  parallel_for(cands.size(), thread_cap(), [&](std::size_t i) {
    deltas[i] = route_delta(model, sae_for_layer(saes, cands[i].layer), cands[i].index, split.val, metric,
                            cfg.identify.alpha, cfg.identify.recompute, original);
  });
  // Candidates are in (layer, index) order, so the first maximum wins ties.
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (deltas[i] > best) {
      best = deltas[i];
      rep.oracle_top1 = cands[i];
    }
  }
  rep.oracle_delta = cands.empty() ? 0.0 : best;
  if (cands.empty() || !(best > 0.0)) {
    rep.oracle_top1.reset();
    rep.status = PlantedStatus::inconclusive;
  } else {
    rep.status = rep.pipeline_top1 == rep.oracle_top1 ? PlantedStatus::pass : PlantedStatus::fail;
  }
  return rep;
}

TaskFeatureSet identify_with_seed(const PipelineConfig& cfg, const fs::path& workdir,
                                  std::uint64_t ident_seed) {
  cfg.validate();
  const ToyModel model = load_model(workdir / names::model());
  std::vector<SaeParams> saes;
  for (auto l : cfg.sae.layers) saes.push_back(load_sae(workdir / names::sae(l)));
  const auto split = split_identification(identification_data(cfg, ident_seed), cfg.identify.prior_size);
  return identify_features(model, saes, cfg, split, FeatureVariant::standard, cfg.identify.k,
                           fmt::format("ident_s{}", ident_seed))
      .features;
}

}  // namespace igds
