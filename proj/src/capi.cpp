// SPDX-License-Identifier: Apache-2.0

#include "igds/igds.h"

#include <fmt/format.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <new>
#include <sstream>
#include <string>

#include "igds/pipeline.hpp"
#include "igds/select.hpp"
#include "igds/toymodel.hpp"

struct igds_config {
  igds::PipelineConfig cfg;
};

struct igds_model {
  igds::ToyModel model;
};

namespace {

thread_local std::string g_last_error;

igds_status status_of(igds::ErrorKind kind) {
  using igds::ErrorKind;
  switch (kind) {
    case ErrorKind::dimension: return IGDS_E_DIMENSION;
    case ErrorKind::parameter: return IGDS_E_PARAMETER;
    case ErrorKind::index: return IGDS_E_INDEX;
    case ErrorKind::input: return IGDS_E_INPUT;
    case ErrorKind::length: return IGDS_E_LENGTH;
    case ErrorKind::configuration: return IGDS_E_CONFIGURATION;
    case ErrorKind::evaluation: return IGDS_E_EVALUATION;
    case ErrorKind::dependency: return IGDS_E_DEPENDENCY;
    case ErrorKind::staleness: return IGDS_E_STALENESS;
    case ErrorKind::comparison: return IGDS_E_COMPARISON;
    case ErrorKind::io: return IGDS_E_IO;
    case ErrorKind::format: return IGDS_E_FORMAT;
  }
  return IGDS_E_INTERNAL;
}

template <typename F>
igds_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return IGDS_OK;
  } catch (const igds::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return IGDS_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return IGDS_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return IGDS_E_INTERNAL;
  }
}

void require(const void* p, const char* name) {
  if (!p) throw igds::Error(igds::ErrorKind::parameter, fmt::format("{} is null", name));
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

igds::StageOptions stage_options(const igds_stage_options* opts) {
  igds::StageOptions o;
  if (!opts) return o;
  if (opts->has_seed) o.seed = opts->seed;
  if (opts->strategy) o.strategy = igds::strategy_from_string(opts->strategy);
  if (opts->has_ratio) o.ratio = opts->ratio;
  return o;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw igds::Error(igds::ErrorKind::io, fmt::format("cannot read {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

extern "C" {

const char* igds_version(void) { return "1.0.0"; }

const char* igds_last_error(void) { return g_last_error.c_str(); }

const char* igds_status_name(igds_status status) {
  switch (status) {
    case IGDS_OK: return "ok";
    case IGDS_E_DIMENSION: return "dimension";
    case IGDS_E_PARAMETER: return "parameter";
    case IGDS_E_INDEX: return "index";
    case IGDS_E_INPUT: return "input";
    case IGDS_E_LENGTH: return "length";
    case IGDS_E_CONFIGURATION: return "configuration";
    case IGDS_E_EVALUATION: return "evaluation";
    case IGDS_E_DEPENDENCY: return "dependency";
    case IGDS_E_STALENESS: return "staleness";
    case IGDS_E_COMPARISON: return "comparison";
    case IGDS_E_IO: return "io";
    case IGDS_E_FORMAT: return "format";
    case IGDS_E_NULL_ARGUMENT: return "null-argument";
    case IGDS_E_INTERNAL: return "internal";
  }
  return "unknown";
}

void igds_string_free(char* s) { std::free(s); }

igds_status igds_config_preset(const char* preset, igds_config** out) {
  if (!preset || !out) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] {
    const std::string p = preset;
    if (p == "smoke") {
      *out = new igds_config{igds::smoke_config()};
    } else if (p == "desk") {
      *out = new igds_config{igds::desk_config()};
    } else {
      throw igds::Error(igds::ErrorKind::configuration, fmt::format("unknown preset '{}'", p));
    }
  });
}

igds_status igds_config_load(const char* path, igds_config** out) {
  if (!path || !out) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] { *out = new igds_config{igds::load_config(path)}; });
}

igds_status igds_config_parse(const char* text, igds_config** out) {
  if (!text || !out) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] { *out = new igds_config{igds::parse_config(text)}; });
}

igds_status igds_config_set(igds_config* cfg, const char* section, const char* key,
                            const char* value) {
  if (!cfg || !section || !key || !value) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] {
    // Rewrites the canonical text and re-parses, so overrides get the same
    // validation as a config file.
    std::istringstream in(igds::format_config(cfg->cfg));
    std::string line, current, out;
    bool found = false;
    const std::string prefix = std::string(key) + " = ";
    while (std::getline(in, line)) {
      if (!line.empty() && line.front() == '[') current = line.substr(1, line.size() - 2);
      if (current == section && line.rfind(prefix, 0) == 0) {
        line = prefix + value;
        found = true;
      }
      out += line + "\n";
    }
    if (!found) {
      throw igds::Error(igds::ErrorKind::configuration,
                        fmt::format("unknown key '{}' in section [{}]", key, section));
    }
    cfg->cfg = igds::parse_config(out);
  });
}

igds_status igds_config_format(const igds_config* cfg, char** out_text) {
  if (!cfg || !out_text) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] { *out_text = dup_string(igds::format_config(cfg->cfg)); });
}

igds_status igds_config_hash(const igds_config* cfg, char** out_hex) {
  if (!cfg || !out_hex) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] { *out_hex = dup_string(igds::config_hash(cfg->cfg)); });
}

void igds_config_free(igds_config* cfg) { delete cfg; }

igds_status igds_run_stage(const igds_config* cfg, const char* stage, const char* workdir,
                           const igds_stage_options* opts) {
  if (!cfg || !stage || !workdir) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] { igds::run_stage(cfg->cfg, stage, workdir, stage_options(opts)); });
}

igds_status igds_run_chain(const igds_config* cfg, const char* workdir,
                           const igds_stage_options* opts) {
  if (!cfg || !workdir) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] { igds::run_chain(cfg->cfg, workdir, stage_options(opts)); });
}

igds_status igds_manifest_json(const char* workdir, int with_wall_time, char** out_json) {
  if (!workdir || !out_json) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] {
    *out_json = dup_string(igds::manifest_to_json(igds::read_manifest(workdir), with_wall_time != 0));
  });
}

igds_status igds_run_experiment(const igds_config* cfg, const char* workdir,
                                const char* const* strategies, size_t n_strategies,
                                const uint64_t* seeds, size_t n_seeds, char** out_summary_tsv) {
  if (!cfg || !workdir) return IGDS_E_NULL_ARGUMENT;
  if ((n_strategies && !strategies) || (n_seeds && !seeds)) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] {
    std::vector<igds::Strategy> st = cfg->cfg.experiment.strategies;
    if (n_strategies) {
      st.clear();
      for (size_t i = 0; i < n_strategies; ++i) {
        require(strategies[i], "strategy name");
        st.push_back(igds::strategy_from_string(strategies[i]));
      }
    }
    std::vector<std::uint64_t> sd = cfg->cfg.experiment.seeds;
    if (n_seeds) sd.assign(seeds, seeds + n_seeds);
    igds::run_experiment(cfg->cfg, workdir, st, sd);
    if (out_summary_tsv) {
      *out_summary_tsv = dup_string(read_file((std::filesystem::path(workdir) / "summary.tsv").string()));
    }
  });
}

igds_status igds_run_ablation(const igds_config* cfg, const char* workdir, const uint64_t* seeds,
                              size_t n_seeds, char** out_summary_tsv) {
  if (!cfg || !workdir || (n_seeds && !seeds)) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] {
    std::vector<std::uint64_t> sd = cfg->cfg.experiment.ablation_seeds;
    if (n_seeds) sd.assign(seeds, seeds + n_seeds);
    igds::ablation_suite(cfg->cfg, workdir, sd);
    if (out_summary_tsv) {
      *out_summary_tsv = dup_string(read_file((std::filesystem::path(workdir) / "ablation.tsv").string()));
    }
  });
}

igds_status igds_planted_test(const igds_config* cfg, uint64_t seed, igds_planted_result* out) {
  if (!cfg || !out) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] {
    const igds::PlantedReport r = igds::planted_feature_test(cfg->cfg, seed);
    igds_planted_result res{};
    switch (r.status) {
      case igds::PlantedStatus::pass: res.status = IGDS_PLANTED_PASS; break;
      case igds::PlantedStatus::fail: res.status = IGDS_PLANTED_FAIL; break;
      case igds::PlantedStatus::inconclusive: res.status = IGDS_PLANTED_INCONCLUSIVE; break;
    }
    res.candidates = r.candidates;
    if (r.pipeline_top1) {
      res.has_pipeline_top1 = 1;
      res.pipeline_layer = r.pipeline_top1->layer;
      res.pipeline_index = r.pipeline_top1->index;
    }
    res.pipeline_delta = r.pipeline_delta;
    if (r.oracle_top1) {
      res.has_oracle_top1 = 1;
      res.oracle_layer = r.oracle_top1->layer;
      res.oracle_index = r.oracle_top1->index;
    }
    res.oracle_delta = r.oracle_delta;
    *out = res;
  });
}

igds_status igds_identify_with_seed(const igds_config* cfg, const char* workdir, uint64_t ident_seed,
                                    char** out_text) {
  if (!cfg || !workdir || !out_text) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] {
    *out_text = dup_string(igds::format_feature_set(igds::identify_with_seed(cfg->cfg, workdir, ident_seed)));
  });
}

igds_status igds_model_load(const char* path, igds_model** out) {
  if (!path || !out) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] { *out = new igds_model{igds::load_model(path)}; });
}

igds_status igds_model_vocab_size(const igds_model* model, uint32_t* out) {
  if (!model || !out) return IGDS_E_NULL_ARGUMENT;
  *out = model->model.config.vocab_size;
  return IGDS_OK;
}

igds_status igds_model_generate(const igds_model* model, const int32_t* prompt, size_t prompt_len,
                                size_t max_new, int32_t* out) {
  if (!model || (prompt_len && !prompt) || (max_new && !out)) return IGDS_E_NULL_ARGUMENT;
  return guarded([&] {
    const auto gen = igds::generate(model->model, std::span<const int32_t>(prompt, prompt_len), max_new,
                                    igds::GenerationMode::make_greedy());
    std::copy(gen.begin(), gen.end(), out);
  });
}

void igds_model_free(igds_model* model) { delete model; }

}  // extern "C"
