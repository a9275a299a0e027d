// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end over the C interface.
//
// Exit codes: 0 success, 1 usage error, 2 stage error, 3 acceptance failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "igds/igds.h"

namespace {

constexpr int kUsage = 1;
constexpr int kStageError = 2;
constexpr int kAcceptance = 3;

struct ConfigDeleter {
  void operator()(igds_config* c) const { igds_config_free(c); }
};
using ConfigPtr = std::unique_ptr<igds_config, ConfigDeleter>;

struct CString {
  char* p = nullptr;
  ~CString() { igds_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

int report(igds_status st) {
  std::cerr << "igds: " << igds_status_name(st) << ": " << igds_last_error() << "\n";
  return kStageError;
}

struct Args {
  std::string config;
  std::string preset;
  std::string workdir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<double> ratio;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> strategies;
  std::size_t count = 10;
  bool with_wall_time = false;
};

// Loads --config or --preset, then applies section.key=value overrides.
igds_status load_config(const Args& a, ConfigPtr& out) {
  igds_config* raw = nullptr;
  igds_status st = a.config.empty() ? igds_config_preset(a.preset.c_str(), &raw)
                                    : igds_config_load(a.config.c_str(), &raw);
  if (st != IGDS_OK) return st;
  out.reset(raw);
  for (const auto& ov : a.overrides) {
    const auto dot = ov.find('.');
    const auto eq = ov.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
      std::cerr << "igds: override '" << ov << "' must look like section.key=value\n";
      return IGDS_E_CONFIGURATION;
    }
    st = igds_config_set(out.get(), ov.substr(0, dot).c_str(), ov.substr(dot + 1, eq - dot - 1).c_str(),
                         ov.substr(eq + 1).c_str());
    if (st != IGDS_OK) return st;
  }
  return IGDS_OK;
}

std::string default_workdir() {
  const char* env = std::getenv("IGDS_WORKDIR");
  return env && *env ? env : "igds-work";
}

int run_planted(const igds_config* cfg, const Args& a) {
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty() && a.seed) seeds.push_back(*a.seed);
  if (seeds.empty()) {
    for (std::size_t i = 1; i <= a.count; ++i) seeds.push_back(i);
  }
  std::size_t passed = 0;
  for (auto seed : seeds) {
    igds_planted_result r{};
    const igds_status st = igds_planted_test(cfg, seed, &r);
    if (st != IGDS_OK) return report(st);
    const char* status = r.status == IGDS_PLANTED_PASS ? "pass"
                         : r.status == IGDS_PLANTED_FAIL ? "fail" : "inconclusive";
    std::cout << "seed " << seed << ": " << status << " candidates=" << r.candidates;
    if (r.has_pipeline_top1) {
      std::cout << " pipeline=l" << r.pipeline_layer << "_p" << r.pipeline_index << " (" << r.pipeline_delta << ")";
    }
    if (r.has_oracle_top1) {
      std::cout << " oracle=l" << r.oracle_layer << "_p" << r.oracle_index << " (" << r.oracle_delta << ")";
    }
    std::cout << "\n";
    passed += r.status == IGDS_PLANTED_PASS ? 1 : 0;
  }
  const auto needed = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(seeds.size())));
  std::cout << passed << "/" << seeds.size() << " seeds passed (need " << needed << ")\n";
  return passed >= needed ? 0 : kAcceptance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-feature data selection pipeline"};
  app.require_subcommand(1);
  Args a;
  a.preset = "smoke";

  auto common = [&](CLI::App* sub) {
    auto* cfg = sub->add_option("--config", a.config, "Config file (INI)");
    sub->add_option("--preset", a.preset, "Built-in config when --config is absent")
        ->check(CLI::IsMember({"smoke", "desk"}))
        ->excludes(cfg);
    sub->add_option("--workdir", a.workdir, "Work directory (default $IGDS_WORKDIR)");
    sub->add_option("--set", a.overrides, "Config override section.key=value");
  };
  auto stage_opts = [&](CLI::App* sub) {
    sub->add_option("--seed", a.seed, "Run seed");
    sub->add_option("--strategy", a.strategy, "Selection strategy")
        ->check(CLI::IsMember({"igds", "loss", "ifd", "compress", "random"}));
    sub->add_option("--ratio", a.ratio, "Selection ratio")->check(CLI::Range(0.0, 1.0));
  };

  const std::vector<std::pair<std::string, std::string>> stages{
      {"pretrain", "Pretrain the toy model and write the candidate pool"},
      {"train-sae", "Train one SAE per configured layer"},
      {"dump-acts", "Write residual activation dumps"},
      {"identify", "Recall and causally filter task features"},
      {"score", "Score the pool with the selected strategy"},
      {"select", "Select a subset by score"},
      {"sft", "Fine-tune on the selected subset"},
      {"eval", "Evaluate a fine-tuned model"},
      {"analyze", "Activation, lexical and topology reports"},
  };
  std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    common(sub);
    stage_opts(sub);
    stage_cmds.emplace_back(name, sub);
  }
  auto* run = app.add_subcommand("run", "Run the chained stages in order");
  common(run);
  stage_opts(run);

  auto* experiment = app.add_subcommand("experiment", "Strategy x seed grid with controls");
  common(experiment);
  experiment->add_option("--strategies", a.strategies, "Strategies (default from config)")->delimiter(',');
  experiment->add_option("--seeds", a.seeds, "Seeds (default from config)")->delimiter(',');

  auto* ablation = app.add_subcommand("ablation", "Recall, filter and k ablations");
  common(ablation);
  ablation->add_option("--seeds", a.seeds, "Seeds (default from config)")->delimiter(',');

  auto* planted = app.add_subcommand("planted-test", "Check identification against a brute-force oracle");
  common(planted);
  planted->add_option("--seed", a.seed, "Single seed");
  planted->add_option("--seeds", a.seeds, "Seed list")->delimiter(',');
  planted->add_option("--count", a.count, "Seeds 1..count when no seed is given");

  auto* manifest = app.add_subcommand("manifest", "Print the run manifest");
  manifest->add_option("--workdir", a.workdir, "Work directory (default $IGDS_WORKDIR)");
  manifest->add_flag("--wall-time", a.with_wall_time, "Include wall-time fields");

  auto* show = app.add_subcommand("show-config", "Print the canonical config");
  common(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }
  if (a.workdir.empty()) a.workdir = default_workdir();

  if (manifest->parsed()) {
    CString json;
    const igds_status st = igds_manifest_json(a.workdir.c_str(), a.with_wall_time, &json.p);
    if (st != IGDS_OK) return report(st);
    std::cout << json.str();
    return 0;
  }

  ConfigPtr cfg;
  if (const igds_status st = load_config(a, cfg); st != IGDS_OK) {
    std::cerr << "igds: " << igds_last_error() << "\n";
    return kUsage;
  }

  if (show->parsed()) {
    CString text;
    if (const igds_status st = igds_config_format(cfg.get(), &text.p); st != IGDS_OK) return report(st);
    std::cout << text.str();
    return 0;
  }

  igds_stage_options opts{};
  if (a.seed) {
    opts.has_seed = 1;
    opts.seed = *a.seed;
  }
  if (a.strategy) opts.strategy = a.strategy->c_str();
  if (a.ratio) {
    opts.has_ratio = 1;
    opts.ratio = *a.ratio;
  }

  for (const auto& [name, sub] : stage_cmds) {
    if (!sub->parsed()) continue;
    const igds_status st = igds_run_stage(cfg.get(), name.c_str(), a.workdir.c_str(), &opts);
    if (st != IGDS_OK) return report(st);
    std::cout << name << ": done in " << a.workdir << "\n";
    return 0;
  }
  if (run->parsed()) {
    const igds_status st = igds_run_chain(cfg.get(), a.workdir.c_str(), &opts);
    if (st != IGDS_OK) return report(st);
    std::cout << "chain: done in " << a.workdir << "\n";
    return 0;
  }
  if (experiment->parsed()) {
    std::vector<const char*> names;
    for (const auto& s : a.strategies) names.push_back(s.c_str());
    CString summary;
    const igds_status st = igds_run_experiment(cfg.get(), a.workdir.c_str(), names.data(), names.size(),
                                               a.seeds.data(), a.seeds.size(), &summary.p);
    if (st != IGDS_OK) return report(st);
    std::cout << summary.str();
    return 0;
  }
  if (ablation->parsed()) {
    CString summary;
    const igds_status st =
        igds_run_ablation(cfg.get(), a.workdir.c_str(), a.seeds.data(), a.seeds.size(), &summary.p);
    if (st != IGDS_OK) return report(st);
    std::cout << summary.str();
    return 0;
  }
  if (planted->parsed()) return run_planted(cfg.get(), a);
  return kUsage;
}
