// SPDX-License-Identifier: Apache-2.0

#include "igds/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <functional>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "igds/manifest.hpp"
#include "records.hpp"

namespace igds {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* want) {
  fail(ErrorKind::configuration, fmt::format("{} = '{}' is not {}", key, v, want));
}

std::uint64_t as_u64(const std::string& key, const std::string& v) {
  try {
    return records::to_u64(v, "config", 0);
  } catch (const Error&) {
    bad_value(key, v, "a nonnegative integer");
  }
}

double as_f64(const std::string& key, const std::string& v) {
  try {
    return records::to_f64(v, "config", 0);
  } catch (const Error&) {
    bad_value(key, v, "a number");
  }
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> as_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v, auto&& fmt_one) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ",";
    out += fmt_one(v[i]);
  }
  return out;
}

std::string f64(double v) { return records::f64(v); }

struct Entry {
  const char* section;
  const char* key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string& name, const std::string& value)> set;
};

#define IGDS_UINT(sec, key, expr)                                                     \
  Entry {                                                                             \
    sec, key, [](const PipelineConfig& c) { return fmt::format("{}", c.expr); },      \
        [](PipelineConfig& c, const std::string& n, const std::string& v) {           \
          c.expr = static_cast<std::remove_reference_t<decltype(c.expr)>>(as_u64(n, v)); \
        }                                                                             \
  }
#define IGDS_REAL(sec, key, expr)                                                        \
  Entry {                                                                                \
    sec, key, [](const PipelineConfig& c) { return f64(c.expr); },                       \
        [](PipelineConfig& c, const std::string& n, const std::string& v) { c.expr = as_f64(n, v); } \
  }

const std::vector<Entry>& schema() {
  static const std::vector<Entry> entries = {
      IGDS_UINT("model", "vocab_size", model.vocab_size),
      IGDS_UINT("model", "d_model", model.d_model),
      IGDS_UINT("model", "n_layers", model.n_layers),
      IGDS_UINT("model", "n_heads", model.n_heads),
      IGDS_UINT("model", "max_seq_len", model.max_seq_len),
      IGDS_UINT("model", "seed", model.seed),

      IGDS_UINT("pretrain", "sequences", pretrain.corpus.n),
      IGDS_REAL("pretrain", "task_fraction", pretrain.corpus.task_fraction),
      IGDS_REAL("pretrain", "answer_noise", pretrain.corpus.answer_noise),
      IGDS_UINT("pretrain", "corpus_seed", pretrain.corpus.seed),
      IGDS_UINT("pretrain", "steps", pretrain.train.steps),
      IGDS_UINT("pretrain", "epochs", pretrain.train.epochs),
      IGDS_REAL("pretrain", "lr", pretrain.train.lr),
      IGDS_UINT("pretrain", "batch_size", pretrain.train.batch_size),
      IGDS_REAL("pretrain", "grad_clip", pretrain.train.grad_clip),
      IGDS_UINT("pretrain", "seed", pretrain.train.seed),

      Entry{"sae", "layers",
            [](const PipelineConfig& c) {
              return join(c.sae.layers, [](std::uint32_t l) { return std::to_string(l); });
            },
            [](PipelineConfig& c, const std::string& n, const std::string& v) {
              c.sae.layers.clear();
              for (const auto& item : as_list(v))
                c.sae.layers.push_back(static_cast<std::uint32_t>(as_u64(n, item)));
            }},
      IGDS_UINT("sae", "d_sae", sae.d_sae),
      IGDS_UINT("sae", "sequences", sae.n_sequences),
      IGDS_REAL("sae", "l1_coeff", sae.train.l1_coeff),
      IGDS_REAL("sae", "lr", sae.train.lr),
      IGDS_UINT("sae", "batch_size", sae.train.batch_size),
      IGDS_UINT("sae", "steps", sae.train.steps),
      IGDS_UINT("sae", "seed", sae.train.seed),
      Entry{"sae", "activation",
            [](const PipelineConfig& c) {
              return std::string(c.sae.train.activation == SaeActivation::relu ? "relu" : "jumprelu");
            },
            [](PipelineConfig& c, const std::string& n, const std::string& v) {
              if (v == "relu") c.sae.train.activation = SaeActivation::relu;
              else if (v == "jumprelu") c.sae.train.activation = SaeActivation::jumprelu;
              else bad_value(n, v, "relu or jumprelu");
            }},
      IGDS_REAL("sae", "theta", sae.train.theta),

      Entry{"task", "family", [](const PipelineConfig& c) { return std::string(to_string(c.task.family)); },
            [](PipelineConfig& c, const std::string&, const std::string& v) {
              c.task.family = task_family_from_string(v);
            }},
      IGDS_UINT("task", "modulus", task.modulus),
      IGDS_UINT("task", "ops", task.ops),
      IGDS_UINT("task", "content_len", task.content_len),
      IGDS_UINT("task", "distinct_words", task.distinct_words),
      IGDS_UINT("task", "summary_k", task.summary_k),
      IGDS_UINT("task", "cipher_seed", task.cipher_seed),

      IGDS_UINT("data", "seed", data_seed),
      IGDS_UINT("data", "pool_size", pool.n_total),
      IGDS_REAL("data", "on_task_fraction", pool.on_task_fraction),
      Entry{"data", "distractor_kind",
            [](const PipelineConfig& c) {
              return std::string(c.pool.distractor_kind == DistractorKind::off_task
                                     ? "off_task"
                                     : "shuffled_target");
            },
            [](PipelineConfig& c, const std::string& n, const std::string& v) {
              if (v == "off_task") c.pool.distractor_kind = DistractorKind::off_task;
              else if (v == "shuffled_target") c.pool.distractor_kind = DistractorKind::shuffled_target;
              else bad_value(n, v, "off_task or shuffled_target");
            }},

      IGDS_UINT("identify", "prior_size", identify.prior_size),
      IGDS_UINT("identify", "val_size", identify.val_size),
      IGDS_REAL("identify", "tau_freq", identify.tau_freq),
      IGDS_UINT("identify", "k", identify.k),
      IGDS_REAL("identify", "alpha", identify.alpha),
      Entry{"identify", "metric", [](const PipelineConfig& c) { return c.identify.metric; },
            [](PipelineConfig& c, const std::string&, const std::string& v) {
              metric_from_name(v);
              c.identify.metric = v;
            }},
      Entry{"identify", "recompute",
            [](const PipelineConfig& c) { return std::string(c.identify.recompute ? "true" : "false"); },
            [](PipelineConfig& c, const std::string& n, const std::string& v) {
              c.identify.recompute = as_bool(n, v);
            }},

      Entry{"select", "strategy",
            [](const PipelineConfig& c) { return std::string(to_string(c.select.strategy)); },
            [](PipelineConfig& c, const std::string&, const std::string& v) {
              c.select.strategy = strategy_from_string(v);
            }},
      IGDS_REAL("select", "ratio", select.ratio),
      IGDS_UINT("select", "seed", select.seed),

      IGDS_UINT("sft", "steps", sft.steps),
      IGDS_UINT("sft", "epochs", sft.epochs),
      IGDS_REAL("sft", "lr", sft.lr),
      IGDS_UINT("sft", "batch_size", sft.batch_size),
      IGDS_REAL("sft", "grad_clip", sft.grad_clip),
      IGDS_UINT("sft", "seed", sft.seed),

      IGDS_UINT("eval", "test_size", eval.test_size),
      IGDS_UINT("eval", "pass_n", eval.pass_n),
      IGDS_REAL("eval", "temperature", eval.temperature),

      Entry{"experiment", "strategies",
            [](const PipelineConfig& c) {
              return join(c.experiment.strategies, [](Strategy s) { return std::string(to_string(s)); });
            },
            [](PipelineConfig& c, const std::string&, const std::string& v) {
              c.experiment.strategies.clear();
              for (const auto& item : as_list(v)) c.experiment.strategies.push_back(strategy_from_string(item));
            }},
      Entry{"experiment", "seeds",
            [](const PipelineConfig& c) {
              return join(c.experiment.seeds, [](std::uint64_t s) { return std::to_string(s); });
            },
            [](PipelineConfig& c, const std::string& n, const std::string& v) {
              c.experiment.seeds.clear();
              for (const auto& item : as_list(v)) c.experiment.seeds.push_back(as_u64(n, item));
            }},
      Entry{"experiment", "ablation_seeds",
            [](const PipelineConfig& c) {
              return join(c.experiment.ablation_seeds, [](std::uint64_t s) { return std::to_string(s); });
            },
            [](PipelineConfig& c, const std::string& n, const std::string& v) {
              c.experiment.ablation_seeds.clear();
              for (const auto& item : as_list(v)) c.experiment.ablation_seeds.push_back(as_u64(n, item));
            }},
      Entry{"experiment", "ablation_k",
            [](const PipelineConfig& c) {
              return join(c.experiment.ablation_k, [](std::size_t k) { return std::to_string(k); });
            },
            [](PipelineConfig& c, const std::string& n, const std::string& v) {
              c.experiment.ablation_k.clear();
              for (const auto& item : as_list(v)) c.experiment.ablation_k.push_back(as_u64(n, item));
            }},
  };
  return entries;
}

#undef IGDS_UINT
#undef IGDS_REAL

std::size_t longest_sample(const TaskSpec& t) {
  const std::size_t modmath = 1 + (2 * t.ops + 1) + 2 + 1;
  const std::size_t summary = 1 + t.content_len + 2 + std::min(t.summary_k, t.distinct_words);
  const std::size_t cipher = 1 + t.content_len + 2 + t.content_len;
  return std::max({modmath, summary, cipher});
}

}  // namespace

void PipelineConfig::validate() const {
  model.validate();
  task.validate();
  if (model.vocab_size < task.vocab_size) {
    fail(ErrorKind::configuration, fmt::format("model vocab_size {} is smaller than the task vocabulary {}",
                                               model.vocab_size, task.vocab_size));
  }
  if (longest_sample(task) > model.max_seq_len) {
    fail(ErrorKind::configuration, fmt::format("samples of up to {} tokens exceed max_seq_len {}",
                                               longest_sample(task), model.max_seq_len));
  }
  if (sae.layers.empty()) fail(ErrorKind::configuration, "sae.layers is empty");
  std::set<std::uint32_t> seen;
  for (auto l : sae.layers) {
    if (l >= model.n_layers) {
      fail(ErrorKind::configuration, fmt::format("sae layer {} is not a model layer (n_layers {})", l,
                                                 model.n_layers));
    }
    if (!seen.insert(l).second) fail(ErrorKind::configuration, fmt::format("sae layer {} listed twice", l));
  }
  if (sae.d_sae < model.d_model) fail(ErrorKind::configuration, "sae.d_sae must be >= d_model");
  if (sae.train.batch_size == 0 || pretrain.train.batch_size == 0 || sft.batch_size == 0) {
    fail(ErrorKind::configuration, "batch sizes must be >= 1");
  }
  if (!(pretrain.corpus.task_fraction >= 0.0 && pretrain.corpus.task_fraction <= 1.0) ||
      !(pretrain.corpus.answer_noise >= 0.0 && pretrain.corpus.answer_noise <= 1.0)) {
    fail(ErrorKind::configuration, "pretrain fractions must lie in [0, 1]");
  }
  if (!(pool.on_task_fraction >= 0.0 && pool.on_task_fraction <= 1.0) || pool.n_total == 0) {
    fail(ErrorKind::configuration, "data.pool_size must be >= 1 and on_task_fraction in [0, 1]");
  }
  if (identify.prior_size == 0 || identify.val_size == 0) {
    fail(ErrorKind::configuration, "identify.prior_size and val_size must be >= 1");
  }
  if (!(identify.tau_freq > 0.0 && identify.tau_freq <= 1.0)) {
    fail(ErrorKind::configuration, "identify.tau_freq must lie in (0, 1]");
  }
  if (identify.k == 0) fail(ErrorKind::configuration, "identify.k must be >= 1");
  metric_from_name(identify.metric);
  if (!(select.ratio > 0.0 && select.ratio <= 1.0)) {
    fail(ErrorKind::configuration, "select.ratio must lie in (0, 1]");
  }
  if (eval.test_size == 0 || eval.pass_n == 0) {
    fail(ErrorKind::configuration, "eval.test_size and pass_n must be >= 1");
  }
  if (experiment.strategies.empty() || experiment.seeds.empty()) {
    fail(ErrorKind::configuration, "experiment needs at least one strategy and one seed");
  }
  for (auto k : experiment.ablation_k)
    if (k == 0) fail(ErrorKind::configuration, "experiment.ablation_k entries must be >= 1");
}

PipelineConfig smoke_config() {
  PipelineConfig c;
  c.model = {vocab::kSize, 32, 2, 4, 32, 1};
  c.pretrain.corpus = {8000, 0.34, 0.35, 5};
  c.pretrain.train = {3e-3, 16, 1000, 3000, 3, 1.0};
  c.sae.layers = {0, 1};
  c.sae.d_sae = 128;
  c.sae.n_sequences = 1000;
  c.sae.train.steps = 1000;
  c.sae.train.seed = 11;
  c.task = TaskSpec{};
  c.task.ops = 1;
  c.pool.n_total = 400;
  c.pool.on_task_fraction = 0.5;
  c.pool.distractor_kind = DistractorKind::off_task;
  c.data_seed = 100;
  c.select = {Strategy::igds, 0.5, 1};
  c.sft = {1e-3, 8, 1000, 200, 9, 1.0};
  c.eval = {200, 8, 0.7};
  c.experiment.strategies = {Strategy::igds, Strategy::random};
  c.experiment.seeds = {1};
  c.experiment.ablation_seeds = {1};
  c.experiment.ablation_k = {1, 3, 5};
  return c;
}

PipelineConfig desk_config() {
  PipelineConfig c = smoke_config();
  c.model = {vocab::kSize, 64, 4, 4, 32, 1};
  c.pretrain.corpus = {20000, 0.34, 0.35, 5};
  c.pretrain.train = {1e-3, 16, 1000, 2000, 3, 1.0};
  c.task = TaskSpec{};
  c.sae.layers = {0, 1, 2, 3};
  c.sae.d_sae = 256;
  c.sae.n_sequences = 2000;
  c.sae.train.steps = 2000;
  c.pool.n_total = 2000;
  c.sft.steps = 1000;
  c.sft.batch_size = 32;
  c.eval.test_size = 300;
  c.experiment.strategies = {Strategy::igds, Strategy::random, Strategy::loss, Strategy::ifd,
                             Strategy::compress};
  c.experiment.seeds = {1, 2, 3, 4, 5};
  c.experiment.ablation_seeds = {1, 2, 3};
  return c;
}

PipelineConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::configuration, fmt::format("config line {}: {}", e.line(), e.message()));
  }
  // Unset keys keep the desk defaults.
  PipelineConfig cfg = desk_config();
  const auto& entries = schema();
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) {
      fail(ErrorKind::configuration, fmt::format("key '{}' outside any section", section));
    }
    for (const auto& [key, node] : keys) {
      const auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) {
        return section == e.section && key == e.key;
      });
      if (it == entries.end()) {
        fail(ErrorKind::configuration, fmt::format("unknown key '{}.{}'", section, key));
      }
      it->set(cfg, section + "." + key, node.data());
    }
  }
  cfg.pool.seed = cfg.data_seed + 1;
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(binio::read_text(path));
}

std::string format_config(const PipelineConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& e : schema()) {
    if (section != e.section) {
      if (!section.empty()) out += "\n";
      section = e.section;
      out += fmt::format("[{}]\n", section);
    }
    out += fmt::format("{} = {}\n", e.key, e.get(cfg));
  }
  return out;
}

std::string config_hash(const PipelineConfig& cfg) { return sha256_hex(format_config(cfg)); }

}  // namespace igds
