// SPDX-License-Identifier: Apache-2.0

#include "igds/toymodel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "binio.hpp"

namespace igds {

namespace {

constexpr std::uint32_t kModelFormatVersion = 1;

std::string block_name(std::size_t index, std::size_t n_layers) {
  static const char* slots[] = {"ln1_g", "ln1_b", "w_qkv", "b_qkv", "w_o",    "b_o",
                                "ln2_g", "ln2_b", "w_fc",  "b_fc",  "w_proj", "b_proj"};
  if (index == TransformerParams::kTokEmb) return "tok_emb";
  if (index == TransformerParams::lnf_g(n_layers)) return "lnf_g";
  if (index == TransformerParams::lnf_b(n_layers)) return "lnf_b";
  if (index == TransformerParams::unembed(n_layers)) return "unembed";
  const std::size_t layer = (index - 1) / TransformerParams::kSlots;
  const std::size_t slot = (index - 1) % TransformerParams::kSlots;
  return fmt::format("l{}.{}", layer, slots[slot]);
}

// Shapes of every block for a config, in layout order.
std::vector<std::pair<std::size_t, std::size_t>> block_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff();
  std::vector<std::pair<std::size_t, std::size_t>> s;
  s.emplace_back(c.vocab_size, d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    s.insert(s.end(), {{1, d}, {1, d}, {d, 3 * d}, {1, 3 * d}, {d, d}, {1, d},
                       {1, d}, {1, d}, {d, f}, {1, f}, {f, d}, {1, d}});
  }
  s.insert(s.end(), {{1, d}, {1, d}, {d, c.vocab_size}});
  return s;
}

// Produces tape leaves either as trainable parameters or read-only references.
class Leaves {
 public:
  Leaves(Tape& tape, const TransformerParams& params, TransformerParams* trainable)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(std::size_t index) {
    if (trainable_ != nullptr) return tape_.param(trainable_->blocks[index]);
    return tape_.reference(params_.blocks[index].value);
  }

 private:
  Tape& tape_;
  const TransformerParams& params_;
  TransformerParams* trainable_;
};

using TP = TransformerParams;

Var run_block(Tape& tape, Leaves& leaf, std::size_t layer, std::size_t n_heads, Var x) {
  auto p = [&](TP::Slot s) { return leaf(TP::layer_slot(layer, s)); };
  Var h = tape.layernorm(x, p(TP::ln1_g), p(TP::ln1_b));
  Var qkv = tape.add_row_bias(tape.matmul(h, p(TP::w_qkv)), p(TP::b_qkv));
  Var att = tape.causal_attention(qkv, n_heads);
  Var o = tape.add_row_bias(tape.matmul(att, p(TP::w_o)), p(TP::b_o));
  x = tape.add(x, o);
  Var h2 = tape.layernorm(x, p(TP::ln2_g), p(TP::ln2_b));
  Var fc = tape.gelu(tape.add_row_bias(tape.matmul(h2, p(TP::w_fc)), p(TP::b_fc)));
  Var proj = tape.add_row_bias(tape.matmul(fc, p(TP::w_proj)), p(TP::b_proj));
  return tape.add(x, proj);
}

Var run_head(Tape& tape, Leaves& leaf, std::size_t n_layers, Var x) {
  Var h = tape.layernorm(x, leaf(TP::lnf_g(n_layers)), leaf(TP::lnf_b(n_layers)));
  return tape.matmul(h, leaf(TP::unembed(n_layers)));
}

Var apply_intervention(Tape& tape, Var x, const InterventionSpec& iv) {
  const std::size_t T = tape.value(x).rows();
  const std::size_t begin = iv.critical_pos;
  const std::size_t end =
      iv.position_policy == PositionPolicy::critical_only ? std::min(begin + 1, T) : T;
  if (!iv.recompute) return tape.add_vector_to_rows(x, iv.vector.span(), iv.scale, begin, end);
  const RealMatrix pre = tape.value(x);
  for (std::size_t r = begin; r < end; ++r) {
    const RealVector v = iv.recompute(pre.row(r));
    x = tape.add_vector_to_rows(x, v.span(), iv.scale, r, r + 1);
  }
  return x;
}

void check_tokens(const ToyModel& model, std::span<const TokenId> tokens) {
  if (tokens.empty()) fail(ErrorKind::input, "empty token sequence");
  if (tokens.size() > model.config.max_seq_len) {
    fail(ErrorKind::length, fmt::format("sequence of {} tokens exceeds max_seq_len {}",
                                        tokens.size(), model.config.max_seq_len));
  }
}

Var build_forward(Tape& tape, const ToyModel& model, TransformerParams* trainable,
                  std::span<const TokenId> tokens, std::span<const std::size_t> tap_layers,
                  std::vector<ResidualTap>* taps, const InterventionSpec* iv) {
  check_tokens(model, tokens);
  const auto& cfg = model.config;
  Leaves leaf(tape, model.params, trainable);
  Var x = tape.gather_rows(leaf(TP::kTokEmb), tokens);
  RealMatrix pos(tokens.size(), cfg.d_model);
  std::copy_n(model.positional.data(), pos.size(), pos.data());
  x = tape.add(x, tape.constant(std::move(pos)));
  std::vector<RealMatrix> tapped(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    x = run_block(tape, leaf, l, cfg.n_heads, x);
    if (iv != nullptr && iv->layer == l) x = apply_intervention(tape, x, *iv);
    if (taps != nullptr && std::find(tap_layers.begin(), tap_layers.end(), l) != tap_layers.end()) {
      const RealMatrix& v = tape.value(x);
      for (std::size_t t = 0; t < v.rows(); ++t) taps->push_back({l, t, v.row_vector(t)});
    }
  }
  model.forward_passes.add();
  return run_head(tape, leaf, cfg.n_layers, x);
}

void validate_intervention(const ToyModel& model, const InterventionSpec& spec) {
  if (spec.layer >= model.config.n_layers) {
    fail(ErrorKind::index, fmt::format("intervention layer {} >= n_layers {}", spec.layer,
                                       model.config.n_layers));
  }
  if (!spec.recompute && spec.vector.dim() != model.config.d_model) {
    fail(ErrorKind::dimension, fmt::format("intervention vector of {} for d_model {}",
                                           spec.vector.dim(), model.config.d_model));
  }
}

TokenId pick_token(std::span<const double> logits, const GenerationMode& mode, Rng& rng) {
  if (mode.greedy || mode.temperature <= 0.0) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& v : scaled) v /= mode.temperature;
  std::vector<double> lp(scaled.size());
  log_softmax_row(scaled, lp);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    acc += std::exp(lp[i]);
    if (u < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(lp.size() - 1);
}

std::vector<TokenId> generate_impl(const ToyModel& model, std::span<const TokenId> prompt,
                                   std::size_t max_new, const GenerationMode& mode,
                                   const InterventionSpec* spec) {
  if (prompt.empty()) fail(ErrorKind::input, "empty prompt");
  if (prompt.size() + max_new > model.config.max_seq_len) {
    fail(ErrorKind::length, fmt::format("prompt {} + max_new {} exceeds max_seq_len {}",
                                        prompt.size(), max_new, model.config.max_seq_len));
  }
  if (spec != nullptr) validate_intervention(model, *spec);
  Rng rng(mode.seed);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < max_new; ++i) {
    Tape tape(false);
    Var logits = build_forward(tape, model, nullptr, seq, {}, nullptr, spec);
    const RealMatrix& l = tape.value(logits);
    const TokenId next = pick_token(l.row(l.rows() - 1), mode, rng);
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

struct Adam {
  std::vector<RealMatrix> m, v;
  std::size_t t = 0;
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(const TransformerParams& p) {
    for (const auto& b : p.blocks) {
      m.emplace_back(b.value.rows(), b.value.cols());
      v.emplace_back(b.value.rows(), b.value.cols());
    }
  }

  void step(TransformerParams& p, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      auto& blk = p.blocks[i];
      for (std::size_t e = 0; e < blk.value.size(); ++e) {
        const double g = blk.grad.data()[e];
        double& mm = m[i].data()[e];
        double& vv = v[i].data()[e];
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g * g;
        blk.value.data()[e] -= lr * (mm / c1) / (std::sqrt(vv / c2) + eps);
      }
    }
  }
};

void scale_and_clip(TransformerParams& p, double scale, double clip) {
  double sq = 0.0;
  for (auto& b : p.blocks) {
    for (double& g : b.grad.flat()) {
      g *= scale;
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const double f = clip / norm;
    for (auto& b : p.blocks)
      for (double& g : b.grad.flat()) g *= f;
  }
}

// One training example: tokens plus per-position label weights.
struct Example {
  std::vector<TokenId> inputs;
  std::vector<TokenId> labels;
  std::vector<double> weights;
};

TrainResult run_training(const ToyModel& start, const std::vector<Example>& examples,
                         const TrainConfig& cfg) {
  if (cfg.batch_size == 0) fail(ErrorKind::parameter, "batch_size must be >= 1");
  TrainResult result{start, {}};
  if (cfg.epochs == 0) return result;
  ToyModel& model = result.model;
  Adam opt(model.params);
  Rng rng(derive_seed(cfg.seed, 0x7261696e));
  std::vector<std::size_t> order(examples.size());
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      if (cfg.steps > 0 && steps >= cfg.steps) return result;
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      model.params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = b; k < end; ++k) {
        const Example& ex = examples[order[k]];
        Tape tape;
        Var logits = build_forward(tape, model, &model.params, ex.inputs, {}, nullptr, nullptr);
        Var loss = tape.cross_entropy(logits, ex.labels, ex.weights);
        batch_loss += tape.scalar(loss);
        tape.backward(loss);
      }
      const double n = static_cast<double>(end - b);
      scale_and_clip(model.params, 1.0 / n, cfg.grad_clip);
      opt.step(model.params, cfg.lr);
      result.losses.push_back(batch_loss / n);
      ++steps;
    }
  }
  return result;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) fail(ErrorKind::parameter, "vocab_size must be >= 2");
  if (max_seq_len < 2) fail(ErrorKind::parameter, "max_seq_len must be >= 2");
  if (n_layers < 1) fail(ErrorKind::parameter, "n_layers must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0) {
    fail(ErrorKind::parameter,
         fmt::format("d_model {} not divisible by n_heads {}", d_model, n_heads));
  }
}

void TransformerParams::zero_grad() {
  for (auto& b : blocks) b.zero_grad();
}

std::size_t TransformerParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.value.size();
  return n;
}

// Token embeddings start at this std and positions at this amplitude; with
// unit-amplitude sinusoids the token signal is swamped after layernorm.
constexpr double kEmbeddingScale = 0.1;

RealMatrix sinusoidal_positions(std::size_t max_len, std::size_t d_model, double amplitude) {
  RealMatrix pe(max_len, d_model);
  for (std::size_t t = 0; t < max_len; ++t) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe(t, i) = amplitude * std::sin(static_cast<double>(t) * freq);
      if (i + 1 < d_model) pe(t, i + 1) = amplitude * std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

ToyModel ToyModel::initialize(const ModelConfig& cfg) {
  cfg.validate();
  ToyModel m;
  m.config = cfg;
  m.positional = sinusoidal_positions(cfg.max_seq_len, cfg.d_model, kEmbeddingScale);
  Rng rng(derive_seed(cfg.seed, 0x696e6974));
  const auto shapes = block_shapes(cfg);
  const double resid_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto [r, c] = shapes[i];
    RealMatrix v(r, c);
    const std::string name = block_name(i, cfg.n_layers);
    const bool gain = name.ends_with("_g");
    const bool bias = name.ends_with("_b") || name.ends_with(".b_qkv") ||
                      name.ends_with(".b_o") || name.ends_with(".b_fc") ||
                      name.ends_with(".b_proj");
    if (gain) {
      v.fill(1.0);
    } else if (!bias) {
      double sd = (name.ends_with(".w_o") || name.ends_with(".w_proj")) ? resid_std : 0.02;
      if (name == "tok_emb") sd = kEmbeddingScale;
      for (double& x : v.flat()) x = sd * rng.normal();
    }
    m.params.blocks.emplace_back(name, std::move(v));
  }
  return m;
}

ForwardResult forward_with_taps(const ToyModel& model, std::span<const TokenId> tokens,
                                std::span<const std::size_t> tap_layers,
                                const InterventionSpec* intervention) {
  for (std::size_t l : tap_layers) {
    if (l >= model.config.n_layers) {
      fail(ErrorKind::index,
           fmt::format("tap layer {} >= n_layers {}", l, model.config.n_layers));
    }
  }
  if (intervention != nullptr) validate_intervention(model, *intervention);
  Tape tape(false);
  ForwardResult out;
  std::vector<ResidualTap> taps;
  Var logits = build_forward(tape, model, nullptr, tokens, tap_layers, &taps, intervention);
  out.logits = tape.value(logits);
  // Layer-major order regardless of how tap_layers was given.
  std::stable_sort(taps.begin(), taps.end(), [](const ResidualTap& a, const ResidualTap& b) {
    return a.layer < b.layer;
  });
  out.taps = std::move(taps);
  return out;
}

RealMatrix forward_from_layer(const ToyModel& model, const RealMatrix& residual,
                              std::size_t layer) {
  if (layer >= model.config.n_layers) fail(ErrorKind::index, "forward_from_layer: bad layer");
  if (residual.cols() != model.config.d_model) {
    fail(ErrorKind::dimension, "forward_from_layer: residual width != d_model");
  }
  Tape tape(false);
  Leaves leaf(tape, model.params, nullptr);
  Var x = tape.reference(residual);
  for (std::size_t l = layer + 1; l < model.config.n_layers; ++l) {
    x = run_block(tape, leaf, l, model.config.n_heads, x);
  }
  return tape.value(run_head(tape, leaf, model.config.n_layers, x));
}

std::vector<TokenId> generate(const ToyModel& model, std::span<const TokenId> prompt,
                              std::size_t max_new, const GenerationMode& mode) {
  return generate_impl(model, prompt, max_new, mode, nullptr);
}

std::vector<TokenId> generate_with_intervention(const ToyModel& model,
                                                std::span<const TokenId> prompt,
                                                std::size_t max_new, const GenerationMode& mode,
                                                const InterventionSpec& spec) {
  return generate_impl(model, prompt, max_new, mode, &spec);
}

void DataSample::validate() const {
  if (prompt.empty() || target.empty()) fail(ErrorKind::input, "sample prompt and target must be nonempty");
  if (critical_pos >= prompt.size()) {
    fail(ErrorKind::index, fmt::format("critical_pos {} outside prompt of {}", critical_pos,
                                       prompt.size()));
  }
}

namespace {

Example sft_example(const DataSample& s) {
  s.validate();
  Example ex;
  std::vector<TokenId> seq(s.prompt);
  seq.insert(seq.end(), s.target.begin(), s.target.end());
  ex.inputs.assign(seq.begin(), seq.end() - 1);
  ex.labels.assign(seq.begin() + 1, seq.end());
  ex.weights.assign(ex.labels.size(), 0.0);
  for (std::size_t i = s.prompt.size() - 1; i < ex.labels.size(); ++i) ex.weights[i] = 1.0;
  return ex;
}

double masked_loss(const ToyModel& model, const Example& ex) {
  Tape tape(false);
  Var logits = build_forward(tape, model, nullptr, ex.inputs, {}, nullptr, nullptr);
  return tape.scalar(tape.cross_entropy(logits, ex.labels, ex.weights));
}

}  // namespace

TrainResult train(const ToyModel& model, const std::vector<std::vector<TokenId>>& corpus,
                  const TrainConfig& cfg) {
  if (corpus.empty()) fail(ErrorKind::input, "empty training corpus");
  std::vector<Example> examples;
  examples.reserve(corpus.size());
  for (const auto& seq : corpus) {
    if (seq.size() < 2) fail(ErrorKind::input, "training sequences need at least 2 tokens");
    Example ex;
    ex.inputs.assign(seq.begin(), seq.end() - 1);
    ex.labels.assign(seq.begin() + 1, seq.end());
    ex.weights.assign(ex.labels.size(), 1.0);
    examples.push_back(std::move(ex));
  }
  return run_training(model, examples, cfg);
}

TrainResult sft(const ToyModel& model, const std::vector<DataSample>& dataset,
                const TrainConfig& cfg) {
  if (dataset.empty()) fail(ErrorKind::input, "empty SFT dataset");
  std::vector<Example> examples;
  examples.reserve(dataset.size());
  for (const auto& s : dataset) examples.push_back(sft_example(s));
  return run_training(model, examples, cfg);
}

double sequence_loss(ToyModel& model, std::span<const TokenId> inputs,
                     std::span<const TokenId> labels, std::span<const double> weights,
                     bool accumulate_grad) {
  Tape tape(accumulate_grad);
  Var logits = build_forward(tape, model, accumulate_grad ? &model.params : nullptr, inputs, {},
                             nullptr, nullptr);
  Var loss = tape.cross_entropy(logits, labels, weights);
  if (accumulate_grad) tape.backward(loss);
  return tape.scalar(loss);
}

double target_loss(const ToyModel& model, const DataSample& sample) {
  return masked_loss(model, sft_example(sample));
}

double unconditional_target_loss(const ToyModel& model, const DataSample& sample, TokenId bos) {
  DataSample bare;
  bare.prompt = {bos};
  bare.target = sample.target;
  bare.critical_pos = 0;
  return masked_loss(model, sft_example(bare));
}

std::vector<std::uint8_t> encode_model(const ToyModel& model) {
  binio::Writer w;
  w.bytes("IGDS");
  w.u32(kModelFormatVersion);
  const auto& c = model.config;
  for (std::uint32_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.max_seq_len, c.seed})
    w.u32(v);
  for (const auto& b : model.params.blocks) w.block(b.name, b.value);
  return std::move(w.buffer());
}

ToyModel decode_model(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  if (r.bytes(4) != "IGDS") fail(ErrorKind::format, "model checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    fail(ErrorKind::format, fmt::format("model checkpoint: unsupported version {}", version));
  }
  ModelConfig c;
  c.vocab_size = r.u32();
  c.d_model = r.u32();
  c.n_layers = r.u32();
  c.n_heads = r.u32();
  c.max_seq_len = r.u32();
  c.seed = r.u32();
  c.validate();
  ToyModel m;
  m.config = c;
  m.positional = sinusoidal_positions(c.max_seq_len, c.d_model, kEmbeddingScale);
  const auto shapes = block_shapes(c);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    auto blk = r.block();
    if (blk.name != block_name(i, c.n_layers) || blk.value.rows() != shapes[i].first ||
        blk.value.cols() != shapes[i].second) {
      fail(ErrorKind::format, fmt::format("model checkpoint: unexpected block {} ({})", blk.name,
                                          blk.value.shape_string()));
    }
    m.params.blocks.emplace_back(blk.name, std::move(blk.value));
  }
  if (!r.at_end()) fail(ErrorKind::format, "model checkpoint: trailing bytes");
  return m;
}

void save_model(const ToyModel& model, const std::filesystem::path& path) {
  binio::write_file_atomic(path, encode_model(model));
}

ToyModel load_model(const std::filesystem::path& path) {
  return decode_model(binio::read_file(path));
}

}  // namespace igds
