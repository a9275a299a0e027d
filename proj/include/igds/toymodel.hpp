// SPDX-License-Identifier: Apache-2.0
//
// Small pre-LayerNorm decoder-only transformer with residual taps and
// residual-stream interventions.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "igds/numcore.hpp"
#include "igds/tape.hpp"

namespace igds {

struct ModelConfig {
  std::uint32_t vocab_size = 64;
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t max_seq_len = 64;
  std::uint32_t seed = 0;

  void validate() const;
  std::uint32_t d_ff() const { return 4 * d_model; }
  bool operator==(const ModelConfig&) const = default;
};

// Named weight blocks in a fixed order; see block_name() for the layout.
struct TransformerParams {
  std::vector<Parameter> blocks;

  enum Slot : std::size_t {
    ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj, kSlots,
  };
  static constexpr std::size_t kTokEmb = 0;
  static std::size_t layer_slot(std::size_t layer, Slot s) { return 1 + layer * kSlots + s; }
  static std::size_t lnf_g(std::size_t n_layers) { return 1 + n_layers * kSlots; }
  static std::size_t lnf_b(std::size_t n_layers) { return 2 + n_layers * kSlots; }
  static std::size_t unembed(std::size_t n_layers) { return 3 + n_layers * kSlots; }

  void zero_grad();
  std::size_t parameter_count() const;
};

// Counts full-sequence forward passes. Copies start from the copied count.
class PassCounter {
 public:
  PassCounter() = default;
  PassCounter(const PassCounter& o) : n_(o.get()) {}
  PassCounter& operator=(const PassCounter& o) {
    n_.store(o.get());
    return *this;
  }
  void add(std::uint64_t k = 1) const { n_.fetch_add(k, std::memory_order_relaxed); }
  std::uint64_t get() const { return n_.load(std::memory_order_relaxed); }
  void reset() const { n_.store(0); }

 private:
  mutable std::atomic<std::uint64_t> n_{0};
};

struct ToyModel {
  ModelConfig config;
  TransformerParams params;
  RealMatrix positional;  // [max_seq_len x d_model], fixed sinusoidal
  PassCounter forward_passes;

  static ToyModel initialize(const ModelConfig& cfg);
};

RealMatrix sinusoidal_positions(std::size_t max_len, std::size_t d_model, double amplitude);

struct ResidualTap {
  std::size_t layer = 0;
  std::size_t position = 0;
  RealVector state;
};

enum class PositionPolicy { critical_only, all_from_critical };

struct InterventionSpec {
  std::size_t layer = 0;
  RealVector vector;
  double scale = 1.0;
  PositionPolicy position_policy = PositionPolicy::all_from_critical;
  std::size_t critical_pos = 0;
  // When set, the vector is recomputed from the pre-intervention residual at
  // every edited position instead of using `vector`.
  std::function<RealVector(std::span<const double>)> recompute;
};

struct ForwardResult {
  RealMatrix logits;              // [T x V]
  std::vector<ResidualTap> taps;  // layer-major, positions ascending
};

ForwardResult forward_with_taps(const ToyModel& model, std::span<const TokenId> tokens,
                                std::span<const std::size_t> tap_layers,
                                const InterventionSpec* intervention = nullptr);

// Runs blocks after `layer` on a residual block that is the output of `layer`.
// Used as an independent route for intervention checks.
RealMatrix forward_from_layer(const ToyModel& model, const RealMatrix& residual,
                              std::size_t layer);

struct GenerationMode {
  bool greedy = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static GenerationMode make_greedy() { return {}; }
  static GenerationMode sample(double temperature, std::uint64_t seed) {
    return {false, temperature, seed};
  }
};

std::vector<TokenId> generate(const ToyModel& model, std::span<const TokenId> prompt,
                              std::size_t max_new, const GenerationMode& mode);

std::vector<TokenId> generate_with_intervention(const ToyModel& model,
                                                std::span<const TokenId> prompt,
                                                std::size_t max_new, const GenerationMode& mode,
                                                const InterventionSpec& spec);

struct DataSample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> target;
  std::size_t critical_pos = 0;
  std::string source;
  bool on_task = true;

  void validate() const;
  bool operator==(const DataSample&) const = default;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  std::size_t steps = 0;  // when > 0, caps the number of optimizer steps
  std::uint64_t seed = 0;
  double grad_clip = 1.0;  // global-norm clip, 0 disables
};

struct TrainResult {
  ToyModel model;
  std::vector<double> losses;  // mean batch loss per optimizer step
};

// Next-token training on whole sequences.
TrainResult train(const ToyModel& model, const std::vector<std::vector<TokenId>>& corpus,
                  const TrainConfig& cfg);

// Fine-tuning with the loss restricted to target tokens.
TrainResult sft(const ToyModel& model, const std::vector<DataSample>& dataset,
                const TrainConfig& cfg);

// Weighted next-token cross-entropy of one sequence. With `accumulate_grad`
// the gradient is added into the grad buffers of model.params.
double sequence_loss(ToyModel& model, std::span<const TokenId> inputs,
                     std::span<const TokenId> labels, std::span<const double> weights,
                     bool accumulate_grad);

// Mean cross-entropy over the target tokens of prompt + target (one forward pass).
double target_loss(const ToyModel& model, const DataSample& sample);
// Mean cross-entropy of the target predicted with no prompt context beyond `bos`.
double unconditional_target_loss(const ToyModel& model, const DataSample& sample, TokenId bos);

// Checkpoint container. Header: "IGDS", u32 version, ModelConfig as six u32;
// then blocks of (u16 name length, name, u32 rows, u32 cols, f32 data).
void save_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_model(const ToyModel& model);
ToyModel decode_model(std::span<const std::uint8_t> bytes);

}  // namespace igds
