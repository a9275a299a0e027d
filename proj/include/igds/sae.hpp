// SPDX-License-Identifier: Apache-2.0
//
// Sparse autoencoder over residual-stream states.
//
//   a(h) = act(W_encᵀ h + b_enc)      W_enc: [d_model x d_sae]
//   ĥ    = a W_dec + b_dec            W_dec: [d_sae x d_model]
//
// act is ReLU or JumpReLU with a fixed threshold.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "igds/numcore.hpp"

namespace igds {

enum class SaeActivation : std::uint8_t { relu = 0, jumprelu = 1 };

struct SaeParams {
  std::uint32_t layer = 0;
  RealMatrix w_enc;
  RealVector b_enc;
  RealMatrix w_dec;
  RealVector b_dec;
  SaeActivation activation = SaeActivation::relu;
  double theta = 0.0;

  std::size_t d_model() const { return w_enc.rows(); }
  std::size_t d_sae() const { return w_enc.cols(); }
  void validate() const;

  // W_enc = W_decᵀ, unit-norm random decoder rows, zero biases.
  static SaeParams initialize(std::uint32_t layer, std::size_t d_model, std::size_t d_sae,
                              SaeActivation activation, double theta, std::uint64_t seed);
};

struct SaeTrainConfig {
  double l1_coeff = 1e-3;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  SaeActivation activation = SaeActivation::jumprelu;
  double theta = 0.03;
};

RealVector encode(const SaeParams& sae, std::span<const double> h);
RealVector decode(const SaeParams& sae, std::span<const double> a);
// encode(h)[f] × W_dec row f
RealVector feature_vector(const SaeParams& sae, std::span<const double> h, std::size_t f);
// Single-feature activation without materializing the whole code.
double feature_activation(const SaeParams& sae, std::span<const double> h, std::size_t f);

struct SaeTrainResult {
  SaeParams sae;
  std::vector<double> losses;
};

// Minimizes MSE(ĥ, h) + l1_coeff × mean-over-batch L1(a) with Adam; decoder
// rows are renormalized to unit norm after every step.
SaeTrainResult train_sae(const std::vector<RealVector>& states, const SaeTrainConfig& cfg,
                         std::uint32_t layer, std::size_t d_sae);

// Loss of the SAE objective on a batch, with optional analytic gradients
// (same order as the SaeParams fields: w_enc, b_enc, w_dec, b_dec).
struct SaeGradients {
  RealMatrix w_enc, w_dec;
  RealVector b_enc, b_dec;
};
double sae_loss(const SaeParams& sae, const RealMatrix& batch, double l1_coeff,
                SaeGradients* grads = nullptr);

double reconstruction_mse(const SaeParams& sae, const std::vector<RealVector>& states);
double mean_l0(const SaeParams& sae, const std::vector<RealVector>& states);

struct FeatureRate {
  std::size_t feature = 0;
  double rate = 0.0;
};
// Per-feature fraction of states with a_f > 0, ascending by rate then index.
std::vector<FeatureRate> dead_feature_report(const SaeParams& sae,
                                             const std::vector<RealVector>& states);

// SAE checkpoint: "IGDS", u32 version, u32 layer, u32 d_model, u32 d_sae,
// u8 activation, f32 theta, then the four weight blocks.
std::vector<std::uint8_t> encode_sae(const SaeParams& sae);
SaeParams decode_sae(std::span<const std::uint8_t> bytes);
void save_sae(const SaeParams& sae, const std::filesystem::path& path);
SaeParams load_sae(const std::filesystem::path& path);

// Activation dump: "IGDA", u32 version, u32 layer, u32 d, u64 count, then
// count rows of d f32.
struct ActivationDump {
  std::uint32_t layer = 0;
  std::uint32_t dim = 0;
  std::vector<RealVector> rows;
};
std::vector<std::uint8_t> encode_activation_dump(const ActivationDump& dump);
ActivationDump decode_activation_dump(std::span<const std::uint8_t> bytes);
void save_activation_dump(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump load_activation_dump(const std::filesystem::path& path);

}  // namespace igds
