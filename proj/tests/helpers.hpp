// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent scalar-loop oracles for the test suites.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "igds/numcore.hpp"
#include "igds/sae.hpp"
#include "igds/toymodel.hpp"

namespace igds::test {

inline RealMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  RealMatrix m(r, c);
  for (auto& v : m.flat()) v = scale * rng.normal();
  return m;
}

inline RealVector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  RealVector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

// max(0 | theta gate, W_encᵀ h + b_enc)[f], one scalar loop per feature.
inline std::vector<double> oracle_encode(const SaeParams& sae, const std::vector<double>& h) {
  std::vector<double> out(sae.d_sae());
  for (std::size_t f = 0; f < sae.d_sae(); ++f) {
    double pre = sae.b_enc[f];
    for (std::size_t i = 0; i < sae.d_model(); ++i) pre += sae.w_enc(i, f) * h[i];
    const double cut = sae.activation == SaeActivation::jumprelu ? sae.theta : 0.0;
    out[f] = pre > cut ? pre : 0.0;
  }
  return out;
}

inline std::vector<double> oracle_decode(const SaeParams& sae, const std::vector<double>& a) {
  std::vector<double> out(sae.d_model());
  for (std::size_t i = 0; i < sae.d_model(); ++i) {
    double s = sae.b_dec[i];
    for (std::size_t f = 0; f < sae.d_sae(); ++f) s += a[f] * sae.w_dec(f, i);
    out[i] = s;
  }
  return out;
}

inline SaeParams random_sae(std::uint32_t layer, std::size_t d_model, std::size_t d_sae,
                            SaeActivation act, double theta, std::uint64_t seed) {
  SaeParams s = SaeParams::initialize(layer, d_model, d_sae, act, theta, seed);
  Rng rng(seed ^ 0x5aeULL);
  s.w_enc = random_matrix(d_model, d_sae, rng, 0.5);
  for (std::size_t f = 0; f < d_sae; ++f) s.b_enc[f] = 0.1 * rng.normal();
  for (std::size_t i = 0; i < d_model; ++i) s.b_dec[i] = 0.1 * rng.normal();
  return s;
}

inline ModelConfig tiny_model_config(std::uint32_t seed = 3) {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 16;
  c.seed = seed;
  return c;
}

// Every transformer parameter entry except the key bias. Softmax is shift
// invariant, so the key bias has an identically zero gradient and its finite
// difference is pure roundoff, which the relative-error measure maps to ~1.
inline std::vector<GradCheckTarget> transformer_targets(ToyModel& m) {
  std::vector<GradCheckTarget> targets;
  for (auto& b : m.params.blocks) {
    if (!b.name.ends_with(".b_qkv")) {
      targets.push_back({b.value.flat(), b.grad.flat()});
      continue;
    }
    const std::size_t d = b.value.cols() / 3;
    targets.push_back({b.value.flat().subspan(0, d), b.grad.flat().subspan(0, d)});
    targets.push_back({b.value.flat().subspan(2 * d), b.grad.flat().subspan(2 * d)});
  }
  return targets;
}

inline std::vector<TokenId> random_tokens(std::size_t n, std::uint32_t vocab, Rng& rng) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
  return t;
}

// Greedy generation with alpha * v added after `layer` at rows >= t*, computed
// by tapping the residual, editing it outside the model and finishing the
// forward pass through forward_from_layer.
inline std::vector<TokenId> oracle_amplified_generation(const ToyModel& model,
                                                        std::vector<TokenId> seq,
                                                        std::size_t max_new, std::size_t layer,
                                                        std::size_t tstar,
                                                        const std::vector<double>& v,
                                                        double alpha) {
  std::vector<TokenId> out;
  const std::vector<std::size_t> taps{layer};
  for (std::size_t step = 0; step < max_new; ++step) {
    const auto r = forward_with_taps(model, seq, taps);
    RealMatrix resid(seq.size(), model.config.d_model);
    for (const auto& t : r.taps) {
      for (std::size_t i = 0; i < model.config.d_model; ++i) resid(t.position, i) = t.state[i];
    }
    for (std::size_t p = tstar; p < seq.size(); ++p)
      for (std::size_t i = 0; i < v.size(); ++i) resid(p, i) += alpha * v[i];
    const RealMatrix logits = forward_from_layer(model, resid, layer);
    const auto last = logits.row(logits.rows() - 1);
    std::size_t best = 0;
    for (std::size_t k = 1; k < last.size(); ++k)
      if (last[k] > last[best]) best = k;
    out.push_back(static_cast<TokenId>(best));
    seq.push_back(static_cast<TokenId>(best));
  }
  return out;
}

// Influence vector a_f(h) * W_dec row f from scalar loops.
inline std::vector<double> oracle_influence(const SaeParams& sae, const std::vector<double>& h,
                                            std::size_t f) {
  const double a = oracle_encode(sae, h)[f];
  std::vector<double> v(sae.d_model());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * sae.w_dec(f, i);
  return v;
}

}  // namespace igds::test
