// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "helpers.hpp"
#include "igds/sae.hpp"

using namespace igds;
using igds::test::oracle_decode;
using igds::test::oracle_encode;
using igds::test::random_sae;
using igds::test::rel_diff;

namespace {

// Identity-embedding SAE: W_enc = [I | 0], W_dec = [I; 0] with zero biases.
SaeParams padded_identity(std::size_t d, std::size_t n) {
  SaeParams s = SaeParams::initialize(0, d, n, SaeActivation::relu, 0.0, 1);
  s.w_enc.fill(0.0);
  s.w_dec.fill(0.0);
  for (std::size_t i = 0; i < d; ++i) {
    s.w_enc(i, i) = 1.0;
    s.w_dec(i, i) = 1.0;
  }
  return s;
}

std::vector<RealVector> gaussian_states(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RealVector> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(igds::test::random_vector(d, rng));
  return out;
}

}  // namespace

TEST_CASE("encode examples") {
  const SaeParams id = padded_identity(3, 6);
  const RealVector h{0.5, 1.0, 2.0};
  CHECK(encode(id, h.span()) == RealVector{0.5, 1.0, 2.0, 0, 0, 0});
  SaeParams dead = id;
  for (std::size_t f = 0; f < 6; ++f) dead.b_enc[f] = -10.0;
  CHECK(encode(dead, h.span()) == RealVector(6, 0.0));
  const SaeParams r = random_sae(0, 4, 8, SaeActivation::relu, 0.0, 3);
  const std::vector<double> x{1, -1, 0.5, 2};
  const RealVector got = encode(r, x);
  const auto want = oracle_encode(r, x);
  for (std::size_t f = 0; f < 8; ++f) CHECK(got[f] == want[f]);
  CHECK_THROWS_AS(encode(r, std::vector<double>{1, 2}), Error);
}

TEST_CASE("decode examples") {
  const SaeParams r = random_sae(0, 4, 8, SaeActivation::relu, 0.0, 4);
  CHECK(decode(r, RealVector(8).span()) == r.b_dec);
  RealVector onehot(8);
  onehot[5] = 1.0;
  const RealVector d = decode(r, onehot.span());
  for (std::size_t i = 0; i < 4; ++i) CHECK(d[i] == doctest::Approx(r.w_dec(5, i) + r.b_dec[i]).epsilon(1e-15));
  CHECK_THROWS_AS(decode(r, RealVector(3).span()), Error);
}

TEST_CASE("feature_vector examples") {
  SaeParams s = padded_identity(4, 4);
  s.w_dec.fill(0.0);
  const std::vector<double> row{0.1, -0.2, 0, 0.4};
  for (std::size_t i = 0; i < 4; ++i) s.w_dec(2, i) = row[i];
  const std::vector<double> h{0, 0, 2.5, 0};
  const RealVector v = feature_vector(s, h, 2);
  const std::vector<double> want{0.25, -0.5, 0, 1.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(v[i] == doctest::Approx(want[i]).epsilon(1e-15));
  const std::vector<double> unit{0, 1, 0, 0};
  const RealVector u = feature_vector(s, unit, 1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(u[i] == s.w_dec(1, i));
  const std::vector<double> off{0, -1, 0, 0};
  CHECK(feature_vector(s, off, 1) == RealVector(4, 0.0));
  CHECK_THROWS_AS(feature_vector(s, h, 4), Error);
}

TEST_CASE("encode, decode and feature_vector match scalar oracles on random instances") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(6), n = d + rng.below(10);
    const auto act = trial % 2 ? SaeActivation::jumprelu : SaeActivation::relu;
    const SaeParams s = random_sae(0, d, n, act, 0.03, 1000 + trial);
    std::vector<double> h(d);
    for (auto& x : h) x = rng.normal();
    const RealVector a = encode(s, h);
    const auto ao = oracle_encode(s, h);
    for (std::size_t f = 0; f < n; ++f) {
      CHECK(a[f] >= 0.0);
      CHECK(rel_diff(a[f], ao[f]) <= 1e-10);
      CHECK(feature_activation(s, h, f) == a[f]);
    }
    const RealVector r = decode(s, a.span());
    const auto ro = oracle_decode(s, ao);
    for (std::size_t i = 0; i < d; ++i) CHECK(rel_diff(r[i], ro[i]) <= 1e-10);
    const std::size_t f = rng.below(n);
    const RealVector v = feature_vector(s, h, f);
    for (std::size_t i = 0; i < d; ++i) CHECK(v[i] == a[f] * s.w_dec(f, i));
  }
}

TEST_CASE("encode sign pattern is invariant to positive rescaling of encoder columns") {
  Rng rng(6);
  const SaeParams s = random_sae(0, 5, 10, SaeActivation::relu, 0.0, 6);
  SaeParams t = s;
  for (std::size_t f = 0; f < 10; ++f) {
    const double c = 0.1 + 5.0 * rng.uniform();
    for (std::size_t i = 0; i < 5; ++i) t.w_enc(i, f) *= c;
    t.b_enc[f] *= c;
  }
  for (int k = 0; k < 50; ++k) {
    const RealVector h = igds::test::random_vector(5, rng);
    const RealVector a = encode(s, h.span()), b = encode(t, h.span());
    for (std::size_t f = 0; f < 10; ++f) CHECK((a[f] > 0) == (b[f] > 0));
  }
}

TEST_CASE("grad_check over the SAE loss") {
  Rng rng(77);
  for (int trial = 0; trial < 4; ++trial) {
    const auto act = trial % 2 ? SaeActivation::jumprelu : SaeActivation::relu;
    SaeParams s = random_sae(0, 16, 32, act, 0.03, 50 + trial);
    const RealMatrix batch = igds::test::random_matrix(8, 16, rng);
    SaeGradients g;
    sae_loss(s, batch, 1e-2, &g);
    // grad_check holds spans into g, so fresh gradients are copied in place.
    auto f = [&](bool with_grad) {
      if (!with_grad) return sae_loss(s, batch, 1e-2, nullptr);
      SaeGradients fresh;
      const double loss = sae_loss(s, batch, 1e-2, &fresh);
      std::ranges::copy(fresh.w_enc.flat(), g.w_enc.flat().begin());
      std::ranges::copy(fresh.b_enc.span(), g.b_enc.span().begin());
      std::ranges::copy(fresh.w_dec.flat(), g.w_dec.flat().begin());
      std::ranges::copy(fresh.b_dec.span(), g.b_dec.span().begin());
      return loss;
    };
    const std::vector<GradCheckTarget> targets{{s.w_enc.flat(), g.w_enc.flat()},
                                               {s.b_enc.span(), g.b_enc.span()},
                                               {s.w_dec.flat(), g.w_dec.flat()},
                                               {s.b_dec.span(), g.b_dec.span()}};
    CHECK(grad_check(f, targets, 1e-5).max_rel_error < 1e-4);
  }
}

TEST_CASE("training: no-op, determinism, unit decoder rows, descent") {
  const auto states = gaussian_states(256, 8, 1);
  SaeTrainConfig cfg;
  cfg.steps = 0;
  cfg.seed = 2;
  const auto none = train_sae(states, cfg, 0, 16);
  const SaeParams init = SaeParams::initialize(0, 8, 16, cfg.activation, cfg.theta, cfg.seed);
  CHECK(none.sae.w_enc == init.w_enc);
  CHECK(none.sae.w_dec == init.w_dec);
  CHECK(none.losses.empty());
  CHECK_THROWS_AS(train_sae({}, cfg, 0, 16), Error);

  cfg.steps = 100;
  cfg.batch_size = 32;
  cfg.lr = 1e-2;
  const auto run = train_sae(states, cfg, 0, 16);
  const auto again = train_sae(states, cfg, 0, 16);
  CHECK(run.losses == again.losses);
  for (std::size_t f = 0; f < 16; ++f) CHECK(std::abs(l2_norm(run.sae.w_dec.row(f)) - 1.0) < 1e-6);

  // Reconstruction error every 10 steps over the first 100, at most one rise.
  std::vector<double> mse;
  for (std::size_t steps = 0; steps <= 100; steps += 10) {
    SaeTrainConfig c = cfg;
    c.steps = steps;
    mse.push_back(reconstruction_mse(train_sae(states, c, 0, 16).sae, states));
  }
  int rises = 0;
  for (std::size_t i = 1; i < mse.size(); ++i) rises += mse[i] >= mse[i - 1];
  CHECK(rises <= 1);
}

TEST_CASE("training without sparsity reaches near-zero reconstruction error") {
  const auto states = gaussian_states(512, 4, 9);
  SaeTrainConfig cfg;
  cfg.l1_coeff = 0.0;
  cfg.activation = SaeActivation::relu;
  cfg.theta = 0.0;
  cfg.steps = 3000;
  cfg.batch_size = 64;
  cfg.lr = 1e-2;
  const auto run = train_sae(states, cfg, 0, 8);
  CHECK(reconstruction_mse(run.sae, states) < 1e-3);
}

TEST_CASE("mean L0 does not grow with the sparsity coefficient") {
  const auto states = gaussian_states(256, 8, 4);
  const std::vector<double> coeffs{0.0, 1e-2, 1e-1};
  std::vector<double> l0;
  for (double c : coeffs) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      SaeTrainConfig cfg;
      cfg.l1_coeff = c;
      cfg.steps = 300;
      cfg.batch_size = 32;
      cfg.lr = 1e-2;
      cfg.seed = seed;
      total += mean_l0(train_sae(states, cfg, 0, 16).sae, states);
    }
    l0.push_back(total / 3.0);
  }
  CHECK(l0[1] <= l0[0]);
  CHECK(l0[2] <= l0[1]);
}

TEST_CASE("dead feature report") {
  SaeParams zero = padded_identity(3, 6);
  zero.w_enc.fill(0.0);
  const std::vector<RealVector> positive{{1, 2, 3}, {0.5, 0.5, 0.5}};
  for (const auto& r : dead_feature_report(zero, positive)) CHECK(r.rate == 0.0);
  const auto id = dead_feature_report(padded_identity(3, 6), positive);
  REQUIRE(id.size() == 6);
  for (std::size_t i = 3; i < 6; ++i) {
    CHECK(id[i].rate == 1.0);
    CHECK(id[i].feature < 3);
  }
  const SaeParams r = random_sae(0, 4, 8, SaeActivation::relu, 0.0, 12);
  const auto states = gaussian_states(100, 4, 13);
  const auto rep = dead_feature_report(r, states);
  for (std::size_t i = 0; i + 1 < rep.size(); ++i) CHECK(rep[i].rate <= rep[i + 1].rate);
  for (const auto& fr : rep) {
    std::size_t count = 0;
    for (const auto& h : states) {
      const std::vector<double> hv(h.values());
      count += oracle_encode(r, hv)[fr.feature] > 0.0;
    }
    CHECK(fr.rate == static_cast<double>(count) / 100.0);
  }
}

TEST_CASE("SAE checkpoint and activation dump round trips") {
  const SaeParams s = random_sae(2, 4, 8, SaeActivation::jumprelu, 0.03, 20);
  const auto bytes = encode_sae(s);
  const SaeParams back = decode_sae(bytes);
  CHECK(encode_sae(back) == bytes);
  CHECK(back.layer == 2);
  CHECK(back.activation == SaeActivation::jumprelu);
  CHECK(back.theta == doctest::Approx(0.03).epsilon(1e-7));
  auto broken = bytes;
  broken[1] = 'x';
  CHECK_THROWS_AS(decode_sae(broken), Error);

  ActivationDump dump{1, 3, {{1.0, 2.5, -3.0}, {0.25, 0.0, 8.0}}};
  const auto dbytes = encode_activation_dump(dump);
  CHECK(dbytes.size() == 4 + 4 + 4 + 4 + 8 + 2 * 3 * 4);
  const auto dback = decode_activation_dump(dbytes);
  CHECK(dback.rows == dump.rows);
  const auto path = std::filesystem::temp_directory_path() / "igds_test_acts.igda";
  save_activation_dump(dump, path);
  CHECK(load_activation_dump(path).rows == dump.rows);
  std::filesystem::remove(path);
}
