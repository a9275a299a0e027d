// SPDX-License-Identifier: Apache-2.0

#include "igds/sae.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "binio.hpp"
#include "igds/tape.hpp"

namespace igds {

namespace {

constexpr std::uint32_t kSaeFormatVersion = 1;
constexpr std::uint32_t kDumpFormatVersion = 1;

RealMatrix as_row(const RealVector& v) { return RealMatrix(1, v.dim(), v.values()); }

RealVector from_row(const RealMatrix& m) {
  return RealVector(std::vector<double>(m.flat().begin(), m.flat().end()));
}

void normalize_decoder_rows(RealMatrix& w_dec) {
  for (std::size_t f = 0; f < w_dec.rows(); ++f) {
    auto row = w_dec.row(f);
    const double n = l2_norm(row);
    if (n > 0.0) {
      for (double& v : row) v /= n;
    }
  }
}

struct SaeParameters {
  Parameter w_enc, b_enc, w_dec, b_dec;

  explicit SaeParameters(const SaeParams& s)
      : w_enc("w_enc", s.w_enc),
        b_enc("b_enc", as_row(s.b_enc)),
        w_dec("w_dec", s.w_dec),
        b_dec("b_dec", as_row(s.b_dec)) {}

  std::vector<Parameter*> all() { return {&w_enc, &b_enc, &w_dec, &b_dec}; }
};

double tape_loss(SaeParameters& p, const SaeParams& shape, const RealMatrix& batch,
                 double l1_coeff, bool with_grad) {
  Tape tape(with_grad);
  Var x = tape.reference(batch);
  Var pre = tape.add_row_bias(tape.matmul(x, tape.param(p.w_enc)), tape.param(p.b_enc));
  Var a = shape.activation == SaeActivation::relu ? tape.relu(pre)
                                                  : tape.jumprelu(pre, shape.theta);
  Var recon = tape.add_row_bias(tape.matmul(a, tape.param(p.w_dec)), tape.param(p.b_dec));
  Var loss = tape.combine(tape.mse(recon, x), 1.0, tape.l1_rows_mean(a), l1_coeff);
  if (with_grad) tape.backward(loss);
  return tape.scalar(loss);
}

void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) fail(ErrorKind::dimension, fmt::format("{}: got {}, expected {}", what, got, want));
}

}  // namespace

void SaeParams::validate() const {
  const std::size_t d = d_model(), n = d_sae();
  if (d == 0 || n < d) {
    fail(ErrorKind::parameter, fmt::format("SAE needs 0 < d_model <= d_sae, got {} and {}", d, n));
  }
  require_dim(b_enc.dim(), n, "b_enc");
  require_dim(w_dec.rows(), n, "W_dec rows");
  require_dim(w_dec.cols(), d, "W_dec cols");
  require_dim(b_dec.dim(), d, "b_dec");
  if (!(theta >= 0.0)) fail(ErrorKind::parameter, "SAE theta must be >= 0");
}

SaeParams SaeParams::initialize(std::uint32_t layer, std::size_t d_model, std::size_t d_sae,
                                SaeActivation activation, double theta, std::uint64_t seed) {
  SaeParams s;
  s.layer = layer;
  s.activation = activation;
  s.theta = theta;
  s.w_dec = RealMatrix(d_sae, d_model);
  Rng rng(derive_seed(seed, 0x736165));
  for (double& v : s.w_dec.flat()) v = rng.normal();
  normalize_decoder_rows(s.w_dec);
  s.w_enc = s.w_dec.transposed();
  s.b_enc = RealVector(d_sae);
  s.b_dec = RealVector(d_model);
  s.validate();
  return s;
}

double feature_activation(const SaeParams& sae, std::span<const double> h, std::size_t f) {
  require_dim(h.size(), sae.d_model(), "encode input");
  if (f >= sae.d_sae()) {
    fail(ErrorKind::index, fmt::format("feature {} >= d_sae {}", f, sae.d_sae()));
  }
  double pre = sae.b_enc[f];
  for (std::size_t i = 0; i < h.size(); ++i) pre += sae.w_enc(i, f) * h[i];
  const double gate = sae.activation == SaeActivation::relu ? 0.0 : sae.theta;
  return pre > gate ? pre : 0.0;
}

RealVector encode(const SaeParams& sae, std::span<const double> h) {
  require_dim(h.size(), sae.d_model(), "encode input");
  const std::size_t n = sae.d_sae();
  RealVector pre(sae.b_enc.values());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double hv = h[i];
    const double* w = sae.w_enc.data() + i * n;
    for (std::size_t f = 0; f < n; ++f) pre[f] += w[f] * hv;
  }
  return sae.activation == SaeActivation::relu ? relu(pre) : jumprelu(pre, sae.theta);
}

RealVector decode(const SaeParams& sae, std::span<const double> a) {
  require_dim(a.size(), sae.d_sae(), "decode input");
  const std::size_t d = sae.d_model();
  RealVector out(sae.b_dec.values());
  for (std::size_t f = 0; f < a.size(); ++f) {
    if (a[f] == 0.0) continue;
    const double* w = sae.w_dec.data() + f * d;
    for (std::size_t c = 0; c < d; ++c) out[c] += a[f] * w[c];
  }
  return out;
}

RealVector feature_vector(const SaeParams& sae, std::span<const double> h, std::size_t f) {
  if (f >= sae.d_sae()) {
    fail(ErrorKind::index, fmt::format("feature {} >= d_sae {}", f, sae.d_sae()));
  }
  const double a = encode(sae, h)[f];
  RealVector v(sae.d_model());
  auto row = sae.w_dec.row(f);
  for (std::size_t c = 0; c < v.dim(); ++c) v[c] = a * row[c];
  return v;
}

double sae_loss(const SaeParams& sae, const RealMatrix& batch, double l1_coeff,
                SaeGradients* grads) {
  require_dim(batch.cols(), sae.d_model(), "SAE batch width");
  SaeParameters p(sae);
  const double loss = tape_loss(p, sae, batch, l1_coeff, grads != nullptr);
  if (grads != nullptr) {
    grads->w_enc = p.w_enc.grad;
    grads->b_enc = from_row(p.b_enc.grad);
    grads->w_dec = p.w_dec.grad;
    grads->b_dec = from_row(p.b_dec.grad);
  }
  return loss;
}

SaeTrainResult train_sae(const std::vector<RealVector>& states, const SaeTrainConfig& cfg,
                         std::uint32_t layer, std::size_t d_sae) {
  if (states.empty()) fail(ErrorKind::input, "empty activation stream");
  if (cfg.batch_size == 0) fail(ErrorKind::parameter, "SAE batch_size must be >= 1");
  if (states.size() < cfg.batch_size) {
    fail(ErrorKind::input, fmt::format("activation stream of {} is smaller than batch_size {}",
                                       states.size(), cfg.batch_size));
  }
  if (!(cfg.l1_coeff >= 0.0)) fail(ErrorKind::parameter, "l1_coeff must be >= 0");
  const std::size_t d = states.front().dim();
  SaeTrainResult result{
      SaeParams::initialize(layer, d, d_sae, cfg.activation, cfg.theta, cfg.seed), {}};
  if (cfg.steps == 0) return result;

  SaeParameters p(result.sae);
  const auto params = p.all();
  std::vector<RealMatrix> m1, m2;
  for (auto* q : params) {
    m1.emplace_back(q->value.rows(), q->value.cols());
    m2.emplace_back(q->value.rows(), q->value.cols());
  }
  Rng rng(derive_seed(cfg.seed, 0x62617463));
  std::vector<std::size_t> order(states.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;
  RealMatrix batch(cfg.batch_size, d);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (std::size_t r = 0; r < cfg.batch_size; ++r) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const RealVector& s = states[order[cursor++]];
      require_dim(s.dim(), d, "activation state");
      std::copy(s.values().begin(), s.values().end(), batch.row(r).begin());
    }
    for (auto* q : params) q->zero_grad();
    result.losses.push_back(tape_loss(p, result.sae, batch, cfg.l1_coeff, true));
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& q = *params[i];
      for (std::size_t e = 0; e < q.value.size(); ++e) {
        const double g = q.grad.data()[e];
        double& mm = m1[i].data()[e];
        double& vv = m2[i].data()[e];
        mm = b1 * mm + (1.0 - b1) * g;
        vv = b2 * vv + (1.0 - b2) * g * g;
        q.value.data()[e] -= cfg.lr * (mm / c1) / (std::sqrt(vv / c2) + eps);
      }
    }
    normalize_decoder_rows(p.w_dec.value);
  }
  result.sae.w_enc = p.w_enc.value;
  result.sae.b_enc = from_row(p.b_enc.value);
  result.sae.w_dec = p.w_dec.value;
  result.sae.b_dec = from_row(p.b_dec.value);
  return result;
}

double reconstruction_mse(const SaeParams& sae, const std::vector<RealVector>& states) {
  if (states.empty()) return 0.0;
  double s = 0.0;
  for (const auto& h : states) {
    const RealVector r = decode(sae, encode(sae, h.span()).span());
    for (std::size_t i = 0; i < h.dim(); ++i) s += (r[i] - h[i]) * (r[i] - h[i]);
  }
  return s / static_cast<double>(states.size() * sae.d_model());
}

double mean_l0(const SaeParams& sae, const std::vector<RealVector>& states) {
  if (states.empty()) return 0.0;
  double total = 0.0;
  for (const auto& h : states) {
    const RealVector a = encode(sae, h.span());
    total += static_cast<double>(
        std::count_if(a.values().begin(), a.values().end(), [](double v) { return v > 0.0; }));
  }
  return total / static_cast<double>(states.size());
}

std::vector<FeatureRate> dead_feature_report(const SaeParams& sae,
                                             const std::vector<RealVector>& states) {
  if (states.empty()) fail(ErrorKind::input, "dead_feature_report needs a nonempty batch");
  std::vector<std::size_t> counts(sae.d_sae(), 0);
  for (const auto& h : states) {
    const RealVector a = encode(sae, h.span());
    for (std::size_t f = 0; f < a.dim(); ++f) counts[f] += a[f] > 0.0 ? 1 : 0;
  }
  std::vector<FeatureRate> out(sae.d_sae());
  for (std::size_t f = 0; f < out.size(); ++f) {
    out[f] = {f, static_cast<double>(counts[f]) / static_cast<double>(states.size())};
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const FeatureRate& a, const FeatureRate& b) { return a.rate < b.rate; });
  return out;
}

std::vector<std::uint8_t> encode_sae(const SaeParams& sae) {
  sae.validate();
  binio::Writer w;
  w.bytes("IGDS");
  w.u32(kSaeFormatVersion);
  w.u32(sae.layer);
  w.u32(static_cast<std::uint32_t>(sae.d_model()));
  w.u32(static_cast<std::uint32_t>(sae.d_sae()));
  w.u8(static_cast<std::uint8_t>(sae.activation));
  w.f32(static_cast<float>(sae.theta));
  w.block("w_enc", sae.w_enc);
  w.block("b_enc", as_row(sae.b_enc));
  w.block("w_dec", sae.w_dec);
  w.block("b_dec", as_row(sae.b_dec));
  return std::move(w.buffer());
}

SaeParams decode_sae(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  if (r.bytes(4) != "IGDS") fail(ErrorKind::format, "SAE checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kSaeFormatVersion) {
    fail(ErrorKind::format, fmt::format("SAE checkpoint: unsupported version {}", version));
  }
  SaeParams s;
  s.layer = r.u32();
  const std::size_t d = r.u32(), n = r.u32();
  const std::uint8_t act = r.u8();
  if (act > 1) fail(ErrorKind::format, fmt::format("SAE checkpoint: activation kind {}", act));
  s.activation = static_cast<SaeActivation>(act);
  s.theta = static_cast<double>(r.f32());
  auto expect = [&](const char* name, std::size_t rows, std::size_t cols) {
    auto b = r.block();
    if (b.name != name || b.value.rows() != rows || b.value.cols() != cols) {
      fail(ErrorKind::format, fmt::format("SAE checkpoint: unexpected block {} ({})", b.name,
                                          b.value.shape_string()));
    }
    return std::move(b.value);
  };
  s.w_enc = expect("w_enc", d, n);
  s.b_enc = from_row(expect("b_enc", 1, n));
  s.w_dec = expect("w_dec", n, d);
  s.b_dec = from_row(expect("b_dec", 1, d));
  if (!r.at_end()) fail(ErrorKind::format, "SAE checkpoint: trailing bytes");
  s.validate();
  return s;
}

void save_sae(const SaeParams& sae, const std::filesystem::path& path) {
  binio::write_file_atomic(path, encode_sae(sae));
}

SaeParams load_sae(const std::filesystem::path& path) { return decode_sae(binio::read_file(path)); }

std::vector<std::uint8_t> encode_activation_dump(const ActivationDump& dump) {
  binio::Writer w;
  w.bytes("IGDA");
  w.u32(kDumpFormatVersion);
  w.u32(dump.layer);
  w.u32(dump.dim);
  w.u64(dump.rows.size());
  for (const auto& row : dump.rows) {
    require_dim(row.dim(), dump.dim, "activation dump row");
    for (double v : row.values()) w.f32(static_cast<float>(v));
  }
  return std::move(w.buffer());
}

ActivationDump decode_activation_dump(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  if (r.bytes(4) != "IGDA") fail(ErrorKind::format, "activation dump: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kDumpFormatVersion) {
    fail(ErrorKind::format, fmt::format("activation dump: unsupported version {}", version));
  }
  ActivationDump d;
  d.layer = r.u32();
  d.dim = r.u32();
  const std::uint64_t count = r.u64();
  d.rows.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::vector<double> v(d.dim);
    for (double& x : v) x = static_cast<double>(r.f32());
    d.rows.emplace_back(std::move(v));
  }
  if (!r.at_end()) fail(ErrorKind::format, "activation dump: trailing bytes");
  return d;
}

void save_activation_dump(const ActivationDump& dump, const std::filesystem::path& path) {
  binio::write_file_atomic(path, encode_activation_dump(dump));
}

ActivationDump load_activation_dump(const std::filesystem::path& path) {
  return decode_activation_dump(binio::read_file(path));
}

}  // namespace igds
