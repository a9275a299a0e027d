// SPDX-License-Identifier: Apache-2.0

#include "igds/numcore.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace igds {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::index: return "index";
    case ErrorKind::input: return "input";
    case ErrorKind::length: return "length";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::evaluation: return "evaluation";
    case ErrorKind::dependency: return "dependency";
    case ErrorKind::staleness: return "staleness";
    case ErrorKind::comparison: return "comparison";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, fmt::format("{} error: {}", to_string(kind), what));
}

RealMatrix::RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    fail(ErrorKind::dimension,
         fmt::format("{} values cannot fill a {}x{} matrix", data_.size(), rows, cols));
  }
}

RealMatrix::RealMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) fail(ErrorKind::dimension, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

RealMatrix RealMatrix::identity(std::size_t n) {
  RealMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string RealMatrix::shape_string() const { return fmt::format("{}x{}", rows_, cols_); }

RealVector RealMatrix::row_vector(std::size_t r) const {
  auto s = row(r);
  return RealVector(std::vector<double>(s.begin(), s.end()));
}

void RealMatrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool RealMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

RealMatrix RealMatrix::transposed() const {
  RealMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

namespace {

void require_finite(const RealMatrix& m, const char* op) {
  if (!m.all_finite()) fail(ErrorKind::evaluation, fmt::format("{} produced a non-finite value", op));
}

}  // namespace

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const RealMatrix& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

MutMap view(RealMatrix& m) {
  return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

}  // namespace

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::dimension,
         fmt::format("matmul of {} by {}", a.shape_string(), b.shape_string()));
  }
  RealMatrix out(a.rows(), b.cols());
  view(out).noalias() = view(a) * view(b);
  require_finite(out, "matmul");
  return out;
}

RealMatrix matmul_bt(const RealMatrix& a, const RealMatrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorKind::dimension,
         fmt::format("matmul_bt of {} by transposed {}", a.shape_string(), b.shape_string()));
  }
  RealMatrix out(a.rows(), b.rows());
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

RealMatrix matmul_at(const RealMatrix& a, const RealMatrix& b) {
  RealMatrix out(a.cols(), b.cols());
  matmul_at_accumulate(a, b, out);
  return out;
}

void matmul_at_accumulate(const RealMatrix& a, const RealMatrix& b, RealMatrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    fail(ErrorKind::dimension,
         fmt::format("matmul_at of transposed {} by {} into {}", a.shape_string(),
                     b.shape_string(), out.shape_string()));
  }
  view(out).noalias() += view(a).transpose() * view(b);
}

RealVector relu(const RealVector& x) {
  RealVector out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

RealVector jumprelu(const RealVector& x, double theta) {
  if (!(theta >= 0.0)) fail(ErrorKind::parameter, fmt::format("jumprelu theta {} < 0", theta));
  RealVector out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = x[i] > theta ? x[i] : 0.0;
  return out;
}

void log_softmax_row(std::span<const double> logits, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

RealMatrix softmax_rows(const RealMatrix& logits) {
  RealMatrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    log_softmax_row(logits.row(r), out.row(r));
    for (double& v : out.row(r)) v = std::exp(v);
  }
  return out;
}

double cross_entropy(const RealMatrix& logits, std::span<const TokenId> targets) {
  if (targets.size() != logits.rows()) {
    fail(ErrorKind::dimension, fmt::format("cross_entropy with {} targets for {} logits rows",
                                           targets.size(), logits.rows()));
  }
  if (targets.empty()) return 0.0;
  std::vector<double> lp(logits.cols());
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const TokenId y = targets[t];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      fail(ErrorKind::index, fmt::format("target id {} outside vocabulary of {}", y, logits.cols()));
    }
    log_softmax_row(logits.row(t), lp);
    total -= lp[static_cast<std::size_t>(y)];
  }
  return std::max(0.0, total / static_cast<double>(targets.size()));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::dimension, "dot of unequal lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

GradCheckReport grad_check(const ScalarObjective& f, std::span<const GradCheckTarget> params,
                           double epsilon) {
  if (!(epsilon > 0.0)) fail(ErrorKind::parameter, "grad_check epsilon must be positive");
  const double base = f(true);
  if (!std::isfinite(base)) fail(ErrorKind::evaluation, "objective is not finite");
  // The analytic gradient is copied before probing since f(false) may reuse buffers.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.emplace_back(p.grads.begin(), p.grads.end());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].values;
    for (std::size_t e = 0; e < values.size(); ++e) {
      const double orig = values[e];
      values[e] = orig + epsilon;
      const double up = f(false);
      values[e] = orig - epsilon;
      const double down = f(false);
      values[e] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        fail(ErrorKind::evaluation, "objective is not finite at a perturbed point");
      }
      const double fd = (up - down) / (2.0 * epsilon);
      const double an = analytic[pi][e];
      const double rel = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
      ++report.entries_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_entry = e;
        report.worst_analytic = an;
        report.worst_numeric = fd;
      }
    }
  }
  return report;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

// xoshiro256**
std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double th = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(th);
  has_spare_ = true;
  return r * std::cos(th);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) fail(ErrorKind::parameter, "Rng::below(0)");
  // Lemire-free rejection keeps the stream simple and unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<std::size_t>(v % n);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t x = base ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  return splitmix64(x);
}

std::size_t round_half_away(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

}  // namespace igds
