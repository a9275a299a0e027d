// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision arithmetic used by the toy transformer and the SAE.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "igds/error.hpp"

namespace igds {

using TokenId = std::int32_t;

class RealVector {
 public:
  RealVector() = default;
  explicit RealVector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  explicit RealVector(std::vector<double> data) : data_(std::move(data)) {}
  RealVector(std::initializer_list<double> init) : data_(init) {}

  std::size_t dim() const noexcept { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool operator==(const RealVector&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major matrix.
class RealMatrix {
 public:
  RealMatrix() = default;
  RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  RealMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static RealMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::string shape_string() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  RealVector row_vector(std::size_t r) const;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const noexcept;
  RealMatrix transposed() const;

  bool operator==(const RealMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b);
// a · bᵀ
RealMatrix matmul_bt(const RealMatrix& a, const RealMatrix& b);
// aᵀ · b
RealMatrix matmul_at(const RealMatrix& a, const RealMatrix& b);
// out += aᵀ · b, shapes checked.
void matmul_at_accumulate(const RealMatrix& a, const RealMatrix& b, RealMatrix& out);

RealVector relu(const RealVector& x);
RealVector jumprelu(const RealVector& x, double theta);

// Row-wise softmax of a logits block.
RealMatrix softmax_rows(const RealMatrix& logits);
void log_softmax_row(std::span<const double> logits, std::span<double> out);

// Mean over rows of -log softmax(logits_t)[target_t].
double cross_entropy(const RealMatrix& logits, std::span<const TokenId> targets);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

// Scalar function of the current parameter values. When `with_grad` is set
// it must also write the analytic gradient into the gradient buffers that
// were passed to grad_check alongside the values.
using ScalarObjective = std::function<double(bool with_grad)>;

struct GradCheckTarget {
  std::span<double> values;
  std::span<const double> grads;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

// Compares analytic gradients against centered finite differences.
// Relative error is |analytic - fd| / (|analytic| + |fd| + 1e-12).
GradCheckReport grad_check(const ScalarObjective& f,
                           std::span<const GradCheckTarget> params, double epsilon);

// Deterministic generator. Distributions are implemented here rather than
// through <random> so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();
  std::size_t below(std::size_t n);  // uniform in [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable seed derivation for sub-streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Rounds half away from zero, as used for selection and pool sizes.
std::size_t round_half_away(double x);

}  // namespace igds
