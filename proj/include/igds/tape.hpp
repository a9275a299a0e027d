// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over whole-matrix primitives. A Tape records
// one forward computation; backward() walks it in reverse and accumulates
// gradients into the Parameters that were registered as leaves.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "igds/numcore.hpp"

namespace igds {

struct Parameter {
  std::string name;
  RealMatrix value;
  RealMatrix grad;

  Parameter() = default;
  Parameter(std::string n, RealMatrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Tape {
 public:
  // With record_grad = false no backward state is kept and backward() throws.
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaves. `constant` copies; `reference` and `param` refer to storage that
  // must outlive the tape.
  Var constant(RealMatrix value);
  Var reference(const RealMatrix& value);
  Var param(Parameter& p);

  Var gather_rows(Var table, std::span<const TokenId> ids);
  Var add(Var a, Var b);
  Var matmul(Var a, Var b);
  Var add_row_bias(Var a, Var bias);
  Var layernorm(Var x, Var gain, Var bias);
  Var gelu(Var x);
  Var relu(Var x);
  Var jumprelu(Var x, double theta);
  // Causal multi-head attention over a fused [T x 3d] q|k|v block.
  Var causal_attention(Var qkv, std::size_t n_heads);
  // x[r] += scale * vec for r in [row_begin, row_end). vec is a constant.
  Var add_vector_to_rows(Var x, std::span<const double> vec, double scale,
                         std::size_t row_begin, std::size_t row_end);
  // Mean over rows with weight > 0 of weight * -log softmax(logits_r)[target_r]
  // divided by the total weight. Returns 1x1.
  Var cross_entropy(Var logits, std::span<const TokenId> targets,
                    std::span<const double> weights);
  // Mean of squared entries of (a - b). Returns 1x1.
  Var mse(Var a, Var b);
  // Mean over rows of the L1 norm of each row. Returns 1x1.
  Var l1_rows_mean(Var a);
  // Sum of w ⊙ a with constant weights. Returns 1x1.
  Var weighted_sum(Var a, const RealMatrix& weights);
  // alpha * a + beta * b for 1x1 scalars.
  Var combine(Var a, double alpha, Var b, double beta);

  const RealMatrix& value(Var v) const;
  double scalar(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates into every reachable Parameter.
  void backward(Var loss);
  // Recomputes every non-leaf node from its recorded inputs.
  void replay();

 private:
  enum class Op {
    constant, reference, param, gather_rows, add, matmul, add_row_bias, layernorm, gelu,
    relu, jumprelu, causal_attention, add_vector_to_rows, cross_entropy, mse, l1_rows_mean,
    weighted_sum, combine,
  };

  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    RealMatrix value;
    const RealMatrix* external = nullptr;
    Parameter* param = nullptr;
    RealMatrix grad;
    // Op payloads.
    std::vector<TokenId> ids;
    std::vector<double> reals;
    RealMatrix cache;  // layernorm: [T x 2] (mean, rstd); attention: probabilities
    double a = 0.0, b = 0.0;
    std::size_t n = 0, m = 0, k = 0;
  };

  Var push(Node node);
  const RealMatrix& val(std::size_t id) const;
  void compute(Node& node);
  void propagate(std::size_t id);
  RealMatrix& grad_of(std::size_t id);

  bool record_grad_;
  std::vector<Node> nodes_;
  std::vector<char> needs_;
};

}  // namespace igds
