// SPDX-License-Identifier: Apache-2.0

#include "igds/tape.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace igds {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

void require_same_shape(const RealMatrix& a, const RealMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::dimension,
         fmt::format("{} of {} and {}", op, a.shape_string(), b.shape_string()));
  }
}

void add_into(RealMatrix& dst, const RealMatrix& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  compute(nodes_[id]);
  return Var{id};
}

const RealMatrix& Tape::val(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.param != nullptr) return n.param->value;
  if (n.external != nullptr) return *n.external;
  return n.value;
}

const RealMatrix& Tape::value(Var v) const {
  if (v.id >= nodes_.size()) fail(ErrorKind::index, "unknown tape variable");
  return val(v.id);
}

double Tape::scalar(Var v) const {
  const RealMatrix& m = value(v);
  if (m.size() != 1) fail(ErrorKind::dimension, fmt::format("{} is not a scalar", m.shape_string()));
  return m.data()[0];
}

Var Tape::constant(RealMatrix value) {
  Node n{};
  n.op = Op::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::reference(const RealMatrix& value) {
  Node n{};
  n.op = Op::reference;
  n.external = &value;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n{};
  n.op = Op::param;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::gather_rows(Var table, std::span<const TokenId> ids) {
  const RealMatrix& t = value(table);
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= t.rows()) {
      fail(ErrorKind::index, fmt::format("token id {} outside table of {} rows", id, t.rows()));
    }
  }
  Node n{};
  n.op = Op::gather_rows;
  n.inputs = {table.id};
  n.ids.assign(ids.begin(), ids.end());
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Node n{};
  n.op = Op::add;
  n.inputs = {a.id, b.id};
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows()) {
    fail(ErrorKind::dimension, fmt::format("matmul of {} by {}", value(a).shape_string(),
                                           value(b).shape_string()));
  }
  Node n{};
  n.op = Op::matmul;
  n.inputs = {a.id, b.id};
  return push(std::move(n));
}

Var Tape::add_row_bias(Var a, Var bias) {
  const RealMatrix& bm = value(bias);
  if (bm.rows() != 1 || bm.cols() != value(a).cols()) {
    fail(ErrorKind::dimension, fmt::format("bias {} for rows of {}", bm.shape_string(),
                                           value(a).shape_string()));
  }
  Node n{};
  n.op = Op::add_row_bias;
  n.inputs = {a.id, bias.id};
  return push(std::move(n));
}

Var Tape::layernorm(Var x, Var gain, Var bias) {
  const std::size_t d = value(x).cols();
  for (Var p : {gain, bias}) {
    if (value(p).rows() != 1 || value(p).cols() != d) {
      fail(ErrorKind::dimension, fmt::format("layernorm parameter {} for width {}",
                                             value(p).shape_string(), d));
    }
  }
  Node n{};
  n.op = Op::layernorm;
  n.inputs = {x.id, gain.id, bias.id};
  return push(std::move(n));
}

Var Tape::gelu(Var x) {
  Node n{};
  n.op = Op::gelu;
  n.inputs = {x.id};
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  Node n{};
  n.op = Op::relu;
  n.inputs = {x.id};
  return push(std::move(n));
}

Var Tape::jumprelu(Var x, double theta) {
  if (!(theta >= 0.0)) fail(ErrorKind::parameter, fmt::format("jumprelu theta {} < 0", theta));
  Node n{};
  n.op = Op::jumprelu;
  n.inputs = {x.id};
  n.a = theta;
  return push(std::move(n));
}

Var Tape::causal_attention(Var qkv, std::size_t n_heads) {
  const RealMatrix& m = value(qkv);
  if (n_heads == 0 || m.cols() % (3 * n_heads) != 0) {
    fail(ErrorKind::dimension,
         fmt::format("attention block {} cannot split into {} heads", m.shape_string(), n_heads));
  }
  Node n{};
  n.op = Op::causal_attention;
  n.inputs = {qkv.id};
  n.n = n_heads;
  return push(std::move(n));
}

Var Tape::add_vector_to_rows(Var x, std::span<const double> vec, double scale,
                             std::size_t row_begin, std::size_t row_end) {
  const RealMatrix& m = value(x);
  if (vec.size() != m.cols()) {
    fail(ErrorKind::dimension,
         fmt::format("vector of {} added to rows of {}", vec.size(), m.shape_string()));
  }
  Node n{};
  n.op = Op::add_vector_to_rows;
  n.inputs = {x.id};
  n.reals.assign(vec.begin(), vec.end());
  n.a = scale;
  n.n = std::min(row_begin, m.rows());
  n.m = std::min(row_end, m.rows());
  return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::span<const TokenId> targets,
                        std::span<const double> weights) {
  const RealMatrix& l = value(logits);
  if (targets.size() != l.rows() || weights.size() != l.rows()) {
    fail(ErrorKind::dimension, fmt::format("cross_entropy: {} targets, {} weights for {} logits",
                                           targets.size(), weights.size(), l.shape_string()));
  }
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (weights[r] == 0.0) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= l.cols()) {
      fail(ErrorKind::index,
           fmt::format("target id {} outside vocabulary of {}", targets[r], l.cols()));
    }
  }
  Node n{};
  n.op = Op::cross_entropy;
  n.inputs = {logits.id};
  n.ids.assign(targets.begin(), targets.end());
  n.reals.assign(weights.begin(), weights.end());
  return push(std::move(n));
}

Var Tape::mse(Var a, Var b) {
  require_same_shape(value(a), value(b), "mse");
  Node n{};
  n.op = Op::mse;
  n.inputs = {a.id, b.id};
  return push(std::move(n));
}

Var Tape::l1_rows_mean(Var a) {
  Node n{};
  n.op = Op::l1_rows_mean;
  n.inputs = {a.id};
  return push(std::move(n));
}

Var Tape::weighted_sum(Var a, const RealMatrix& weights) {
  require_same_shape(value(a), weights, "weighted_sum");
  Node n{};
  n.op = Op::weighted_sum;
  n.inputs = {a.id};
  n.cache = weights;
  return push(std::move(n));
}

Var Tape::combine(Var a, double alpha, Var b, double beta) {
  if (value(a).size() != 1 || value(b).size() != 1) {
    fail(ErrorKind::dimension, "combine expects two scalars");
  }
  Node n{};
  n.op = Op::combine;
  n.inputs = {a.id, b.id};
  n.a = alpha;
  n.b = beta;
  return push(std::move(n));
}

void Tape::compute(Node& node) {
  switch (node.op) {
    case Op::constant:
    case Op::reference:
    case Op::param:
      return;
    case Op::gather_rows: {
      const RealMatrix& t = val(node.inputs[0]);
      node.value = RealMatrix(node.ids.size(), t.cols());
      for (std::size_t r = 0; r < node.ids.size(); ++r) {
        auto src = t.row(static_cast<std::size_t>(node.ids[r]));
        std::copy(src.begin(), src.end(), node.value.row(r).begin());
      }
      return;
    }
    case Op::add: {
      node.value = val(node.inputs[0]);
      add_into(node.value, val(node.inputs[1]));
      return;
    }
    case Op::matmul:
      node.value = igds::matmul(val(node.inputs[0]), val(node.inputs[1]));
      return;
    case Op::add_row_bias: {
      node.value = val(node.inputs[0]);
      const RealMatrix& b = val(node.inputs[1]);
      for (std::size_t r = 0; r < node.value.rows(); ++r) {
        auto row = node.value.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += b(0, c);
      }
      return;
    }
    case Op::layernorm: {
      const RealMatrix& x = val(node.inputs[0]);
      const RealMatrix& g = val(node.inputs[1]);
      const RealMatrix& b = val(node.inputs[2]);
      const std::size_t d = x.cols();
      node.value = RealMatrix(x.rows(), d);
      node.cache = RealMatrix(x.rows(), 2);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        node.cache(r, 0) = mean;
        node.cache(r, 1) = rstd;
        auto out = node.value.row(r);
        for (std::size_t c = 0; c < d; ++c) out[c] = (xr[c] - mean) * rstd * g(0, c) + b(0, c);
      }
      return;
    }
    case Op::gelu: {
      const RealMatrix& x = val(node.inputs[0]);
      node.value = RealMatrix(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        node.value.data()[i] = 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluC * v * v * v)));
      }
      return;
    }
    case Op::relu:
    case Op::jumprelu: {
      const RealMatrix& x = val(node.inputs[0]);
      const double theta = node.op == Op::relu ? 0.0 : node.a;
      node.value = RealMatrix(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        node.value.data()[i] = v > theta ? v : 0.0;
      }
      return;
    }
    case Op::causal_attention: {
      const RealMatrix& qkv = val(node.inputs[0]);
      const std::size_t T = qkv.rows();
      const std::size_t d = qkv.cols() / 3;
      const std::size_t H = node.n;
      const std::size_t hd = d / H;
      const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
      node.value = RealMatrix(T, d);
      node.cache = RealMatrix(H * T, T);
      std::vector<double> s(T);
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
        for (std::size_t i = 0; i < T; ++i) {
          const double* q = qkv.data() + i * qkv.cols() + qo;
          double mx = -1e300;
          for (std::size_t j = 0; j <= i; ++j) {
            const double* k = qkv.data() + j * qkv.cols() + ko;
            double acc = 0.0;
            for (std::size_t c = 0; c < hd; ++c) acc += q[c] * k[c];
            s[j] = acc * scale;
            mx = std::max(mx, s[j]);
          }
          double z = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            s[j] = std::exp(s[j] - mx);
            z += s[j];
          }
          double* out = node.value.data() + i * d + qo;
          double* p = node.cache.data() + (h * T + i) * T;
          for (std::size_t j = 0; j <= i; ++j) {
            p[j] = s[j] / z;
            const double* v = qkv.data() + j * qkv.cols() + vo;
            for (std::size_t c = 0; c < hd; ++c) out[c] += p[j] * v[c];
          }
        }
      }
      return;
    }
    case Op::add_vector_to_rows: {
      node.value = val(node.inputs[0]);
      for (std::size_t r = node.n; r < node.m; ++r) {
        auto row = node.value.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += node.a * node.reals[c];
      }
      return;
    }
    case Op::cross_entropy: {
      const RealMatrix& l = val(node.inputs[0]);
      node.cache = RealMatrix(l.rows(), l.cols());
      double total = 0.0, wsum = 0.0;
      for (std::size_t r = 0; r < l.rows(); ++r) {
        const double w = node.reals[r];
        if (w == 0.0) continue;
        auto lp = node.cache.row(r);
        log_softmax_row(l.row(r), lp);
        total -= w * lp[static_cast<std::size_t>(node.ids[r])];
        wsum += w;
        for (double& v : lp) v = std::exp(v);
      }
      node.a = wsum;
      node.value = RealMatrix(1, 1, wsum > 0.0 ? total / wsum : 0.0);
      return;
    }
    case Op::mse: {
      const RealMatrix& a = val(node.inputs[0]);
      const RealMatrix& b = val(node.inputs[1]);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = a.data()[i] - b.data()[i];
        s += e * e;
      }
      node.value = RealMatrix(1, 1, a.size() ? s / static_cast<double>(a.size()) : 0.0);
      return;
    }
    case Op::l1_rows_mean: {
      const RealMatrix& a = val(node.inputs[0]);
      double s = 0.0;
      for (double v : a.flat()) s += std::abs(v);
      node.value = RealMatrix(1, 1, a.rows() ? s / static_cast<double>(a.rows()) : 0.0);
      return;
    }
    case Op::weighted_sum: {
      const RealMatrix& a = val(node.inputs[0]);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += node.cache.data()[i] * a.data()[i];
      node.value = RealMatrix(1, 1, s);
      return;
    }
    case Op::combine:
      node.value = RealMatrix(
          1, 1, node.a * val(node.inputs[0]).data()[0] + node.b * val(node.inputs[1]).data()[0]);
      return;
  }
}

RealMatrix& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const RealMatrix& v = val(id);
    n.grad = RealMatrix(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!record_grad_) fail(ErrorKind::configuration, "backward on an inference-only tape");
  if (value(loss).size() != 1) fail(ErrorKind::dimension, "backward from a non-scalar");
  // Parameters reachable from the loss.
  std::vector<char>& needs = needs_;
  needs.assign(nodes_.size(), 0);
  for (std::size_t i = 0; i <= loss.id; ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::param) {
      needs[i] = 1;
      continue;
    }
    for (std::size_t in : n.inputs) needs[i] |= needs[in];
  }
  for (auto& n : nodes_) n.grad = RealMatrix();
  grad_of(loss.id).data()[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (!needs[i] || nodes_[i].grad.size() == 0) continue;
    if (nodes_[i].op == Op::param) {
      add_into(nodes_[i].param->grad, nodes_[i].grad);
      continue;
    }
    // Drop gradients for inputs that cannot reach a parameter.
    propagate(i);
    for (std::size_t in : nodes_[i].inputs) {
      if (!needs[in]) nodes_[in].grad = RealMatrix();
    }
  }
}

void Tape::propagate(std::size_t id) {
  Node& node = nodes_[id];
  const RealMatrix& g = node.grad;
  switch (node.op) {
    case Op::constant:
    case Op::reference:
    case Op::param:
      return;
    case Op::gather_rows: {
      RealMatrix& gt = grad_of(node.inputs[0]);
      for (std::size_t r = 0; r < node.ids.size(); ++r) {
        auto dst = gt.row(static_cast<std::size_t>(node.ids[r]));
        auto src = g.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
      return;
    }
    case Op::add:
      add_into(grad_of(node.inputs[0]), g);
      add_into(grad_of(node.inputs[1]), g);
      return;
    case Op::matmul: {
      const RealMatrix& a = val(node.inputs[0]);
      const RealMatrix& b = val(node.inputs[1]);
      if (needs_[node.inputs[0]]) add_into(grad_of(node.inputs[0]), matmul_bt(g, b));
      if (needs_[node.inputs[1]]) matmul_at_accumulate(a, g, grad_of(node.inputs[1]));
      return;
    }
    case Op::add_row_bias: {
      add_into(grad_of(node.inputs[0]), g);
      RealMatrix& gb = grad_of(node.inputs[1]);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      return;
    }
    case Op::layernorm: {
      const RealMatrix& x = val(node.inputs[0]);
      const RealMatrix& gain = val(node.inputs[1]);
      const std::size_t d = x.cols();
      RealMatrix& gx = grad_of(node.inputs[0]);
      RealMatrix& gg = grad_of(node.inputs[1]);
      RealMatrix& gbias = grad_of(node.inputs[2]);
      std::vector<double> xhat(d), dxhat(d);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double mean = node.cache(r, 0), rstd = node.cache(r, 1);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          xhat[c] = (x(r, c) - mean) * rstd;
          dxhat[c] = g(r, c) * gain(0, c);
          gg(0, c) += g(r, c) * xhat[c];
          gbias(0, c) += g(r, c);
          m1 += dxhat[c];
          m2 += dxhat[c] * xhat[c];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) gx(r, c) += rstd * (dxhat[c] - m1 - xhat[c] * m2);
      }
      return;
    }
    case Op::gelu: {
      const RealMatrix& x = val(node.inputs[0]);
      RealMatrix& gx = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        const double t = std::tanh(kGeluK * (v + kGeluC * v * v * v));
        const double dt = (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
        gx.data()[i] += g.data()[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
      return;
    }
    case Op::relu:
    case Op::jumprelu: {
      // Straight-through on the open side of the gate.
      const RealMatrix& x = val(node.inputs[0]);
      const double theta = node.op == Op::relu ? 0.0 : node.a;
      RealMatrix& gx = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.data()[i] > theta) gx.data()[i] += g.data()[i];
      }
      return;
    }
    case Op::causal_attention: {
      const RealMatrix& qkv = val(node.inputs[0]);
      RealMatrix& gq = grad_of(node.inputs[0]);
      const std::size_t T = qkv.rows();
      const std::size_t w = qkv.cols();
      const std::size_t d = w / 3;
      const std::size_t H = node.n;
      const std::size_t hd = d / H;
      const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
      std::vector<double> dp(T);
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
        for (std::size_t i = 0; i < T; ++i) {
          const double* p = node.cache.data() + (h * T + i) * T;
          const double* go = g.data() + i * d + qo;
          double dot_pd = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            const double* v = qkv.data() + j * w + vo;
            double* gv = gq.data() + j * w + vo;
            double acc = 0.0;
            for (std::size_t c = 0; c < hd; ++c) {
              acc += go[c] * v[c];
              gv[c] += p[j] * go[c];
            }
            dp[j] = acc;
            dot_pd += p[j] * acc;
          }
          const double* q = qkv.data() + i * w + qo;
          double* gqi = gq.data() + i * w + qo;
          for (std::size_t j = 0; j <= i; ++j) {
            const double ds = p[j] * (dp[j] - dot_pd) * scale;
            if (ds == 0.0) continue;
            const double* k = qkv.data() + j * w + ko;
            double* gk = gq.data() + j * w + ko;
            for (std::size_t c = 0; c < hd; ++c) {
              gqi[c] += ds * k[c];
              gk[c] += ds * q[c];
            }
          }
        }
      }
      return;
    }
    case Op::add_vector_to_rows:
      add_into(grad_of(node.inputs[0]), g);
      return;
    case Op::cross_entropy: {
      const double gs = g.data()[0];
      if (node.a <= 0.0) return;
      RealMatrix& gl = grad_of(node.inputs[0]);
      for (std::size_t r = 0; r < gl.rows(); ++r) {
        const double w = node.reals[r];
        if (w == 0.0) continue;
        const double f = gs * w / node.a;
        auto pr = node.cache.row(r);
        auto out = gl.row(r);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += f * pr[c];
        out[static_cast<std::size_t>(node.ids[r])] -= f;
      }
      return;
    }
    case Op::mse: {
      const RealMatrix& a = val(node.inputs[0]);
      const RealMatrix& b = val(node.inputs[1]);
      const double f = 2.0 * g.data()[0] / static_cast<double>(a.size());
      RealMatrix& ga = grad_of(node.inputs[0]);
      RealMatrix& gb = grad_of(node.inputs[1]);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = f * (a.data()[i] - b.data()[i]);
        ga.data()[i] += e;
        gb.data()[i] -= e;
      }
      return;
    }
    case Op::l1_rows_mean: {
      const RealMatrix& a = val(node.inputs[0]);
      const double f = g.data()[0] / static_cast<double>(a.rows());
      RealMatrix& ga = grad_of(node.inputs[0]);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a.data()[i];
        if (v > 0.0) ga.data()[i] += f;
        else if (v < 0.0) ga.data()[i] -= f;
      }
      return;
    }
    case Op::weighted_sum: {
      RealMatrix& ga = grad_of(node.inputs[0]);
      const double gs = g.data()[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += gs * node.cache.data()[i];
      return;
    }
    case Op::combine:
      grad_of(node.inputs[0]).data()[0] += node.a * g.data()[0];
      grad_of(node.inputs[1]).data()[0] += node.b * g.data()[0];
      return;
  }
}

void Tape::replay() {
  for (auto& n : nodes_) compute(n);
}

}  // namespace igds
