#include "dqsim/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace dqsim {

Value Tape::record(OpKind op, std::span<const Value> in) {
  auto need = [&](size_t k) {
    if (in.size() != k) throw UsageError("tape: wrong arity for op");
  };
  switch (op) {
    case OpKind::leaf:
      need(1);
      return leaf(in[0].v);
    case OpKind::add:
      need(2);
      return add(in[0], in[1]);
    case OpKind::sub:
      need(2);
      return sub(in[0], in[1]);
    case OpKind::mul:
      need(2);
      return mul(in[0], in[1]);
    case OpKind::div:
      need(2);
      return div(in[0], in[1]);
    case OpKind::neg:
      need(1);
      return neg(in[0]);
    case OpKind::exp:
      need(1);
      return exp_(in[0]);
    case OpKind::log:
      need(1);
      return log_(in[0]);
    case OpKind::reciprocal:
      need(1);
      return reciprocal(in[0]);
    case OpKind::tanh:
      need(1);
      return tanh_(in[0]);
    case OpKind::relu:
      need(1);
      return relu(in[0]);
    case OpKind::scalar_affine:
      // interpret trailing constants as (a, b)
      if (in.size() != 3) throw UsageError("tape: scalar_affine wants (x, a, b)");
      return affine(in[0], in[1].v, in[2].v);
  }
  throw UsageError("tape: unknown op kind");
}

Value Tape::lincomb(std::span<const Value> xs, std::span<const double> coeffs, double bias) {
  if (xs.size() != coeffs.size()) throw UsageError("tape: lincomb size mismatch");
  double v = bias;
  uint16_t n = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    v += coeffs[i] * xs[i].v;
    if (xs[i].on_tape()) ++n;
  }
  if (n == 0) return cval(v);
  Value out{v, static_cast<int32_t>(nodes_.size())};
  Node node{static_cast<uint32_t>(parents_.size()), static_cast<uint32_t>(coefs_.size()), n, 0,
            kLinear};
  for (size_t i = 0; i < xs.size(); ++i) {
    if (!xs[i].on_tape()) continue;
    parents_.push_back(xs[i].idx);
    coefs_.push_back(coeffs[i]);
  }
  nodes_.push_back(node);
  return out;
}

Value Tape::dot(std::span<const Value> a, std::span<const Value> b) {
  if (a.size() != b.size()) throw UsageError("tape: dot size mismatch");
  double v = 0.0;
  uint16_t n = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    v += a[i].v * b[i].v;
    n = static_cast<uint16_t>(n + (a[i].on_tape() ? 1 : 0) + (b[i].on_tape() ? 1 : 0));
  }
  if (n == 0) return cval(v);
  Value out{v, static_cast<int32_t>(nodes_.size())};
  Node node{static_cast<uint32_t>(parents_.size()), static_cast<uint32_t>(coefs_.size()), n, 0,
            kLinear};
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].on_tape()) {
      parents_.push_back(a[i].idx);
      coefs_.push_back(b[i].v);
    }
    if (b[i].on_tape()) {
      parents_.push_back(b[i].idx);
      coefs_.push_back(a[i].v);
    }
  }
  nodes_.push_back(node);
  return out;
}

std::pair<Value, int> Tape::hard_min(std::span<const Value> entries) {
  int arg = -1;
  double best = kInf;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (is_infeasible(entries[i])) continue;
    if (entries[i].v < best) {  // strict: lowest index wins ties
      best = entries[i].v;
      arg = static_cast<int>(i);
    }
  }
  if (arg < 0) throw UsageError("hard_min: no feasible event (all residual times infinite)");
  const Value& sel = entries[static_cast<size_t>(arg)];
  if (!sel.on_tape()) return {cval(sel.v), arg};
  return {unary(sel.v, sel, 1.0), arg};
}

int Tape::soft_weights(std::span<const Value> entries, double beta) {
  scratch_idx_.clear();
  scratch_w_.clear();
  int arg = -1;
  double best = kInf;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (is_infeasible(entries[i])) continue;
    if (entries[i].v < best) {
      best = entries[i].v;
      arg = static_cast<int>(i);
    }
  }
  if (arg < 0) return -1;
  double z = 0.0;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (is_infeasible(entries[i])) continue;
    const double w = std::exp(-beta * (entries[i].v - best));
    scratch_idx_.push_back(static_cast<int32_t>(i));
    scratch_w_.push_back(w);
    z += w;
  }
  for (double& w : scratch_w_) w /= z;
  return arg;
}

void Tape::emit_soft_group(std::span<const Value> entries, double scale, bool one_hot, int argmin,
                           std::span<Value> out) {
  const size_t k = scratch_idx_.size();
  bool any_on_tape = false;
  for (int32_t i : scratch_idx_) any_on_tape |= entries[static_cast<size_t>(i)].on_tape();

  for (auto& o : out) o = cval(0.0);
  if (!any_on_tape) {
    // purely constant inputs: fold
    for (size_t t = 0; t < k; ++t) {
      const size_t i = static_cast<size_t>(scratch_idx_[t]);
      out[i] = cval(one_hot ? (static_cast<int>(i) == argmin ? 1.0 : 0.0) : scratch_w_[t]);
    }
    return;
  }

  const uint32_t poff = static_cast<uint32_t>(parents_.size());
  const uint32_t coff = static_cast<uint32_t>(coefs_.size());
  for (size_t t = 0; t < k; ++t) {
    const Value& e = entries[static_cast<size_t>(scratch_idx_[t])];
    parents_.push_back(e.on_tape() ? e.idx : -1);
    coefs_.push_back(scratch_w_[t]);
  }
  coefs_.push_back(scale);

  for (size_t t = 0; t < k; ++t) {
    const size_t i = static_cast<size_t>(scratch_idx_[t]);
    const double v = one_hot ? (static_cast<int>(i) == argmin ? 1.0 : 0.0) : scratch_w_[t];
    out[i] = Value{v, static_cast<int32_t>(nodes_.size())};
    nodes_.push_back(Node{poff, coff, static_cast<uint16_t>(k), static_cast<uint16_t>(t),
                          kSoftGroup});
  }
}

int Tape::st_argmin(std::span<const Value> entries, double beta, std::span<Value> out) {
  if (beta <= 0.0) throw UsageError("st_argmin: beta must be positive");
  if (out.size() != entries.size()) throw UsageError("st_argmin: output size mismatch");
  const int arg = soft_weights(entries, beta);
  if (arg < 0) throw UsageError("st_argmin: no feasible event (all residual times infinite)");
  emit_soft_group(entries, beta, /*one_hot=*/true, arg, out);
  return arg;
}

int Tape::softmin(std::span<const Value> entries, double beta, std::span<Value> out) {
  if (beta <= 0.0) throw UsageError("softmin: beta must be positive");
  if (out.size() != entries.size()) throw UsageError("softmin: output size mismatch");
  const int arg = soft_weights(entries, beta);
  if (arg < 0) throw UsageError("softmin: no feasible event (all residual times infinite)");
  emit_soft_group(entries, beta, /*one_hot=*/false, arg, out);
  return arg;
}

void Tape::softmax_row(std::span<const Value> scores, std::span<Value> out) {
  if (out.size() != scores.size()) throw UsageError("softmax_row: output size mismatch");
  scratch_idx_.clear();
  scratch_w_.clear();
  double best = -kInf;
  for (const Value& s : scores)
    if (s.v > best) best = s.v;
  if (best == -kInf) throw UsageError("softmax_row: every score is masked");
  double z = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].v == -kInf) continue;
    const double w = std::exp(scores[i].v - best);
    scratch_idx_.push_back(static_cast<int32_t>(i));
    scratch_w_.push_back(w);
    z += w;
  }
  for (double& w : scratch_w_) w /= z;
  // softmax Jacobian dp_i/dnu_j = p_i (delta_ij - p_j) == soft group, scale -1
  emit_soft_group(scores, -1.0, /*one_hot=*/false, /*argmin=*/-1, out);
}

GradientMap Tape::backward(const Value& output) const {
  if (!output.on_tape()) throw UsageError("backward: output is not on this tape");
  std::pair<Value, double> seed{output, 1.0};
  return backward_seeded(std::span<const std::pair<Value, double>>(&seed, 1));
}

GradientMap Tape::backward_seeded(std::span<const std::pair<Value, double>> seeds) const {
  GradientMap g;
  g.adj_.assign(nodes_.size(), 0.0);
  for (const auto& [val, a] : seeds) {
    if (!val.on_tape()) continue;
    if (static_cast<size_t>(val.idx) >= nodes_.size())
      throw UsageError("backward: output is not on this tape");
    g.adj_[static_cast<size_t>(val.idx)] += a;
  }
  auto& adj = g.adj_;
  for (size_t i = nodes_.size(); i-- > 0;) {
    const double a = adj[i];
    if (a == 0.0) continue;
    const Node& node = nodes_[i];
    if (node.kind == kLinear) {
      for (uint16_t t = 0; t < node.n; ++t)
        adj[static_cast<size_t>(parents_[node.poff + t])] += coefs_[node.coff + t] * a;
    } else {
      // row `pos` of the soft-group Jacobian: scale * s_i * (s_j - delta_ij)
      const double scale = coefs_[node.coff + node.n];
      const double si = coefs_[node.coff + node.pos];
      const double f = scale * si * a;
      for (uint16_t t = 0; t < node.n; ++t) {
        const int32_t p = parents_[node.poff + t];
        if (p < 0) continue;
        const double sj = coefs_[node.coff + t];
        adj[static_cast<size_t>(p)] += f * (sj - (t == node.pos ? 1.0 : 0.0));
      }
    }
  }
  return g;
}

}  // namespace dqsim
