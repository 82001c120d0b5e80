#pragma once

// Reverse-mode scalar tape.
//
// Every differentiable quantity in the simulator is a Value: a double plus a
// node handle into a Tape. Constants carry idx = -1 and are never recorded;
// arithmetic on constants folds, so a rollout that never touches a leaf
// records nothing. Local partial derivatives are computed at record time and
// stored in a flat arena, which keeps the backward pass a single linear sweep.
//
// Event selection gets two dedicated primitives. hard_min routes the adjoint
// to the argmin entry (the exact a.e. derivative of min). st_argmin returns
// the exact one-hot argmin as forward values but installs the softmin_beta
// Jacobian for the backward pass, so the simulated path is bit-for-bit the
// hard path while gradients see the smooth surrogate. Infinite entries are
// sentinels: excluded from the softmin normalization, never exponentiated.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dqsim/common.hpp"

namespace dqsim {

struct Value {
  double v = 0.0;
  int32_t idx = -1;  // -1: constant, not on any tape
  bool on_tape() const { return idx >= 0; }
};

inline Value cval(double v) { return Value{v, -1}; }

// Infeasible residual times are represented by the +inf sentinel.
inline Value infeasible() { return cval(kInf); }
inline bool is_infeasible(const Value& a) { return std::isinf(a.v); }

enum class OpKind : uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  exp,
  log,
  reciprocal,
  tanh,
  relu,
  scalar_affine,
};

class Tape;

// Adjoints from one backward pass. The seeded output has adjoint exactly 1.
class GradientMap {
 public:
  double at(const Value& val) const {
    if (!val.on_tape()) return 0.0;  // constants receive zero adjoint
    return adj_[static_cast<size_t>(val.idx)];
  }
  size_t size() const { return adj_.size(); }

 private:
  friend class Tape;
  std::vector<double> adj_;
};

class Tape {
 public:
  Value leaf(double v) {
    Value out{v, static_cast<int32_t>(nodes_.size())};
    nodes_.push_back(Node{0, 0, 0, 0, kLinear});
    return out;
  }

  // --- elementary operations -------------------------------------------
  Value add(Value a, Value b) { return binary(a.v + b.v, a, 1.0, b, 1.0); }
  Value sub(Value a, Value b) { return binary(a.v - b.v, a, 1.0, b, -1.0); }
  Value mul(Value a, Value b) { return binary(a.v * b.v, a, b.v, b, a.v); }
  Value div(Value a, Value b) {
    if (b.v == 0.0) throw UsageError("tape: division by zero");
    return binary(a.v / b.v, a, 1.0 / b.v, b, -a.v / (b.v * b.v));
  }
  Value neg(Value a) { return unary(-a.v, a, -1.0); }
  Value exp_(Value a) {
    const double e = std::exp(a.v);
    return unary(e, a, e);
  }
  Value log_(Value a) {
    if (a.v <= 0.0) throw UsageError("tape: log of non-positive value");
    return unary(std::log(a.v), a, 1.0 / a.v);
  }
  Value reciprocal(Value a) {
    if (a.v == 0.0) throw UsageError("tape: reciprocal of zero");
    return unary(1.0 / a.v, a, -1.0 / (a.v * a.v));
  }
  Value tanh_(Value a) {
    const double t = std::tanh(a.v);
    return unary(t, a, 1.0 - t * t);
  }
  Value relu(Value a) { return unary(a.v > 0.0 ? a.v : 0.0, a, a.v > 0.0 ? 1.0 : 0.0); }
  // a*x + b with constant a, b
  Value affine(Value x, double a, double b) { return unary(a * x.v + b, x, a); }

  // Generic recorder used by property tests; dispatches on op kind.
  Value record(OpKind op, std::span<const Value> in);

  // bias + sum_i coeff_i * x_i, evaluated left to right. Constants fold into
  // the value; only tape parents are recorded.
  Value lincomb(std::span<const Value> xs, std::span<const double> coeffs, double bias = 0.0);

  // sum_i a_i * b_i (partials are the partner values at record time)
  Value dot(std::span<const Value> a, std::span<const Value> b);

  // --- event-selection primitives --------------------------------------
  // Minimum over finite entries, lowest index wins ties. Adjoint routes
  // entirely to the argmin entry. Throws if every entry is infeasible.
  std::pair<Value, int> hard_min(std::span<const Value> entries);

  // Straight-through argmin: out[i] is the exact one-hot indicator, backward
  // uses d softmin_beta_i / d tau_j = beta * s_i * (s_j - delta_ij) over the
  // finite entries. Returns the argmin index.
  int st_argmin(std::span<const Value> entries, double beta, std::span<Value> out);

  // Real-valued softmin_beta (direct smoothing): forward values are the
  // softmin weights themselves. Returns the hard argmin index.
  int softmin(std::span<const Value> entries, double beta, std::span<Value> out);

  // Row softmax with -inf mask semantics; numerically stabilized.
  void softmax_row(std::span<const Value> scores, std::span<Value> out);

  // min(a, cap): left-branch derivative when a.v <= cap.v, else derivative 1
  // toward cap (the admission clamp).
  Value min_with(Value a, Value cap) {
    return a.v <= cap.v ? unary(a.v, a, 1.0) : unary(cap.v, cap, 1.0);
  }

  // --- backward ---------------------------------------------------------
  GradientMap backward(const Value& output) const;
  // Seeds several outputs at once (used by checkpointed segment sweeps).
  GradientMap backward_seeded(std::span<const std::pair<Value, double>> seeds) const;

  size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    parents_.clear();
    coefs_.clear();
  }
  void reserve(size_t nodes, size_t arena) {
    nodes_.reserve(nodes);
    parents_.reserve(arena);
    coefs_.reserve(arena);
  }

 private:
  static constexpr uint8_t kLinear = 0;
  static constexpr uint8_t kSoftGroup = 1;  // shared softmin/softmax Jacobian row

  struct Node {
    uint32_t poff = 0;  // offset into parents_
    uint32_t coff = 0;  // offset into coefs_
    uint16_t n = 0;     // parent count (kSoftGroup: group size, coefs_[coff+n] = scale)
    uint16_t pos = 0;   // own row within a soft group
    uint8_t kind = kLinear;
  };

  Value unary(double v, Value a, double pa) {
    if (!a.on_tape()) return cval(v);
    Value out{v, static_cast<int32_t>(nodes_.size())};
    Node node{static_cast<uint32_t>(parents_.size()), static_cast<uint32_t>(coefs_.size()), 1, 0,
              kLinear};
    parents_.push_back(a.idx);
    coefs_.push_back(pa);
    nodes_.push_back(node);
    return out;
  }

  Value binary(double v, Value a, double pa, Value b, double pb) {
    const int na = a.on_tape() ? 1 : 0;
    const int nb = b.on_tape() ? 1 : 0;
    if (na + nb == 0) return cval(v);
    Value out{v, static_cast<int32_t>(nodes_.size())};
    Node node{static_cast<uint32_t>(parents_.size()), static_cast<uint32_t>(coefs_.size()),
              static_cast<uint16_t>(na + nb), 0, kLinear};
    if (na) {
      parents_.push_back(a.idx);
      coefs_.push_back(pa);
    }
    if (nb) {
      parents_.push_back(b.idx);
      coefs_.push_back(pb);
    }
    nodes_.push_back(node);
    return out;
  }

  // Weights over the finite entries of `entries`; returns argmin or -1.
  int soft_weights(std::span<const Value> entries, double beta);
  void emit_soft_group(std::span<const Value> entries, double scale, bool one_hot, int argmin,
                       std::span<Value> out);

  std::vector<Node> nodes_;
  std::vector<int32_t> parents_;  // -1 entries mark constant group members
  std::vector<double> coefs_;

  // scratch for soft groups (index/weight per finite entry)
  std::vector<int32_t> scratch_idx_;
  std::vector<double> scratch_w_;
};

}  // namespace dqsim
