#include "dqsim/policies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dqsim {

namespace {
thread_local Tape g_dummy_tape;
inline Tape& tp_of(Tape* tape) { return tape ? *tape : g_dummy_tape; }
}  // namespace

int param_count(const PolicySpec& spec, const NetworkModel& model) {
  switch (spec.kind) {
    case PolicyKind::soft_priority:
    case PolicyKind::plain_priority:
    case PolicyKind::soft_maxweight:
    case PolicyKind::soft_maxpressure:
      return model.n;
    case PolicyKind::mlp: {
      int count = 0;
      int in = model.n;
      for (int hdim : spec.hidden) {
        count += hdim * in + hdim;
        in = hdim;
      }
      count += (model.m * model.n) * in + model.m * model.n;
      return count;
    }
  }
  throw UsageError("param_count: unknown policy kind");
}

static void mlp_forward(Tape* tape, const PolicySpec& spec, std::span<const Value> theta,
                        std::span<const Value> x, const NetworkModel& model,
                        std::span<Value> out) {
  Tape& tp = tp_of(tape);
  static thread_local std::vector<Value> cur, next;
  cur.resize(x.size());
  for (size_t j = 0; j < x.size(); ++j) cur[j] = tp.affine(x[j], spec.input_scale, 0.0);

  size_t off = 0;
  auto layer = [&](int out_dim, bool activate) {
    const int in_dim = static_cast<int>(cur.size());
    next.resize(out_dim);
    for (int r = 0; r < out_dim; ++r) {
      Value acc = tp.dot(theta.subspan(off + static_cast<size_t>(r) * in_dim, in_dim), cur);
      Value b = theta[off + static_cast<size_t>(out_dim) * in_dim + r];
      acc = tp.add(acc, b);
      if (activate)
        acc = spec.activation == Activation::tanh ? tp.tanh_(acc) : tp.relu(acc);
      next[r] = acc;
    }
    off += static_cast<size_t>(out_dim) * in_dim + out_dim;
    cur.swap(next);
  };
  for (int hdim : spec.hidden) layer(hdim, true);
  layer(model.m * model.n, false);
  if (off != theta.size()) throw UsageError("mlp_forward: parameter vector has wrong length");
  std::copy(cur.begin(), cur.end(), out.begin());
}

void policy_scores(Tape* tape, const PolicySpec& spec, std::span<const Value> theta,
                   std::span<const Value> x, const NetworkModel& model, std::span<Value> out) {
  Tape& tp = tp_of(tape);
  const int n = model.n, m = model.m;
  if (static_cast<int>(x.size()) != n) throw UsageError("policy_scores: state size mismatch");
  if (static_cast<int>(theta.size()) != param_count(spec, model))
    throw UsageError("policy_scores: parameter vector has wrong length");
  if (static_cast<int>(out.size()) != m * n) throw UsageError("policy_scores: bad output size");

  if (spec.kind == PolicyKind::mlp) {
    mlp_forward(tape, spec, theta, x, model, out);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        if (!model.M(i, j)) out[static_cast<size_t>(i) * n + j] = cval(-kInf);
    return;
  }

  // per-queue base score, then scaled by mu row where needed
  static thread_local std::vector<Value> base, tx;
  base.resize(n);
  switch (spec.kind) {
    case PolicyKind::soft_priority:
    case PolicyKind::plain_priority:
      for (int j = 0; j < n; ++j) base[j] = theta[j];
      break;
    case PolicyKind::soft_maxweight:
      for (int j = 0; j < n; ++j) base[j] = tp.mul(theta[j], x[j]);
      break;
    case PolicyKind::soft_maxpressure: {
      tx.resize(n);
      for (int j = 0; j < n; ++j) tx[j] = tp.mul(theta[j], x[j]);
      for (int j = 0; j < n; ++j) {
        const int d = model.route_to[j];
        base[j] = d >= 0 ? tp.sub(tx[j], tx[d]) : tx[j];
      }
      break;
    }
    default:
      break;
  }
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      Value& o = out[static_cast<size_t>(i) * n + j];
      if (!model.M(i, j)) {
        o = cval(-kInf);
      } else if (spec.kind == PolicyKind::plain_priority) {
        o = base[j];
      } else {
        o = tp.affine(base[j], model.Mu(i, j), 0.0);
      }
    }
}

void wc_softmax_row(Tape* tape, std::span<const Value> score_row, std::span<const Value> x,
                    const uint8_t* topo_row, int n, double eps, std::span<Value> out) {
  if (eps <= 0.0) throw UsageError("wc_softmax_row: epsilon must be positive");
  Tape& tp = tp_of(tape);
  int compat = 0;
  double shift = -kInf;
  for (int j = 0; j < n; ++j) {
    if (!topo_row[j]) continue;
    ++compat;
    if (x[j].v > 0.0 && score_row[j].v > shift) shift = score_row[j].v;
  }
  if (compat == 0) throw UsageError("wc_softmax_row: server has no compatible queue");

  for (int j = 0; j < n; ++j) out[j] = cval(0.0);
  if (shift == -kInf) {
    // every compatible queue is empty: the floor dominates uniformly
    for (int j = 0; j < n; ++j)
      if (topo_row[j]) out[j] = cval(1.0 / compat);
    return;
  }

  // Numerators are computed relative to e^{shift}; the common factor cancels
  // in the ratio, so the floor comparison stays exact while exp never
  // overflows: max(e^{nu_j}, eps) / Z == max(e^{nu_j - shift}, eps e^{-shift}) / (Z e^{-shift}).
  const double floor_sc = eps * std::exp(-shift);
  static thread_local std::vector<Value> nums, terms;
  static thread_local std::vector<double> ones;
  nums.assign(n, cval(0.0));
  terms.clear();
  ones.clear();
  for (int j = 0; j < n; ++j) {
    if (!topo_row[j]) continue;
    Value num;
    if (x[j].v > 0.0) {
      Value e = tp.exp_(tp.affine(score_row[j], 1.0, -shift));
      num = e.v >= floor_sc ? e : cval(floor_sc);
    } else {
      num = cval(floor_sc);
    }
    nums[j] = num;
    terms.push_back(num);
    ones.push_back(1.0);
  }
  Value denom = tp.lincomb(terms, ones);
  for (int j = 0; j < n; ++j)
    if (topo_row[j]) out[j] = tp.div(nums[j], denom);
}

void fractional_action(Tape* tape, const PolicySpec& spec, std::span<const Value> theta,
                       std::span<const Value> x, const NetworkModel& model, ActionMatrix& out) {
  Tape& tp = tp_of(tape);
  const int n = model.n, m = model.m;
  out.reset(m, n);
  static thread_local std::vector<Value> nu;
  nu.resize(static_cast<size_t>(m) * n);
  policy_scores(tape, spec, theta, x, model, nu);
  for (int i = 0; i < m; ++i) {
    std::span<const Value> row(&nu[static_cast<size_t>(i) * n], n);
    std::span<Value> orow(&out.u[static_cast<size_t>(i) * n], n);
    if (spec.output == OutputLayer::work_conserving_softmax) {
      wc_softmax_row(tape, row, x, &model.topology[static_cast<size_t>(i) * n], n, spec.epsilon,
                     orow);
    } else {
      tp.softmax_row(row, orow);
    }
  }
}

Value sample_integral(Tape* tape, const PolicySpec& spec, std::span<const Value> theta,
                      std::span<const Value> x, const NetworkModel& model, RngStream& rng,
                      ActionMatrix& out, std::vector<int>* choices) {
  Tape& tp = tp_of(tape);
  const int n = model.n, m = model.m;
  static thread_local ActionMatrix frac;
  static thread_local std::vector<double> probs;
  fractional_action(tape, spec, theta, x, model, frac);
  out.reset(m, n);
  if (choices) choices->assign(m, -1);
  Value logprob = cval(0.0);
  probs.resize(n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) probs[j] = frac.at(i, j).v;
    const int pick = rng.categorical(probs.data(), n);
    out.at(i, pick) = cval(1.0);
    if (choices) (*choices)[i] = pick;
    logprob = tp.add(logprob, tp.log_(frac.at(i, pick)));
  }
  return logprob;
}

void static_action(StaticRule rule, std::span<const double> x, const NetworkModel& model,
                   std::vector<int>& chosen) {
  const int n = model.n, m = model.m;
  chosen.assign(m, -1);
  for (int i = 0; i < m; ++i) {
    double best = -kInf;
    int arg = -1;
    for (int j = 0; j < n; ++j) {
      if (!model.M(i, j) || x[j] <= 0.0) continue;
      double score = 0.0;
      switch (rule) {
        case StaticRule::cmu:
          score = model.h[j] * model.Mu(i, j);
          break;
        case StaticRule::maxweight:
          score = model.h[j] * model.Mu(i, j) * x[j];
          break;
        case StaticRule::maxpressure: {
          double pressure = model.h[j] * x[j];
          const int d = model.route_to[j];
          if (d >= 0) pressure -= model.h[d] * x[d];
          score = model.Mu(i, j) * pressure;
          break;
        }
      }
      if (score > best) {
        best = score;
        arg = j;
      }
    }
    chosen[i] = arg;
  }
}

void StaticPolicy::action(Tape*, const NetworkModel& model, std::span<const Value> x,
                          ActionMatrix& out) {
  xbuf_.resize(x.size());
  for (size_t j = 0; j < x.size(); ++j) xbuf_[j] = x[j].v;
  static_action(rule_, xbuf_, model, chosen_);
  out.reset(model.m, model.n);
  for (int i = 0; i < model.m; ++i)
    if (chosen_[i] >= 0) out.at(i, chosen_[i]) = cval(1.0);
}

void PriorityPolicy::action(Tape*, const NetworkModel& model, std::span<const Value> x,
                            ActionMatrix& out) {
  if (weights_.size() != static_cast<size_t>(model.n))
    throw UsageError("PriorityPolicy: weight vector size mismatch");
  out.reset(model.m, model.n);
  for (int i = 0; i < model.m; ++i) {
    double best = -kInf;
    int arg = -1;
    for (int j = 0; j < model.n; ++j) {
      if (!model.M(i, j) || x[j].v <= 0.0) continue;
      if (weights_[j] > best) {
        best = weights_[j];
        arg = j;
      }
    }
    if (arg >= 0) out.at(i, arg) = cval(1.0);
  }
}

// ---------------------------------------------------------------------------
// checkpoints

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::soft_priority: return "soft_priority";
    case PolicyKind::plain_priority: return "plain_priority";
    case PolicyKind::soft_maxweight: return "soft_maxweight";
    case PolicyKind::soft_maxpressure: return "soft_maxpressure";
    case PolicyKind::mlp: return "mlp";
  }
  return "?";
}
std::string to_string(OutputLayer layer) {
  return layer == OutputLayer::vanilla_softmax ? "vanilla_softmax" : "work_conserving_softmax";
}
std::string to_string(Activation act) { return act == Activation::tanh ? "tanh" : "relu"; }

PolicyKind policy_kind_from(const std::string& s) {
  if (s == "soft_priority") return PolicyKind::soft_priority;
  if (s == "plain_priority") return PolicyKind::plain_priority;
  if (s == "soft_maxweight") return PolicyKind::soft_maxweight;
  if (s == "soft_maxpressure") return PolicyKind::soft_maxpressure;
  if (s == "mlp") return PolicyKind::mlp;
  throw UsageError("unknown policy kind: " + s);
}

std::string checkpoint_to_string(const PolicySpec& spec, std::span<const double> theta) {
  nlohmann::json j;
  j["kind"] = to_string(spec.kind);
  j["output_layer"] = to_string(spec.output);
  j["epsilon"] = spec.epsilon;
  j["hidden"] = spec.hidden;
  j["activation"] = to_string(spec.activation);
  j["input_scale"] = spec.input_scale;
  j["theta"] = std::vector<double>(theta.begin(), theta.end());
  return j.dump(2);
}

std::pair<PolicySpec, std::vector<double>> checkpoint_from_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  PolicySpec spec;
  spec.kind = policy_kind_from(j.at("kind").get<std::string>());
  spec.output = j.at("output_layer").get<std::string>() == "vanilla_softmax"
                    ? OutputLayer::vanilla_softmax
                    : OutputLayer::work_conserving_softmax;
  spec.epsilon = j.at("epsilon").get<double>();
  spec.hidden = j.at("hidden").get<std::vector<int>>();
  spec.activation = j.at("activation").get<std::string>() == "tanh" ? Activation::tanh
                                                                    : Activation::relu;
  spec.input_scale = j.at("input_scale").get<double>();
  return {spec, j.at("theta").get<std::vector<double>>()};
}

void save_checkpoint(const std::string& path, const PolicySpec& spec,
                     std::span<const double> theta) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write checkpoint: " + path);
  out << checkpoint_to_string(spec, theta) << "\n";
}

std::pair<PolicySpec, std::vector<double>> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace dqsim
