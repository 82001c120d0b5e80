#include "dqsim/estimators.hpp"

#include <algorithm>
#include <cmath>

namespace dqsim {

namespace {

constexpr uint64_t kTagTrace = 0x7472616365ull;   // per-trajectory trace seeds
constexpr uint64_t kTagPolicy = 0x706f6c6963ull;  // per-trajectory sampling streams
constexpr uint64_t kTagSpsa = 0x73707361ull;

std::vector<Value> make_leaves(Tape& tape, std::span<const double> vals) {
  std::vector<Value> out(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) out[i] = tape.leaf(vals[i]);
  return out;
}

std::vector<Value> make_consts(std::span<const double> vals) {
  std::vector<Value> out(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) out[i] = cval(vals[i]);
  return out;
}

struct Snapshot {
  std::vector<double> x, tau_a, w, x_int;
  double t;
};

Snapshot snap(const AugmentedState& s) {
  Snapshot out;
  const size_t n = s.x.size();
  out.x.resize(n);
  out.tau_a.resize(n);
  out.w.resize(n);
  for (size_t j = 0; j < n; ++j) {
    out.x[j] = s.x[j].v;
    out.tau_a[j] = s.tau_a[j].v;
    out.w[j] = s.w[j].v;
  }
  out.x_int = s.x_int;
  out.t = s.t;
  return out;
}

// Rebuilds a state whose finite components are fresh leaves on `tape`.
AugmentedState restore_as_leaves(Tape& tape, const Snapshot& s) {
  AugmentedState st;
  const size_t n = s.x.size();
  st.x.resize(n);
  st.tau_a.resize(n);
  st.w.resize(n);
  for (size_t j = 0; j < n; ++j) {
    st.x[j] = tape.leaf(s.x[j]);
    st.tau_a[j] = std::isinf(s.tau_a[j]) ? infeasible() : tape.leaf(s.tau_a[j]);
    st.w[j] = std::isinf(s.w[j]) ? infeasible() : tape.leaf(s.w[j]);
  }
  st.x_int = s.x_int;
  st.t = s.t;
  return st;
}

void check_finite(std::span<const double> g, const char* who) {
  for (size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(g[i]))
      throw InternalError(std::string(who) + ": non-finite gradient entry at index " +
                          std::to_string(i));
}

}  // namespace

DiffRolloutResult differentiate_rollout(const NetworkModel& model, const PolicySpec& spec,
                                        std::span<const double> theta, const Trace& trace,
                                        const DiffRolloutOptions& opt) {
  const bool admission = opt.admission != nullptr;
  DiffRolloutResult res;
  res.dtheta.assign(theta.size(), 0.0);
  if (admission) res.dbuffers.assign(model.n, 0.0);

  auto run_segment = [&](Tape* tape, AugmentedState* start, long offset, long len,
                         std::span<const Value> th,
                         std::span<const Value> lv) -> RolloutResult {
    FractionalPolicy pol(spec, std::vector<Value>(th.begin(), th.end()));
    RolloutOptions ro;
    ro.mode = opt.mode;
    ro.beta = opt.beta;
    ro.steps = len;
    ro.trace_offset = offset;
    if (admission) {
      ro.admission = opt.admission;
      ro.buffer_vals = lv;
    }
    return rollout(tape, model, pol, trace, ro, start);
  };

  // Probe one step to size segments; in straight_through mode the forward
  // path is the hard path, so plain replays are exact.
  Tape tape;
  long seg_len;
  {
    auto th = make_leaves(tape, theta);
    std::vector<Value> lv;
    if (admission) lv = make_leaves(tape, opt.admission->buffers);
    run_segment(&tape, nullptr, 0, 1, th, lv);
    seg_len = std::max<long>(1, static_cast<long>(opt.node_budget / std::max<size_t>(tape.size(), 1)));
    tape.clear();
  }

  if (seg_len >= opt.steps) {
    auto th = make_leaves(tape, theta);
    std::vector<Value> lv;
    if (admission) lv = make_leaves(tape, opt.admission->buffers);
    RolloutResult rr = run_segment(&tape, nullptr, 0, opt.steps, th, lv);
    GradientMap gm = tape.backward(rr.cost);
    for (size_t i = 0; i < th.size(); ++i) res.dtheta[i] = gm.at(th[i]);
    for (size_t j = 0; j < lv.size(); ++j) res.dbuffers[j] = gm.at(lv[j]);
    res.cost = rr.cost.v;
    res.elapsed = rr.state.t;
  } else {
    // exact checkpointed reverse sweep
    std::vector<Snapshot> snaps;
    double total_cost = 0.0;
    {
      auto th = make_consts(theta);
      std::vector<Value> lv;
      if (admission) lv = make_consts(opt.admission->buffers);
      AugmentedState st = AugmentedState::initial(model, trace);
      for (long k0 = 0; k0 < opt.steps; k0 += seg_len) {
        snaps.push_back(snap(st));
        const long len = std::min(seg_len, opt.steps - k0);
        RolloutResult rr = run_segment(nullptr, &st, k0, len, th, lv);
        st = std::move(rr.state);
        total_cost += rr.cost.v;
      }
      res.elapsed = st.t;
    }

    const size_t n = static_cast<size_t>(model.n);
    std::vector<double> carry_x(n, 0.0), carry_ta(n, 0.0), carry_w(n, 0.0);
    std::vector<std::pair<Value, double>> seeds;
    for (long seg = static_cast<long>(snaps.size()) - 1; seg >= 0; --seg) {
      const long k0 = seg * seg_len;
      const long len = std::min(seg_len, opt.steps - k0);
      tape.clear();
      auto th = make_leaves(tape, theta);
      std::vector<Value> lv;
      if (admission) lv = make_leaves(tape, opt.admission->buffers);
      AugmentedState start = restore_as_leaves(tape, snaps[static_cast<size_t>(seg)]);
      const std::vector<Value> in_x = start.x, in_ta = start.tau_a, in_w = start.w;

      RolloutResult rr = run_segment(&tape, &start, k0, len, th, lv);

      seeds.clear();
      seeds.emplace_back(rr.cost, 1.0);
      for (size_t j = 0; j < n; ++j) {
        seeds.emplace_back(rr.state.x[j], carry_x[j]);
        seeds.emplace_back(rr.state.tau_a[j], carry_ta[j]);
        seeds.emplace_back(rr.state.w[j], carry_w[j]);
      }
      GradientMap gm = tape.backward_seeded(seeds);
      for (size_t i = 0; i < th.size(); ++i) res.dtheta[i] += gm.at(th[i]);
      for (size_t j = 0; j < lv.size(); ++j) res.dbuffers[j] += gm.at(lv[j]);
      for (size_t j = 0; j < n; ++j) {
        carry_x[j] = gm.at(in_x[j]);
        carry_ta[j] = gm.at(in_ta[j]);
        carry_w[j] = gm.at(in_w[j]);
      }
    }
    res.cost = total_cost;
  }

  check_finite(res.dtheta, "differentiate_rollout");
  if (admission) check_finite(res.dbuffers, "differentiate_rollout(buffers)");
  return res;
}

GradientEstimate pathwise_grad(const NetworkModel& model, const PolicySpec& spec,
                               std::span<const double> theta, std::span<const Trace> traces,
                               long N, double beta, const AdmissionConfig* admission) {
  if (traces.empty()) throw UsageError("pathwise_grad: need at least one trace");
  GradientEstimate est;
  est.kind = EstimatorKind::pathwise;
  est.B = static_cast<int>(traces.size());
  est.N = N;
  est.beta = beta;
  est.seed = traces[0].seed;
  est.g.assign(theta.size(), 0.0);
  DiffRolloutOptions opt;
  opt.steps = N;
  opt.beta = beta;
  opt.mode = StepMode::straight_through;
  opt.admission = admission;
  for (const Trace& tr : traces) {
    DiffRolloutResult r = differentiate_rollout(model, spec, theta, tr, opt);
    for (size_t i = 0; i < est.g.size(); ++i) est.g[i] += r.dtheta[i] / traces.size();
  }
  return est;
}

GradientEstimate pathwise_buffer_grad(const NetworkModel& model, const PolicySpec& spec,
                                      std::span<const double> theta,
                                      const AdmissionConfig& admission,
                                      std::span<const Trace> traces, long N, double beta) {
  if (traces.empty()) throw UsageError("pathwise_buffer_grad: need at least one trace");
  GradientEstimate est;
  est.kind = EstimatorKind::pathwise;
  est.B = static_cast<int>(traces.size());
  est.N = N;
  est.beta = beta;
  est.seed = traces[0].seed;
  est.g.assign(static_cast<size_t>(model.n), 0.0);
  DiffRolloutOptions opt;
  opt.steps = N;
  opt.beta = beta;
  opt.mode = StepMode::straight_through;
  opt.admission = &admission;
  for (const Trace& tr : traces) {
    DiffRolloutResult r = differentiate_rollout(model, spec, theta, tr, opt);
    for (size_t i = 0; i < est.g.size(); ++i) est.g[i] += r.dbuffers[i] / traces.size();
  }
  return est;
}

GradientEstimate direct_smoothing_grad(const NetworkModel& model, const PolicySpec& spec,
                                       std::span<const double> theta, const Trace& trace, long N,
                                       double beta) {
  GradientEstimate est;
  est.kind = EstimatorKind::direct_smoothing;
  est.B = 1;
  est.N = N;
  est.beta = beta;
  est.seed = trace.seed;
  DiffRolloutOptions opt;
  opt.steps = N;
  opt.beta = beta;
  opt.mode = StepMode::direct_smoothing;
  DiffRolloutResult r = differentiate_rollout(model, spec, theta, trace, opt);
  est.g = std::move(r.dtheta);
  return est;
}

// ---------------------------------------------------------------------------
// REINFORCE

GradientEstimate reinforce_grad(const NetworkModel& model, const PolicySpec& spec,
                                std::span<const double> theta, const ReinforceOptions& opt) {
  if (opt.B < 1) throw UsageError("reinforce_grad: B must be >= 1");
  GradientEstimate est;
  est.kind = opt.baseline == BaselineKind::none ? EstimatorKind::reinforce
                                                : EstimatorKind::reinforce_baseline;
  est.B = opt.B;
  est.N = opt.N;
  est.gamma = opt.gamma;
  est.seed = opt.seed;
  est.g.assign(theta.size(), 0.0);

  auto run_plain = [&](int b, std::vector<double>& costs) {
    Trace tr = generate_trace(model, opt.N, derive_seed(opt.seed, kTagTrace, b));
    SamplingPolicy pol(spec, make_consts(theta),
                       RngStream::from(opt.seed, kTagPolicy, static_cast<uint64_t>(b)));
    RolloutOptions ro;
    ro.mode = StepMode::hard;
    ro.steps = opt.N;
    ro.collect_step_costs = true;
    RolloutResult rr = rollout(nullptr, model, pol, tr, ro);
    costs = std::move(rr.step_costs);
  };

  // pass 1: per-step batch-mean baseline of the discounted cost-to-go
  std::vector<double> baseline(static_cast<size_t>(opt.N), 0.0);
  if (opt.baseline == BaselineKind::batch_mean_per_step) {
    std::vector<double> costs;
    for (int b = 0; b < opt.B; ++b) {
      run_plain(b, costs);
      double g = 0.0;
      for (long t = opt.N - 1; t >= 0; --t) {
        g = costs[static_cast<size_t>(t)] + opt.gamma * g;
        baseline[static_cast<size_t>(t)] += g / opt.B;
      }
    }
  }

  // pass 2: bitwise replay with theta leaves, per-trajectory backward
  Tape tape;
  std::vector<double> ctg(static_cast<size_t>(opt.N));
  std::vector<double> coeff(static_cast<size_t>(opt.N));
  for (int b = 0; b < opt.B; ++b) {
    tape.clear();
    Trace tr = generate_trace(model, opt.N, derive_seed(opt.seed, kTagTrace, b));
    auto th = make_leaves(tape, theta);
    SamplingPolicy pol(spec, th, RngStream::from(opt.seed, kTagPolicy, static_cast<uint64_t>(b)));
    RolloutOptions ro;
    ro.mode = StepMode::hard;
    ro.steps = opt.N;
    ro.collect_step_costs = true;
    RolloutResult rr = rollout(&tape, model, pol, tr, ro);

    double g = 0.0;
    for (long t = opt.N - 1; t >= 0; --t) {
      g = rr.step_costs[static_cast<size_t>(t)] + opt.gamma * g;
      ctg[static_cast<size_t>(t)] = g;
    }
    for (long t = 0; t < opt.N; ++t)
      coeff[static_cast<size_t>(t)] = ctg[static_cast<size_t>(t)] - baseline[static_cast<size_t>(t)];
    Value loss = tape.lincomb(pol.logprobs(), coeff);
    if (!loss.on_tape()) continue;  // zero-cost trace: zero contribution
    GradientMap gm = tape.backward(loss);
    for (size_t i = 0; i < th.size(); ++i) est.g[i] += gm.at(th[i]) / opt.B;
  }
  check_finite(est.g, "reinforce_grad");
  return est;
}

GroundTruth ground_truth_grad(const NetworkModel& model, const PolicySpec& spec,
                              std::span<const double> theta, long N, int B_large, uint64_t seed) {
  if (B_large < 2) throw UsageError("ground_truth_grad: B_large must be >= 2");
  ReinforceOptions opt;
  opt.N = N;
  opt.gamma = 0.999;
  opt.baseline = BaselineKind::batch_mean_per_step;
  opt.seed = seed;

  // two disjoint half-batches, then pooled
  GroundTruth out;
  opt.B = B_large / 2;
  GradientEstimate lo = reinforce_grad(model, spec, theta, opt);
  ReinforceOptions opt2 = opt;
  opt2.seed = derive_seed(seed, 0x68616c66ull, 1);
  GradientEstimate hi = reinforce_grad(model, spec, theta, opt2);
  out.B = 2 * opt.B;
  out.split_cossim = cosine(lo.g, hi.g);
  out.g.resize(theta.size());
  for (size_t i = 0; i < out.g.size(); ++i) out.g[i] = 0.5 * (lo.g[i] + hi.g[i]);
  return out;
}

// ---------------------------------------------------------------------------
// SPSA

GradientEstimate spsa_grad(const SpsaObjective& objective, std::span<const double> buffers, int B,
                           uint64_t seed, bool enumerate) {
  const int d = static_cast<int>(buffers.size());
  if (d < 1) throw UsageError("spsa_grad: empty buffer vector");
  GradientEstimate est;
  est.kind = EstimatorKind::spsa;
  est.N = 0;
  est.seed = seed;
  est.g.assign(static_cast<size_t>(d), 0.0);

  std::vector<double> eta(static_cast<size_t>(d));
  std::vector<double> up(static_cast<size_t>(d)), down(static_cast<size_t>(d));
  auto apply = [&](int b) {
    for (int i = 0; i < d; ++i) {
      double u = buffers[static_cast<size_t>(i)] + eta[static_cast<size_t>(i)];
      double v = buffers[static_cast<size_t>(i)] - eta[static_cast<size_t>(i)];
      if (u < 1.0) {
        u = 1.0;
        ++est.clamped;
      }
      if (v < 1.0) {
        v = 1.0;
        ++est.clamped;
      }
      up[static_cast<size_t>(i)] = u;
      down[static_cast<size_t>(i)] = v;
    }
    const double diff = 0.5 * (objective(up, b) - objective(down, b));
    for (int i = 0; i < d; ++i) est.g[static_cast<size_t>(i)] += diff * eta[static_cast<size_t>(i)];
  };

  if (enumerate) {
    if (d > 20) throw UsageError("spsa_grad: enumeration limited to d <= 20");
    const long total = 1L << d;
    est.B = static_cast<int>(total);
    for (long mask = 0; mask < total; ++mask) {
      for (int i = 0; i < d; ++i) eta[static_cast<size_t>(i)] = (mask >> i) & 1 ? 1.0 : -1.0;
      apply(static_cast<int>(mask));
    }
    for (double& v : est.g) v /= static_cast<double>(total);
  } else {
    if (B < 1) throw UsageError("spsa_grad: B must be >= 1");
    est.B = B;
    RngStream rng = RngStream::from(seed, kTagSpsa);
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < d; ++i) eta[static_cast<size_t>(i)] = rng.rademacher();
      apply(b);
    }
    for (double& v : est.g) v /= B;
  }
  check_finite(est.g, "spsa_grad");
  return est;
}

// ---------------------------------------------------------------------------
// metrics

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("cosine: dimension mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

CosSimStats cossim_eval(std::span<const std::vector<double>> samples,
                        std::span<const double> reference) {
  double norm = 0.0;
  for (double v : reference) norm += v * v;
  if (norm == 0.0) throw UsageError("cossim_eval: reference gradient is zero");
  CosSimStats out;
  out.count = static_cast<int>(samples.size());
  if (samples.empty()) return out;
  double sum = 0.0, sum2 = 0.0;
  for (const auto& s : samples) {
    const double c = cosine(s, reference);
    sum += c;
    sum2 += c * c;
  }
  const double n = static_cast<double>(samples.size());
  out.mean = sum / n;
  const double var = std::max(0.0, sum2 / n - out.mean * out.mean);
  const double se = std::sqrt(var / n);
  out.ci_lo = out.mean - 1.96 * se;
  out.ci_hi = out.mean + 1.96 * se;
  return out;
}

// ---------------------------------------------------------------------------
// one-step M/M/1 probe

OneStepStats onestep_bias_variance(double lambda, double mu, double beta, long samples,
                                   uint64_t seed) {
  if (lambda <= 0.0 || mu <= 0.0) throw UsageError("onestep: rates must be positive");
  OneStepStats out;
  out.samples = samples;
  out.truth = -2.0 * lambda / ((lambda + mu) * (lambda + mu));
  RngStream rng = RngStream::from(seed, 0x6f6e6573ull);
  Tape tape;
  std::vector<Value> resid(2), events(2);
  double m1 = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
  const double de[2] = {1.0, -1.0};
  for (long s = 0; s < samples; ++s) {
    tape.clear();
    Value mu_leaf = tape.leaf(mu);
    const double ta = rng.exponential(lambda);
    const double wl = rng.exponential(1.0);
    resid[0] = cval(ta);
    resid[1] = tape.div(cval(wl), mu_leaf);
    tape.st_argmin(resid, beta, events);
    Value change = tape.lincomb(events, de);
    double g = 0.0;
    if (change.on_tape()) {
      GradientMap gm = tape.backward(change);
      g = gm.at(mu_leaf);
    }
    m1 += g;
    m2 += g * g;
    m3 += g * g * g;
    m4 += g * g * g * g;
  }
  const double n = static_cast<double>(samples);
  m1 /= n;
  m2 /= n;
  m3 /= n;
  m4 /= n;
  out.mean = m1;
  out.bias = m1 - out.truth;
  out.variance = std::max(0.0, m2 - m1 * m1);
  out.bias_se = std::sqrt(out.variance / n);
  // central fourth moment for the variance standard error
  const double c4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1 * m1 - 3.0 * m1 * m1 * m1 * m1;
  out.variance_se = std::sqrt(std::max(0.0, c4 - out.variance * out.variance) / n);
  return out;
}

}  // namespace dqsim
