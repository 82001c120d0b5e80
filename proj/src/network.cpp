#include "dqsim/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dqsim {

void NetworkModel::finalize() {
  server_of.assign(n, -1);
  route_to.assign(n, -1);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < m; ++i)
      if (M(i, j)) server_of[j] = i;
    for (int i = 0; i < n; ++i)
      if (i != j && R(i, j) == 1) route_to[j] = i;
  }
}

std::vector<std::string> validate(const NetworkModel& model) {
  std::vector<std::string> bad;
  auto fail = [&](const std::string& s) { bad.push_back(s); };
  if (model.n < 1 || model.m < 1) {
    fail("network must have at least one queue and one server");
    return bad;
  }
  const size_t mn = static_cast<size_t>(model.m) * model.n;
  const size_t nn = static_cast<size_t>(model.n) * model.n;
  if (model.topology.size() != mn) fail("topology must be m x n");
  if (model.mu.size() != mn) fail("mu must be m x n");
  if (model.routing.size() != nn) fail("routing must be n x n");
  if (model.arrivals.size() != static_cast<size_t>(model.n)) fail("arrivals must have n entries");
  if (model.workloads.size() != static_cast<size_t>(model.n)) fail("workloads must have n entries");
  if (model.h.size() != static_cast<size_t>(model.n)) fail("holding_costs must have n entries");
  if (!bad.empty()) return bad;

  for (int j = 0; j < model.n; ++j) {
    int compat = 0;
    for (int i = 0; i < model.m; ++i) compat += model.M(i, j) ? 1 : 0;
    if (compat == 0) {
      std::ostringstream os;
      os << "queue " << j << " has no compatible server";
      fail(os.str());
    } else if (compat > 1) {
      std::ostringstream os;
      os << "queue " << j << " has " << compat << " compatible servers (exactly 1 required)";
      fail(os.str());
    }
  }
  for (int i = 0; i < model.m; ++i)
    for (int j = 0; j < model.n; ++j) {
      const bool compat = model.M(i, j) != 0;
      const bool positive = model.Mu(i, j) > 0.0;
      if (compat != positive) {
        std::ostringstream os;
        os << "mu[" << i << "][" << j << "] must be positive exactly where topology is 1";
        fail(os.str());
      }
    }
  for (int j = 0; j < model.n; ++j) {
    if (model.R(j, j) != -1) {
      std::ostringstream os;
      os << "routing diagonal must be -1 (column " << j << ")";
      fail(os.str());
    }
    int plus = 0, colsum = 0;
    for (int i = 0; i < model.n; ++i) {
      const int r = model.R(i, j);
      colsum += r;
      if (i != j) {
        if (r == 1)
          ++plus;
        else if (r != 0) {
          std::ostringstream os;
          os << "routing off-diagonal entries must be 0 or 1 (column " << j << ")";
          fail(os.str());
        }
      }
    }
    if (plus > 1) {
      std::ostringstream os;
      os << "routing column " << j << " has more than one destination";
      fail(os.str());
    }
    if (colsum != -1 && colsum != 0) {
      std::ostringstream os;
      os << "routing column " << j << " must sum to -1 or 0";
      fail(os.str());
    }
  }
  for (int j = 0; j < model.n; ++j) {
    try {
      model.arrivals[j].check();
      model.workloads[j].check();
      if (model.workloads[j].kind == DistKind::none) {
        std::ostringstream os;
        os << "queue " << j << " needs a workload distribution";
        fail(os.str());
      }
    } catch (const UsageError& e) {
      fail(e.what());
    }
    if (model.h[j] < 0.0) fail("holding costs must be nonnegative");
  }
  return bad;
}

NetworkModel validated(NetworkModel model) {
  auto bad = validate(model);
  if (!bad.empty()) {
    std::string msg = "invalid network:";
    for (const auto& s : bad) msg += "\n  - " + s;
    throw UsageError(msg);
  }
  model.finalize();
  return model;
}

// ---------------------------------------------------------------------------
// generators

NetworkModel make_mm1(double lambda, double mu_rate) {
  NetworkModel md;
  md.n = 1;
  md.m = 1;
  md.topology = {1};
  md.mu = {mu_rate};
  md.routing = {-1};
  md.arrivals = {DistributionSpec::exponential(lambda)};
  md.workloads = {DistributionSpec::exponential(1.0)};
  md.h = {1.0};
  md.name = "mm1";
  return validated(std::move(md));
}

static DistributionSpec noise_dist(Noise noise, double mean) {
  if (noise == Noise::exponential) return DistributionSpec::exponential(1.0 / mean);
  return hyperexp_calibrate(mean, 1.5);
}

NetworkModel make_crisscross(double rho, Noise noise) {
  NetworkModel md;
  md.n = 3;
  md.m = 2;
  md.topology = {1, 0, 1, 0, 1, 0};
  md.mu = {2.0, 0.0, 2.0, 0.0, 1.0, 0.0};
  md.routing = {-1, 0, 0, 1, -1, 0, 0, 0, -1};
  const double lambda = rho;  // server loads: lambda/2 + lambda/2 and lambda/1
  md.arrivals = {noise_dist(noise, 1.0 / lambda), DistributionSpec::none(),
                 noise_dist(noise, 1.0 / lambda)};
  md.workloads = {noise_dist(noise, 1.0), noise_dist(noise, 1.0), noise_dist(noise, 1.0)};
  md.h = {1.0, 1.0, 1.0};
  md.name = "crisscross";
  return validated(std::move(md));
}

NetworkModel make_reentrant(ReentrantFamily family, int classes, double rho, Noise noise) {
  if (classes < 6 || classes % 3 != 0)
    throw UsageError("make_reentrant: classes must be a multiple of 3, at least 6");
  const int n = classes;
  const int m = classes / 3;
  NetworkModel md;
  md.n = n;
  md.m = m;
  md.topology.assign(static_cast<size_t>(m) * n, 0);
  md.mu.assign(static_cast<size_t>(m) * n, 0.0);
  md.routing.assign(static_cast<size_t>(n) * n, 0);
  const double pos_rate[3] = {2.0, 1.5, 3.0};
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < 3; ++p) {
      const int j = 3 * i + p;
      md.topology[static_cast<size_t>(i) * n + j] = 1;
      md.mu[static_cast<size_t>(i) * n + j] = pos_rate[p];
    }
  for (int j = 0; j < n; ++j) md.routing[static_cast<size_t>(j) * n + j] = -1;
  auto route = [&](int from, int to) { md.routing[static_cast<size_t>(to) * n + from] = 1; };
  // chain within position lanes; the last layer feeds the front
  for (int j = 0; j + 3 < n; ++j) route(j, j + 3);
  if (family == ReentrantFamily::reentrant1) {
    route(n - 3, 1);  // lane-1 output re-enters queue 2; lanes 2 and 3 exit
  } else {
    route(n - 3, 1);  // lane-1 output re-enters queue 2
    route(n - 2, 2);  // lane-2 output re-enters queue 3; lane 3 exits
  }
  // every lane carries flow lambda, so each server's load is
  // lambda * (1/2 + 1/1.5 + 1/3) = 1.5 lambda
  const double lambda = rho / 1.5;
  md.arrivals.assign(n, DistributionSpec::none());
  if (family == ReentrantFamily::reentrant1) {
    md.arrivals[0] = noise_dist(noise, 1.0 / lambda);
    md.arrivals[2] = noise_dist(noise, 1.0 / lambda);
  } else {
    md.arrivals[0] = noise_dist(noise, 1.0 / lambda);
  }
  md.workloads.assign(n, noise_dist(noise, 1.0));
  md.h.assign(n, 1.0);
  md.name = family == ReentrantFamily::reentrant1 ? "reentrant1" : "reentrant2";
  return validated(std::move(md));
}

NetworkModel make_multiclass_cmu(int classes, double rho, double gap) {
  if (classes < 2) throw UsageError("make_multiclass_cmu: need at least two classes");
  NetworkModel md;
  md.n = classes;
  md.m = 1;
  md.topology.assign(classes, 1);
  md.mu.resize(classes);
  md.routing.assign(static_cast<size_t>(classes) * classes, 0);
  double inv_sum = 0.0;
  for (int j = 0; j < classes; ++j) {
    md.mu[j] = 1.0 + gap * (j + 1);
    md.routing[static_cast<size_t>(j) * classes + j] = -1;
    inv_sum += 1.0 / md.mu[j];
  }
  const double lambda = rho / inv_sum;
  md.arrivals.assign(classes, DistributionSpec::exponential(lambda));
  md.workloads.assign(classes, DistributionSpec::exponential(1.0));
  md.h.assign(classes, 1.0);
  md.name = "multiclass_cmu";
  return validated(std::move(md));
}

// ---------------------------------------------------------------------------
// state and stepping

AugmentedState AugmentedState::initial(const NetworkModel& model, const Trace& trace) {
  AugmentedState s;
  s.x.assign(model.n, cval(0.0));
  s.x_int.assign(model.n, 0.0);
  s.w.assign(model.n, infeasible());
  s.tau_a.resize(model.n);
  for (int j = 0; j < model.n; ++j)
    s.tau_a[j] = model.arrivals[j].kind == DistKind::none ? infeasible() : cval(trace.init_t[j]);
  s.t = 0.0;
  return s;
}

void residual_times(Tape* tape, const NetworkModel& model, const AugmentedState& state,
                    const ActionMatrix& u, std::span<Value> out, std::span<Value> alloc_out) {
  static thread_local Tape dummy;
  Tape& tp = tape ? *tape : dummy;
  const int n = model.n;
  for (int j = 0; j < n; ++j) out[j] = state.tau_a[j];
  for (int j = 0; j < n; ++j) {
    const int srv = model.server_of[j];
    const Value& uij = u.at(srv, j);
    Value alloc = tp.affine(uij, model.Mu(srv, j), 0.0);
    alloc_out[j] = alloc;
    if (is_infeasible(state.w[j]) || alloc.v <= 0.0) {
      out[n + j] = infeasible();
    } else {
      out[n + j] = tp.div(state.w[j], alloc);
    }
  }
}

Value Stepper::residual_clip(Value v) const {
  if (v.v >= 0.0 || std::isinf(v.v)) return v;
  if (v.v >= -1e-9) return Value{0.0, v.idx};  // fp hygiene: snap, keep node
  throw InternalError("negative residual time beyond tolerance: " + std::to_string(v.v));
}

StepOutput Stepper::step(AugmentedState& state, const ActionMatrix& u, const Trace& trace, long k,
                         std::span<const Value> Lvals) {
  static thread_local Tape dummy;
  Tape& tp = tape_ ? *tape_ : dummy;
  const int n = model_.n;
  const bool admission = !Lvals.empty();
  if (admission && mode_ == StepMode::direct_smoothing)
    throw UsageError("step: admission control is not defined for direct smoothing");

  residual_times(tape_, model_, state, u, resid_, alloc_);

  // event selection
  auto [tau_star, arg] = tp.hard_min(resid_);
  int idx = arg;
  switch (mode_) {
    case StepMode::hard:
      for (int e = 0; e < 2 * n; ++e) events_[e] = cval(e == idx ? 1.0 : 0.0);
      break;
    case StepMode::straight_through:
      idx = tp.st_argmin(resid_, beta_, events_);
      break;
    case StepMode::direct_smoothing:
      idx = tp.softmin(resid_, beta_, events_);
      break;
  }

  // shadow integral path (drives sentinels and boundary cases in every mode)
  const bool is_arrival = idx < n;
  const int ev_queue = is_arrival ? idx : idx - n;
  const int routed_to = is_arrival ? -1 : model_.route_to[ev_queue];

  state.x_int[ev_queue] += is_arrival ? 1.0 : -1.0;
  if (routed_to >= 0) state.x_int[routed_to] += 1.0;
  if (admission) {
    const int target = is_arrival ? ev_queue : routed_to;
    if (target >= 0 && state.x_int[target] > Lvals[target].v) state.x_int[target] = Lvals[target].v;
  }

  // queue update x' = x + D e (admission: clamped at L, overflow = residual)
  for (int j = 0; j < n; ++j) overflow_[j] = cval(0.0);
  for (int j = 0; j < n; ++j) {
    lin_vals_.clear();
    lin_coefs_.clear();
    lin_vals_.push_back(state.x[j]);
    lin_coefs_.push_back(1.0);
    if (model_.arrivals[j].kind != DistKind::none) {
      lin_vals_.push_back(events_[j]);
      lin_coefs_.push_back(1.0);
    }
    lin_vals_.push_back(events_[n + j]);
    lin_coefs_.push_back(-1.0);
    for (int c = 0; c < n; ++c)
      if (c != j && model_.route_to[c] == j) {
        lin_vals_.push_back(events_[n + c]);
        lin_coefs_.push_back(1.0);
      }
    Value xj = tp.lincomb(lin_vals_, lin_coefs_);
    if (mode_ == StepMode::direct_smoothing && xj.v < 0.0) xj = tp.relu(xj);
    if (admission) {
      Value capped = tp.min_with(xj, Lvals[j]);
      overflow_[j] = tp.sub(xj, capped);
      xj = capped;
    }
    state.x[j] = xj;
  }

  // aux update: residual inter-arrival times
  const double* T = &trace.t[static_cast<size_t>(k) * n];
  const double* W = &trace.w[static_cast<size_t>(k) * n];
  for (int j = 0; j < n; ++j) {
    if (is_infeasible(state.tau_a[j])) continue;
    const Value args[3] = {state.tau_a[j], tau_star, events_[j]};
    const double coefs[3] = {1.0, -1.0, T[j]};
    state.tau_a[j] = residual_clip(tp.lincomb(args, coefs));
  }

  // aux update: residual workloads (w infinite iff the queue was empty;
  // boundary cases keyed on the shadow integral path)
  for (int j = 0; j < n; ++j) {
    const bool now_empty = state.x_int[j] < 0.5;
    if (!is_infeasible(state.w[j])) {
      if (idx == n + j && now_empty) {
        state.w[j] = infeasible();  // completion leaves queue j empty
        continue;
      }
      Value reduce = tp.mul(tau_star, alloc_[j]);
      const Value args[3] = {state.w[j], reduce, events_[n + j]};
      const double coefs[3] = {1.0, -1.0, W[j]};
      state.w[j] = residual_clip(tp.lincomb(args, coefs));
    } else if (!now_empty) {
      // a job arrived at an empty queue: fresh workload for its head job
      if (mode_ == StepMode::direct_smoothing) {
        state.w[j] = tp.affine(events_[idx], W[j], 0.0);
      } else {
        state.w[j] = cval(W[j]);
      }
    }
  }

  state.t += tau_star.v;
  return StepOutput{idx, tau_star};
}

RolloutResult rollout(Tape* tape, const NetworkModel& model, Policy& policy, const Trace& trace,
                      const RolloutOptions& opt, AugmentedState* start) {
  if (trace.steps < opt.trace_offset + opt.steps)
    throw UsageError("rollout: trace shorter than requested horizon");
  if (opt.admission && opt.buffer_vals.size() != static_cast<size_t>(model.n))
    throw UsageError("rollout: admission mode needs one buffer value per queue");
  static thread_local Tape dummy;
  Tape& tp = tape ? *tape : dummy;

  Stepper stepper(model, opt.mode, opt.beta, tape);
  RolloutResult res;
  res.state = start ? *start : AugmentedState::initial(model, trace);
  if (opt.collect_step_costs) res.step_costs.reserve(static_cast<size_t>(opt.steps));

  ActionMatrix u;
  u.reset(model.m, model.n);
  Value cost = cval(0.0);

  for (long k = 0; k < opt.steps; ++k) {
    policy.action(tape, model, res.state.x, u);
    // instantaneous cost uses the pre-transition state
    Value hold = tp.lincomb(res.state.x, model.h);
    StepOutput out = stepper.step(res.state, u, trace, opt.trace_offset + k, opt.buffer_vals);
    Value inc = tp.mul(hold, out.tau_star);
    if (opt.admission) {
      Value over = tp.lincomb(stepper.overflow(), opt.admission->b_cost);
      inc = tp.add(inc, over);
    }
    cost = tp.add(cost, inc);
    if (opt.collect_step_costs) res.step_costs.push_back(inc.v);
    if (opt.sink)
      opt.sink(TrajectoryRecord{k, res.state.t, out.event_index, out.tau_star.v}, res.state.x);
  }
  res.cost = cost;
  res.steps = opt.steps;
  res.elapsed = res.state.t - (start ? start->t : 0.0);
  res.time_avg_cost = res.state.t > 0.0 ? cost.v / res.elapsed : 0.0;
  return res;
}

}  // namespace dqsim
