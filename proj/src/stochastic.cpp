#include "dqsim/stochastic.hpp"

#include <cmath>

#include "dqsim/network.hpp"

namespace dqsim {

DistributionSpec DistributionSpec::exponential(double rate) {
  DistributionSpec d;
  d.kind = DistKind::exponential;
  d.rate = rate;
  d.check();
  return d;
}

DistributionSpec DistributionSpec::deterministic(double value) {
  DistributionSpec d;
  d.kind = DistKind::deterministic;
  d.value = value;
  d.check();
  return d;
}

DistributionSpec DistributionSpec::hyperexponential(double l1, double l2, double p) {
  DistributionSpec d;
  d.kind = DistKind::hyperexponential;
  d.lambda1 = l1;
  d.lambda2 = l2;
  d.p = p;
  d.check();
  return d;
}

void DistributionSpec::check() const {
  switch (kind) {
    case DistKind::none:
      return;
    case DistKind::exponential:
      if (!(rate > 0.0)) throw UsageError("exponential: rate must be positive");
      return;
    case DistKind::hyperexponential:
      if (!(lambda1 > 0.0) || !(lambda2 > 0.0))
        throw UsageError("hyperexponential: rates must be positive");
      if (!(p > 0.0 && p < 1.0)) throw UsageError("hyperexponential: p must lie in (0,1)");
      return;
    case DistKind::deterministic:
      if (!(value >= 0.0)) throw UsageError("deterministic: value must be nonnegative");
      return;
  }
  throw UsageError("distribution: unknown kind");
}

double DistributionSpec::mean() const {
  switch (kind) {
    case DistKind::none:
      return kInf;
    case DistKind::exponential:
      return 1.0 / rate;
    case DistKind::hyperexponential:
      return p / lambda1 + (1.0 - p) / lambda2;
    case DistKind::deterministic:
      return value;
  }
  return 0.0;
}

double DistributionSpec::variance() const {
  switch (kind) {
    case DistKind::none:
      return 0.0;
    case DistKind::exponential:
      return 1.0 / (rate * rate);
    case DistKind::hyperexponential: {
      const double m = mean();
      const double m2 = 2.0 * p / (lambda1 * lambda1) + 2.0 * (1.0 - p) / (lambda2 * lambda2);
      return m2 - m * m;
    }
    case DistKind::deterministic:
      return 0.0;
  }
  return 0.0;
}

DistributionSpec hyperexp_calibrate(double mean, double c2) {
  if (!(mean > 0.0)) throw UsageError("hyperexp_calibrate: mean must be positive");
  if (c2 < 1.0)
    throw UsageError("hyperexp_calibrate: hyperexponential cannot reduce variance (c2 < 1)");
  if (c2 == 1.0) {
    // degenerates to exponential; keep the two-phase form with equal rates
    return DistributionSpec::hyperexponential(1.0 / mean, 1.0 / mean, 0.5);
  }
  const double d = std::sqrt((c2 - 1.0) / (c2 + 1.0));
  const double p = 0.5 * (1.0 + d);
  return DistributionSpec::hyperexponential(2.0 * p / mean, 2.0 * (1.0 - p) / mean, p);
}

double sample(const DistributionSpec& dist, RngStream& rng) {
  switch (dist.kind) {
    case DistKind::none:
      return kInf;
    case DistKind::exponential:
      return rng.exponential(dist.rate);
    case DistKind::hyperexponential: {
      const double phase = rng.uniform();
      const double u = rng.uniform();
      return -std::log(u) / (phase < dist.p ? dist.lambda1 : dist.lambda2);
    }
    case DistKind::deterministic:
      return dist.value;
  }
  throw UsageError("sample: unknown distribution kind");
}

Trace generate_trace(const NetworkModel& model, long steps, uint64_t seed) {
  if (steps < 1) throw UsageError("generate_trace: need at least one step");
  Trace tr;
  tr.n = model.n;
  tr.steps = steps;
  tr.seed = seed;
  tr.init_t.resize(model.n);
  tr.t.resize(static_cast<size_t>(steps) * model.n);
  tr.w.resize(static_cast<size_t>(steps) * model.n);
  constexpr uint64_t kTagT = 0x5452414345'54ull;  // trace, T component
  constexpr uint64_t kTagW = 0x5452414345'57ull;  // trace, W component
  for (int j = 0; j < model.n; ++j) {
    RngStream rt = RngStream::from(seed, kTagT, static_cast<uint64_t>(j));
    RngStream rw = RngStream::from(seed, kTagW, static_cast<uint64_t>(j));
    tr.init_t[j] = sample(model.arrivals[j], rt);
    for (long k = 0; k < steps; ++k) {
      tr.t[static_cast<size_t>(k) * model.n + j] = sample(model.arrivals[j], rt);
      tr.w[static_cast<size_t>(k) * model.n + j] = sample(model.workloads[j], rw);
    }
  }
  return tr;
}

}  // namespace dqsim
