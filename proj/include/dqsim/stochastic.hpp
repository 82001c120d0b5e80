#pragma once

// Distribution specs, counter-based RNG streams, and pre-drawn exogenous
// traces. A Trace holds the full (T_k, W_k) vectors for every step so the
// same randomness can be replayed against any policy or perturbation
// (common random numbers); only the component selected by the realized
// event is ever consumed by the simulator.

#include <cstdint>
#include <string>
#include <vector>

#include "dqsim/common.hpp"

namespace dqsim {

enum class DistKind : uint8_t { none, exponential, hyperexponential, deterministic };

struct DistributionSpec {
  DistKind kind = DistKind::none;
  double rate = 0.0;     // exponential
  double lambda1 = 0.0;  // hyperexponential phase rates
  double lambda2 = 0.0;
  double p = 0.0;        // hyperexponential mixing probability
  double value = 0.0;    // deterministic

  static DistributionSpec none() { return {}; }
  static DistributionSpec exponential(double rate);
  static DistributionSpec deterministic(double value);
  static DistributionSpec hyperexponential(double l1, double l2, double p);

  double mean() const;
  double variance() const;
  void check() const;  // throws UsageError on invalid parameters
};

// Balanced-means two-phase hyperexponential with the requested mean and
// squared coefficient of variation c2 (>= 1).
DistributionSpec hyperexp_calibrate(double mean, double c2);

// Counter-based generator: output i depends only on (key, i), so streams
// derived from (base_seed, stream_index) reproduce independently of
// evaluation order. Two uniforms are consumed per hyperexponential draw,
// one per exponential draw, zero per deterministic draw.
class RngStream {
 public:
  RngStream() : key_(0) {}
  explicit RngStream(uint64_t key) : key_(key) {}
  static RngStream from(uint64_t base_seed, uint64_t tag, uint64_t index = 0) {
    return RngStream(derive_seed(base_seed, tag, index));
  }

  uint64_t next_u64() { return mix64(key_ ^ (++ctr_ * 0x9e3779b97f4a7c15ull)); }

  // strictly inside (0,1)
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  // inverse-CDF Beta(theta, 1) draw
  double beta_theta1(double theta) { return std::pow(uniform(), 1.0 / theta); }

  int categorical(const double* probs, int n) {
    double u = uniform();
    for (int i = 0; i < n; ++i) {
      u -= probs[i];
      if (u <= 0.0) return i;
    }
    return n - 1;
  }

  int rademacher() { return (next_u64() & 1) ? 1 : -1; }

 private:
  uint64_t key_;
  uint64_t ctr_ = 0;
};

double sample(const DistributionSpec& dist, RngStream& rng);

// Exogenous randomness xi_{1:N} plus the initial inter-arrival vector.
// Layout is step-major: T(k,j) = t[k*n+j], W(k,j) = w[k*n+j].
struct Trace {
  int n = 0;
  long steps = 0;
  uint64_t seed = 0;
  std::vector<double> init_t;  // initial residual inter-arrival times
  std::vector<double> t;
  std::vector<double> w;

  double T(long k, int j) const { return t[static_cast<size_t>(k) * n + j]; }
  double W(long k, int j) const { return w[static_cast<size_t>(k) * n + j]; }
};

// Forward declaration; the full model lives in network.hpp.
struct NetworkModel;

Trace generate_trace(const NetworkModel& model, long steps, uint64_t seed);

}  // namespace dqsim
