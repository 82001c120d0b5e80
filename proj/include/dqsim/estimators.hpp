#pragma once

// Policy-gradient estimators (PATHWISE straight-through, REINFORCE with and
// without the per-step batch-mean baseline, direct smoothing, SPSA for buffer
// sizes) and estimator-quality metrics.

#include <functional>
#include <span>
#include <vector>

#include "dqsim/network.hpp"
#include "dqsim/policies.hpp"

namespace dqsim {

enum class EstimatorKind : uint8_t {
  pathwise,
  reinforce,
  reinforce_baseline,
  direct_smoothing,
  spsa,
};

struct GradientEstimate {
  std::vector<double> g;
  EstimatorKind kind = EstimatorKind::pathwise;
  int B = 1;
  long N = 0;
  double beta = 0.0;
  double gamma = 1.0;
  uint64_t seed = 0;
  int clamped = 0;  // SPSA: perturbations clamped at the L >= 1 floor
};

// Differentiates one straight-through (or direct-smoothing) rollout. Large
// tapes are handled by exact checkpointed reverse sweeps: the forward path is
// replayed per segment and boundary-state adjoints are carried backward, so
// the result is the full-horizon gradient at bounded memory.
struct DiffRolloutResult {
  double cost = 0.0;
  double elapsed = 0.0;
  std::vector<double> dtheta;
  std::vector<double> dbuffers;  // filled in admission mode
};

struct DiffRolloutOptions {
  long steps = 0;
  double beta = 1.0;
  StepMode mode = StepMode::straight_through;
  const AdmissionConfig* admission = nullptr;
  size_t node_budget = 8u << 20;  // nodes per tape segment
};

DiffRolloutResult differentiate_rollout(const NetworkModel& model, const PolicySpec& spec,
                                        std::span<const double> theta, const Trace& trace,
                                        const DiffRolloutOptions& opt);

// PATHWISE policy gradient: deterministic fractional actions on the hard
// event path, softmin_beta Jacobians in the backward pass, averaged over the
// given traces.
GradientEstimate pathwise_grad(const NetworkModel& model, const PolicySpec& spec,
                               std::span<const double> theta, std::span<const Trace> traces,
                               long N, double beta, const AdmissionConfig* admission = nullptr);

// Same estimator but for the buffer sizes of the admission-controlled system
// (the scheduling policy is held fixed).
GradientEstimate pathwise_buffer_grad(const NetworkModel& model, const PolicySpec& spec,
                                      std::span<const double> theta,
                                      const AdmissionConfig& admission,
                                      std::span<const Trace> traces, long N, double beta);

// Direct smoothing: the forward path itself uses real-valued softmin events.
GradientEstimate direct_smoothing_grad(const NetworkModel& model, const PolicySpec& spec,
                                       std::span<const double> theta, const Trace& trace, long N,
                                       double beta);

enum class BaselineKind : uint8_t { none, batch_mean_per_step };

struct ReinforceOptions {
  int B = 1;
  long N = 0;
  double gamma = 0.999;
  BaselineKind baseline = BaselineKind::none;
  uint64_t seed = 0;
};

// Score-function estimator with sampled integral actions. The baseline, when
// enabled, is the per-step batch mean of the discounted cost-to-go; gradient
// extraction replays each trajectory bitwise from its seeds.
GradientEstimate reinforce_grad(const NetworkModel& model, const PolicySpec& spec,
                                std::span<const double> theta, const ReinforceOptions& opt);

struct GroundTruth {
  std::vector<double> g;
  double split_cossim = 0.0;  // agreement between disjoint half-batch means
  int B = 0;
};

// Reference gradient: REINFORCE + batch-mean baseline at gamma = 0.999,
// averaged over B_large trajectories.
GroundTruth ground_truth_grad(const NetworkModel& model, const PolicySpec& spec,
                              std::span<const double> theta, long N, int B_large, uint64_t seed);

// --- SPSA -------------------------------------------------------------------

using SpsaObjective = std::function<double(std::span<const double> buffers, int sample)>;

// (1/B) sum_b  (J(L+eta) - J(L-eta)) / 2 * eta, eta Rademacher, common random
// numbers per perturbation. Components at the L >= 1 floor are clamped and
// counted. `enumerate` replaces sampling by all 2^d sign vectors.
GradientEstimate spsa_grad(const SpsaObjective& objective, std::span<const double> buffers, int B,
                           uint64_t seed, bool enumerate = false);

// --- metrics ------------------------------------------------------------------

double cosine(std::span<const double> a, std::span<const double> b);

struct CosSimStats {
  double mean = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int count = 0;
};

// Mean cosine similarity of samples against a reference direction; zero
// samples contribute 0 and are counted. 95% CI from the across-sample std.
CosSimStats cossim_eval(std::span<const std::vector<double>> samples,
                        std::span<const double> reference);

// --- one-step M/M/1 probe ----------------------------------------------------

struct OneStepStats {
  double mean = 0.0;       // E[grad_mu De]
  double truth = 0.0;      // -2 lambda / (lambda+mu)^2
  double bias = 0.0;       // mean - truth
  double bias_se = 0.0;
  double variance = 0.0;
  double variance_se = 0.0;
  long samples = 0;
};

// Monte Carlo mean/variance of the straight-through d/dmu of the one-step
// queue change, with residuals drawn by memorylessness (tauA ~ Exp(lambda),
// workload ~ Exp(1) at service rate mu). Exercises the real tape primitives.
OneStepStats onestep_bias_variance(double lambda, double mu, double beta, long samples,
                                   uint64_t seed);

}  // namespace dqsim
