#pragma once

// Differentiable scheduling policies (soft priority / MaxWeight / MaxPressure
// and an MLP scorer), the work-conserving softmax output layer, integral
// action sampling for score-function estimators, and the classical static
// rules used as baselines.

#include <span>
#include <string>
#include <vector>

#include "dqsim/network.hpp"

namespace dqsim {

enum class PolicyKind : uint8_t {
  soft_priority,      // nu_ij = theta_j * mu_ij
  plain_priority,     // nu_ij = theta_j (the c-mu learning parameterization)
  soft_maxweight,     // nu_ij = theta_j * x_j * mu_ij
  soft_maxpressure,   // nu_ij = -mu_ij * (R^T (theta ⊙ x))_j
  mlp,                // nu = MLP(x * input_scale), reshaped m x n
};

enum class OutputLayer : uint8_t { vanilla_softmax, work_conserving_softmax };
enum class Activation : uint8_t { tanh, relu };

struct PolicySpec {
  PolicyKind kind = PolicyKind::soft_maxweight;
  OutputLayer output = OutputLayer::vanilla_softmax;
  double epsilon = 1e-8;            // work-conserving floor
  std::vector<int> hidden = {128, 128, 128};
  Activation activation = Activation::tanh;
  double input_scale = 0.1;         // MLP input feature scaling
};

int param_count(const PolicySpec& spec, const NetworkModel& model);

// Score matrix nu(x), -inf at incompatible (M=0) entries.
void policy_scores(Tape* tape, const PolicySpec& spec, std::span<const Value> theta,
                   std::span<const Value> x, const NetworkModel& model, std::span<Value> out);

// One row of the work-conserving softmax: numerator max(e^{nu_j} 1{x_j>0}, eps)
// over compatible queues, evaluated in shifted form so it is overflow-safe and
// exact. Differentiable in nu wherever the exponential branch is taken.
void wc_softmax_row(Tape* tape, std::span<const Value> score_row, std::span<const Value> x,
                    const uint8_t* topo_row, int n, double eps, std::span<Value> out);

// Fractional action: per-server row softmax (vanilla or work-conserving).
void fractional_action(Tape* tape, const PolicySpec& spec, std::span<const Value> theta,
                       std::span<const Value> x, const NetworkModel& model, ActionMatrix& out);

// Draws one queue per server from the fractional rows; writes the integral
// assignment into `out` (one-hot constant rows) and returns the total
// log-probability sum_i log pi_i(chosen), on tape when theta is.
Value sample_integral(Tape* tape, const PolicySpec& spec, std::span<const Value> theta,
                      std::span<const Value> x, const NetworkModel& model, RngStream& rng,
                      ActionMatrix& out, std::vector<int>* choices = nullptr);

enum class StaticRule : uint8_t { cmu, maxweight, maxpressure };

// Integral assignment by per-server argmax of the rule index over compatible
// nonempty queues; a server idles (zero row) only when all its compatible
// queues are empty. Returns chosen queue per server (-1 = idle).
void static_action(StaticRule rule, std::span<const double> x, const NetworkModel& model,
                   std::vector<int>& chosen);

// --- Policy adapters for rollout() -----------------------------------------

// Deterministic fractional policy u = pi_theta(x).
class FractionalPolicy : public Policy {
 public:
  FractionalPolicy(const PolicySpec& spec, std::vector<Value> theta)
      : spec_(spec), theta_(std::move(theta)) {}
  void action(Tape* tape, const NetworkModel& model, std::span<const Value> x,
              ActionMatrix& out) override {
    fractional_action(tape, spec_, theta_, x, model, out);
  }

 private:
  PolicySpec spec_;
  std::vector<Value> theta_;
};

// Samples integral actions and accumulates per-step log-probabilities.
class SamplingPolicy : public Policy {
 public:
  SamplingPolicy(const PolicySpec& spec, std::vector<Value> theta, RngStream rng)
      : spec_(spec), theta_(std::move(theta)), rng_(rng) {}
  void action(Tape* tape, const NetworkModel& model, std::span<const Value> x,
              ActionMatrix& out) override {
    logprobs_.push_back(sample_integral(tape, spec_, theta_, x, model, rng_, out));
  }
  const std::vector<Value>& logprobs() const { return logprobs_; }
  void reset_log() { logprobs_.clear(); }

 private:
  PolicySpec spec_;
  std::vector<Value> theta_;
  RngStream rng_;
  std::vector<Value> logprobs_;
};

class StaticPolicy : public Policy {
 public:
  explicit StaticPolicy(StaticRule rule) : rule_(rule) {}
  void action(Tape*, const NetworkModel& model, std::span<const Value> x,
              ActionMatrix& out) override;

 private:
  StaticRule rule_;
  std::vector<double> xbuf_;
  std::vector<int> chosen_;
};

// Strict priority: each server serves its nonempty compatible queue with the
// highest priority weight (first index wins ties); idles only when forced.
class PriorityPolicy : public Policy {
 public:
  explicit PriorityPolicy(std::vector<double> weights) : weights_(std::move(weights)) {}
  void action(Tape*, const NetworkModel& model, std::span<const Value> x,
              ActionMatrix& out) override;

 private:
  std::vector<double> weights_;
};

// Checkpoint serialization (JSON text, full decimal precision).
std::string checkpoint_to_string(const PolicySpec& spec, std::span<const double> theta);
std::pair<PolicySpec, std::vector<double>> checkpoint_from_string(const std::string& text);
void save_checkpoint(const std::string& path, const PolicySpec& spec,
                     std::span<const double> theta);
std::pair<PolicySpec, std::vector<double>> load_checkpoint(const std::string& path);

std::string to_string(PolicyKind kind);
std::string to_string(OutputLayer layer);
std::string to_string(Activation act);

}  // namespace dqsim
