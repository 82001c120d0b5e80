#pragma once

// The discrete-event transition system for multiclass queueing networks:
// residual times under capacity sharing, event selection, the queue/aux
// updates with both boundary cases, the buffer-capped admission variant,
// and whole-trace rollouts with cost accumulation.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dqsim/autodiff.hpp"
#include "dqsim/stochastic.hpp"

namespace dqsim {

struct NetworkModel {
  int n = 0;  // queues / job classes
  int m = 0;  // servers
  std::vector<uint8_t> topology;     // M, m*n row-major, {0,1}
  std::vector<double> mu;            // service rates, m*n row-major, 0 where M=0
  std::vector<int> routing;          // R, n*n row-major; column j = queue change on class-j completion
  std::vector<DistributionSpec> arrivals;   // per queue; kind none = no external arrivals
  std::vector<DistributionSpec> workloads;  // per queue
  std::vector<double> h;             // holding costs
  std::string name;

  // derived after finalize()
  std::vector<int> server_of;   // unique compatible server per queue (Assumption 1)
  std::vector<int> route_to;    // completion target queue, -1 = leaves the system

  uint8_t M(int i, int j) const { return topology[static_cast<size_t>(i) * n + j]; }
  double Mu(int i, int j) const { return mu[static_cast<size_t>(i) * n + j]; }
  int R(int i, int j) const { return routing[static_cast<size_t>(i) * n + j]; }

  void finalize();  // fills derived tables; call after validate passes
};

// Returns every invariant violation (empty = ok). Never throws.
std::vector<std::string> validate(const NetworkModel& model);
NetworkModel validated(NetworkModel model);  // validate + finalize, throws on violations

enum class Noise : uint8_t { exponential, hyperexponential };
enum class ReentrantFamily : uint8_t { reentrant1, reentrant2 };

// Generators for the benchmark networks. Service rates follow the
// per-position preset (2, 1.5, 3) for re-entrant families; arrival rates are
// scaled so every server's offered load equals rho.
NetworkModel make_reentrant(ReentrantFamily family, int classes, double rho, Noise noise);
NetworkModel make_crisscross(double rho, Noise noise);
NetworkModel make_mm1(double lambda, double mu_rate);
// Multi-class single-server queue with mu_j = 1 + gap*j, h = 1, equal
// arrival rates scaled to total load rho (the c-mu learning testbed).
NetworkModel make_multiclass_cmu(int classes, double rho, double gap);

// Fractional server-to-queue allocation; rows are distributions supported on
// the topology. Integral actions are one-hot rows.
struct ActionMatrix {
  int m = 0, n = 0;
  std::vector<Value> u;  // m*n row-major
  Value& at(int i, int j) { return u[static_cast<size_t>(i) * n + j]; }
  const Value& at(int i, int j) const { return u[static_cast<size_t>(i) * n + j]; }
  void reset(int m_, int n_) {
    m = m_;
    n = n_;
    u.assign(static_cast<size_t>(m_) * n_, cval(0.0));
  }
};

struct AugmentedState {
  std::vector<Value> x;      // queue lengths (exact integers in hard/st modes)
  std::vector<Value> tau_a;  // residual inter-arrival times, inf sentinel allowed
  std::vector<Value> w;      // residual workloads, inf iff queue empty
  std::vector<double> x_int; // integral shadow path (drives sentinels in smoothed mode)
  double t = 0.0;

  static AugmentedState initial(const NetworkModel& model, const Trace& trace);
};

enum class StepMode : uint8_t { hard, straight_through, direct_smoothing };

struct AdmissionConfig {
  std::vector<double> buffers;  // L, >= 1
  std::vector<double> b_cost;   // overflow cost per queue
};

struct StepOutput {
  int event_index = -1;  // 0..n-1 arrival, n..2n-1 completion (hard-selected)
  Value tau_star;
};

// One transition. All Value arithmetic is shared between modes so hard and
// straight-through rollouts produce bitwise identical forward paths.
class Stepper {
 public:
  Stepper(const NetworkModel& model, StepMode mode, double beta, Tape* tape)
      : model_(model), mode_(mode), beta_(beta), tape_(tape) {
    resid_.resize(2 * model.n);
    events_.resize(2 * model.n);
    alloc_.resize(model.n);
    overflow_.resize(model.n);
  }

  // Advances `state` in place using xi = trace step k. In admission mode,
  // buffers Lvals cap the queue update and overflow() reports blocked mass.
  StepOutput step(AugmentedState& state, const ActionMatrix& u, const Trace& trace, long k,
                  std::span<const Value> Lvals = {});

  std::span<const Value> events() const { return events_; }
  std::span<const Value> overflow() const { return overflow_; }  // valid in admission mode
  Tape* tape() const { return tape_; }
  StepMode mode() const { return mode_; }

 private:
  Value residual_clip(Value v) const;

  const NetworkModel& model_;
  StepMode mode_;
  double beta_;
  Tape* tape_;
  std::vector<Value> resid_, events_, alloc_, overflow_;
  std::vector<Value> lin_vals_;
  std::vector<double> lin_coefs_;
};

// tau = (tau^A, tau^S) with tau^S_j = w_j / sum_i u_ij mu_ij; zero allocation
// or empty queue yields the infeasible sentinel. Exposed for tests.
void residual_times(Tape* tape, const NetworkModel& model, const AugmentedState& state,
                    const ActionMatrix& u, std::span<Value> out, std::span<Value> alloc_out);

struct Policy {
  virtual ~Policy() = default;
  // Fills `out` with the action for queue lengths x. `tape` is null on plain
  // evaluation rollouts.
  virtual void action(Tape* tape, const NetworkModel& model, std::span<const Value> x,
                      ActionMatrix& out) = 0;
};

struct TrajectoryRecord {
  long step;
  double t;
  int event_index;
  double tau_star;
};

struct RolloutOptions {
  StepMode mode = StepMode::hard;
  double beta = 1.0;
  long steps = 0;
  long trace_offset = 0;  // trace step consumed at rollout step k is offset+k
  const AdmissionConfig* admission = nullptr;
  std::span<const Value> buffer_vals = {};       // admission buffers, possibly tape leaves
  bool collect_step_costs = false;               // per-step c_k * tau_{k+1} (plain values)
  std::function<void(const TrajectoryRecord&, std::span<const Value> x)> sink;
};

struct RolloutResult {
  Value cost;                     // J_N = sum (h.x_k) tau*_{k+1} (+ b.o in admission mode)
  double elapsed = 0.0;           // t_N
  double time_avg_cost = 0.0;     // cost.v / t_N
  long steps = 0;
  std::vector<double> step_costs; // when collect_step_costs
  AugmentedState state;           // final state
};

RolloutResult rollout(Tape* tape, const NetworkModel& model, Policy& policy, const Trace& trace,
                      const RolloutOptions& opt, AugmentedState* start = nullptr);

}  // namespace dqsim
