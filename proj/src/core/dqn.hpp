#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "core/env.hpp"
#include "core/router_net.hpp"

namespace srpmoe {

struct AgentConfig {
  double learning_rate = 1e-3;
  double discount = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.4;  // fraction of episodes spent annealing
  int replay_capacity = 50000;
  int batch_size = 64;
  int target_sync_interval = 1000;  // learn steps between target refreshes
  long long train_episodes = 50000;
};

/// Linear anneal from epsilon_start to epsilon_end over the first
/// decay_fraction of training, constant afterwards.
double epsilon_at(const AgentConfig& cfg, long long episode);

struct Transition {
  Observation obs;
  int action = 0;
  double reward = 0.0;
  Observation next_obs;
  bool done = false;
  ValidMask next_mask;
};

/// Fixed-capacity ring buffer with FIFO eviction and uniform sampling.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return buf_.size(); }
  std::size_t capacity() const { return cap_; }
  const Transition& at(std::size_t i) const { return buf_[i]; }

  std::vector<const Transition*> sample(int batch, Rng& rng) const;

 private:
  std::size_t cap_;
  std::vector<Transition> buf_;
  std::size_t next_ = 0;  // overwrite cursor once full
};

/// One scalar Q-learning update in its plain tabular form:
/// q + alpha * (r + gamma * max_next - q).
double tabular_q_update(double q, double r, double gamma, double max_next, double alpha);

/// Regression targets: y = r for terminal transitions, otherwise
/// y = r + gamma * Q_target(o', a*) with a* the argmax of Q_online(o') over
/// the *valid* next actions.
std::vector<double> compute_targets(const RouterNetwork& online, const RouterNetwork& target,
                                    std::span<const Transition* const> batch, double gamma,
                                    ObserveMode mode);

/// Mean squared TD error of `online` against fixed targets; optionally emits
/// the head gradients of the loss (for one optimizer step or for testing).
double td_loss(const RouterNetwork& online, std::span<const Transition* const> batch,
               std::span<const double> targets, ObserveMode mode,
               RouterForwardCache* cache = nullptr, Mat* d_value = nullptr, Mat* d_out = nullptr);

class DqnAgent {
 public:
  DqnAgent(std::span<const ExpertSpec> experts, const AgentConfig& cfg, ObserveMode mode,
           int obs_dim, int hidden, Rng& init_rng);

  /// Epsilon-greedy over valid actions; greedy ties break low.
  int select_action(const Observation& obs, const ValidMask& mask, double epsilon, Rng& rng) const;

  /// One optimizer step on a replay batch; returns the TD loss. Throws
  /// DivergenceError when the loss or a gradient is not finite.
  double learn_step(std::span<const Transition* const> batch);

  void sync_target() { target_ = online_; }

  long long learn_steps() const { return learn_steps_; }
  const RouterNetwork& online() const { return online_; }
  RouterNetwork& online() { return online_; }
  const RouterNetwork& target() const { return target_; }
  ObserveMode mode() const { return mode_; }

 private:
  AgentConfig cfg_;
  ObserveMode mode_;
  RouterNetwork online_;
  RouterNetwork target_;
  AdamState adam_;
  long long learn_steps_ = 0;
};

}  // namespace srpmoe
