#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "core/bank.hpp"

namespace srpmoe {

struct RouterConfig {
  double cost_coefficient = 0.0;  // lambda
  int initial_expert = 0;
  int obs_dim = 768;
  int max_steps = 0;  // 0 -> E + 1
};

/// Either emit a class label (ends the episode) or pay for one more expert.
struct Action {
  enum class Kind { classify, activate };
  Kind kind = Kind::classify;
  int label = -1;   // classify only
  int expert = -1;  // activate only

  static Action make_classify(int label) { return {Kind::classify, label, -1}; }
  static Action make_activate(int expert) { return {Kind::activate, -1, expert}; }
};

// Discrete action indexing shared by agents and environment:
// 0 -> classify 0, 1 -> classify 1, 2+e -> activate expert e.
inline int num_actions(int num_experts) { return 2 + num_experts; }
int action_to_index(const Action& a);
Action action_from_index(int index);

struct EnvState {
  int sample = -1;
  std::uint32_t activated = 0;  // bitmask over expert ids
  int step_count = 0;
  double accumulated_cost = 0.0;
  bool done = false;
};

/// Embeddings of the activated experts for the current sample, in activation
/// order. Entries share storage across the transitions of one episode.
struct ObsEntry {
  int expert = -1;
  std::shared_ptr<const std::vector<float>> values;
};
using Observation = std::vector<ObsEntry>;

using ValidMask = std::vector<std::uint8_t>;  // one flag per action index

struct StepResult {
  double reward = 0.0;
  Observation next_observation;
  bool done = false;
  ValidMask valid_mask;
};

// ---------------------------------------------------------------------------
// Reward pieces
// ---------------------------------------------------------------------------

/// +1 for a correct label, -1 for a wrong one, 0 when the action defers.
double classification_reward(const Action& action, int true_label);

/// -C(e) / sum_j C(e_j): always negative, normalized over the expert set.
double expert_cost_reward(int expert, std::span<const ExpertSpec> experts);

/// classification_reward + lambda * expert_cost_reward (zero cost term for
/// classify actions, which select no expert).
double total_reward(const Action& action, int true_label, double lambda,
                    std::span<const ExpertSpec> experts);

// ---------------------------------------------------------------------------
// Episode MDP
// ---------------------------------------------------------------------------

/// Supplies the embedding that enters an observation when an expert becomes
/// active. The default provider copies the bank row; training wraps it with
/// noise augmentation.
using EmbeddingProvider =
    std::function<std::shared_ptr<const std::vector<float>>(int expert, int sample)>;

EmbeddingProvider raw_embedding_provider(const EmbeddingBank& bank);

class RoutingEnv {
 public:
  RoutingEnv(const EmbeddingBank& bank, const RouterConfig& cfg,
             EmbeddingProvider provider = nullptr);

  /// Starts an episode on `sample`. The initial expert is activated for free
  /// (no reward) but its cost is tracked.
  const Observation& reset(int sample);

  /// Applies one agent decision. Throws on invalid actions (re-activation,
  /// acting when done, out-of-range ids).
  StepResult step(const Action& action);

  const EnvState& state() const { return state_; }
  const Observation& observation() const { return obs_; }
  ValidMask valid_mask() const;

  int max_steps() const { return max_steps_; }
  const EmbeddingBank& bank() const { return bank_; }
  const RouterConfig& config() const { return cfg_; }

 private:
  const EmbeddingBank& bank_;
  RouterConfig cfg_;
  EmbeddingProvider provider_;
  int max_steps_;
  EnvState state_;
  Observation obs_;
};

/// TFLOPs spent so far, initial expert included.
double episode_cost(const EnvState& state);

}  // namespace srpmoe
