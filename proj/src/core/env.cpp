#include "core/env.hpp"

#include <stdexcept>
#include <string>

#include "core/errors.hpp"

namespace srpmoe {

int action_to_index(const Action& a) {
  if (a.kind == Action::Kind::classify) return a.label;
  return 2 + a.expert;
}

Action action_from_index(int index) {
  if (index < 0) throw Error("negative action index");
  if (index < 2) return Action::make_classify(index);
  return Action::make_activate(index - 2);
}

double classification_reward(const Action& action, int true_label) {
  if (action.kind != Action::Kind::classify) return 0.0;
  return action.label == true_label ? 1.0 : -1.0;
}

double expert_cost_reward(int expert, std::span<const ExpertSpec> experts) {
  if (expert < 0 || expert >= static_cast<int>(experts.size()))
    throw Error("expert id out of range");
  return -experts[static_cast<std::size_t>(expert)].cost_tflops / total_cost(experts);
}

double total_reward(const Action& action, int true_label, double lambda,
                    std::span<const ExpertSpec> experts) {
  const double rc = classification_reward(action, true_label);
  const double re =
      action.kind == Action::Kind::activate ? expert_cost_reward(action.expert, experts) : 0.0;
  return rc + lambda * re;
}

EmbeddingProvider raw_embedding_provider(const EmbeddingBank& bank) {
  return [&bank](int expert, int sample) {
    const auto row = bank.embedding_row(expert, sample);
    return std::make_shared<const std::vector<float>>(row.begin(), row.end());
  };
}

RoutingEnv::RoutingEnv(const EmbeddingBank& bank, const RouterConfig& cfg,
                       EmbeddingProvider provider)
    : bank_(bank), cfg_(cfg), provider_(provider ? std::move(provider)
                                                 : raw_embedding_provider(bank)) {
  const int E = static_cast<int>(bank.experts.size());
  if (cfg_.initial_expert < 0 || cfg_.initial_expert >= E)
    throw ConfigError("initial expert out of range");
  max_steps_ = cfg_.max_steps > 0 ? cfg_.max_steps : E + 1;
}

const Observation& RoutingEnv::reset(int sample) {
  if (sample < 0 || sample >= bank_.num_samples) throw Error("sample index out of range");
  state_ = EnvState{};
  state_.sample = sample;
  state_.activated = 1u << cfg_.initial_expert;
  state_.accumulated_cost = bank_.experts[static_cast<std::size_t>(cfg_.initial_expert)].cost_tflops;
  obs_.clear();
  obs_.push_back({cfg_.initial_expert, provider_(cfg_.initial_expert, sample)});
  return obs_;
}

ValidMask RoutingEnv::valid_mask() const {
  const int E = static_cast<int>(bank_.experts.size());
  ValidMask mask(static_cast<std::size_t>(num_actions(E)), 0);
  if (state_.done) return mask;
  mask[0] = mask[1] = 1;
  // the final permitted decision must classify
  if (state_.step_count + 1 < max_steps_) {
    for (int e = 0; e < E; ++e)
      if (!(state_.activated & (1u << e))) mask[static_cast<std::size_t>(2 + e)] = 1;
  }
  return mask;
}

StepResult RoutingEnv::step(const Action& action) {
  if (state_.done) throw Error("step() after episode end");
  const int E = static_cast<int>(bank_.experts.size());
  const int idx = action_to_index(action);
  const ValidMask mask = valid_mask();
  if (idx < 0 || idx >= static_cast<int>(mask.size()) || !mask[static_cast<std::size_t>(idx)])
    throw Error("invalid action " + std::to_string(idx));

  const int label = bank_.labels[static_cast<std::size_t>(state_.sample)];
  StepResult result;
  result.reward = total_reward(action, label, cfg_.cost_coefficient, bank_.experts);
  state_.step_count += 1;

  if (action.kind == Action::Kind::classify) {
    state_.done = true;
  } else {
    const int e = action.expert;
    state_.activated |= 1u << e;
    state_.accumulated_cost += bank_.experts[static_cast<std::size_t>(e)].cost_tflops;
    obs_.push_back({e, provider_(e, state_.sample)});
  }
  result.done = state_.done;
  result.next_observation = obs_;
  result.valid_mask = valid_mask();
  return result;
}

double episode_cost(const EnvState& state) { return state.accumulated_cost; }

}  // namespace srpmoe
