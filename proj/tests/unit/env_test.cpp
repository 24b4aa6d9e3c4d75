#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/env.hpp"
#include "core/errors.hpp"
#include "test_support.hpp"

using namespace srpmoe;

namespace {

EmbeddingBank tiny_bank(std::vector<ExpertSpec> experts, std::uint64_t seed = 3) {
  SyntheticConfig cfg;
  cfg.num_train = 12;
  cfg.num_test = 8;
  cfg.seed = seed;
  return generate_synthetic(cfg, experts);
}

std::vector<ExpertSpec> triple_like() {
  // published cost triple over small dims; rewards depend only on costs
  return {
      {0, "tsf-b", 8, 0.59, 0.55},
      {1, "vmae-b", 8, 2.7, 0.8},
      {2, "vmae-l", 12, 8.9, 0.95},
  };
}

}  // namespace

TEST_CASE("classification reward has exactly three branches") {
  CHECK(classification_reward(Action::make_classify(1), 1) == 1.0);
  CHECK(classification_reward(Action::make_classify(0), 1) == -1.0);
  CHECK(classification_reward(Action::make_classify(0), 0) == 1.0);
  CHECK(classification_reward(Action::make_classify(1), 0) == -1.0);
  CHECK(classification_reward(Action::make_activate(2), 0) == 0.0);
  CHECK(classification_reward(Action::make_activate(2), 1) == 0.0);
}

TEST_CASE("expert cost reward is the normalized negative cost") {
  const auto experts = triple_like();
  CHECK(expert_cost_reward(0, experts) == doctest::Approx(-0.59 / 12.19).epsilon(1e-12));
  CHECK(expert_cost_reward(1, experts) == doctest::Approx(-2.7 / 12.19).epsilon(1e-12));
  CHECK(expert_cost_reward(2, experts) == doctest::Approx(-8.9 / 12.19).epsilon(1e-12));
  // hand-derived decimals
  CHECK(std::abs(expert_cost_reward(0, experts) - (-0.04840)) < 1e-5);
  CHECK(std::abs(expert_cost_reward(1, experts) - (-0.22149)) < 1e-5);
  CHECK(std::abs(expert_cost_reward(2, experts) - (-0.73011)) < 1e-5);

  const std::vector<ExpertSpec> solo{{0, "only", 4, 3.3, 1.0}};
  CHECK(expert_cost_reward(0, solo) == -1.0);
}

TEST_CASE("cost rewards sum to minus one over the expert set") {
  const auto experts = triple_like();
  double sum = 0.0;
  for (int e = 0; e < 3; ++e) sum += std::abs(expert_cost_reward(e, experts));
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("total reward composes the two parts") {
  const auto experts = triple_like();
  CHECK(total_reward(Action::make_classify(1), 1, 0.7, experts) == 1.0);
  CHECK(total_reward(Action::make_classify(0), 1, 0.7, experts) == -1.0);
  CHECK(total_reward(Action::make_activate(2), 1, 0.5, experts) ==
        doctest::Approx(-0.36506).epsilon(1e-4));
  CHECK(total_reward(Action::make_activate(0), 0, 0.2, experts) ==
        doctest::Approx(-0.00968).epsilon(1e-3));
  // lambda = 0 hides activation costs entirely
  CHECK(total_reward(Action::make_activate(2), 0, 0.0, experts) == 0.0);
}

TEST_CASE("reward decomposition holds for random actions and lambdas") {
  const auto experts = triple_like();
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    const double lambda = rng.uniform(0, 3);
    const int label = rng.uniform_int(2);
    Action a;
    if (rng.uniform01() < 0.5) a = Action::make_classify(rng.uniform_int(2));
    else a = Action::make_activate(rng.uniform_int(3));
    const double expect =
        classification_reward(a, label) +
        lambda * (a.kind == Action::Kind::activate ? expert_cost_reward(a.expert, experts) : 0.0);
    CHECK(total_reward(a, label, lambda, experts) == expect);
  }
}

TEST_CASE("reset activates only the initial expert, cost counted, no reward") {
  const EmbeddingBank bank = tiny_bank(triple_like());
  RouterConfig cfg;
  cfg.initial_expert = 0;
  RoutingEnv env(bank, cfg);
  const Observation& obs = env.reset(0);
  CHECK(obs.size() == 1);
  CHECK(obs[0].expert == 0);
  CHECK(env.state().accumulated_cost == 0.59);
  CHECK(env.state().activated == 0b001);
  CHECK_FALSE(env.state().done);

  const ValidMask mask = env.valid_mask();
  REQUIRE(mask.size() == 5);
  CHECK(mask[0]);
  CHECK(mask[1]);
  CHECK_FALSE(mask[2]);  // the initial expert cannot be re-activated
  CHECK(mask[3]);
  CHECK(mask[4]);
}

TEST_CASE("activation accumulates cost and extends the observation") {
  const EmbeddingBank bank = tiny_bank(triple_like());
  RouterConfig cfg;
  cfg.cost_coefficient = 0.5;
  RoutingEnv env(bank, cfg);
  env.reset(1);

  const StepResult r1 = env.step(Action::make_activate(1));
  CHECK(r1.reward == doctest::Approx(0.5 * (-2.7 / 12.19)).epsilon(1e-12));
  CHECK(env.state().accumulated_cost == doctest::Approx(3.29).epsilon(1e-12));
  CHECK(r1.next_observation.size() == 2);
  CHECK_FALSE(r1.done);
  CHECK_FALSE(r1.valid_mask[3]);  // now taken
  CHECK(r1.valid_mask[4]);

  const StepResult r2 = env.step(Action::make_activate(2));
  CHECK(env.state().accumulated_cost == doctest::Approx(12.19).epsilon(1e-12));
  // all experts active: only classify remains
  CHECK(r2.valid_mask[0]);
  CHECK(r2.valid_mask[1]);
  CHECK_FALSE(r2.valid_mask[2]);
  CHECK_FALSE(r2.valid_mask[3]);
  CHECK_FALSE(r2.valid_mask[4]);
}

TEST_CASE("classify ends the episode with the classification reward") {
  const EmbeddingBank bank = tiny_bank(triple_like());
  RouterConfig cfg;
  cfg.cost_coefficient = 2.0;
  RoutingEnv env(bank, cfg);
  env.reset(4);
  const int label = bank.labels[4];
  const StepResult r = env.step(Action::make_classify(label));
  CHECK(r.reward == 1.0);
  CHECK(r.done);
  CHECK(env.state().done);
  CHECK(episode_cost(env.state()) == 0.59);
  CHECK_THROWS(env.step(Action::make_classify(label)));
}

TEST_CASE("invalid actions are contract violations") {
  const EmbeddingBank bank = tiny_bank(triple_like());
  RouterConfig cfg;
  RoutingEnv env(bank, cfg);
  env.reset(0);
  CHECK_THROWS(env.step(Action::make_activate(0)));  // already active
  env.step(Action::make_activate(1));
  CHECK_THROWS(env.step(Action::make_activate(1)));  // re-activation
  CHECK_THROWS(env.step(Action::make_activate(7)));  // out of range
}

TEST_CASE("episodes terminate within the expert budget") {
  const EmbeddingBank bank = tiny_bank(triple_like());
  RouterConfig cfg;
  RoutingEnv env(bank, cfg);
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    env.reset(rng.uniform_int(bank.num_samples));
    int decisions = 0;
    while (!env.state().done) {
      const ValidMask mask = env.valid_mask();
      std::vector<int> valid;
      for (std::size_t a = 0; a < mask.size(); ++a)
        if (mask[a]) valid.push_back(static_cast<int>(a));
      REQUIRE_FALSE(valid.empty());
      env.step(action_from_index(valid[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(valid.size())))]));
      ++decisions;
      REQUIRE(decisions <= 3);  // E - 1 activations plus one classify
    }
    // cost equals the sum over the activated set
    double expect = 0.0;
    for (int e = 0; e < 3; ++e)
      if (env.state().activated & (1u << e)) expect += bank.experts[static_cast<std::size_t>(e)].cost_tflops;
    CHECK(episode_cost(env.state()) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(episode_cost(env.state()) >= 0.59);
  }
}

TEST_CASE("single-expert banks price every episode at that expert") {
  const EmbeddingBank bank = tiny_bank({{0, "only", 6, 3.5, 1.0}});
  RouterConfig cfg;
  RoutingEnv env(bank, cfg);
  env.reset(2);
  const ValidMask mask = env.valid_mask();
  CHECK(mask[0]);
  CHECK(mask[1]);
  CHECK_FALSE(mask[2]);
  env.step(Action::make_classify(0));
  CHECK(episode_cost(env.state()) == 3.5);
}

TEST_CASE("observations share embedding storage within an episode") {
  const EmbeddingBank bank = tiny_bank(triple_like());
  RouterConfig cfg;
  RoutingEnv env(bank, cfg);
  const Observation first = env.reset(0);
  const StepResult r = env.step(Action::make_activate(2));
  CHECK(r.next_observation[0].values.get() == first[0].values.get());
}

TEST_CASE("action indexing round-trips") {
  for (int idx = 0; idx < 6; ++idx) CHECK(action_to_index(action_from_index(idx)) == idx);
  CHECK(action_from_index(0).kind == Action::Kind::classify);
  CHECK(action_from_index(1).label == 1);
  CHECK(action_from_index(3).expert == 1);
}
