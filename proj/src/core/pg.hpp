#pragma once

#include <span>
#include <vector>

#include "core/env.hpp"
#include "core/router_net.hpp"

namespace srpmoe {

struct PGConfig {
  double learning_rate = 1e-3;
  double clip_ratio = 0.2;
  int epochs = 4;              // optimizer passes per rollout batch
  int rollout_episodes = 64;
  double entropy_coef = 0.01;
  double discount = 0.99;
  long long train_episodes = 50000;
};

/// Softmax restricted to valid actions; invalid actions get probability
/// exactly zero and the result sums to one.
Vec action_distribution(const Vec& logits, const ValidMask& mask);

/// Discounted returns G_t and advantages G_t - V(o_t) for one episode.
struct AdvantageResult {
  std::vector<double> returns;
  std::vector<double> advantages;
};
AdvantageResult compute_advantages(std::span<const double> rewards,
                                   std::span<const double> values, double gamma);

/// One decision recorded during a rollout.
struct PgStep {
  Observation obs;
  ValidMask mask;
  int action = 0;
  double reward = 0.0;
  double log_prob_old = 0.0;  // log pi_old(a | o) at collection time
  double value_old = 0.0;     // V(o) at collection time, for the baseline
};
using PgEpisode = std::vector<PgStep>;

struct PgLossParts {
  double policy_loss = 0.0;   // negated clipped surrogate
  double value_loss = 0.0;    // MSE against returns
  double entropy = 0.0;       // mean policy entropy
  double total = 0.0;         // policy + value - coef * entropy
  int anomalies = 0;          // steps skipped for non-finite ratios
};

/// Clipped-surrogate objective plus value regression and entropy bonus over a
/// flat batch of steps with precomputed returns/advantages. Optionally emits
/// the head gradients of `total`.
PgLossParts pg_loss(const RouterNetwork& net, std::span<const PgStep* const> steps,
                    std::span<const double> returns, std::span<const double> advantages,
                    const PGConfig& cfg, ObserveMode mode, RouterForwardCache* cache = nullptr,
                    Mat* d_value = nullptr, Mat* d_logits = nullptr);

class PgAgent {
 public:
  PgAgent(std::span<const ExpertSpec> experts, const PGConfig& cfg, ObserveMode mode, int obs_dim,
          int hidden, Rng& init_rng);

  /// Samples from the masked policy; records log-probability and value.
  int sample_action(const Observation& obs, const ValidMask& mask, Rng& rng, double* log_prob,
                    double* value) const;

  /// Runs cfg.epochs optimizer passes over one rollout batch.
  PgLossParts update(std::span<const PgEpisode> episodes);

  const RouterNetwork& network() const { return net_; }
  RouterNetwork& network() { return net_; }
  ObserveMode mode() const { return mode_; }

 private:
  PGConfig cfg_;
  ObserveMode mode_;
  RouterNetwork net_;
  AdamState adam_;
};

}  // namespace srpmoe
