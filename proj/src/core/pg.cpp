#include "core/pg.hpp"

#include <cmath>
#include <limits>

#include "core/errors.hpp"

namespace srpmoe {

Vec action_distribution(const Vec& logits, const ValidMask& mask) {
  if (static_cast<std::size_t>(logits.size()) != mask.size())
    throw ShapeError("mask arity mismatch");
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < logits.size(); ++a)
    if (mask[static_cast<std::size_t>(a)]) max_logit = std::max(max_logit, logits(a));
  if (!std::isfinite(max_logit)) throw Error("no valid action in mask");

  Vec p = Vec::Zero(logits.size());
  double z = 0.0;
  for (int a = 0; a < logits.size(); ++a) {
    if (!mask[static_cast<std::size_t>(a)]) continue;
    p(a) = std::exp(logits(a) - max_logit);
    z += p(a);
  }
  p /= z;
  return p;
}

AdvantageResult compute_advantages(std::span<const double> rewards,
                                   std::span<const double> values, double gamma) {
  if (rewards.size() != values.size()) throw ShapeError("rewards/values length mismatch");
  AdvantageResult out;
  out.returns.resize(rewards.size());
  out.advantages.resize(rewards.size());
  double g = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    g = rewards[i] + gamma * g;
    out.returns[i] = g;
    out.advantages[i] = g - values[i];
  }
  return out;
}

PgLossParts pg_loss(const RouterNetwork& net, std::span<const PgStep* const> steps,
                    std::span<const double> returns, std::span<const double> advantages,
                    const PGConfig& cfg, ObserveMode mode, RouterForwardCache* cache,
                    Mat* d_value, Mat* d_logits) {
  const int N = static_cast<int>(steps.size());
  if (N == 0) throw Error("empty rollout batch");
  if (returns.size() != steps.size() || advantages.size() != steps.size())
    throw ShapeError("returns/advantages length mismatch");

  std::vector<const Observation*> obs;
  obs.reserve(steps.size());
  for (const auto* s : steps) obs.push_back(&s->obs);
  const RouterHeadOut heads = router_forward_batch(net, obs, mode, cache);
  const int A = static_cast<int>(heads.out.rows());

  PgLossParts parts;
  const bool want_grads = d_value && d_logits;
  if (want_grads) {
    *d_value = Mat::Zero(1, N);
    *d_logits = Mat::Zero(A, N);
  }

  const double inv_n = 1.0 / static_cast<double>(N);
  for (int i = 0; i < N; ++i) {
    const PgStep& step = *steps[static_cast<std::size_t>(i)];
    const Vec p = action_distribution(heads.out.col(i), step.mask);
    const int a = step.action;
    if (a < 0 || a >= A || !step.mask[static_cast<std::size_t>(a)])
      throw ShapeError("recorded action is invalid for its mask");

    const double log_p = std::log(p(a));
    const double ratio = std::exp(log_p - step.log_prob_old);
    const double adv = advantages[static_cast<std::size_t>(i)];

    double entropy = 0.0;
    for (int k = 0; k < A; ++k)
      if (step.mask[static_cast<std::size_t>(k)] && p(k) > 0.0) entropy -= p(k) * std::log(p(k));
    parts.entropy += entropy * inv_n;

    const double verr = heads.value(0, i) - returns[static_cast<std::size_t>(i)];
    parts.value_loss += verr * verr * inv_n;
    if (want_grads) (*d_value)(0, i) = 2.0 * verr * inv_n;

    double surr_dratio = 0.0;
    if (!std::isfinite(ratio)) {
      parts.anomalies += 1;  // stale or degenerate old policy; drop the sample
    } else {
      const double unclipped = ratio * adv;
      const double clipped =
          std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv;
      parts.policy_loss -= std::min(unclipped, clipped) * inv_n;
      if (unclipped <= clipped) surr_dratio = adv;  // clip inactive branch
    }

    if (want_grads) {
      // d(-surr)/dz = -(dsurr/drho) * rho * (e_a - p), valid entries only
      const double coeff = -surr_dratio * ratio * inv_n;
      const double ent_coeff = -cfg.entropy_coef * inv_n;
      for (int k = 0; k < A; ++k) {
        if (!step.mask[static_cast<std::size_t>(k)]) continue;
        const double dlogp = (k == a ? 1.0 : 0.0) - p(k);
        double g = coeff * dlogp;
        if (p(k) > 0.0) g += ent_coeff * (-p(k) * (std::log(p(k)) + entropy));
        (*d_logits)(k, i) += g;
      }
    }
  }

  parts.total = parts.policy_loss + parts.value_loss - cfg.entropy_coef * parts.entropy;
  return parts;
}

PgAgent::PgAgent(std::span<const ExpertSpec> experts, const PGConfig& cfg, ObserveMode mode,
                 int obs_dim, int hidden, Rng& init_rng)
    : cfg_(cfg), mode_(mode) {
  if (!(cfg.clip_ratio > 0.0)) throw ConfigError("clip ratio must be positive");
  if (cfg.discount < 0.0 || cfg.discount > 1.0) throw ConfigError("discount must be in [0, 1]");
  net_ = make_router_network(experts, obs_dim, hidden, HeadKind::policy, init_rng);
}

int PgAgent::sample_action(const Observation& obs, const ValidMask& mask, Rng& rng,
                           double* log_prob, double* value) const {
  const Observation* ptr = &obs;
  const RouterHeadOut heads = router_forward_batch(net_, {&ptr, 1}, mode_);
  const Vec p = action_distribution(heads.out.col(0), mask);
  const double u = rng.uniform01();
  double acc = 0.0;
  int chosen = -1;
  for (int a = 0; a < p.size(); ++a) {
    if (p(a) <= 0.0) continue;
    acc += p(a);
    if (u < acc) {
      chosen = a;
      break;
    }
  }
  if (chosen < 0) {  // numeric tail; take the last valid action
    for (int a = static_cast<int>(p.size()) - 1; a >= 0; --a)
      if (p(a) > 0.0) {
        chosen = a;
        break;
      }
  }
  if (chosen < 0) throw Error("no valid action to sample");
  if (log_prob) *log_prob = std::log(p(chosen));
  if (value) *value = heads.value(0, 0);
  return chosen;
}

PgLossParts PgAgent::update(std::span<const PgEpisode> episodes) {
  std::vector<const PgStep*> steps;
  std::vector<double> returns, advantages;
  for (const auto& ep : episodes) {
    std::vector<double> rewards, values;
    for (const auto& s : ep) {
      rewards.push_back(s.reward);
      values.push_back(s.value_old);
    }
    const AdvantageResult adv = compute_advantages(rewards, values, cfg_.discount);
    for (std::size_t i = 0; i < ep.size(); ++i) {
      steps.push_back(&ep[i]);
      returns.push_back(adv.returns[i]);
      advantages.push_back(adv.advantages[i]);
    }
  }

  PgLossParts last;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    RouterForwardCache cache;
    Mat d_value, d_logits;
    last = pg_loss(net_, steps, returns, advantages, cfg_, mode_, &cache, &d_value, &d_logits);
    if (!std::isfinite(last.total)) throw DivergenceError("non-finite policy-gradient loss");

    RouterGrads grads = make_router_grads(net_);
    router_backward_batch(net_, cache, d_value, d_logits, grads);
    auto params = tensor_views(net_);
    auto gviews = tensor_views(grads);
    AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg_.learning_rate;
    adam_step(adam_cfg, adam_, params, gviews);
  }
  return last;
}

}  // namespace srpmoe
