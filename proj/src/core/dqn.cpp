#include "core/dqn.hpp"

#include <cmath>
#include <limits>

#include "core/errors.hpp"

namespace srpmoe {

double epsilon_at(const AgentConfig& cfg, long long episode) {
  const double span = cfg.epsilon_decay_fraction * static_cast<double>(cfg.train_episodes);
  if (span <= 0.0) return cfg.epsilon_end;
  const double t = static_cast<double>(episode) / span;
  if (t >= 1.0) return cfg.epsilon_end;
  return cfg.epsilon_start + t * (cfg.epsilon_end - cfg.epsilon_start);
}

ReplayMemory::ReplayMemory(std::size_t capacity) : cap_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
  buf_.reserve(capacity);
}

void ReplayMemory::push(Transition t) {
  if (buf_.size() < cap_) {
    buf_.push_back(std::move(t));
    return;
  }
  buf_[next_] = std::move(t);
  next_ = (next_ + 1) % cap_;
}

std::vector<const Transition*> ReplayMemory::sample(int batch, Rng& rng) const {
  const std::size_t n = size();
  if (n == 0 || batch <= 0) throw Error("cannot sample from empty replay memory");
  std::vector<const Transition*> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i)
    out.push_back(&buf_[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n)))]);
  return out;
}

double tabular_q_update(double q, double r, double gamma, double max_next, double alpha) {
  return q + alpha * (r + gamma * max_next - q);
}

std::vector<double> compute_targets(const RouterNetwork& online, const RouterNetwork& target,
                                    std::span<const Transition* const> batch, double gamma,
                                    ObserveMode mode) {
  std::vector<double> y(batch.size());
  std::vector<const Observation*> next_obs;
  std::vector<std::size_t> next_idx;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[i] = batch[i]->reward;
    if (!batch[i]->done) {
      next_obs.push_back(&batch[i]->next_obs);
      next_idx.push_back(i);
    }
  }
  if (next_obs.empty()) return y;

  const RouterHeadOut online_heads = router_forward_batch(online, next_obs, mode);
  const RouterHeadOut target_heads = router_forward_batch(target, next_obs, mode);
  const Mat online_q = dueling_q_batch(online_heads);
  const Mat target_q = dueling_q_batch(target_heads);

  for (std::size_t k = 0; k < next_idx.size(); ++k) {
    const Transition& t = *batch[next_idx[k]];
    if (t.next_mask.size() != static_cast<std::size_t>(online_q.rows()))
      throw ShapeError("next mask arity mismatch");
    int best = -1;
    double best_q = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < online_q.rows(); ++a) {
      if (!t.next_mask[static_cast<std::size_t>(a)]) continue;
      if (online_q(a, static_cast<int>(k)) > best_q) {
        best_q = online_q(a, static_cast<int>(k));
        best = a;
      }
    }
    if (best < 0) throw Error("transition has no valid next action");
    y[next_idx[k]] += gamma * target_q(best, static_cast<int>(k));
  }
  return y;
}

double td_loss(const RouterNetwork& online, std::span<const Transition* const> batch,
               std::span<const double> targets, ObserveMode mode, RouterForwardCache* cache,
               Mat* d_value, Mat* d_out) {
  const int B = static_cast<int>(batch.size());
  if (targets.size() != batch.size()) throw ShapeError("targets size mismatch");
  std::vector<const Observation*> obs;
  obs.reserve(batch.size());
  for (const auto* t : batch) obs.push_back(&t->obs);

  const RouterHeadOut heads = router_forward_batch(online, obs, mode, cache);
  const Mat q = dueling_q_batch(heads);
  const int A = static_cast<int>(q.rows());

  double loss = 0.0;
  Mat dQ = Mat::Zero(A, B);
  for (int j = 0; j < B; ++j) {
    const int a = batch[static_cast<std::size_t>(j)]->action;
    if (a < 0 || a >= A) throw ShapeError("action index out of range");
    const double err = q(a, j) - targets[static_cast<std::size_t>(j)];
    loss += err * err;
    dQ(a, j) = 2.0 * err / static_cast<double>(B);
  }
  loss /= static_cast<double>(B);

  if (d_value && d_out) {
    // Q = V + A - mean(A): dV collects the column sum, advantages get the
    // mean-centered remainder.
    *d_value = dQ.colwise().sum();
    *d_out = dQ;
    const Eigen::RowVectorXd col_mean = dQ.colwise().sum() / static_cast<double>(A);
    d_out->rowwise() -= col_mean;
  }
  return loss;
}

DqnAgent::DqnAgent(std::span<const ExpertSpec> experts, const AgentConfig& cfg, ObserveMode mode,
                   int obs_dim, int hidden, Rng& init_rng)
    : cfg_(cfg), mode_(mode) {
  if (cfg.replay_capacity < cfg.batch_size)
    throw ConfigError("replay capacity must be >= batch size");
  online_ = make_router_network(experts, obs_dim, hidden, HeadKind::dueling, init_rng);
  target_ = online_;
}

int DqnAgent::select_action(const Observation& obs, const ValidMask& mask, double epsilon,
                            Rng& rng) const {
  std::vector<int> valid;
  for (std::size_t a = 0; a < mask.size(); ++a)
    if (mask[a]) valid.push_back(static_cast<int>(a));
  if (valid.empty()) throw Error("no valid action to select");
  if (rng.uniform01() < epsilon) return valid[static_cast<std::size_t>(
      rng.uniform_int(static_cast<int>(valid.size())))];
  return greedy_action(online_, obs, mode_, mask);
}

double DqnAgent::learn_step(std::span<const Transition* const> batch) {
  const std::vector<double> targets =
      compute_targets(online_, target_, batch, cfg_.discount, mode_);

  RouterForwardCache cache;
  Mat d_value, d_out;
  const double loss = td_loss(online_, batch, targets, mode_, &cache, &d_value, &d_out);
  if (!std::isfinite(loss)) throw DivergenceError("non-finite TD loss");

  RouterGrads grads = make_router_grads(online_);
  router_backward_batch(online_, cache, d_value, d_out, grads);

  auto params = tensor_views(online_);
  auto gviews = tensor_views(grads);
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg_.learning_rate;
  adam_step(adam_cfg, adam_, params, gviews);
  learn_steps_ += 1;
  return loss;
}

}  // namespace srpmoe
