#include "core/trainer.hpp"

#include <atomic>
#include <cmath>
#include <ostream>
#include <thread>

#include "core/errors.hpp"

namespace srpmoe {

namespace {
constexpr long long kWarmupTransitions = 1000;
constexpr long long kLogWindow = 1000;
}

AgentKind agent_kind_from_string(const std::string& s) {
  if (s == "dqn") return AgentKind::dqn;
  if (s == "pg") return AgentKind::pg;
  throw ConfigError("unknown agent kind '" + s + "'");
}

std::string to_string(AgentKind kind) { return kind == AgentKind::dqn ? "dqn" : "pg"; }

void validate_run_config(const TrainRunConfig& cfg) {
  if (cfg.augment != (cfg.aug_sigma > 0.0))
    throw ConfigError("aug_sigma must be positive exactly when augmentation is on");
  if (cfg.aug_sigma < 0.0) throw ConfigError("aug_sigma must be >= 0");
  if (cfg.hidden <= 0) throw ConfigError("hidden width must be positive");
  if (cfg.router.obs_dim <= 0) throw ConfigError("obs_dim must be positive");
  if (cfg.agent == AgentKind::dqn) {
    if (cfg.dqn.train_episodes <= 0) throw ConfigError("episode count must be positive");
    if (cfg.dqn.replay_capacity < cfg.dqn.batch_size)
      throw ConfigError("replay capacity must be >= batch size");
    if (cfg.dqn.epsilon_start < 0 || cfg.dqn.epsilon_start > 1 || cfg.dqn.epsilon_end < 0 ||
        cfg.dqn.epsilon_end > 1)
      throw ConfigError("epsilon must stay within [0, 1]");
    if (cfg.dqn.discount < 0 || cfg.dqn.discount > 1)
      throw ConfigError("discount must be in [0, 1]");
  } else {
    if (cfg.pg.train_episodes <= 0) throw ConfigError("episode count must be positive");
    if (cfg.pg.rollout_episodes <= 0) throw ConfigError("rollout size must be positive");
  }
}

AugmentStats compute_augment_stats(const EmbeddingBank& bank) {
  const std::vector<int> train = split_indices(bank, false);
  AugmentStats stats;
  stats.stddev.reserve(bank.experts.size());
  for (const auto& e : bank.experts) {
    Vec mean = Vec::Zero(e.dim), sq = Vec::Zero(e.dim);
    for (int s : train) {
      const auto row = bank.embedding_row(e.id, s);
      for (int d = 0; d < e.dim; ++d) {
        mean(d) += row[static_cast<std::size_t>(d)];
        sq(d) += static_cast<double>(row[static_cast<std::size_t>(d)]) *
                 static_cast<double>(row[static_cast<std::size_t>(d)]);
      }
    }
    const double n = static_cast<double>(train.size());
    mean /= n;
    Vec var = sq / n - mean.array().square().matrix();
    stats.stddev.push_back(var.array().max(0.0).sqrt().matrix());
  }
  return stats;
}

std::vector<float> augment_embedding(std::span<const float> src, const Vec& stddev,
                                     double aug_sigma, Rng& rng) {
  std::vector<float> out(src.begin(), src.end());
  if (aug_sigma == 0.0) return out;
  if (static_cast<Eigen::Index>(src.size()) != stddev.size())
    throw ShapeError("augment stddev dim mismatch");
  for (std::size_t d = 0; d < out.size(); ++d) {
    const double s = stddev(static_cast<Eigen::Index>(d));
    if (s > 0.0) out[d] = static_cast<float>(out[d] + aug_sigma * s * rng.normal());
  }
  return out;
}

namespace {

struct WindowStats {
  double reward = 0.0;
  long long correct = 0;
  double cost = 0.0;
  long long count = 0;

  void add(double ep_reward, bool ep_correct, double ep_cost) {
    reward += ep_reward;
    correct += ep_correct ? 1 : 0;
    cost += ep_cost;
    count += 1;
  }

  TrainLogRow flush(long long episode) {
    TrainLogRow row;
    row.episode = episode;
    if (count > 0) {
      row.mean_reward = reward / static_cast<double>(count);
      row.train_acc_window = 100.0 * static_cast<double>(correct) / static_cast<double>(count);
      row.mean_cost_tflops = cost / static_cast<double>(count);
    }
    *this = WindowStats{};
    return row;
  }
};

EmbeddingProvider make_provider(const EmbeddingBank& bank, const AugmentStats* stats,
                                double aug_sigma, Rng* aug_rng) {
  if (!stats) return raw_embedding_provider(bank);
  return [&bank, stats, aug_sigma, aug_rng](int expert, int sample) {
    return std::make_shared<const std::vector<float>>(
        augment_embedding(bank.embedding_row(expert, sample),
                          stats->stddev[static_cast<std::size_t>(expert)], aug_sigma, *aug_rng));
  };
}

TrainResult train_dqn(const EmbeddingBank& bank, const TrainRunConfig& cfg) {
  Rng master(cfg.seed);
  Rng init_rng = master.derive(1);
  Rng episode_rng = master.derive(2);
  Rng replay_rng = master.derive(3);
  Rng aug_rng = master.derive(4);

  DqnAgent agent(bank.experts, cfg.dqn, cfg.mode, cfg.router.obs_dim, cfg.hidden, init_rng);
  const AugmentStats stats = cfg.augment ? compute_augment_stats(bank) : AugmentStats{};
  RoutingEnv env(bank, cfg.router,
                 make_provider(bank, cfg.augment ? &stats : nullptr, cfg.aug_sigma, &aug_rng));
  const std::vector<int> train_idx = split_indices(bank, false);
  ReplayMemory replay(static_cast<std::size_t>(cfg.dqn.replay_capacity));

  TrainResult result;
  result.mode = cfg.mode;
  WindowStats window;
  try {
    for (long long ep = 0; ep < cfg.dqn.train_episodes; ++ep) {
      const double eps = epsilon_at(cfg.dqn, ep);
      const int sample =
          train_idx[static_cast<std::size_t>(episode_rng.uniform_int(static_cast<int>(train_idx.size())))];
      env.reset(sample);
      double ep_reward = 0.0;
      bool ep_correct = false;

      while (!env.state().done) {
        const Observation obs = env.observation();
        const ValidMask mask = env.valid_mask();
        const int a_idx = agent.select_action(obs, mask, eps, episode_rng);
        const Action action = action_from_index(a_idx);
        StepResult sr = env.step(action);
        ep_reward += sr.reward;
        if (action.kind == Action::Kind::classify)
          ep_correct = action.label == bank.labels[static_cast<std::size_t>(sample)];

        replay.push(Transition{obs, a_idx, sr.reward, std::move(sr.next_observation), sr.done,
                               std::move(sr.valid_mask)});
        if (static_cast<long long>(replay.size()) >= kWarmupTransitions &&
            static_cast<int>(replay.size()) >= cfg.dqn.batch_size) {
          const auto batch = replay.sample(cfg.dqn.batch_size, replay_rng);
          agent.learn_step(batch);
          if (agent.learn_steps() % cfg.dqn.target_sync_interval == 0) agent.sync_target();
        }
      }

      window.add(ep_reward, ep_correct, episode_cost(env.state()));
      if ((ep + 1) % kLogWindow == 0 || ep + 1 == cfg.dqn.train_episodes)
        result.log.push_back(window.flush(ep + 1));
    }
  } catch (const DivergenceError& e) {
    result.failed = true;
    result.fail_reason = e.what();
  }
  result.net = agent.online();
  return result;
}

TrainResult train_pg(const EmbeddingBank& bank, const TrainRunConfig& cfg) {
  Rng master(cfg.seed);
  Rng init_rng = master.derive(1);
  Rng episode_rng = master.derive(2);
  Rng aug_rng = master.derive(4);

  PgAgent agent(bank.experts, cfg.pg, cfg.mode, cfg.router.obs_dim, cfg.hidden, init_rng);
  const AugmentStats stats = cfg.augment ? compute_augment_stats(bank) : AugmentStats{};
  RoutingEnv env(bank, cfg.router,
                 make_provider(bank, cfg.augment ? &stats : nullptr, cfg.aug_sigma, &aug_rng));
  const std::vector<int> train_idx = split_indices(bank, false);

  TrainResult result;
  result.mode = cfg.mode;
  WindowStats window;
  std::vector<PgEpisode> rollout;
  rollout.reserve(static_cast<std::size_t>(cfg.pg.rollout_episodes));
  try {
    for (long long ep = 0; ep < cfg.pg.train_episodes; ++ep) {
      const int sample =
          train_idx[static_cast<std::size_t>(episode_rng.uniform_int(static_cast<int>(train_idx.size())))];
      env.reset(sample);
      PgEpisode episode;
      double ep_reward = 0.0;
      bool ep_correct = false;

      while (!env.state().done) {
        PgStep step;
        step.obs = env.observation();
        step.mask = env.valid_mask();
        step.action =
            agent.sample_action(step.obs, step.mask, episode_rng, &step.log_prob_old,
                                &step.value_old);
        const Action action = action_from_index(step.action);
        const StepResult sr = env.step(action);
        step.reward = sr.reward;
        ep_reward += sr.reward;
        if (action.kind == Action::Kind::classify)
          ep_correct = action.label == bank.labels[static_cast<std::size_t>(sample)];
        episode.push_back(std::move(step));
      }

      rollout.push_back(std::move(episode));
      if (static_cast<int>(rollout.size()) >= cfg.pg.rollout_episodes ||
          ep + 1 == cfg.pg.train_episodes) {
        agent.update(rollout);
        rollout.clear();
      }

      window.add(ep_reward, ep_correct, episode_cost(env.state()));
      if ((ep + 1) % kLogWindow == 0 || ep + 1 == cfg.pg.train_episodes)
        result.log.push_back(window.flush(ep + 1));
    }
  } catch (const DivergenceError& e) {
    result.failed = true;
    result.fail_reason = e.what();
  }
  result.net = agent.network();
  return result;
}

}  // namespace

TrainResult train(const EmbeddingBank& bank, const TrainRunConfig& cfg) {
  validate_run_config(cfg);
  return cfg.agent == AgentKind::dqn ? train_dqn(bank, cfg) : train_pg(bank, cfg);
}

void export_train_log_csv(std::span<const TrainLogRow> log, std::ostream& os) {
  os << "episode,mean_reward,train_acc_window,mean_cost_tflops\n";
  char buf[160];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6g,%.1f,%.6g\n", row.episode, row.mean_reward,
                  row.train_acc_window, row.mean_cost_tflops);
    os << buf;
  }
}

SweepCell run_cell(const EmbeddingBank& bank, const TrainRunConfig& cfg, bool overfit_label) {
  SweepCell cell;
  MetricsRecord& rec = cell.record;
  rec.lambda = cfg.router.cost_coefficient;
  rec.seed = cfg.seed;
  rec.agent = to_string(cfg.agent);
  rec.mode = to_string(cfg.mode);
  rec.augment = cfg.augment;
  rec.overfit = overfit_label;
  rec.episodes = cfg.agent == AgentKind::dqn ? cfg.dqn.train_episodes : cfg.pg.train_episodes;

  TrainResult trained = train(bank, cfg);
  if (trained.failed) {
    cell.failed = true;
    cell.fail_reason = trained.fail_reason;
    rec.episodes = 0;
    return cell;
  }

  const PolicyFn policy = greedy_policy(trained.net, trained.mode);
  const EvalResult on_train = evaluate(policy, bank, Split::train, cfg.router);
  EvalResult on_test = evaluate(policy, bank, Split::test, cfg.router);
  rec.train_acc = on_train.accuracy_pct;
  rec.test_acc = on_test.accuracy_pct;
  rec.avg_tflops = on_test.avg_tflops;
  rec.acc_per_tflop = acc_per_cost(rec);
  cell.test_assignments = std::move(on_test.assignments);
  return cell;
}

std::vector<SweepCell> sweep(const EmbeddingBank& bank, const SweepGrid& grid) {
  if (grid.lambdas.empty() || grid.seeds.empty())
    throw ConfigError("sweep grid must list lambdas and seeds");
  std::vector<TrainRunConfig> cfgs;
  for (double lambda : grid.lambdas) {
    for (std::uint64_t seed : grid.seeds) {
      TrainRunConfig cfg = grid.base;
      cfg.router.cost_coefficient = lambda;
      cfg.seed = seed;
      cfgs.push_back(cfg);
    }
  }

  std::vector<SweepCell> cells(cfgs.size());
  const int jobs = std::max(1, grid.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < cfgs.size(); ++i)
      cells[i] = run_cell(bank, cfgs[i], grid.overfit_bank);
    return cells;
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfgs.size()) return;
      try {
        cells[i] = run_cell(bank, cfgs[i], grid.overfit_bank);
      } catch (const std::exception& e) {
        cells[i].failed = true;
        cells[i].fail_reason = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<std::size_t>(static_cast<std::size_t>(jobs), cfgs.size()); ++t)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return cells;
}

}  // namespace srpmoe
