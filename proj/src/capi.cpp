#include "srpmoe/srpmoe.h"

#include <cstdlib>
#include <cstring>
#include <sstream>
#include <string>

#include <json.hpp>

#include "core/bank.hpp"
#include "core/errors.hpp"
#include "core/evaluator.hpp"
#include "core/oracle.hpp"
#include "core/router_net.hpp"
#include "core/trainer.hpp"

using nlohmann::json;

struct srpmoe_bank {
  srpmoe::EmbeddingBank bank;
};

struct srpmoe_policy {
  srpmoe::RouterNetwork net;
  srpmoe::ObserveMode mode = srpmoe::ObserveMode::direct;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename F>
int guarded(F&& f) {
  try {
    f();
    return SRPMOE_OK;
  } catch (const srpmoe::ConfigError& e) {
    set_error(e.what());
    return SRPMOE_ERR_CONFIG;
  } catch (const srpmoe::FormatError& e) {
    set_error(e.what());
    return SRPMOE_ERR_FORMAT;
  } catch (const srpmoe::DataError& e) {
    set_error(e.what());
    return SRPMOE_ERR_DATA;
  } catch (const std::exception& e) {
    set_error(e.what());
    return SRPMOE_ERR_RUNTIME;
  }
}

int invalid_argument(const char* what) {
  set_error(what);
  return SRPMOE_ERR_INVALID_ARGUMENT;
}

json parse_config(const char* text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw srpmoe::ConfigError(std::string(what) + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw srpmoe::ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

int cheapest_expert(std::span<const srpmoe::ExpertSpec> experts) {
  int best = 0;
  for (std::size_t i = 1; i < experts.size(); ++i)
    if (experts[i].cost_tflops < experts[static_cast<std::size_t>(best)].cost_tflops)
      best = static_cast<int>(i);
  return best;
}

std::vector<srpmoe::ExpertSpec> parse_experts(const json& cfg) {
  if (!cfg.contains("experts")) return srpmoe::default_expert_triple();
  std::vector<srpmoe::ExpertSpec> experts;
  try {
    for (const auto& j : cfg.at("experts")) {
      srpmoe::ExpertSpec e;
      e.id = j.at("id").get<int>();
      e.name = j.at("name").get<std::string>();
      e.dim = j.at("dim").get<int>();
      e.cost_tflops = j.at("cost_tflops").get<double>();
      e.fidelity = j.value("fidelity", 1.0);
      experts.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw srpmoe::ConfigError(std::string("experts config: ") + e.what());
  }
  return experts;
}

srpmoe::SyntheticConfig parse_synthetic(const json& cfg) {
  srpmoe::SyntheticConfig s;
  s.num_train = get_or(cfg, "num_train", s.num_train);
  s.num_test = get_or(cfg, "num_test", s.num_test);
  s.class_separation = get_or(cfg, "class_separation", s.class_separation);
  s.latent_noise = get_or(cfg, "latent_noise", s.latent_noise);
  s.overfit_gap = get_or(cfg, "overfit_gap", s.overfit_gap);
  s.seed = get_or(cfg, "seed", s.seed);
  return s;
}

srpmoe::TrainRunConfig parse_run_config(const json& cfg,
                                        std::span<const srpmoe::ExpertSpec> experts) {
  srpmoe::TrainRunConfig run;
  run.agent = srpmoe::agent_kind_from_string(get_or<std::string>(cfg, "agent", "dqn"));
  run.mode = srpmoe::observe_mode_from_string(get_or<std::string>(cfg, "mode", "direct"));
  run.augment = get_or(cfg, "augment", true);
  run.aug_sigma = get_or(cfg, "aug_sigma", run.augment ? 0.1 : 0.0);
  if (!run.augment) run.aug_sigma = 0.0;
  run.seed = get_or<std::uint64_t>(cfg, "seed", 0);
  run.hidden = get_or(cfg, "hidden", 64);

  run.router.cost_coefficient = get_or(cfg, "lambda", 0.0);
  run.router.initial_expert = cheapest_expert(experts);
  if (cfg.contains("router")) {
    const json& r = cfg.at("router");
    run.router.obs_dim = get_or(r, "obs_dim", run.router.obs_dim);
    run.router.initial_expert = get_or(r, "initial_expert", run.router.initial_expert);
    run.router.max_steps = get_or(r, "max_steps", run.router.max_steps);
  }

  const long long episodes = get_or<long long>(cfg, "episodes", 50000);
  run.dqn.train_episodes = episodes;
  run.pg.train_episodes = episodes;
  if (cfg.contains("dqn")) {
    const json& d = cfg.at("dqn");
    run.dqn.learning_rate = get_or(d, "learning_rate", run.dqn.learning_rate);
    run.dqn.discount = get_or(d, "discount", run.dqn.discount);
    run.dqn.epsilon_start = get_or(d, "epsilon_start", run.dqn.epsilon_start);
    run.dqn.epsilon_end = get_or(d, "epsilon_end", run.dqn.epsilon_end);
    run.dqn.epsilon_decay_fraction =
        get_or(d, "epsilon_decay_fraction", run.dqn.epsilon_decay_fraction);
    run.dqn.replay_capacity = get_or(d, "replay_capacity", run.dqn.replay_capacity);
    run.dqn.batch_size = get_or(d, "batch_size", run.dqn.batch_size);
    run.dqn.target_sync_interval =
        get_or(d, "target_sync_interval", run.dqn.target_sync_interval);
    run.dqn.train_episodes = get_or(d, "train_episodes", run.dqn.train_episodes);
  }
  if (cfg.contains("pg")) {
    const json& p = cfg.at("pg");
    run.pg.learning_rate = get_or(p, "learning_rate", run.pg.learning_rate);
    run.pg.clip_ratio = get_or(p, "clip_ratio", run.pg.clip_ratio);
    run.pg.epochs = get_or(p, "epochs", run.pg.epochs);
    run.pg.rollout_episodes = get_or(p, "rollout_episodes", run.pg.rollout_episodes);
    run.pg.entropy_coef = get_or(p, "entropy_coef", run.pg.entropy_coef);
    run.pg.discount = get_or(p, "discount", run.pg.discount);
    run.pg.train_episodes = get_or(p, "train_episodes", run.pg.train_episodes);
  }
  return run;
}

void check_policy_bank(const srpmoe_policy& policy, const srpmoe::EmbeddingBank& bank) {
  if (policy.net.experts.size() != bank.experts.size())
    throw srpmoe::ConfigError("checkpoint and bank disagree on expert count");
  for (std::size_t i = 0; i < bank.experts.size(); ++i)
    if (policy.net.experts[i].dim != bank.experts[i].dim)
      throw srpmoe::ConfigError("checkpoint and bank disagree on expert " +
                                std::to_string(i) + " dim");
}

}  // namespace

extern "C" {

const char* srpmoe_version(void) { return "0.1.0"; }

const char* srpmoe_last_error(void) { return g_last_error.c_str(); }

void srpmoe_string_free(char* s) { std::free(s); }

int srpmoe_bank_generate(const char* config_json, srpmoe_bank** out_bank) {
  if (!config_json || !out_bank) return invalid_argument("null argument");
  return guarded([&] {
    const json cfg = parse_config(config_json, "bank config");
    const auto experts = parse_experts(cfg);
    auto* handle = new srpmoe_bank{srpmoe::generate_synthetic(parse_synthetic(cfg), experts)};
    *out_bank = handle;
  });
}

int srpmoe_bank_load(const char* manifest_path, srpmoe_bank** out_bank) {
  if (!manifest_path || !out_bank) return invalid_argument("null argument");
  return guarded([&] { *out_bank = new srpmoe_bank{srpmoe::load_bank(manifest_path)}; });
}

int srpmoe_bank_save(const srpmoe_bank* bank, const char* out_dir, char** out_manifest_path) {
  if (!bank || !out_dir) return invalid_argument("null argument");
  return guarded([&] {
    const std::string path = srpmoe::save_bank(bank->bank, out_dir);
    if (out_manifest_path) *out_manifest_path = dup_string(path);
  });
}

int srpmoe_bank_info(const srpmoe_bank* bank, char** out_info_json) {
  if (!bank || !out_info_json) return invalid_argument("null argument");
  return guarded([&] {
    json experts = json::array();
    for (const auto& e : bank->bank.experts)
      experts.push_back(
          {{"id", e.id}, {"name", e.name}, {"dim", e.dim}, {"cost_tflops", e.cost_tflops}});
    const json info = {
        {"num_samples", bank->bank.num_samples},
        {"num_train", static_cast<int>(srpmoe::split_indices(bank->bank, false).size())},
        {"num_test", static_cast<int>(srpmoe::split_indices(bank->bank, true).size())},
        {"has_latent", bank->bank.has_latent()},
        {"experts", experts}};
    *out_info_json = dup_string(info.dump());
  });
}

void srpmoe_bank_free(srpmoe_bank* bank) { delete bank; }

int srpmoe_train(const srpmoe_bank* bank, const char* run_config_json, srpmoe_policy** out_policy,
                 char** out_log_csv) {
  if (!bank || !run_config_json || !out_policy) return invalid_argument("null argument");
  return guarded([&] {
    const json cfg = parse_config(run_config_json, "run config");
    const srpmoe::TrainRunConfig run = parse_run_config(cfg, bank->bank.experts);
    srpmoe::TrainResult result = srpmoe::train(bank->bank, run);
    if (result.failed) throw srpmoe::Error("training diverged: " + result.fail_reason);
    if (out_log_csv) {
      std::ostringstream os;
      srpmoe::export_train_log_csv(result.log, os);
      *out_log_csv = dup_string(os.str());
    }
    *out_policy = new srpmoe_policy{std::move(result.net), result.mode};
  });
}

int srpmoe_policy_save(const srpmoe_policy* policy, const char* path) {
  if (!policy || !path) return invalid_argument("null argument");
  return guarded([&] { srpmoe::save_router_file(path, policy->net, policy->mode); });
}

int srpmoe_policy_load(const char* path, srpmoe_policy** out_policy) {
  if (!path || !out_policy) return invalid_argument("null argument");
  return guarded([&] {
    srpmoe::LoadedRouter loaded = srpmoe::load_router_file(path);
    *out_policy = new srpmoe_policy{std::move(loaded.net), loaded.mode};
  });
}

int srpmoe_policy_info(const srpmoe_policy* policy, char** out_info_json) {
  if (!policy || !out_info_json) return invalid_argument("null argument");
  return guarded([&] {
    json experts = json::array();
    for (const auto& e : policy->net.experts)
      experts.push_back({{"id", e.id}, {"dim", e.dim}});
    const json info = {
        {"obs_dim", policy->net.obs_dim},
        {"mode", srpmoe::to_string(policy->mode)},
        {"head", policy->net.head == srpmoe::HeadKind::dueling ? "dueling" : "policy"},
        {"experts", experts}};
    *out_info_json = dup_string(info.dump());
  });
}

void srpmoe_policy_free(srpmoe_policy* policy) { delete policy; }

int srpmoe_evaluate(const srpmoe_policy* policy, const srpmoe_bank* bank,
                    const char* eval_config_json, char** out_metrics_json,
                    char** out_assignments_csv) {
  if (!policy || !bank || !eval_config_json) return invalid_argument("null argument");
  return guarded([&] {
    const json cfg = parse_config(eval_config_json, "eval config");
    check_policy_bank(*policy, bank->bank);
    const std::string split_name = get_or<std::string>(cfg, "split", "test");
    if (split_name != "test" && split_name != "train")
      throw srpmoe::ConfigError("split must be 'train' or 'test'");

    srpmoe::RouterConfig router;
    router.obs_dim = policy->net.obs_dim;
    router.initial_expert =
        get_or(cfg, "initial_expert", cheapest_expert(bank->bank.experts));

    const srpmoe::EvalResult result = srpmoe::evaluate(
        srpmoe::greedy_policy(policy->net, policy->mode), bank->bank,
        split_name == "test" ? srpmoe::Split::test : srpmoe::Split::train, router);

    if (out_metrics_json) {
      const json metrics = {{"accuracy_pct", result.accuracy_pct},
                            {"avg_tflops", result.avg_tflops},
                            {"num_samples", static_cast<int>(result.assignments.size())},
                            {"split", split_name}};
      *out_metrics_json = dup_string(metrics.dump());
    }
    if (out_assignments_csv) {
      std::ostringstream os;
      srpmoe::export_assignments_csv(result.assignments, os);
      *out_assignments_csv = dup_string(os.str());
    }
  });
}

int srpmoe_sweep(const srpmoe_bank* bank, const char* sweep_config_json, char** out_metrics_csv) {
  if (!bank || !sweep_config_json || !out_metrics_csv) return invalid_argument("null argument");
  return guarded([&] {
    const json cfg = parse_config(sweep_config_json, "sweep config");
    srpmoe::SweepGrid grid;
    grid.base = parse_run_config(cfg, bank->bank.experts);
    if (cfg.contains("lambdas")) grid.lambdas = cfg.at("lambdas").get<std::vector<double>>();
    if (cfg.contains("seeds")) grid.seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
    grid.jobs = get_or(cfg, "jobs", 1);
    grid.overfit_bank = get_or(cfg, "overfit_bank", false);

    const auto cells = srpmoe::sweep(bank->bank, grid);
    std::vector<srpmoe::MetricsRecord> records;
    records.reserve(cells.size());
    for (const auto& c : cells) records.push_back(c.record);
    std::ostringstream os;
    srpmoe::export_metrics_csv(records, os);
    *out_metrics_csv = dup_string(os.str());
  });
}

int srpmoe_oracle(const char* oracle_config_json, char** out_report_json) {
  if (!oracle_config_json || !out_report_json) return invalid_argument("null argument");
  return guarded([&] {
    const json cfg = parse_config(oracle_config_json, "oracle config");
    const int K = get_or(cfg, "quant_bins", 8);
    const double lambda = get_or(cfg, "lambda", 0.0);
    const std::uint64_t seed = get_or<std::uint64_t>(cfg, "seed", 1);

    std::vector<srpmoe::ExpertSpec> experts = parse_experts(cfg);
    const int num_experts = get_or(cfg, "num_experts", static_cast<int>(experts.size()));
    if (num_experts < 1 || num_experts > static_cast<int>(experts.size()))
      throw srpmoe::ConfigError("num_experts out of range");
    experts.resize(static_cast<std::size_t>(num_experts));

    srpmoe::SyntheticConfig synth;
    synth.class_separation = get_or(cfg, "class_separation", synth.class_separation);
    synth.latent_noise = get_or(cfg, "latent_noise", synth.latent_noise);

    const srpmoe::QuantizedMdp mdp =
        srpmoe::build_quantized(synth, experts, K, lambda, cheapest_expert(experts));
    const srpmoe::OracleSolution solution = srpmoe::solve_optimal(mdp);

    const srpmoe::EmbeddingBank qbank = srpmoe::quantized_bank(
        mdp, get_or(cfg, "num_train", 4000), get_or(cfg, "num_test", 1000), seed);

    srpmoe::TrainRunConfig run;
    run.agent = srpmoe::AgentKind::dqn;
    run.router.cost_coefficient = lambda;
    run.router.obs_dim = get_or(cfg, "obs_dim", 32);
    run.router.initial_expert = mdp.initial_expert;
    run.hidden = get_or(cfg, "hidden", 32);
    run.augment = false;
    run.aug_sigma = 0.0;
    run.seed = seed;
    run.dqn.train_episodes = get_or<long long>(cfg, "episodes", 4000);
    run.dqn.learning_rate = get_or(cfg, "learning_rate", 2e-3);

    srpmoe::TrainResult trained = srpmoe::train(qbank, run);
    if (trained.failed) throw srpmoe::Error("oracle run diverged: " + trained.fail_reason);

    const double learned =
        srpmoe::policy_value(mdp, srpmoe::wrap_router_policy(trained.net, trained.mode, mdp));
    json report = {{"optimal_value", solution.optimal_value},
                   {"learned_value", learned},
                   {"K", K},
                   {"lambda", lambda}};
    if (std::abs(solution.optimal_value) > 1e-12)
      report["ratio"] = learned / solution.optimal_value;
    else
      report["ratio"] = nullptr;
    *out_report_json = dup_string(report.dump());
  });
}

int srpmoe_frontier_svg(const char* metrics_csv, char** out_svg) {
  if (!metrics_csv || !out_svg) return invalid_argument("null argument");
  return guarded([&] {
    std::istringstream is{std::string(metrics_csv)};
    const auto records = srpmoe::parse_metrics_csv(is);
    std::ostringstream os;
    srpmoe::export_frontier_svg(records, os);
    *out_svg = dup_string(os.str());
  });
}

}  // extern "C"
