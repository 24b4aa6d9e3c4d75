// srpmoe command-line front end. All engine work happens behind the C API in
// libsrpmoe; this binary only resolves configuration (defaults <- config file
// <- flags), shuttles JSON/CSV strings, and writes output files.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "srpmoe/srpmoe.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CliError {
  int code;
  std::string message;
};

void check(int status, const std::string& what) {
  if (status == SRPMOE_OK) return;
  const int code =
      (status == SRPMOE_ERR_CONFIG || status == SRPMOE_ERR_INVALID_ARGUMENT) ? kExitConfig
                                                                             : kExitRuntime;
  throw CliError{code, what + ": " + srpmoe_last_error()};
}

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { srpmoe_string_free(ptr); }
  std::string str() const { return ptr ? ptr : ""; }
};

void merge_into(json& base, const json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object())
      merge_into(base[key], value);
    else
      base[key] = value;
  }
}

json default_config() {
  return json{
      {"seed", 0},
      {"synthetic",
       {{"num_train", 1600},
        {"num_test", 400},
        {"class_separation", 1.0},
        {"latent_noise", 1.0},
        {"overfit_gap", 1.0}}},
      {"run",
       {{"agent", "dqn"},
        {"lambda", 0.0},
        {"mode", "direct"},
        {"augment", true},
        {"aug_sigma", 0.1},
        {"episodes", 50000},
        {"hidden", 64},
        {"router", {{"obs_dim", 768}, {"max_steps", 0}}},
        {"dqn",
         {{"learning_rate", 1e-3},
          {"discount", 0.99},
          {"epsilon_start", 1.0},
          {"epsilon_end", 0.05},
          {"epsilon_decay_fraction", 0.4},
          {"replay_capacity", 50000},
          {"batch_size", 64},
          {"target_sync_interval", 1000}}},
        {"pg",
         {{"learning_rate", 1e-3},
          {"clip_ratio", 0.2},
          {"epochs", 4},
          {"rollout_episodes", 64},
          {"entropy_coef", 0.01},
          {"discount", 0.99}}}}},
      {"sweep",
       {{"lambdas", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}}, {"seeds", {1, 2, 3}}, {"jobs", 1}}},
      {"oracle",
       {{"quant_bins", 8},
        {"num_experts", 3},
        {"episodes", 4000},
        {"num_train", 4000},
        {"num_test", 1000},
        {"obs_dim", 32},
        {"hidden", 32}}},
  };
}

/// Flag values collected by CLI11; only flags the user actually passed
/// override the config file.
struct FlagBag {
  std::string config_path, out_dir, bank, checkpoint, agent, mode, lambdas, seeds;
  std::uint64_t seed = 0;
  double lambda = 0.0, aug_sigma = 0.0, overfit_gap = 1.0;
  long long episodes = 0;
  int jobs = 0, quant_bins = 0;
  bool no_augment = false;
};

std::vector<double> parse_list(const std::string& csv, const char* what) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw CliError{kExitConfig, std::string("cannot parse ") + what + " entry '" + tok + "'"};
    }
  }
  if (out.empty()) throw CliError{kExitConfig, std::string(what) + " list is empty"};
  return out;
}

json resolve_config(const CLI::App& cmd, const FlagBag& flags) {
  json cfg = default_config();
  bool seed_from_file = false;
  if (!flags.config_path.empty()) {
    std::ifstream is(flags.config_path);
    if (!is) throw CliError{kExitConfig, "cannot open config file " + flags.config_path};
    json file_cfg;
    try {
      is >> file_cfg;
    } catch (const json::exception& e) {
      throw CliError{kExitConfig, std::string("config file is not valid JSON: ") + e.what()};
    }
    seed_from_file = file_cfg.contains("seed");
    merge_into(cfg, file_cfg);
  }

  const auto passed = [&cmd](const std::string& name) {
    const CLI::Option* opt = cmd.get_option_no_throw(name);
    return opt && opt->count() > 0;
  };
  if (passed("--seed")) {
    cfg["seed"] = flags.seed;
  } else if (!seed_from_file) {
    if (const char* env = std::getenv("SRPMOE_SEED"))
      cfg["seed"] = std::strtoull(env, nullptr, 10);
  }
  if (passed("--lambda")) cfg["run"]["lambda"] = flags.lambda;
  if (passed("--agent")) cfg["run"]["agent"] = flags.agent;
  if (passed("--mode")) cfg["run"]["mode"] = flags.mode;
  if (passed("--no-augment")) {
    cfg["run"]["augment"] = false;
    cfg["run"]["aug_sigma"] = 0.0;
  }
  if (passed("--aug-sigma")) {
    cfg["run"]["aug_sigma"] = flags.aug_sigma;
    cfg["run"]["augment"] = flags.aug_sigma > 0.0;
  }
  if (passed("--episodes")) {
    cfg["run"]["episodes"] = flags.episodes;
    cfg["oracle"]["episodes"] = flags.episodes;
  }
  if (passed("--overfit-gap")) cfg["synthetic"]["overfit_gap"] = flags.overfit_gap;
  if (passed("--lambdas")) cfg["sweep"]["lambdas"] = parse_list(flags.lambdas, "--lambdas");
  if (passed("--seeds")) {
    json seeds = json::array();
    for (double s : parse_list(flags.seeds, "--seeds"))
      seeds.push_back(static_cast<std::uint64_t>(s));
    cfg["sweep"]["seeds"] = seeds;
  }
  if (passed("--jobs")) cfg["sweep"]["jobs"] = flags.jobs;
  if (passed("--quant-bins")) cfg["oracle"]["quant_bins"] = flags.quant_bins;
  if (passed("--bank")) cfg["bank"] = flags.bank;
  if (passed("--checkpoint")) cfg["checkpoint"] = flags.checkpoint;
  if (passed("--out")) cfg["out"] = flags.out_dir;
  return cfg;
}

fs::path require_out(const json& cfg) {
  if (!cfg.contains("out") || cfg.at("out").get<std::string>().empty())
    throw CliError{kExitConfig, "--out is required for this subcommand"};
  const fs::path out(cfg.at("out").get<std::string>());
  fs::create_directories(out);
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CliError{kExitRuntime, "cannot write " + path.string()};
  os << content;
}

/// Every run leaves the fully resolved configuration next to its outputs so
/// it can be reproduced exactly.
void echo_config(const fs::path& out, const json& cfg) {
  write_file(out / "config.json", cfg.dump(2) + "\n");
}

std::string bank_config_json(const json& cfg) {
  json bank_cfg = cfg.at("synthetic");
  bank_cfg["seed"] = cfg.at("seed");
  return bank_cfg.dump();
}

std::string run_config_json(const json& cfg) {
  json run = cfg.at("run");
  run["seed"] = cfg.at("seed");
  json dqn = run.at("dqn");
  dqn["train_episodes"] = run.at("episodes");
  run["dqn"] = dqn;
  json pg = run.at("pg");
  pg["train_episodes"] = run.at("episodes");
  run["pg"] = pg;
  return run.dump();
}

struct BankHandle {
  srpmoe_bank* bank = nullptr;
  ~BankHandle() { srpmoe_bank_free(bank); }
};

struct PolicyHandle {
  srpmoe_policy* policy = nullptr;
  ~PolicyHandle() { srpmoe_policy_free(policy); }
};

/// Loads --bank when given, otherwise generates the synthetic default.
void obtain_bank(const json& cfg, BankHandle& bank) {
  if (cfg.contains("bank") && !cfg.at("bank").get<std::string>().empty()) {
    check(srpmoe_bank_load(cfg.at("bank").get<std::string>().c_str(), &bank.bank), "load bank");
  } else {
    check(srpmoe_bank_generate(bank_config_json(cfg).c_str(), &bank.bank), "generate bank");
  }
}

int cmd_synth(const json& cfg) {
  const fs::path out = require_out(cfg);
  BankHandle bank;
  check(srpmoe_bank_generate(bank_config_json(cfg).c_str(), &bank.bank), "generate bank");
  OwnedString manifest;
  check(srpmoe_bank_save(bank.bank, out.string().c_str(), &manifest.ptr), "save bank");
  echo_config(out, cfg);
  OwnedString info;
  check(srpmoe_bank_info(bank.bank, &info.ptr), "bank info");
  const json parsed = json::parse(info.str());
  std::cout << "bank: " << parsed.at("num_samples").get<int>() << " samples, "
            << parsed.at("experts").size() << " experts -> " << manifest.str() << "\n";
  return kExitOk;
}

int cmd_train(const json& cfg) {
  const fs::path out = require_out(cfg);
  BankHandle bank;
  obtain_bank(cfg, bank);

  PolicyHandle policy;
  OwnedString log;
  check(srpmoe_train(bank.bank, run_config_json(cfg).c_str(), &policy.policy, &log.ptr), "train");
  const fs::path ckpt = out / "router.ckpt";
  check(srpmoe_policy_save(policy.policy, ckpt.string().c_str()), "save checkpoint");
  write_file(out / "train_log.csv", log.str());
  echo_config(out, cfg);

  OwnedString metrics;
  check(srpmoe_evaluate(policy.policy, bank.bank, R"({"split":"test"})", &metrics.ptr, nullptr),
        "evaluate");
  const json m = json::parse(metrics.str());
  std::cout << "trained " << cfg.at("run").at("agent").get<std::string>() << " (lambda "
            << cfg.at("run").at("lambda").get<double>() << "): test acc "
            << m.at("accuracy_pct").get<double>() << "%, avg " << m.at("avg_tflops").get<double>()
            << " TFLOPs -> " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_sweep(const json& cfg) {
  const fs::path out = require_out(cfg);
  BankHandle bank;
  obtain_bank(cfg, bank);

  json sweep_cfg = json::parse(run_config_json(cfg));
  sweep_cfg["lambdas"] = cfg.at("sweep").at("lambdas");
  sweep_cfg["seeds"] = cfg.at("sweep").at("seeds");
  sweep_cfg["jobs"] = cfg.at("sweep").at("jobs");
  sweep_cfg["overfit_bank"] = cfg.at("synthetic").at("overfit_gap").get<double>() < 1.0;

  OwnedString csv;
  check(srpmoe_sweep(bank.bank, sweep_cfg.dump().c_str(), &csv.ptr), "sweep");
  write_file(out / "metrics.csv", csv.str());
  OwnedString svg;
  check(srpmoe_frontier_svg(csv.str().c_str(), &svg.ptr), "render frontier");
  write_file(out / "frontier.svg", svg.str());
  echo_config(out, cfg);
  std::cout << "sweep: " << cfg.at("sweep").at("lambdas").size() << " lambdas x "
            << cfg.at("sweep").at("seeds").size() << " seeds -> " << (out / "metrics.csv").string()
            << ", " << (out / "frontier.svg").string() << "\n";
  return kExitOk;
}

int cmd_eval(const json& cfg) {
  if (!cfg.contains("checkpoint") || cfg.at("checkpoint").get<std::string>().empty())
    throw CliError{kExitConfig, "--checkpoint is required for eval"};
  if (!cfg.contains("bank") || cfg.at("bank").get<std::string>().empty())
    throw CliError{kExitConfig, "--bank is required for eval"};
  const fs::path out = require_out(cfg);

  BankHandle bank;
  check(srpmoe_bank_load(cfg.at("bank").get<std::string>().c_str(), &bank.bank), "load bank");
  PolicyHandle policy;
  check(srpmoe_policy_load(cfg.at("checkpoint").get<std::string>().c_str(), &policy.policy),
        "load checkpoint");

  OwnedString metrics, assignments;
  check(srpmoe_evaluate(policy.policy, bank.bank, R"({"split":"test"})", &metrics.ptr,
                        &assignments.ptr),
        "evaluate");
  write_file(out / "eval_metrics.json", metrics.str() + "\n");
  write_file(out / "assignments.csv", assignments.str());
  echo_config(out, cfg);
  const json m = json::parse(metrics.str());
  std::cout << "eval: acc " << m.at("accuracy_pct").get<double>() << "%, avg "
            << m.at("avg_tflops").get<double>() << " TFLOPs over "
            << m.at("num_samples").get<int>() << " samples -> "
            << (out / "assignments.csv").string() << "\n";
  return kExitOk;
}

int cmd_oracle(const json& cfg) {
  json oracle_cfg = cfg.at("oracle");
  oracle_cfg["seed"] = cfg.at("seed");
  oracle_cfg["lambda"] = cfg.at("run").at("lambda");
  OwnedString report;
  check(srpmoe_oracle(oracle_cfg.dump().c_str(), &report.ptr), "oracle");
  if (cfg.contains("out") && !cfg.at("out").get<std::string>().empty()) {
    const fs::path out = require_out(cfg);
    write_file(out / "oracle_report.json", report.str() + "\n");
    echo_config(out, cfg);
    std::cout << "oracle report -> " << (out / "oracle_report.json").string() << "\n";
  } else {
    std::cout << report.str() << "\n";
  }
  return kExitOk;
}

int cmd_plot(const json& cfg, const std::string& metrics_path) {
  const fs::path out = require_out(cfg);
  std::ifstream is(metrics_path);
  if (!is) throw CliError{kExitConfig, "cannot open metrics CSV " + metrics_path};
  std::ostringstream buf;
  buf << is.rdbuf();
  OwnedString svg;
  check(srpmoe_frontier_svg(buf.str().c_str(), &svg.ptr), "render frontier");
  write_file(out / "frontier.svg", svg.str());
  echo_config(out, cfg);
  std::cout << "frontier -> " << (out / "frontier.svg").string() << "\n";
  return kExitOk;
}

void add_common_flags(CLI::App* cmd, FlagBag& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file (flags override it)");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--seed", flags.seed, "master seed (SRPMOE_SEED is the env fallback)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"srpmoe: cost-aware recurrent mixture-of-experts routing engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(srpmoe_version()));

  FlagBag flags;
  std::string plot_input;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic embedding bank");
  add_common_flags(synth, flags);
  synth->add_option("--overfit-gap", flags.overfit_gap,
                    "scale train-split deviations of higher-fidelity experts (<1 = overfit)");

  CLI::App* train = app.add_subcommand("train", "train one router");
  add_common_flags(train, flags);
  train->add_option("--bank", flags.bank, "bank manifest (default: synthetic default bank)");
  train->add_option("--lambda", flags.lambda, "cost coefficient");
  train->add_option("--agent", flags.agent, "dqn|pg")->check(CLI::IsMember({"dqn", "pg"}));
  train->add_option("--mode", flags.mode, "direct|aggregated")
      ->check(CLI::IsMember({"direct", "aggregated"}));
  train->add_flag("--no-augment", flags.no_augment, "disable embedding augmentation");
  train->add_option("--aug-sigma", flags.aug_sigma, "augmentation noise scale");
  train->add_option("--episodes", flags.episodes, "training episodes");
  train->add_option("--overfit-gap", flags.overfit_gap, "synthetic bank overfit gap");

  CLI::App* sweep = app.add_subcommand("sweep", "train a lambda x seed grid");
  add_common_flags(sweep, flags);
  sweep->add_option("--bank", flags.bank, "bank manifest (default: synthetic default bank)");
  sweep->add_option("--lambdas", flags.lambdas, "comma-separated cost coefficients");
  sweep->add_option("--seeds", flags.seeds, "comma-separated seeds");
  sweep->add_option("--jobs", flags.jobs, "parallel sweep cells");
  sweep->add_option("--agent", flags.agent, "dqn|pg")->check(CLI::IsMember({"dqn", "pg"}));
  sweep->add_option("--mode", flags.mode, "direct|aggregated")
      ->check(CLI::IsMember({"direct", "aggregated"}));
  sweep->add_flag("--no-augment", flags.no_augment, "disable embedding augmentation");
  sweep->add_option("--aug-sigma", flags.aug_sigma, "augmentation noise scale");
  sweep->add_option("--episodes", flags.episodes, "training episodes per cell");
  sweep->add_option("--overfit-gap", flags.overfit_gap, "synthetic bank overfit gap");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint against a bank");
  add_common_flags(eval, flags);
  eval->add_option("--checkpoint", flags.checkpoint, "router checkpoint path");
  eval->add_option("--bank", flags.bank, "bank manifest");

  CLI::App* oracle = app.add_subcommand("oracle", "exact solver vs trained router");
  add_common_flags(oracle, flags);
  oracle->add_option("--lambda", flags.lambda, "cost coefficient");
  oracle->add_option("--quant-bins", flags.quant_bins, "latent bins K");
  oracle->add_option("--episodes", flags.episodes, "router training episodes");

  CLI::App* plot = app.add_subcommand("plot", "render a metrics CSV as an SVG frontier");
  add_common_flags(plot, flags);
  plot->add_option("metrics", plot_input, "metrics CSV produced by sweep")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    const json cfg = resolve_config(*cmd, flags);
    if (cmd == synth) return cmd_synth(cfg);
    if (cmd == train) return cmd_train(cfg);
    if (cmd == sweep) return cmd_sweep(cfg);
    if (cmd == eval) return cmd_eval(cfg);
    if (cmd == oracle) return cmd_oracle(cfg);
    if (cmd == plot) return cmd_plot(cfg, plot_input);
    throw CliError{kExitConfig, "unknown subcommand"};
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
