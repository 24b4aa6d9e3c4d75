#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/dqn.hpp"
#include "core/evaluator.hpp"
#include "core/pg.hpp"

namespace srpmoe {

enum class AgentKind { dqn, pg };

AgentKind agent_kind_from_string(const std::string& s);
std::string to_string(AgentKind kind);

struct TrainRunConfig {
  AgentKind agent = AgentKind::dqn;
  RouterConfig router;
  AgentConfig dqn;
  PGConfig pg;
  ObserveMode mode = ObserveMode::direct;
  bool augment = true;
  double aug_sigma = 0.1;  // zero iff augment is off
  std::uint64_t seed = 0;
  int hidden = 64;
};

void validate_run_config(const TrainRunConfig& cfg);

/// Per-dimension standard deviations over the train split, one vector per
/// expert. Augmentation noise is scaled by these so all dimensions are
/// perturbed proportionally.
struct AugmentStats {
  std::vector<Vec> stddev;
};

AugmentStats compute_augment_stats(const EmbeddingBank& bank);

/// src + N(0, (aug_sigma * stddev_d)^2) per dimension. Constant dimensions
/// pass through unchanged.
std::vector<float> augment_embedding(std::span<const float> src, const Vec& stddev,
                                     double aug_sigma, Rng& rng);

struct TrainLogRow {
  long long episode = 0;        // episodes completed at this row
  double mean_reward = 0.0;
  double train_acc_window = 0.0;  // percent correct over the window
  double mean_cost_tflops = 0.0;
};

struct TrainResult {
  RouterNetwork net;
  ObserveMode mode = ObserveMode::direct;
  std::vector<TrainLogRow> log;
  bool failed = false;
  std::string fail_reason;
};

/// Runs the configured number of episodes against the train split.
/// Deterministic given (bank, cfg): the seed fixes initialization, sampling,
/// exploration and augmentation streams.
TrainResult train(const EmbeddingBank& bank, const TrainRunConfig& cfg);

void export_train_log_csv(std::span<const TrainLogRow> log, std::ostream& os);

// ---------------------------------------------------------------------------
// Lambda x seed sweeps
// ---------------------------------------------------------------------------

struct SweepGrid {
  std::vector<double> lambdas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  TrainRunConfig base;
  int jobs = 1;
  bool overfit_bank = false;  // labels the emitted records
};

struct SweepCell {
  MetricsRecord record;
  std::vector<AssignmentRecord> test_assignments;
  bool failed = false;
  std::string fail_reason;
};

/// One train+evaluate per (lambda, seed), ordered by (lambda, seed). Cells are
/// independent; `jobs` > 1 runs them on worker threads without changing the
/// result. Failed cells keep their slot with zeroed metrics.
std::vector<SweepCell> sweep(const EmbeddingBank& bank, const SweepGrid& grid);

/// Train + evaluate one configuration into a metrics record.
SweepCell run_cell(const EmbeddingBank& bank, const TrainRunConfig& cfg, bool overfit_label);

}  // namespace srpmoe
