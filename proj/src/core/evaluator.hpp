#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "core/env.hpp"
#include "core/router_net.hpp"

namespace srpmoe {

/// One sweep cell.
struct MetricsRecord {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::string agent = "dqn";       // dqn | pg
  std::string mode = "direct";     // direct | aggregated
  bool augment = true;
  bool overfit = false;            // trained against an overfit bank
  double train_acc = 0.0;          // percent
  double test_acc = 0.0;           // percent
  double avg_tflops = 0.0;
  double acc_per_tflop = 0.0;
  long long episodes = 0;
};

/// Per-sample routing outcome of one greedy evaluation pass.
struct AssignmentRecord {
  int sample_id = 0;
  bool has_latent = false;
  double x = 0.0, y = 0.0;
  int label = 0;
  int pred = 0;
  std::uint32_t expert_mask = 0;
  double cost = 0.0;
};

struct EvalResult {
  double accuracy_pct = 0.0;
  double avg_tflops = 0.0;
  std::vector<AssignmentRecord> assignments;
};

/// Decision rule under evaluation. Receives the sample index alongside the
/// observation so synthetic test policies can cheat; learned policies ignore it.
using PolicyFn = std::function<int(int sample, const Observation& obs, const ValidMask& mask)>;

PolicyFn greedy_policy(const RouterNetwork& net, ObserveMode mode);

enum class Split { train, test };

/// One greedy episode per sample of the split, no augmentation, sequential
/// order. Accuracy is the percentage of correct final labels; cost averages
/// episode TFLOPs with the initial expert included.
EvalResult evaluate(const PolicyFn& policy, const EmbeddingBank& bank, Split split,
                    const RouterConfig& cfg);

/// test accuracy (%) / avg TFLOPs.
double acc_per_cost(const MetricsRecord& rec);

// ---------------------------------------------------------------------------
// Exports. All numeric output uses fixed formats so identical inputs produce
// byte-identical files.
// ---------------------------------------------------------------------------

void export_metrics_csv(std::span<const MetricsRecord> records, std::ostream& os);
void export_metrics_csv_file(std::span<const MetricsRecord> records, const std::string& path);
std::vector<MetricsRecord> parse_metrics_csv(std::istream& is);

void export_assignments_csv(std::span<const AssignmentRecord> records, std::ostream& os);
void export_assignments_csv_file(std::span<const AssignmentRecord> records,
                                 const std::string& path);

/// Scatter of (avg TFLOPs, test accuracy), one series per agent/mode combination.
void export_frontier_svg(std::span<const MetricsRecord> records, std::ostream& os);
void export_frontier_svg_file(std::span<const MetricsRecord> records, const std::string& path);

}  // namespace srpmoe
