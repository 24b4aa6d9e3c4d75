#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "core/bank.hpp"
#include "core/env.hpp"
#include "core/router_net.hpp"

namespace srpmoe {

/// Finite information-state version of the routing problem. The latent class
/// axis is cut into K equal-mass bins with closed-form posteriors; each expert
/// observes a partition of those bins whose resolution grows with fidelity,
/// and partitions are nested so coarser experts never contradict finer ones.
struct QuantizedMdp {
  int num_bins = 0;  // K
  double lambda = 0.0;
  int initial_expert = 0;
  std::vector<ExpertSpec> experts;
  std::vector<double> bin_posterior;          // p(label = 1 | bin)
  std::vector<std::vector<int>> cell_of_bin;  // [expert][bin] -> observation cell
  std::vector<int> cell_count;                // cells per expert
};

QuantizedMdp build_quantized(const SyntheticConfig& cfg, std::span<const ExpertSpec> experts,
                             int K, double lambda, int initial_expert = 0);

/// Optimal values and actions per (activated set, observation cell of the
/// finest activated expert), from exact backward induction.
struct OracleSolution {
  double optimal_value = 0.0;
  std::map<std::uint32_t, std::vector<double>> value;  // mask -> per-cell value
  std::map<std::uint32_t, std::vector<int>> action;    // mask -> per-cell action index
};

OracleSolution solve_optimal(const QuantizedMdp& mdp);

/// A decision rule over oracle information states: the activated experts in
/// activation order plus each one's observation cell for the current sample.
using OraclePolicyFn =
    std::function<Action(std::span<const int> activated_order, std::span<const int> cells)>;

/// Exact expected episode reward of a policy, by enumeration over bins.
/// Throws if the policy emits an invalid action on a reachable state.
double policy_value(const QuantizedMdp& mdp, const OraclePolicyFn& policy);

OraclePolicyFn optimal_policy_fn(const QuantizedMdp& mdp, const OracleSolution& solution);

/// Wraps a trained router: observation cells become one-hot embeddings of each
/// expert's cell count, exactly the codes quantized_bank() trains on.
OraclePolicyFn wrap_router_policy(const RouterNetwork& net, ObserveMode mode,
                                  const QuantizedMdp& mdp);

/// Sampled embedding bank over the quantized MDP: per sample a bin is drawn
/// uniformly, the label from the bin posterior, and every expert contributes
/// the one-hot code of its observation cell.
EmbeddingBank quantized_bank(const QuantizedMdp& mdp, int num_train, int num_test,
                             std::uint64_t seed);

double std_normal_cdf(double x);

}  // namespace srpmoe
