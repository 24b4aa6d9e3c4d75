#include "core/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "core/errors.hpp"

namespace srpmoe {

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

/// Contiguous grouping of `n` items into `groups` runs with sizes differing by
/// at most one (larger runs first). Returns the group id per item.
std::vector<int> equal_count_groups(int n, int groups) {
  std::vector<int> out(static_cast<std::size_t>(n));
  const int base = n / groups, extra = n % groups;
  int item = 0;
  for (int g = 0; g < groups; ++g) {
    const int len = base + (g < extra ? 1 : 0);
    for (int i = 0; i < len; ++i) out[static_cast<std::size_t>(item++)] = g;
  }
  return out;
}

int finest_expert(const QuantizedMdp& mdp, std::uint32_t mask) {
  int best = -1;
  for (std::size_t e = 0; e < mdp.experts.size(); ++e) {
    if (!(mask & (1u << e))) continue;
    if (best < 0 || mdp.cell_count[e] > mdp.cell_count[static_cast<std::size_t>(best)])
      best = static_cast<int>(e);
  }
  if (best < 0) throw Error("empty activation mask");
  return best;
}

}  // namespace

QuantizedMdp build_quantized(const SyntheticConfig& cfg, std::span<const ExpertSpec> experts,
                             int K, double lambda, int initial_expert) {
  if (K < 2) throw ConfigError("need at least two bins");
  if (K > 4096) throw ConfigError("bin count exceeds supported resolution");
  if (experts.empty()) throw ConfigError("need at least one expert");
  if (initial_expert < 0 || initial_expert >= static_cast<int>(experts.size()))
    throw ConfigError("initial expert out of range");
  if (!(cfg.class_separation > 0.0) || !(cfg.latent_noise > 0.0))
    throw ConfigError("class_separation and latent_noise must be > 0");

  QuantizedMdp mdp;
  mdp.num_bins = K;
  mdp.lambda = lambda;
  mdp.initial_expert = initial_expert;
  mdp.experts.assign(experts.begin(), experts.end());

  // class centers project to +-m on the discriminant axis
  const double m = std::sqrt(2.0) * cfg.class_separation;
  const double sigma = cfg.latent_noise;
  auto mixture_cdf = [&](double s) {
    return 0.5 * (std_normal_cdf((s - m) / sigma) + std_normal_cdf((s + m) / sigma));
  };

  std::vector<double> edges(static_cast<std::size_t>(K) + 1);
  const double lo = -(m + 12.0 * sigma), hi = m + 12.0 * sigma;
  edges.front() = lo;
  edges.back() = hi;
  for (int i = 1; i < K; ++i) {
    const double target = static_cast<double>(i) / K;
    double a = lo, b = hi;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (a + b);
      (mixture_cdf(mid) < target ? a : b) = mid;
    }
    edges[static_cast<std::size_t>(i)] = 0.5 * (a + b);
  }
  for (int i = 1; i <= K; ++i)
    if (!(edges[static_cast<std::size_t>(i)] > edges[static_cast<std::size_t>(i - 1)]))
      throw ConfigError("bin count exceeds numeric resolution of the latent model");

  mdp.bin_posterior.resize(static_cast<std::size_t>(K));
  for (int i = 0; i < K; ++i) {
    const double a = edges[static_cast<std::size_t>(i)], b = edges[static_cast<std::size_t>(i) + 1];
    const double mass1 = 0.5 * (std_normal_cdf((b - m) / sigma) - std_normal_cdf((a - m) / sigma));
    const double mass0 = 0.5 * (std_normal_cdf((b + m) / sigma) - std_normal_cdf((a + m) / sigma));
    mdp.bin_posterior[static_cast<std::size_t>(i)] = mass1 / (mass1 + mass0);
  }

  // nested partitions: the finest expert groups bins, each coarser expert
  // groups the next finer expert's cells
  std::vector<int> order(experts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ca = static_cast<int>(std::ceil(K * experts[static_cast<std::size_t>(a)].fidelity));
    const auto cb = static_cast<int>(std::ceil(K * experts[static_cast<std::size_t>(b)].fidelity));
    return ca != cb ? ca > cb : a < b;
  });

  mdp.cell_of_bin.assign(experts.size(), {});
  mdp.cell_count.assign(experts.size(), 0);
  std::vector<int> finer(static_cast<std::size_t>(K));
  std::iota(finer.begin(), finer.end(), 0);
  int finer_cells = K;
  for (int e : order) {
    const int target = std::clamp(
        static_cast<int>(std::ceil(K * experts[static_cast<std::size_t>(e)].fidelity)), 1, K);
    const int cells = std::min(target, finer_cells);
    const std::vector<int> grouping = equal_count_groups(finer_cells, cells);
    std::vector<int> assignment(static_cast<std::size_t>(K));
    for (int b = 0; b < K; ++b)
      assignment[static_cast<std::size_t>(b)] =
          grouping[static_cast<std::size_t>(finer[static_cast<std::size_t>(b)])];
    mdp.cell_of_bin[static_cast<std::size_t>(e)] = assignment;
    mdp.cell_count[static_cast<std::size_t>(e)] = cells;
    finer = std::move(assignment);
    finer_cells = cells;
  }
  return mdp;
}

OracleSolution solve_optimal(const QuantizedMdp& mdp) {
  const int E = static_cast<int>(mdp.experts.size());
  const int K = mdp.num_bins;
  const std::uint32_t init_bit = 1u << mdp.initial_expert;
  const std::uint32_t full = (1u << E) - 1;

  OracleSolution sol;

  // bins grouped by cell for a given expert
  auto bins_of_cell = [&](int expert, int cell) {
    std::vector<int> bins;
    for (int b = 0; b < K; ++b)
      if (mdp.cell_of_bin[static_cast<std::size_t>(expert)][static_cast<std::size_t>(b)] == cell)
        bins.push_back(b);
    return bins;
  };

  // masks ordered by descending popcount so successors are already solved
  std::vector<std::uint32_t> masks;
  for (std::uint32_t m = 0; m <= full; ++m)
    if ((m & init_bit) && (m | full) == full) masks.push_back(m);
  std::sort(masks.begin(), masks.end(), [](std::uint32_t a, std::uint32_t b) {
    const int pa = std::popcount(a), pb = std::popcount(b);
    return pa != pb ? pa > pb : a < b;
  });

  for (std::uint32_t mask : masks) {
    const int f = finest_expert(mdp, mask);
    const int cells = mdp.cell_count[static_cast<std::size_t>(f)];
    std::vector<double> value(static_cast<std::size_t>(cells));
    std::vector<int> action(static_cast<std::size_t>(cells));

    for (int c = 0; c < cells; ++c) {
      const std::vector<int> bins = bins_of_cell(f, c);
      double p = 0.0;
      for (int b : bins) p += mdp.bin_posterior[static_cast<std::size_t>(b)];
      p /= static_cast<double>(bins.size());

      // classify with the likelier label
      double best = std::max(2.0 * p - 1.0, 1.0 - 2.0 * p);
      int best_action = p >= 0.5 ? 1 : 0;

      for (int e = 0; e < E; ++e) {
        if (mask & (1u << e)) continue;
        const std::uint32_t mask2 = mask | (1u << e);
        const int f2 = finest_expert(mdp, mask2);
        const auto& next_value = sol.value.at(mask2);
        // expectation over the refined cells reachable from this one
        std::map<int, int> counts;
        for (int b : bins)
          counts[mdp.cell_of_bin[static_cast<std::size_t>(f2)][static_cast<std::size_t>(b)]] += 1;
        double v = mdp.lambda * expert_cost_reward(e, mdp.experts);
        for (const auto& [c2, n2] : counts)
          v += static_cast<double>(n2) / static_cast<double>(bins.size()) *
               next_value[static_cast<std::size_t>(c2)];
        if (v > best) {
          best = v;
          best_action = 2 + e;
        }
      }
      value[static_cast<std::size_t>(c)] = best;
      action[static_cast<std::size_t>(c)] = best_action;
    }
    sol.value[mask] = std::move(value);
    sol.action[mask] = std::move(action);
  }

  // start distribution: the initial expert's cell, weighted by bin mass
  const int f0 = mdp.initial_expert;
  const auto& v0 = sol.value.at(init_bit);
  double total = 0.0;
  for (int b = 0; b < K; ++b)
    total += v0[static_cast<std::size_t>(
                mdp.cell_of_bin[static_cast<std::size_t>(f0)][static_cast<std::size_t>(b)])] /
             static_cast<double>(K);
  sol.optimal_value = total;
  return sol;
}

double policy_value(const QuantizedMdp& mdp, const OraclePolicyFn& policy) {
  const int E = static_cast<int>(mdp.experts.size());
  const int K = mdp.num_bins;
  double total = 0.0;
  for (int b = 0; b < K; ++b) {
    std::vector<int> order{mdp.initial_expert};
    std::vector<int> cells{
        mdp.cell_of_bin[static_cast<std::size_t>(mdp.initial_expert)][static_cast<std::size_t>(b)]};
    double value = 0.0;
    for (int step = 0;; ++step) {
      if (step > E) throw Error("policy failed to classify within the horizon");
      const Action a = policy(order, cells);
      if (a.kind == Action::Kind::classify) {
        const double p = mdp.bin_posterior[static_cast<std::size_t>(b)];
        value += a.label == 1 ? 2.0 * p - 1.0 : 1.0 - 2.0 * p;
        break;
      }
      if (a.expert < 0 || a.expert >= E ||
          std::find(order.begin(), order.end(), a.expert) != order.end())
        throw Error("policy emitted an invalid activation");
      value += mdp.lambda * expert_cost_reward(a.expert, mdp.experts);
      order.push_back(a.expert);
      cells.push_back(
          mdp.cell_of_bin[static_cast<std::size_t>(a.expert)][static_cast<std::size_t>(b)]);
    }
    total += value / static_cast<double>(K);
  }
  return total;
}

OraclePolicyFn optimal_policy_fn(const QuantizedMdp& mdp, const OracleSolution& solution) {
  return [&mdp, &solution](std::span<const int> order, std::span<const int> cells) {
    std::uint32_t mask = 0;
    for (int e : order) mask |= 1u << e;
    const int f = finest_expert(mdp, mask);
    int cell = -1;
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i] == f) cell = cells[i];
    if (cell < 0) throw Error("finest expert missing from activation order");
    return action_from_index(solution.action.at(mask)[static_cast<std::size_t>(cell)]);
  };
}

OraclePolicyFn wrap_router_policy(const RouterNetwork& net, ObserveMode mode,
                                  const QuantizedMdp& mdp) {
  return [&net, mode, &mdp](std::span<const int> order, std::span<const int> cells) {
    Observation obs;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const int e = order[i];
      auto code = std::make_shared<std::vector<float>>(
          static_cast<std::size_t>(mdp.cell_count[static_cast<std::size_t>(e)]), 0.0f);
      (*code)[static_cast<std::size_t>(cells[i])] = 1.0f;
      obs.push_back({e, std::move(code)});
    }
    const int E = static_cast<int>(mdp.experts.size());
    ValidMask mask(static_cast<std::size_t>(num_actions(E)), 0);
    mask[0] = mask[1] = 1;
    for (int e = 0; e < E; ++e)
      if (std::find(order.begin(), order.end(), e) == order.end())
        mask[static_cast<std::size_t>(2 + e)] = 1;
    return action_from_index(greedy_action(net, obs, mode, mask));
  };
}

EmbeddingBank quantized_bank(const QuantizedMdp& mdp, int num_train, int num_test,
                             std::uint64_t seed) {
  if (num_train <= 0 || num_test <= 0) throw ConfigError("bank needs positive split sizes");
  const int n = num_train + num_test;
  EmbeddingBank bank;
  for (const auto& e : mdp.experts) {
    ExpertSpec spec = e;
    spec.dim = mdp.cell_count[static_cast<std::size_t>(e.id)];
    bank.experts.push_back(spec);
  }
  bank.num_samples = n;
  bank.labels.resize(static_cast<std::size_t>(n));
  bank.split.resize(static_cast<std::size_t>(n));
  bank.embeddings.assign(bank.experts.size(), {});
  for (std::size_t e = 0; e < bank.experts.size(); ++e)
    bank.embeddings[e].assign(
        static_cast<std::size_t>(n) * static_cast<std::size_t>(bank.experts[e].dim), 0.0f);

  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int bin = rng.uniform_int(mdp.num_bins);
    const bool fight = rng.bernoulli(mdp.bin_posterior[static_cast<std::size_t>(bin)]);
    bank.labels[static_cast<std::size_t>(i)] = fight ? 1 : 0;
    bank.split[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(i >= num_train);
    for (std::size_t e = 0; e < bank.experts.size(); ++e) {
      const int cell = mdp.cell_of_bin[e][static_cast<std::size_t>(bin)];
      bank.embeddings[e][static_cast<std::size_t>(i) * static_cast<std::size_t>(bank.experts[e].dim) +
                         static_cast<std::size_t>(cell)] = 1.0f;
    }
  }
  validate_bank(bank);
  return bank;
}

}  // namespace srpmoe
