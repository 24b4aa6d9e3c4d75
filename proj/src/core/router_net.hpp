#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "core/bank.hpp"
#include "core/env.hpp"
#include "core/nn.hpp"

namespace srpmoe {

/// How multi-expert observations collapse into one network input:
/// `direct` projects the most recently activated expert's embedding,
/// `aggregated` averages the projections of every activated expert.
enum class ObserveMode { direct, aggregated };

enum class HeadKind { dueling, policy };

ObserveMode observe_mode_from_string(const std::string& s);
std::string to_string(ObserveMode mode);

/// Per-expert learnable input projections feeding a shared tanh trunk with a
/// value head plus either an advantage head (Q-learning) or a policy head.
struct RouterNetwork {
  int obs_dim = 0;
  HeadKind head = HeadKind::dueling;
  std::vector<ExpertSpec> experts;
  std::vector<DenseNet> projections;  // expert dim -> obs_dim, linear
  DenseNet trunk;                     // obs_dim -> hidden -> hidden, tanh
  DenseNet value_head;                // hidden -> 1
  DenseNet out_head;                  // hidden -> 2+E (advantages or logits)

  int num_actions() const { return srpmoe::num_actions(static_cast<int>(experts.size())); }
  int hidden() const { return trunk.output_dim(); }
};

RouterNetwork make_router_network(std::span<const ExpertSpec> experts, int obs_dim, int hidden,
                                  HeadKind head, Rng& rng);

// ---------------------------------------------------------------------------
// Single-observation ops
// ---------------------------------------------------------------------------

/// Combined network input for one observation.
Vec observe(const RouterNetwork& net, const Observation& obs, ObserveMode mode);

/// Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a'). Dueling head only.
Vec q_values(const RouterNetwork& net, const Observation& obs, ObserveMode mode);

/// Raw output-head values (advantages or policy logits).
Vec head_values(const RouterNetwork& net, const Observation& obs, ObserveMode mode);

Vec dueling_combine(double value, const Vec& advantages);

/// Argmax over valid actions of q_values (dueling) or logits (policy);
/// ties break toward the lowest action index. Throws if nothing is valid.
int greedy_action(const RouterNetwork& net, const Observation& obs, ObserveMode mode,
                  const ValidMask& mask);

// ---------------------------------------------------------------------------
// Batched forward/backward (columns = samples)
// ---------------------------------------------------------------------------

struct RouterForwardCache {
  struct ExpertSlice {
    std::vector<int> cols;        // batch columns fed by this expert
    std::vector<double> weights;  // contribution weight per column
    Mat X;                        // gathered inputs, dim x n
    ForwardCache proj;
  };
  std::vector<ExpertSlice> slices;  // indexed by expert id
  Mat combined;                     // obs_dim x B
  ForwardCache trunk;
  ForwardCache value;
  ForwardCache out;
};

struct RouterHeadOut {
  Mat value;  // 1 x B
  Mat out;    // A x B
};

RouterHeadOut router_forward_batch(const RouterNetwork& net,
                                   std::span<const Observation* const> obs, ObserveMode mode,
                                   RouterForwardCache* cache = nullptr);

/// Column-wise dueling combination of batched head outputs.
Mat dueling_q_batch(const RouterHeadOut& heads);

struct RouterGrads {
  std::vector<Gradients> projections;
  Gradients trunk;
  Gradients value_head;
  Gradients out_head;
};

RouterGrads make_router_grads(const RouterNetwork& net);

/// Backprop from head gradients down to every parameter. Projections of
/// experts absent from the batch receive zero gradients.
void router_backward_batch(const RouterNetwork& net, const RouterForwardCache& cache,
                           const Mat& d_value, const Mat& d_out, RouterGrads& grads);

/// Fixed parameter enumeration (projections by id, trunk, value head, out
/// head) shared by the optimizer and by gradient tests.
std::vector<ParamView> tensor_views(RouterNetwork& net);
std::vector<GradView> tensor_views(const RouterGrads& grads);

// ---------------------------------------------------------------------------
// Checkpoint container: u32 header length + JSON header
// {obs_dim, experts:[{id,dim}], mode, head} followed by one network section
// per projection (id order), trunk, value head, out head.
// ---------------------------------------------------------------------------

void save_router(std::ostream& os, const RouterNetwork& net, ObserveMode mode);
void save_router_file(const std::string& path, const RouterNetwork& net, ObserveMode mode);

struct LoadedRouter {
  RouterNetwork net;
  ObserveMode mode = ObserveMode::direct;
};

LoadedRouter load_router(std::istream& is);
LoadedRouter load_router_file(const std::string& path);

}  // namespace srpmoe
