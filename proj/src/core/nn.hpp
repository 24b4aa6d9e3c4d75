#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "core/linalg.hpp"
#include "core/rng.hpp"

namespace srpmoe {

enum class Activation : std::uint8_t { linear = 0, tanh = 1 };

struct DenseLayer {
  Mat W;  // out x in
  Vec b;  // out
  Activation act = Activation::linear;
};

/// Fully connected stack. Layer dims chain: out of layer k == in of layer k+1.
struct DenseNet {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.rows()); }
};

/// dims = {in, h1, ..., out}; acts has dims.size()-1 entries.
/// Weights start uniform in +-sqrt(6/(fan_in+fan_out)), biases at zero.
DenseNet make_dense_net(std::span<const int> dims, std::span<const Activation> acts, Rng& rng);

void validate_net(const DenseNet& net);

/// Post-activation outputs of every layer for one batch (columns = samples).
struct ForwardCache {
  Mat input;
  std::vector<Mat> act;
};

/// X has one sample per column. Pass a cache to enable backward().
Mat nn_forward_batch(const DenseNet& net, const Mat& X, ForwardCache* cache = nullptr);

Vec nn_forward(const DenseNet& net, const Vec& x);

/// Parameter gradients, same shapes as the layers they belong to.
struct Gradients {
  std::vector<Mat> W;
  std::vector<Vec> b;
};

Gradients make_gradients(const DenseNet& net);

/// Reverse pass. dY holds dLoss/dOutput per column; fills `grads` and returns
/// dLoss/dInput. Requires the cache produced by the matching forward call.
Mat nn_backward_batch(const DenseNet& net, const ForwardCache& cache, const Mat& dY,
                      Gradients& grads);

/// Single-sample convenience: recomputes the forward pass internally.
std::pair<Gradients, Vec> nn_backward(const DenseNet& net, const Vec& x, const Vec& upstream);

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-tensor first/second moment buffers plus a shared step counter.
/// Buffers are allocated lazily on the first step.
struct AdamState {
  long long step = 0;
  std::vector<Vec> m;
  std::vector<Vec> v;
};

using ParamView = Eigen::Map<Vec>;
using GradView = Eigen::Map<const Vec>;

/// One bias-corrected update over a flat list of tensors. Throws
/// DivergenceError (before touching any parameter) if a gradient is not finite.
void adam_step(const AdamConfig& cfg, AdamState& state, std::span<ParamView> params,
               std::span<const GradView> grads);

std::vector<ParamView> tensor_views(DenseNet& net);
std::vector<GradView> tensor_views(const Gradients& grads);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

using LossFn = std::function<double(const Vec&)>;
using LossGradFn = std::function<Vec(const Vec&)>;

/// Compares analytic parameter gradients against central finite differences.
/// Returns the worst |analytic - numeric| / max(|analytic| + |numeric|, 1).
double grad_check(DenseNet& net, const Vec& x, const LossFn& loss, const LossGradFn& loss_grad,
                  double eps = 1e-4);

// ---------------------------------------------------------------------------
// Checkpoint section format: magic "SRPNN1", little-endian u32 layer count,
// then per layer (in, out as u32, activation code byte, row-major f64 W, f64 b).
// ---------------------------------------------------------------------------

void save_net(std::ostream& os, const DenseNet& net);
DenseNet load_net(std::istream& is);

}  // namespace srpmoe
