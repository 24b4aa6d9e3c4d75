#include "core/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "core/binio.hpp"
#include "core/errors.hpp"

namespace srpmoe {

DenseNet make_dense_net(std::span<const int> dims, std::span<const Activation> acts, Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw ConfigError("make_dense_net: need n>=2 dims and n-1 activations");
  DenseNet net;
  net.layers.reserve(acts.size());
  for (std::size_t k = 0; k < acts.size(); ++k) {
    const int in = dims[k], out = dims[k + 1];
    if (in <= 0 || out <= 0) throw ConfigError("make_dense_net: non-positive layer dim");
    DenseLayer layer;
    layer.W = Mat(out, in);
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.W(r, c) = rng.uniform(-s, s);
    layer.b = Vec::Zero(out);
    layer.act = acts[k];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

void validate_net(const DenseNet& net) {
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    if (l.b.size() != l.W.rows()) throw ShapeError("layer bias size != weight rows");
    if (k > 0 && net.layers[k - 1].W.rows() != l.W.cols())
      throw ShapeError("layer dims do not chain");
    if (!all_finite(l.W) || !all_finite(l.b)) throw DataError("non-finite network parameter");
  }
}

Mat nn_forward_batch(const DenseNet& net, const Mat& X, ForwardCache* cache) {
  if (net.layers.empty()) throw ShapeError("forward on empty net");
  if (X.rows() != net.input_dim()) throw ShapeError("input dim mismatch");
  if (cache) {
    cache->input = X;
    cache->act.clear();
    cache->act.reserve(net.layers.size());
  }
  Mat h = X;
  for (const auto& l : net.layers) {
    Mat z = (l.W * h).colwise() + l.b;
    if (l.act == Activation::tanh) z = z.array().tanh();
    if (cache) cache->act.push_back(z);
    h = std::move(z);
  }
  return h;
}

Vec nn_forward(const DenseNet& net, const Vec& x) {
  return nn_forward_batch(net, x);
}

Gradients make_gradients(const DenseNet& net) {
  Gradients g;
  g.W.reserve(net.layers.size());
  g.b.reserve(net.layers.size());
  for (const auto& l : net.layers) {
    g.W.push_back(Mat::Zero(l.W.rows(), l.W.cols()));
    g.b.push_back(Vec::Zero(l.b.size()));
  }
  return g;
}

Mat nn_backward_batch(const DenseNet& net, const ForwardCache& cache, const Mat& dY,
                      Gradients& grads) {
  const auto n = net.layers.size();
  if (cache.act.size() != n) throw ShapeError("forward cache does not match net");
  if (dY.rows() != net.output_dim() || dY.cols() != cache.input.cols())
    throw ShapeError("upstream gradient shape mismatch");
  if (grads.W.size() != n) grads = make_gradients(net);

  Mat d = dY;
  for (std::size_t i = n; i-- > 0;) {
    const auto& l = net.layers[i];
    if (l.act == Activation::tanh) {
      // tanh' recovered from the stored post-activation
      d = d.array() * (1.0 - cache.act[i].array().square());
    }
    const Mat& h_in = (i == 0) ? cache.input : cache.act[i - 1];
    grads.W[i] = d * h_in.transpose();
    grads.b[i] = d.rowwise().sum();
    if (i > 0) d = l.W.transpose() * d;
    else return l.W.transpose() * d;
  }
  return Mat();  // unreachable for non-empty nets
}

std::pair<Gradients, Vec> nn_backward(const DenseNet& net, const Vec& x, const Vec& upstream) {
  ForwardCache cache;
  nn_forward_batch(net, x, &cache);
  Gradients grads = make_gradients(net);
  Mat dx = nn_backward_batch(net, cache, upstream, grads);
  return {std::move(grads), Vec(dx.col(0))};
}

void adam_step(const AdamConfig& cfg, AdamState& state, std::span<ParamView> params,
               std::span<const GradView> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: param/grad tensor count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (params[i].size() != grads[i].size()) throw ShapeError("adam: tensor size mismatch");
    if (!grads[i].allFinite()) throw DivergenceError("non-finite gradient");
  }
  if (state.m.empty()) {
    for (const auto& g : grads) {
      state.m.push_back(Vec::Zero(g.size()));
      state.v.push_back(Vec::Zero(g.size()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state does not match tensors");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Vec& m = state.m[i];
    Vec& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[i];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[i].array().square().matrix();
    params[i].array() -= cfg.learning_rate * (m.array() / bc1) /
                         ((v.array() / bc2).sqrt() + cfg.epsilon);
  }
}

std::vector<ParamView> tensor_views(DenseNet& net) {
  std::vector<ParamView> views;
  views.reserve(net.layers.size() * 2);
  for (auto& l : net.layers) {
    views.emplace_back(l.W.data(), l.W.size());
    views.emplace_back(l.b.data(), l.b.size());
  }
  return views;
}

std::vector<GradView> tensor_views(const Gradients& grads) {
  std::vector<GradView> views;
  views.reserve(grads.W.size() * 2);
  for (std::size_t i = 0; i < grads.W.size(); ++i) {
    views.emplace_back(grads.W[i].data(), grads.W[i].size());
    views.emplace_back(grads.b[i].data(), grads.b[i].size());
  }
  return views;
}

double grad_check(DenseNet& net, const Vec& x, const LossFn& loss, const LossGradFn& loss_grad,
                  double eps) {
  ForwardCache cache;
  Mat y = nn_forward_batch(net, x, &cache);
  Gradients analytic = make_gradients(net);
  nn_backward_batch(net, cache, loss_grad(y.col(0)), analytic);

  auto params = tensor_views(net);
  auto agrads = tensor_views(analytic);
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (Eigen::Index i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      params[t][i] = saved + eps;
      const double up = loss(nn_forward(net, x));
      params[t][i] = saved - eps;
      const double down = loss(nn_forward(net, x));
      params[t][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = agrads[t][i];
      const double err = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1.0);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {
constexpr char kNetMagic[6] = {'S', 'R', 'P', 'N', 'N', '1'};
}

void save_net(std::ostream& os, const DenseNet& net) {
  os.write(kNetMagic, sizeof(kNetMagic));
  write_u32le(os, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    write_u32le(os, static_cast<std::uint32_t>(l.W.cols()));
    write_u32le(os, static_cast<std::uint32_t>(l.W.rows()));
    const char code = static_cast<char>(l.act);
    os.write(&code, 1);
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) write_f64le(os, l.W(r, c));
    for (Eigen::Index i = 0; i < l.b.size(); ++i) write_f64le(os, l.b(i));
  }
}

DenseNet load_net(std::istream& is) {
  char magic[6];
  is.read(magic, 6);
  if (!is || std::string(magic, 6) != std::string(kNetMagic, 6))
    throw FormatError("bad network checkpoint magic");
  const std::uint32_t n = read_u32le(is);
  if (n == 0 || n > 1024) throw FormatError("implausible layer count");
  DenseNet net;
  net.layers.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint32_t in = read_u32le(is);
    const std::uint32_t out = read_u32le(is);
    char code;
    is.read(&code, 1);
    if (!is) throw FormatError("truncated layer header");
    if (code != 0 && code != 1) throw FormatError("unknown activation code");
    if (in == 0 || out == 0 || in > (1u << 20) || out > (1u << 20))
      throw FormatError("implausible layer dims");
    DenseLayer l;
    l.W = Mat(out, in);
    l.b = Vec(out);
    l.act = static_cast<Activation>(code);
    for (std::uint32_t r = 0; r < out; ++r)
      for (std::uint32_t c = 0; c < in; ++c) l.W(r, c) = read_f64le(is);
    for (std::uint32_t i = 0; i < out; ++i) l.b(i) = read_f64le(is);
    net.layers.push_back(std::move(l));
  }
  validate_net(net);
  return net;
}

}  // namespace srpmoe
