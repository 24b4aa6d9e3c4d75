#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "core/errors.hpp"
#include "core/nn.hpp"
#include "test_support.hpp"

using namespace srpmoe;

namespace {

DenseNet single_layer(Mat W, Vec b, Activation act) {
  DenseNet net;
  net.layers.push_back({std::move(W), std::move(b), act});
  return net;
}

DenseNet random_net(std::span<const int> dims, std::span<const Activation> acts,
                    std::uint64_t seed) {
  Rng rng(seed);
  return make_dense_net(dims, acts, rng);
}

}  // namespace

TEST_CASE("forward: identity linear layer passes input through") {
  DenseNet net = single_layer(Mat::Identity(2, 2), Vec::Zero(2), Activation::linear);
  Vec x(2);
  x << 3.0, -1.0;
  const Vec y = nn_forward(net, x);
  CHECK(y(0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(y(1) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("forward: zero-weight tanh layer maps everything to zero") {
  DenseNet net = single_layer(Mat::Zero(1, 2), Vec::Zero(1), Activation::tanh);
  Vec x(2);
  x << 5.0, 7.0;
  CHECK(nn_forward(net, x)(0) == 0.0);
}

TEST_CASE("forward: tanh of a hand-evaluated pre-activation") {
  Mat W(1, 2);
  W << 1.0, 1.0;
  Vec b(1);
  b << 0.5;
  DenseNet net = single_layer(W, b, Activation::tanh);
  Vec x(2);
  x << 0.25, 0.25;
  // tanh(1.0), evaluated independently
  CHECK(nn_forward(net, x)(0) == doctest::Approx(0.7615941559557649).epsilon(1e-15));
}

TEST_CASE("forward: dimension mismatch raises a shape error") {
  DenseNet net = single_layer(Mat::Identity(2, 2), Vec::Zero(2), Activation::linear);
  CHECK_THROWS_AS(nn_forward(net, Vec::Zero(3)), ShapeError);
}

TEST_CASE("forward is deterministic for a fixed net and input") {
  const int dims[] = {4, 5, 2};
  const Activation acts[] = {Activation::tanh, Activation::linear};
  DenseNet net = random_net(dims, acts, 7);
  Vec x(4);
  x << 0.1, -0.2, 0.3, -0.4;
  const Vec y1 = nn_forward(net, x);
  const Vec y2 = nn_forward(net, x);
  CHECK((y1 - y2).norm() == 0.0);
}

TEST_CASE("backward: linear chain rule by hand") {
  Mat W(1, 2);
  W << 4.0, -2.0;
  DenseNet net = single_layer(W, Vec::Zero(1), Activation::linear);
  Vec x(2), upstream(1);
  x << 2.0, 3.0;
  upstream << 1.0;
  const auto [grads, dx] = nn_backward(net, x, upstream);
  CHECK(grads.W[0](0, 0) == 2.0);
  CHECK(grads.W[0](0, 1) == 3.0);
  CHECK(grads.b[0](0) == 1.0);
  CHECK(dx(0) == 4.0);
  CHECK(dx(1) == -2.0);
}

TEST_CASE("backward: zero upstream gives all-zero gradients") {
  const int dims[] = {3, 4, 2};
  const Activation acts[] = {Activation::tanh, Activation::tanh};
  DenseNet net = random_net(dims, acts, 9);
  Vec x(3);
  x << 1.0, -1.0, 0.5;
  const auto [grads, dx] = nn_backward(net, x, Vec::Zero(2));
  for (const auto& g : grads.W) CHECK(g.norm() == 0.0);
  for (const auto& g : grads.b) CHECK(g.norm() == 0.0);
  CHECK(dx.norm() == 0.0);
}

TEST_CASE("grad_check: random two-layer tanh nets match finite differences") {
  Rng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const int dims[] = {3, 6, 2};
    const Activation acts[] = {Activation::tanh, Activation::tanh};
    DenseNet net = make_dense_net(dims, acts, rng);
    Vec x(3), target(2);
    for (int i = 0; i < 3; ++i) x(i) = rng.uniform(-1, 1);
    for (int i = 0; i < 2; ++i) target(i) = rng.uniform(-1, 1);
    const auto loss = [target](const Vec& y) { return 0.5 * (y - target).squaredNorm(); };
    const auto loss_grad = [target](const Vec& y) { return Vec(y - target); };
    CHECK(grad_check(net, x, loss, loss_grad, 1e-4) < 1e-4);
  }
}

TEST_CASE("grad_check: linear least squares is exact to roundoff") {
  // quadratic loss in the parameters, so central differences carry no
  // truncation error at all
  const int dims[] = {4, 3};
  const Activation acts[] = {Activation::linear};
  DenseNet net = random_net(dims, acts, 33);
  Rng rng(34);
  Vec x(4), target(3);
  for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-1, 1);
  for (int i = 0; i < 3; ++i) target(i) = rng.uniform(-1, 1);
  const auto loss = [target](const Vec& y) { return 0.5 * (y - target).squaredNorm(); };
  const auto loss_grad = [target](const Vec& y) { return Vec(y - target); };
  CHECK(grad_check(net, x, loss, loss_grad, 1e-4) < 1e-8);
}

TEST_CASE("grad_check: constant loss yields zero error") {
  const int dims[] = {2, 2};
  const Activation acts[] = {Activation::tanh};
  DenseNet net = random_net(dims, acts, 5);
  Vec x(2);
  x << 0.3, -0.7;
  const auto loss = [](const Vec&) { return 1.25; };
  const auto loss_grad = [](const Vec& y) { return Vec(Vec::Zero(y.size())); };
  CHECK(grad_check(net, x, loss, loss_grad, 1e-4) == 0.0);
}

TEST_CASE("gradient property: finite differences across 100 random architectures") {
  Rng rng(101);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int depth = 1 + rng.uniform_int(3);
    std::vector<int> dims{1 + rng.uniform_int(5)};
    std::vector<Activation> acts;
    for (int l = 0; l < depth; ++l) {
      dims.push_back(1 + rng.uniform_int(5));
      acts.push_back(rng.uniform01() < 0.5 ? Activation::tanh : Activation::linear);
    }
    DenseNet net = make_dense_net(dims, acts, rng);
    Vec x(dims.front()), target(dims.back());
    for (int i = 0; i < dims.front(); ++i) x(i) = rng.uniform(-1.5, 1.5);
    for (int i = 0; i < dims.back(); ++i) target(i) = rng.uniform(-1.5, 1.5);
    const auto loss = [&target](const Vec& y) { return 0.5 * (y - target).squaredNorm(); };
    const auto loss_grad = [&target](const Vec& y) { return Vec(y - target); };
    worst = std::max(worst, grad_check(net, x, loss, loss_grad, 1e-4));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  const int dims[] = {3, 3};
  const Activation acts[] = {Activation::tanh};
  DenseNet net = random_net(dims, acts, 11);
  const Mat w_before = net.layers[0].W;

  Gradients zeros = make_gradients(net);
  AdamState state;
  auto params = tensor_views(net);
  auto grads = tensor_views(zeros);
  adam_step(AdamConfig{}, state, params, grads);
  adam_step(AdamConfig{}, state, params, grads);
  CHECK((net.layers[0].W - w_before).norm() == 0.0);
  CHECK(state.step == 2);
}

TEST_CASE("adam: first step matches the bias-corrected closed form") {
  // with m_hat = g and v_hat = g^2 after one step, the update is
  // -lr * g / (|g| + eps)
  DenseNet net = single_layer(Mat::Zero(1, 2), Vec::Zero(1), Activation::linear);
  net.layers[0].W << 1.0, -2.0;
  Gradients g = make_gradients(net);
  g.W[0] << 0.5, -0.25;

  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  AdamState state;
  auto params = tensor_views(net);
  auto grads = tensor_views(g);
  adam_step(cfg, state, params, grads);

  const double d0 = -0.01 * 0.5 / (0.5 + 1e-8);
  const double d1 = -0.01 * (-0.25) / (0.25 + 1e-8);
  CHECK(net.layers[0].W(0, 0) == doctest::Approx(1.0 + d0).epsilon(1e-9));
  CHECK(net.layers[0].W(0, 1) == doctest::Approx(-2.0 + d1).epsilon(1e-9));
}

TEST_CASE("adam: a repeated identical gradient does not grow the step") {
  // hand computation: m2 = 0.19 g with bias correction 0.19 and
  // v2 = 0.001999 g^2 with correction 0.001999, so the second delta equals
  // the first exactly rather than shrinking
  DenseNet net = single_layer(Mat::Zero(1, 1), Vec::Zero(1), Activation::linear);
  net.layers[0].W << 0.0;
  Gradients g = make_gradients(net);
  g.W[0] << 0.8;

  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  AdamState state;
  auto params = tensor_views(net);
  auto grads = tensor_views(g);
  adam_step(cfg, state, params, grads);
  const double delta1 = net.layers[0].W(0, 0);
  adam_step(cfg, state, params, grads);
  const double delta2 = net.layers[0].W(0, 0) - delta1;
  CHECK(std::abs(delta2) <= std::abs(delta1) * (1.0 + 1e-12));
  CHECK(delta2 == doctest::Approx(delta1).epsilon(1e-9));
}

TEST_CASE("adam: non-finite gradients are rejected before touching parameters") {
  const int dims[] = {2, 2};
  const Activation acts[] = {Activation::linear};
  DenseNet net = random_net(dims, acts, 13);
  const Mat w_before = net.layers[0].W;
  Gradients g = make_gradients(net);
  g.W[0](0, 0) = std::numeric_limits<double>::quiet_NaN();

  AdamState state;
  auto params = tensor_views(net);
  auto grads = tensor_views(g);
  CHECK_THROWS_AS(adam_step(AdamConfig{}, state, params, grads), DivergenceError);
  CHECK((net.layers[0].W - w_before).norm() == 0.0);
  CHECK(state.step == 0);
}

TEST_CASE("checkpoint: save/load round-trips weights and activations") {
  const int dims[] = {4, 6, 3};
  const Activation acts[] = {Activation::tanh, Activation::linear};
  DenseNet net = random_net(dims, acts, 55);

  std::stringstream buf;
  save_net(buf, net);
  DenseNet back = load_net(buf);
  REQUIRE(back.layers.size() == net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    CHECK((back.layers[i].W - net.layers[i].W).norm() == 0.0);
    CHECK((back.layers[i].b - net.layers[i].b).norm() == 0.0);
    CHECK(back.layers[i].act == net.layers[i].act);
  }
}

TEST_CASE("checkpoint: bad magic and truncation are format errors") {
  std::stringstream bad("SRPXX1junk");
  CHECK_THROWS_AS(load_net(bad), FormatError);

  const int dims[] = {2, 2};
  const Activation acts[] = {Activation::linear};
  DenseNet net = random_net(dims, acts, 3);
  std::stringstream buf;
  save_net(buf, net);
  const std::string full = buf.str();
  std::stringstream truncated(full.substr(0, full.size() / 2));
  CHECK_THROWS_AS(load_net(truncated), FormatError);
}

TEST_CASE("batched forward agrees with per-sample forward") {
  const int dims[] = {3, 5, 2};
  const Activation acts[] = {Activation::tanh, Activation::linear};
  DenseNet net = random_net(dims, acts, 77);
  Rng rng(78);
  Mat X(3, 6);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1, 1);
  const Mat Y = nn_forward_batch(net, X);
  for (int j = 0; j < 6; ++j) CHECK((Y.col(j) - nn_forward(net, Vec(X.col(j)))).norm() < 1e-14);
}
