#include "core/router_net.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "core/binio.hpp"
#include "core/errors.hpp"

using nlohmann::json;

namespace srpmoe {

ObserveMode observe_mode_from_string(const std::string& s) {
  if (s == "direct") return ObserveMode::direct;
  if (s == "aggregated") return ObserveMode::aggregated;
  throw ConfigError("unknown observe mode '" + s + "'");
}

std::string to_string(ObserveMode mode) {
  return mode == ObserveMode::direct ? "direct" : "aggregated";
}

RouterNetwork make_router_network(std::span<const ExpertSpec> experts, int obs_dim, int hidden,
                                  HeadKind head, Rng& rng) {
  if (experts.empty()) throw ConfigError("router needs at least one expert");
  if (obs_dim <= 0 || hidden <= 0) throw ConfigError("obs_dim and hidden must be positive");
  RouterNetwork net;
  net.obs_dim = obs_dim;
  net.head = head;
  net.experts.assign(experts.begin(), experts.end());
  for (const auto& e : experts) {
    const int dims[] = {e.dim, obs_dim};
    const Activation acts[] = {Activation::linear};
    net.projections.push_back(make_dense_net(dims, acts, rng));
  }
  {
    const int dims[] = {obs_dim, hidden, hidden};
    const Activation acts[] = {Activation::tanh, Activation::tanh};
    net.trunk = make_dense_net(dims, acts, rng);
  }
  {
    const int dims[] = {hidden, 1};
    const Activation acts[] = {Activation::linear};
    net.value_head = make_dense_net(dims, acts, rng);
  }
  {
    const int dims[] = {hidden, net.num_actions()};
    const Activation acts[] = {Activation::linear};
    net.out_head = make_dense_net(dims, acts, rng);
  }
  return net;
}

namespace {

void check_obs(const RouterNetwork& net, const Observation& obs) {
  if (obs.empty()) throw ShapeError("empty observation");
  for (const auto& entry : obs) {
    if (entry.expert < 0 || entry.expert >= static_cast<int>(net.experts.size()))
      throw ShapeError("observation refers to unknown expert " + std::to_string(entry.expert));
    if (static_cast<int>(entry.values->size()) !=
        net.experts[static_cast<std::size_t>(entry.expert)].dim)
      throw ShapeError("embedding dim mismatch for expert " + std::to_string(entry.expert));
  }
}

}  // namespace

RouterHeadOut router_forward_batch(const RouterNetwork& net,
                                   std::span<const Observation* const> obs, ObserveMode mode,
                                   RouterForwardCache* cache) {
  const int B = static_cast<int>(obs.size());
  if (B == 0) throw ShapeError("empty batch");
  const auto E = net.experts.size();

  RouterForwardCache local;
  RouterForwardCache& c = cache ? *cache : local;
  c.slices.assign(E, {});

  for (int j = 0; j < B; ++j) {
    check_obs(net, *obs[j]);
    const auto& o = *obs[j];
    if (mode == ObserveMode::direct) {
      auto& s = c.slices[static_cast<std::size_t>(o.back().expert)];
      s.cols.push_back(j);
      s.weights.push_back(1.0);
    } else {
      const double w = 1.0 / static_cast<double>(o.size());
      for (const auto& entry : o) {
        auto& s = c.slices[static_cast<std::size_t>(entry.expert)];
        s.cols.push_back(j);
        s.weights.push_back(w);
      }
    }
  }

  c.combined = Mat::Zero(net.obs_dim, B);
  for (std::size_t e = 0; e < E; ++e) {
    auto& s = c.slices[e];
    if (s.cols.empty()) continue;
    const int dim = net.experts[e].dim;
    s.X = Mat(dim, static_cast<int>(s.cols.size()));
    for (std::size_t k = 0; k < s.cols.size(); ++k) {
      const auto& o = *obs[static_cast<std::size_t>(s.cols[k])];
      // locate this expert's entry; for direct mode it is the last one
      const std::vector<float>* values = nullptr;
      if (mode == ObserveMode::direct) {
        values = o.back().values.get();
      } else {
        std::size_t hits = 0;
        for (const auto& entry : o) {
          if (entry.expert == static_cast<int>(e)) {
            // count duplicate occurrences so weights stay consistent
            if (hits == 0) values = entry.values.get();
            ++hits;
          }
        }
      }
      for (int d = 0; d < dim; ++d)
        s.X(d, static_cast<int>(k)) = static_cast<double>((*values)[static_cast<std::size_t>(d)]);
    }
    const Mat proj = nn_forward_batch(net.projections[e], s.X, &s.proj);
    for (std::size_t k = 0; k < s.cols.size(); ++k)
      c.combined.col(s.cols[k]) += s.weights[k] * proj.col(static_cast<int>(k));
  }

  const Mat h = nn_forward_batch(net.trunk, c.combined, &c.trunk);
  RouterHeadOut heads;
  heads.value = nn_forward_batch(net.value_head, h, &c.value);
  heads.out = nn_forward_batch(net.out_head, h, &c.out);
  return heads;
}

Mat dueling_q_batch(const RouterHeadOut& heads) {
  Mat q = heads.out;
  const Eigen::RowVectorXd mean = q.colwise().mean();
  q.rowwise() -= mean;
  q.rowwise() += heads.value.row(0);
  return q;
}

RouterGrads make_router_grads(const RouterNetwork& net) {
  RouterGrads g;
  for (const auto& p : net.projections) g.projections.push_back(make_gradients(p));
  g.trunk = make_gradients(net.trunk);
  g.value_head = make_gradients(net.value_head);
  g.out_head = make_gradients(net.out_head);
  return g;
}

void router_backward_batch(const RouterNetwork& net, const RouterForwardCache& cache,
                           const Mat& d_value, const Mat& d_out, RouterGrads& grads) {
  const Mat dh_value = nn_backward_batch(net.value_head, cache.value, d_value, grads.value_head);
  const Mat dh_out = nn_backward_batch(net.out_head, cache.out, d_out, grads.out_head);
  const Mat d_combined = nn_backward_batch(net.trunk, cache.trunk, dh_value + dh_out, grads.trunk);

  for (std::size_t e = 0; e < net.projections.size(); ++e) {
    const auto& s = cache.slices[e];
    if (s.cols.empty()) {
      // keep shapes, zero contribution
      grads.projections[e] = make_gradients(net.projections[e]);
      continue;
    }
    Mat dP(net.obs_dim, static_cast<int>(s.cols.size()));
    for (std::size_t k = 0; k < s.cols.size(); ++k)
      dP.col(static_cast<int>(k)) = s.weights[k] * d_combined.col(s.cols[k]);
    nn_backward_batch(net.projections[e], s.proj, dP, grads.projections[e]);
  }
}

Vec observe(const RouterNetwork& net, const Observation& obs, ObserveMode mode) {
  check_obs(net, obs);
  auto project = [&](const ObsEntry& entry) {
    Vec x(entry.values->size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      x(i) = static_cast<double>((*entry.values)[static_cast<std::size_t>(i)]);
    return nn_forward(net.projections[static_cast<std::size_t>(entry.expert)], x);
  };
  if (mode == ObserveMode::direct) return project(obs.back());
  Vec sum = Vec::Zero(net.obs_dim);
  for (const auto& entry : obs) sum += project(entry);
  return sum / static_cast<double>(obs.size());
}

Vec head_values(const RouterNetwork& net, const Observation& obs, ObserveMode mode) {
  const Observation* ptr = &obs;
  return router_forward_batch(net, {&ptr, 1}, mode).out.col(0);
}

Vec dueling_combine(double value, const Vec& advantages) {
  return (advantages.array() - advantages.mean() + value).matrix();
}

Vec q_values(const RouterNetwork& net, const Observation& obs, ObserveMode mode) {
  const Observation* ptr = &obs;
  const RouterHeadOut heads = router_forward_batch(net, {&ptr, 1}, mode);
  return dueling_combine(heads.value(0, 0), heads.out.col(0));
}

int greedy_action(const RouterNetwork& net, const Observation& obs, ObserveMode mode,
                  const ValidMask& mask) {
  const Vec scores = net.head == HeadKind::dueling ? q_values(net, obs, mode)
                                                   : head_values(net, obs, mode);
  if (static_cast<int>(mask.size()) != scores.size()) throw ShapeError("mask arity mismatch");
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < scores.size(); ++a) {
    if (!mask[static_cast<std::size_t>(a)]) continue;
    if (scores(a) > best_score) {
      best_score = scores(a);
      best = a;
    }
  }
  if (best < 0) throw Error("no valid action to select");
  return best;
}

std::vector<ParamView> tensor_views(RouterNetwork& net) {
  std::vector<ParamView> views;
  for (auto& p : net.projections)
    for (auto v : tensor_views(p)) views.push_back(v);
  for (auto v : tensor_views(net.trunk)) views.push_back(v);
  for (auto v : tensor_views(net.value_head)) views.push_back(v);
  for (auto v : tensor_views(net.out_head)) views.push_back(v);
  return views;
}

std::vector<GradView> tensor_views(const RouterGrads& grads) {
  std::vector<GradView> views;
  for (const auto& p : grads.projections)
    for (auto v : tensor_views(p)) views.push_back(v);
  for (auto v : tensor_views(grads.trunk)) views.push_back(v);
  for (auto v : tensor_views(grads.value_head)) views.push_back(v);
  for (auto v : tensor_views(grads.out_head)) views.push_back(v);
  return views;
}

void save_router(std::ostream& os, const RouterNetwork& net, ObserveMode mode) {
  json experts = json::array();
  for (const auto& e : net.experts) experts.push_back({{"id", e.id}, {"dim", e.dim}});
  const json header = {{"obs_dim", net.obs_dim},
                       {"experts", experts},
                       {"mode", to_string(mode)},
                       {"head", net.head == HeadKind::dueling ? "dueling" : "policy"}};
  const std::string hs = header.dump();
  write_u32le(os, static_cast<std::uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : net.projections) save_net(os, p);
  save_net(os, net.trunk);
  save_net(os, net.value_head);
  save_net(os, net.out_head);
}

void save_router_file(const std::string& path, const RouterNetwork& net, ObserveMode mode) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path);
  save_router(os, net, mode);
}

LoadedRouter load_router(std::istream& is) {
  const std::uint32_t len = read_u32le(is);
  if (len == 0 || len > (1u << 20)) throw FormatError("implausible checkpoint header length");
  std::string hs(len, '\0');
  is.read(hs.data(), len);
  if (!is) throw FormatError("truncated checkpoint header");

  LoadedRouter loaded;
  RouterNetwork& net = loaded.net;
  try {
    const json header = json::parse(hs);
    net.obs_dim = header.at("obs_dim").get<int>();
    loaded.mode = observe_mode_from_string(header.at("mode").get<std::string>());
    const std::string head = header.at("head").get<std::string>();
    if (head == "dueling") net.head = HeadKind::dueling;
    else if (head == "policy") net.head = HeadKind::policy;
    else throw FormatError("unknown head kind '" + head + "'");
    for (const auto& j : header.at("experts")) {
      ExpertSpec e;
      e.id = j.at("id").get<int>();
      e.dim = j.at("dim").get<int>();
      net.experts.push_back(e);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  if (net.experts.empty()) throw FormatError("checkpoint lists no experts");
  for (std::size_t i = 0; i < net.experts.size(); ++i)
    if (net.experts[i].id != static_cast<int>(i))
      throw FormatError("checkpoint expert ids must be dense");

  for (const auto& e : net.experts) {
    DenseNet p = load_net(is);
    if (p.input_dim() != e.dim || p.output_dim() != net.obs_dim)
      throw FormatError("projection shape mismatch in checkpoint");
    net.projections.push_back(std::move(p));
  }
  net.trunk = load_net(is);
  net.value_head = load_net(is);
  net.out_head = load_net(is);
  if (net.trunk.input_dim() != net.obs_dim || net.value_head.output_dim() != 1 ||
      net.value_head.input_dim() != net.trunk.output_dim() ||
      net.out_head.input_dim() != net.trunk.output_dim() ||
      net.out_head.output_dim() != net.num_actions())
    throw FormatError("checkpoint section shapes are inconsistent");
  return loaded;
}

LoadedRouter load_router_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return load_router(is);
}

}  // namespace srpmoe
