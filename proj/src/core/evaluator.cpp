#include "core/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "core/errors.hpp"

namespace srpmoe {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string g6(double v) { return fmt("%.6g", v); }

}  // namespace

PolicyFn greedy_policy(const RouterNetwork& net, ObserveMode mode) {
  return [&net, mode](int, const Observation& obs, const ValidMask& mask) {
    return greedy_action(net, obs, mode, mask);
  };
}

EvalResult evaluate(const PolicyFn& policy, const EmbeddingBank& bank, Split split,
                    const RouterConfig& cfg) {
  const std::vector<int> samples = split_indices(bank, split == Split::test);
  if (samples.empty()) throw Error("evaluation split is empty");

  RoutingEnv env(bank, cfg);
  EvalResult result;
  result.assignments.reserve(samples.size());
  long long correct = 0;
  double cost_sum = 0.0;

  for (int s : samples) {
    env.reset(s);
    int pred = -1;
    while (!env.state().done) {
      const int idx = policy(s, env.observation(), env.valid_mask());
      const Action a = action_from_index(idx);
      env.step(a);
      if (a.kind == Action::Kind::classify) pred = a.label;
    }
    const int label = bank.labels[static_cast<std::size_t>(s)];
    const double cost = episode_cost(env.state());
    correct += pred == label ? 1 : 0;
    cost_sum += cost;

    AssignmentRecord rec;
    rec.sample_id = s;
    if (bank.has_latent()) {
      rec.has_latent = true;
      rec.x = bank.latent[static_cast<std::size_t>(s) * 2 + 0];
      rec.y = bank.latent[static_cast<std::size_t>(s) * 2 + 1];
    }
    rec.label = label;
    rec.pred = pred;
    rec.expert_mask = env.state().activated;
    rec.cost = cost;
    result.assignments.push_back(rec);
  }

  result.accuracy_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(samples.size());
  result.avg_tflops = cost_sum / static_cast<double>(samples.size());
  return result;
}

double acc_per_cost(const MetricsRecord& rec) {
  if (!(rec.avg_tflops > 0.0)) throw Error("avg TFLOPs must be positive");
  return rec.test_acc / rec.avg_tflops;
}

void export_metrics_csv(std::span<const MetricsRecord> records, std::ostream& os) {
  os << "lambda,seed,agent,mode,augment,overfit,train_acc,test_acc,avg_tflops,acc_per_tflop,"
        "episodes\n";
  for (const auto& r : records) {
    os << g6(r.lambda) << ',' << r.seed << ',' << r.agent << ',' << r.mode << ','
       << (r.augment ? 1 : 0) << ',' << (r.overfit ? 1 : 0) << ',' << fmt("%.1f", r.train_acc)
       << ',' << fmt("%.1f", r.test_acc) << ',' << g6(r.avg_tflops) << ','
       << g6(r.acc_per_tflop) << ',' << r.episodes << '\n';
  }
}

void export_metrics_csv_file(std::span<const MetricsRecord> records, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path);
  export_metrics_csv(records, os);
}

std::vector<MetricsRecord> parse_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty metrics CSV");
  if (line.rfind("lambda,seed,agent,mode", 0) != 0)
    throw FormatError("unexpected metrics CSV header");
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw FormatError("metrics CSV row has wrong arity");
    MetricsRecord r;
    r.lambda = std::stod(cells[0]);
    r.seed = std::stoull(cells[1]);
    r.agent = cells[2];
    r.mode = cells[3];
    r.augment = cells[4] == "1";
    r.overfit = cells[5] == "1";
    r.train_acc = std::stod(cells[6]);
    r.test_acc = std::stod(cells[7]);
    r.avg_tflops = std::stod(cells[8]);
    r.acc_per_tflop = std::stod(cells[9]);
    r.episodes = std::stoll(cells[10]);
    out.push_back(std::move(r));
  }
  return out;
}

void export_assignments_csv(std::span<const AssignmentRecord> records, std::ostream& os) {
  os << "sample_id,x,y,label,pred,experts,cost\n";
  for (const auto& r : records) {
    os << r.sample_id << ',';
    if (r.has_latent) os << g6(r.x) << ',' << g6(r.y);
    else os << ',';
    os << ',' << r.label << ',' << r.pred << ',' << r.expert_mask << ',' << g6(r.cost) << '\n';
  }
}

void export_assignments_csv_file(std::span<const AssignmentRecord> records,
                                 const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path);
  export_assignments_csv(records, os);
}

namespace {

struct SeriesStyle {
  const char* color;
  const char* shape;  // circle | square | triangle
};

constexpr SeriesStyle kStyles[] = {
    {"#1f77b4", "circle"}, {"#d62728", "square"},   {"#2ca02c", "triangle"},
    {"#9467bd", "circle"}, {"#ff7f0e", "square"},   {"#8c564b", "triangle"},
    {"#e377c2", "circle"}, {"#7f7f7f", "square"},
};

void marker(std::ostream& os, const SeriesStyle& st, double px, double py) {
  if (std::string(st.shape) == "circle") {
    os << "  <circle cx=\"" << fmt("%.2f", px) << "\" cy=\"" << fmt("%.2f", py)
       << "\" r=\"5\" fill=\"" << st.color << "\" fill-opacity=\"0.85\"/>\n";
  } else if (std::string(st.shape) == "square") {
    os << "  <rect x=\"" << fmt("%.2f", px - 4.5) << "\" y=\"" << fmt("%.2f", py - 4.5)
       << "\" width=\"9\" height=\"9\" fill=\"" << st.color << "\" fill-opacity=\"0.85\"/>\n";
  } else {
    os << "  <path d=\"M " << fmt("%.2f", px) << ' ' << fmt("%.2f", py - 5.5) << " L "
       << fmt("%.2f", px - 5) << ' ' << fmt("%.2f", py + 4.5) << " L " << fmt("%.2f", px + 5)
       << ' ' << fmt("%.2f", py + 4.5) << " Z\" fill=\"" << st.color
       << "\" fill-opacity=\"0.85\"/>\n";
  }
}

}  // namespace

void export_frontier_svg(std::span<const MetricsRecord> records, std::ostream& os) {
  if (records.empty()) throw Error("no records to plot");

  double xmin = records[0].avg_tflops, xmax = xmin;
  double ymin = records[0].test_acc, ymax = ymin;
  for (const auto& r : records) {
    xmin = std::min(xmin, r.avg_tflops);
    xmax = std::max(xmax, r.avg_tflops);
    ymin = std::min(ymin, r.test_acc);
    ymax = std::max(ymax, r.test_acc);
  }
  const double xpad = std::max(0.05 * (xmax - xmin), 0.1);
  const double ypad = std::max(0.05 * (ymax - ymin), 0.5);
  xmin -= xpad; xmax += xpad;
  ymin -= ypad; ymax += ypad;

  const double W = 800, H = 600, ml = 70, mr = 160, mt = 40, mb = 60;
  auto to_px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto to_py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  // legend series in first-appearance order
  std::vector<std::string> series;
  auto series_of = [](const MetricsRecord& r) { return r.agent + "/" + r.mode; };
  for (const auto& r : records) {
    const std::string key = series_of(r);
    if (std::find(series.begin(), series.end(), key) == series.end()) series.push_back(key);
  }

  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 800 600\">\n"
     << "  <rect width=\"800\" height=\"600\" fill=\"white\"/>\n";

  // axes
  os << "  <line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
     << H - mb << "\" stroke=\"black\"/>\n"
     << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    os << "  <text x=\"" << fmt("%.2f", to_px(xv)) << "\" y=\"" << H - mb + 20
       << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt("%.2f", xv) << "</text>\n";
    os << "  <text x=\"" << ml - 8 << "\" y=\"" << fmt("%.2f", to_py(yv) + 4)
       << "\" font-size=\"12\" text-anchor=\"end\">" << fmt("%.1f", yv) << "</text>\n";
  }
  os << "  <text x=\"" << (ml + (W - mr)) / 2 << "\" y=\"" << H - 15
     << "\" font-size=\"14\" text-anchor=\"middle\">Avg TFLOPs</text>\n"
     << "  <text x=\"20\" y=\"" << (mt + H - mb) / 2
     << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
     << (mt + H - mb) / 2 << ")\">Test accuracy (%)</text>\n";

  for (const auto& r : records) {
    const auto it = std::find(series.begin(), series.end(), series_of(r));
    const auto& st = kStyles[static_cast<std::size_t>(it - series.begin()) % std::size(kStyles)];
    marker(os, st, to_px(r.avg_tflops), to_py(r.test_acc));
  }

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& st = kStyles[i % std::size(kStyles)];
    const double ly = mt + 10 + 22 * static_cast<double>(i);
    marker(os, st, W - mr + 20, ly);
    os << "  <text x=\"" << W - mr + 32 << "\" y=\"" << fmt("%.2f", ly + 4)
       << "\" font-size=\"12\">" << series[i] << "</text>\n";
  }
  os << "</svg>\n";
}

void export_frontier_svg_file(std::span<const MetricsRecord> records, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path);
  export_frontier_svg(records, os);
}

}  // namespace srpmoe
