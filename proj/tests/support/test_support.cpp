#include "test_support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "core/errors.hpp"

namespace srpmoe::testing {

double fd_max_err(std::span<ParamView> params, std::span<const GradView> analytic,
                  const std::function<double()>& loss, double eps) {
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (Eigen::Index i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      params[t][i] = saved + eps;
      const double up = loss();
      params[t][i] = saved - eps;
      const double down = loss();
      params[t][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1.0);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {

Mat design_matrix(const EmbeddingBank& bank, int expert, std::span<const int> rows) {
  const int d = bank.experts[static_cast<std::size_t>(expert)].dim;
  Mat X(rows.size(), d + 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto row = bank.embedding_row(expert, rows[r]);
    for (int c = 0; c < d; ++c) X(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)];
    X(static_cast<Eigen::Index>(r), d) = 1.0;
  }
  return X;
}

Vec sign_labels(const EmbeddingBank& bank, std::span<const int> rows) {
  Vec y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    y(static_cast<Eigen::Index>(r)) = bank.labels[static_cast<std::size_t>(rows[r])] ? 1.0 : -1.0;
  return y;
}

Vec ridge_solve(const Mat& X, const Vec& y, double lambda) {
  Mat A = X.transpose() * X;
  const double scale = A.trace() / static_cast<double>(A.rows());
  A.diagonal().array() += lambda * scale;
  return A.ldlt().solve(X.transpose() * y);
}

double holdout_accuracy(const Vec& sol, const Mat& X, const Vec& y) {
  const Vec scores = X * sol;
  long long correct = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    correct += (scores(i) >= 0.0) == (y(i) > 0.0) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

}  // namespace

LinearProbe fit_probe(const EmbeddingBank& bank, int expert, double ridge) {
  const std::vector<int> train = split_indices(bank, false);
  const int d = bank.experts[static_cast<std::size_t>(expert)].dim;

  double lambda = ridge;
  if (ridge <= 0.0) {
    // cross-validate the ridge strength; high-dim embeddings need far
    // stronger shrinkage than low-dim ones. Ties prefer more shrinkage.
    constexpr int kFolds = 3;
    const double cands[] = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
    double scores[std::size(cands)] = {};
    for (int fold = 0; fold < kFolds; ++fold) {
      std::vector<int> fit_rows, val_rows;
      for (std::size_t i = 0; i < train.size(); ++i)
        (static_cast<int>(i % kFolds) == fold ? val_rows : fit_rows).push_back(train[i]);
      const Mat Xf = design_matrix(bank, expert, fit_rows);
      const Vec yf = sign_labels(bank, fit_rows);
      const Mat Xv = design_matrix(bank, expert, val_rows);
      const Vec yv = sign_labels(bank, val_rows);
      const Mat gram = Xf.transpose() * Xf;
      const Vec xty = Xf.transpose() * yf;
      const double scale = gram.trace() / static_cast<double>(gram.rows());
      for (std::size_t c = 0; c < std::size(cands); ++c) {
        Mat A = gram;
        A.diagonal().array() += cands[c] * scale;
        scores[c] += holdout_accuracy(A.ldlt().solve(xty), Xv, yv);
      }
    }
    double best = -1.0;
    for (std::size_t c = 0; c < std::size(cands); ++c) {
      if (scores[c] >= best) {
        best = scores[c];
        lambda = cands[c];
      }
    }
  }

  const Mat X = design_matrix(bank, expert, train);
  const Vec sol = ridge_solve(X, sign_labels(bank, train), lambda);
  LinearProbe probe;
  probe.w = sol.head(d);
  probe.bias = sol(d);
  return probe;
}

double probe_accuracy(const LinearProbe& probe, const EmbeddingBank& bank, int expert,
                      bool test_split) {
  const std::vector<int> idx = split_indices(bank, test_split);
  long long correct = 0;
  for (int s : idx) {
    const auto row = bank.embedding_row(expert, s);
    double score = probe.bias;
    for (Eigen::Index c = 0; c < probe.w.size(); ++c)
      score += probe.w(c) * row[static_cast<std::size_t>(c)];
    const int pred = score >= 0.0 ? 1 : 0;
    correct += pred == bank.labels[static_cast<std::size_t>(s)] ? 1 : 0;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(idx.size());
}

double chi2_statistic(std::span<const long long> counts, std::span<const double> expected) {
  if (counts.size() != expected.size()) throw Error("chi2 size mismatch");
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double diff = static_cast<double>(counts[i]) - expected[i];
    stat += diff * diff / expected[i];
  }
  return stat;
}

double chi2_critical_99(int df) {
  const double d = static_cast<double>(df);
  const double z99 = 2.3263478740408408;  // standard normal 99th percentile
  const double term = 1.0 - 2.0 / (9.0 * d) + z99 * std::sqrt(2.0 / (9.0 * d));
  return d * term * term * term;
}

namespace {
std::vector<double> ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = avg;
    i = j + 1;
  }
  return out;
}
}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("spearman needs matched series");
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  return num / std::sqrt(dx * dy);
}

double mean(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

TempDir::TempDir() {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  const auto tag = std::to_string(rd()) + "_" + std::to_string(counter.fetch_add(1));
  path_ = std::filesystem::temp_directory_path() / ("srpmoe_test_" + tag);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string TempDir::str(const std::string& rel) const {
  return rel.empty() ? path_.string() : (path_ / rel).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

bool files_equal(const std::string& a, const std::string& b) { return slurp(a) == slurp(b); }

}  // namespace srpmoe::testing
