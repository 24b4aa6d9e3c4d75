#pragma once

// Shared oracles and helpers for the test suites. Everything here is kept
// independent of the implementation paths it checks: gradients come from
// central differences, probe accuracies from a closed-form ridge fit.

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/bank.hpp"
#include "core/nn.hpp"

namespace srpmoe::testing {

/// Worst-case |analytic - numeric| / max(|analytic| + |numeric|, 1) over all
/// parameters, with numeric = central difference of `loss` at stride eps.
/// `loss` must re-run the full forward pass so perturbations take effect.
double fd_max_err(std::span<ParamView> params, std::span<const GradView> analytic,
                  const std::function<double()>& loss, double eps);

/// Least-squares linear classifier with ridge regularization, fit on one
/// expert's train rows against +-1 labels.
struct LinearProbe {
  Vec w;
  double bias = 0.0;
};

LinearProbe fit_probe(const EmbeddingBank& bank, int expert, double ridge = 0.0);  // <= 0 tunes the ridge on a holdout

/// Percent of the split classified correctly by sign(w.x + b).
double probe_accuracy(const LinearProbe& probe, const EmbeddingBank& bank, int expert,
                      bool test_split);

/// Pearson chi-squared statistic against expected counts.
double chi2_statistic(std::span<const long long> counts, std::span<const double> expected);

/// 99th-percentile chi-squared quantile (Wilson-Hilferty approximation).
double chi2_critical_99(int df);

/// Spearman rank correlation; ties get average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> xs);

/// Self-deleting scratch directory.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const;

 private:
  std::filesystem::path path_;
};

std::string slurp(const std::string& path);
bool files_equal(const std::string& a, const std::string& b);

}  // namespace srpmoe::testing
