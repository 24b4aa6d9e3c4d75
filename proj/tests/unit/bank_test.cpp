#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "core/bank.hpp"
#include "core/errors.hpp"
#include "test_support.hpp"

using namespace srpmoe;
using namespace srpmoe::testing;

namespace {

// small experts keep probe fits cheap; fidelities spread wide so accuracy
// ordering is unambiguous
std::vector<ExpertSpec> small_triple() {
  return {
      {0, "small", 16, 0.5, 0.2},
      {1, "mid", 24, 2.0, 0.6},
      {2, "large", 32, 8.0, 1.0},
  };
}

}  // namespace

TEST_CASE("default triple carries the published costs and dims") {
  const auto experts = default_expert_triple();
  REQUIRE(experts.size() == 3);
  CHECK(experts[0].cost_tflops == 0.59);
  CHECK(experts[1].cost_tflops == 2.7);
  CHECK(experts[2].cost_tflops == 8.9);
  CHECK(experts[0].dim == 768);
  CHECK(experts[1].dim == 768);
  CHECK(experts[2].dim == 1024);
  CHECK(experts[0].name == "tsf-b");
  CHECK(experts[2].name == "vmae-l");
  CHECK(total_cost(experts) == doctest::Approx(12.19).epsilon(1e-12));
  // fidelity rises with cost
  CHECK(experts[0].fidelity < experts[1].fidelity);
  CHECK(experts[1].fidelity < experts[2].fidelity);
}

TEST_CASE("generation is a pure function of config and experts") {
  SyntheticConfig cfg;
  cfg.num_train = 80;
  cfg.num_test = 40;
  cfg.seed = 99;
  const auto experts = small_triple();
  const EmbeddingBank a = generate_synthetic(cfg, experts);
  const EmbeddingBank b = generate_synthetic(cfg, experts);
  CHECK(banks_equal(a, b));

  cfg.seed = 100;
  const EmbeddingBank c = generate_synthetic(cfg, experts);
  CHECK_FALSE(banks_equal(a, c));
}

TEST_CASE("generated banks are balanced with both splits populated") {
  SyntheticConfig cfg;
  cfg.num_train = 60;
  cfg.num_test = 30;
  cfg.seed = 5;
  const EmbeddingBank bank = generate_synthetic(cfg, small_triple());
  CHECK(bank.num_samples == 90);
  CHECK(split_indices(bank, false).size() == 60);
  CHECK(split_indices(bank, true).size() == 30);
  long long fights = 0;
  for (auto l : bank.labels) fights += l;
  CHECK(fights == 45);
  CHECK(bank.has_latent());
}

TEST_CASE("degenerate configs are rejected") {
  const auto experts = small_triple();
  SyntheticConfig cfg;
  cfg.num_train = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg, experts), ConfigError);
  cfg = SyntheticConfig{};
  cfg.latent_noise = 0.0;
  CHECK_THROWS_AS(generate_synthetic(cfg, experts), ConfigError);
  cfg = SyntheticConfig{};
  cfg.overfit_gap = 0.0;
  CHECK_THROWS_AS(generate_synthetic(cfg, experts), ConfigError);
  CHECK_THROWS_AS(generate_synthetic(SyntheticConfig{}, std::vector<ExpertSpec>{}), ConfigError);
}

TEST_CASE("probe accuracy rises with fidelity") {
  SyntheticConfig cfg;
  cfg.num_train = 1200;
  cfg.num_test = 4000;
  cfg.seed = 11;
  const EmbeddingBank bank = generate_synthetic(cfg, small_triple());

  double prev = 0.0;
  for (int e = 0; e < 3; ++e) {
    const LinearProbe probe = fit_probe(bank, e);
    const double acc = probe_accuracy(probe, bank, e, true);
    CHECK(acc >= prev);
    prev = acc;
  }
  CHECK(prev > 88.0);  // the fidelity-1.0 expert leaves only the latent band
}

TEST_CASE("probe accuracy rises with fidelity on the default triple") {
  // mean over three seeds; a wide test split tightens the accuracy estimate
  double sums[3] = {};
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    SyntheticConfig cfg;
    cfg.num_train = 1600;
    cfg.num_test = 8000;
    cfg.seed = seed;
    const EmbeddingBank bank = generate_synthetic(cfg, default_expert_triple());
    for (int e = 0; e < 3; ++e) sums[e] += probe_accuracy(fit_probe(bank, e), bank, e, true);
  }
  CHECK(sums[0] <= sums[1]);
  CHECK(sums[1] <= sums[2]);
}

TEST_CASE("overfit gap opens a train/test probe gap on the largest expert") {
  SyntheticConfig cfg;
  cfg.num_train = 800;
  cfg.num_test = 800;
  cfg.seed = 21;
  cfg.overfit_gap = 0.3;
  const EmbeddingBank bank = generate_synthetic(cfg, small_triple());

  const LinearProbe probe = fit_probe(bank, 2);
  const double train_acc = probe_accuracy(probe, bank, 2, false);
  const double test_acc = probe_accuracy(probe, bank, 2, true);
  CHECK(train_acc - test_acc > 3.0);

  // the lowest-fidelity expert stays honest
  const LinearProbe base = fit_probe(bank, 0);
  const double base_gap =
      probe_accuracy(base, bank, 0, false) - probe_accuracy(base, bank, 0, true);
  CHECK(base_gap < train_acc - test_acc);
}

TEST_CASE("save/load round-trips bit-exactly") {
  SyntheticConfig cfg;
  cfg.num_train = 50;
  cfg.num_test = 30;
  cfg.seed = 8;
  const EmbeddingBank bank = generate_synthetic(cfg, small_triple());

  TempDir dir;
  const std::string manifest = save_bank(bank, dir.str("bank"));
  const EmbeddingBank back = load_bank(manifest);
  CHECK(banks_equal(bank, back));

  // saving the loaded bank again produces identical bytes
  const std::string manifest2 = save_bank(back, dir.str("bank2"));
  CHECK(files_equal(manifest, manifest2));
  CHECK(files_equal(dir.str("bank/expert_0.f32"), dir.str("bank2/expert_0.f32")));
  CHECK(files_equal(dir.str("bank/labels.txt"), dir.str("bank2/labels.txt")));
}

TEST_CASE("manifest row-count mismatch is a format error") {
  SyntheticConfig cfg;
  cfg.num_train = 6;
  cfg.num_test = 4;
  cfg.seed = 8;
  const EmbeddingBank bank = generate_synthetic(cfg, small_triple());
  TempDir dir;
  const std::string manifest = save_bank(bank, dir.str("bank"));

  // shave one row off an embedding file
  const std::string path = dir.str("bank/expert_1.f32");
  std::string bytes = slurp(path);
  bytes.resize(bytes.size() - 24 * 4);
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(load_bank(manifest), FormatError);
}

TEST_CASE("duplicate expert ids in a manifest are a format error") {
  SyntheticConfig cfg;
  cfg.num_train = 6;
  cfg.num_test = 4;
  cfg.seed = 8;
  const EmbeddingBank bank = generate_synthetic(cfg, small_triple());
  TempDir dir;
  const std::string manifest = save_bank(bank, dir.str("bank"));

  std::string text = slurp(manifest);
  const auto pos = text.find("\"id\": 1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 7, "\"id\": 0");
  std::ofstream(manifest, std::ios::trunc) << text;
  CHECK_THROWS_AS(load_bank(manifest), FormatError);
}

TEST_CASE("non-finite embedding values are a data error") {
  SyntheticConfig cfg;
  cfg.num_train = 6;
  cfg.num_test = 4;
  cfg.seed = 8;
  const EmbeddingBank bank = generate_synthetic(cfg, small_triple());
  TempDir dir;
  const std::string manifest = save_bank(bank, dir.str("bank"));

  const std::string path = dir.str("bank/expert_0.f32");
  std::string bytes = slurp(path);
  // little-endian f32 NaN
  bytes[0] = '\x00';
  bytes[1] = '\x00';
  bytes[2] = '\xc0';
  bytes[3] = '\x7f';
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(load_bank(manifest), DataError);
}

TEST_CASE("missing manifest and broken JSON are format errors") {
  CHECK_THROWS_AS(load_bank("/nonexistent/manifest.json"), FormatError);
  TempDir dir;
  std::ofstream(dir.str("manifest.json")) << "{not json";
  CHECK_THROWS_AS(load_bank(dir.str("manifest.json")), FormatError);
}
