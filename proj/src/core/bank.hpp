#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace srpmoe {

/// A fixed embedding model with a declared inference cost.
struct ExpertSpec {
  int id = 0;
  std::string name;
  int dim = 0;
  double cost_tflops = 0.0;
  /// Class separability of this expert's embeddings, in (0,1].
  /// Meaningful for synthetic banks only; ignored for file-backed ones.
  double fidelity = 1.0;
};

/// The three-expert setup used throughout: a cheap initial encoder plus two
/// progressively stronger (and costlier) ones.
std::vector<ExpertSpec> default_expert_triple();

double total_cost(std::span<const ExpertSpec> experts);

struct SyntheticConfig {
  int num_train = 1600;
  int num_test = 400;
  // Latent class centers sit at +-(mu, mu). The default keeps an easy bulk
  // with a narrow boundary band, so escalation concentrates where the cheap
  // expert is genuinely uncertain.
  double class_separation = 1.3;
  double latent_noise = 1.0;  // per-class latent stddev
  double overfit_gap = 1.0;   // <1 collapses designated experts' train rows (1 = off)
  std::uint64_t seed = 0;
};

/// Per-sample, per-expert embedding matrices with labels and a train/test
/// split. Immutable after construction; float storage matches the on-disk
/// format so persistence round-trips bit-exactly.
struct EmbeddingBank {
  std::vector<ExpertSpec> experts;  // dense ids 0..E-1, in id order
  int num_samples = 0;
  std::vector<std::int8_t> labels;                // 0 = non-fight, 1 = fight
  std::vector<std::int8_t> split;                 // 0 = train, 1 = test
  std::vector<std::vector<float>> embeddings;     // per expert, row-major N x dim
  std::vector<float> latent;                      // N x 2 generator coordinates; may be empty

  bool has_latent() const { return !latent.empty(); }

  std::span<const float> embedding_row(int expert, int sample) const {
    const int d = experts[static_cast<std::size_t>(expert)].dim;
    return {embeddings[static_cast<std::size_t>(expert)].data() +
                static_cast<std::size_t>(sample) * static_cast<std::size_t>(d),
            static_cast<std::size_t>(d)};
  }
};

std::vector<int> split_indices(const EmbeddingBank& bank, bool test);

/// Structural checks: dense unique ids, binary labels, both splits non-empty,
/// matrix sizes, finite values.
void validate_bank(const EmbeddingBank& bank);

/// Deterministic generator. Latent points are drawn per class around
/// +-(mu, mu); each expert sees a fixed orthonormal affine lift of the latent
/// plus isotropic noise with stddev latent_noise * (1 - fidelity + 0.05).
/// With overfit_gap < 1, every expert above the minimum fidelity embeds its
/// TRAIN rows as a memorizing encoder would: deviation from the class center
/// (latent and noise alike) shrinks by the gap, so the train split looks
/// artificially clean while test rows stay honest.
EmbeddingBank generate_synthetic(const SyntheticConfig& cfg, std::span<const ExpertSpec> experts);

bool banks_equal(const EmbeddingBank& a, const EmbeddingBank& b);

/// Writes manifest.json plus raw little-endian f32 matrices into `dir`.
/// Returns the manifest path.
std::string save_bank(const EmbeddingBank& bank, const std::string& dir);

EmbeddingBank load_bank(const std::string& manifest_path);

}  // namespace srpmoe
