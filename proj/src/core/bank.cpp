#include "core/bank.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "core/errors.hpp"
#include "core/linalg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace srpmoe {

std::vector<ExpertSpec> default_expert_triple() {
  return {
      {0, "tsf-b", 768, 0.59, 0.55},
      {1, "vmae-b", 768, 2.7, 0.8},
      {2, "vmae-l", 1024, 8.9, 0.95},
  };
}

double total_cost(std::span<const ExpertSpec> experts) {
  double sum = 0.0;
  for (const auto& e : experts) sum += e.cost_tflops;
  return sum;
}

std::vector<int> split_indices(const EmbeddingBank& bank, bool test) {
  std::vector<int> idx;
  for (int i = 0; i < bank.num_samples; ++i)
    if ((bank.split[static_cast<std::size_t>(i)] != 0) == test) idx.push_back(i);
  return idx;
}

void validate_bank(const EmbeddingBank& bank) {
  const auto E = bank.experts.size();
  if (E == 0) throw FormatError("bank has no experts");
  for (std::size_t i = 0; i < E; ++i) {
    const auto& e = bank.experts[i];
    if (e.id != static_cast<int>(i)) throw FormatError("expert ids must be dense 0..E-1");
    if (e.dim <= 0) throw FormatError("expert dim must be positive");
    if (!(e.cost_tflops > 0.0)) throw FormatError("expert cost must be positive");
  }
  const auto n = static_cast<std::size_t>(bank.num_samples);
  if (n == 0) throw FormatError("bank has no samples");
  if (bank.labels.size() != n || bank.split.size() != n)
    throw FormatError("labels/split length != num_samples");
  for (auto l : bank.labels)
    if (l != 0 && l != 1) throw FormatError("labels must be 0 or 1");
  bool has_train = false, has_test = false;
  for (auto s : bank.split) (s == 0 ? has_train : has_test) = true;
  if (!has_train || !has_test) throw FormatError("both splits must be non-empty");
  if (bank.embeddings.size() != E) throw FormatError("one embedding matrix per expert required");
  for (std::size_t e = 0; e < E; ++e) {
    const auto expect = n * static_cast<std::size_t>(bank.experts[e].dim);
    if (bank.embeddings[e].size() != expect)
      throw FormatError("embedding matrix size mismatch for expert " + std::to_string(e));
    for (float v : bank.embeddings[e])
      if (!std::isfinite(v)) throw DataError("non-finite embedding value");
  }
  if (!bank.latent.empty()) {
    if (bank.latent.size() != n * 2) throw FormatError("latent must be N x 2");
    for (float v : bank.latent)
      if (!std::isfinite(v)) throw DataError("non-finite latent value");
  }
}

EmbeddingBank generate_synthetic(const SyntheticConfig& cfg, std::span<const ExpertSpec> experts) {
  if (cfg.num_train <= 0 || cfg.num_test <= 0)
    throw ConfigError("synthetic bank needs positive train and test sizes");
  if (!(cfg.class_separation > 0.0) || !(cfg.latent_noise > 0.0))
    throw ConfigError("class_separation and latent_noise must be > 0");
  if (!(cfg.overfit_gap > 0.0) || cfg.overfit_gap > 1.0)
    throw ConfigError("overfit_gap must be in (0, 1]");
  if (experts.empty()) throw ConfigError("need at least one expert");
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const auto& e = experts[i];
    if (e.id != static_cast<int>(i)) throw ConfigError("expert ids must be dense 0..E-1");
    if (e.dim < 2) throw ConfigError("synthetic experts need dim >= 2");
    if (!(e.cost_tflops > 0.0)) throw ConfigError("expert cost must be positive");
    if (!(e.fidelity > 0.0) || e.fidelity > 1.0) throw ConfigError("fidelity must be in (0, 1]");
  }
  for (std::size_t i = 1; i < experts.size(); ++i) {
    if (experts[i].cost_tflops >= experts[i - 1].cost_tflops &&
        experts[i].fidelity < experts[i - 1].fidelity)
      throw ConfigError("fidelity must be nondecreasing in cost");
  }

  const int n = cfg.num_train + cfg.num_test;
  const double mu = cfg.class_separation;
  const double sigma = cfg.latent_noise;

  EmbeddingBank bank;
  bank.experts.assign(experts.begin(), experts.end());
  bank.num_samples = n;
  bank.labels.resize(static_cast<std::size_t>(n));
  bank.split.resize(static_cast<std::size_t>(n));
  bank.latent.resize(static_cast<std::size_t>(n) * 2);

  Rng master(cfg.seed);
  Rng latent_rng = master.derive(1);
  for (int i = 0; i < n; ++i) {
    const std::int8_t label = static_cast<std::int8_t>(i & 1);
    const double cx = label ? mu : -mu;
    bank.labels[static_cast<std::size_t>(i)] = label;
    bank.split[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(i >= cfg.num_train);
    bank.latent[static_cast<std::size_t>(i) * 2 + 0] =
        static_cast<float>(cx + sigma * latent_rng.normal());
    bank.latent[static_cast<std::size_t>(i) * 2 + 1] =
        static_cast<float>(cx + sigma * latent_rng.normal());
  }

  bank.embeddings.resize(experts.size());
  for (const auto& e : experts) {
    // fixed per-(seed, expert) affine lift with orthonormalized columns
    Rng lift_rng = master.derive(100 + static_cast<std::uint64_t>(e.id));
    Vec q0(e.dim), q1(e.dim), offset(e.dim);
    for (int r = 0; r < e.dim; ++r) q0(r) = lift_rng.normal();
    for (int r = 0; r < e.dim; ++r) q1(r) = lift_rng.normal();
    for (int r = 0; r < e.dim; ++r) offset(r) = 0.1 * lift_rng.normal();
    q0.normalize();
    q1 -= q0.dot(q1) * q0;
    q1.normalize();

    const double noise_std = sigma * (1.0 - e.fidelity + 0.05);
    // Overfit emulation: designated (higher-fidelity) experts act like
    // encoders that memorized the train split — their train embeddings
    // collapse toward the class centers by overfit_gap while test embeddings
    // stay honest. The lowest-fidelity expert is never designated, which is
    // what makes larger experts look artificially superior during training.
    double min_fidelity = experts.front().fidelity;
    for (const auto& x : experts) min_fidelity = std::min(min_fidelity, x.fidelity);
    const bool designated = cfg.overfit_gap < 1.0 && e.fidelity > min_fidelity;

    Rng noise_rng = master.derive(200 + static_cast<std::uint64_t>(e.id));
    auto& m = bank.embeddings[static_cast<std::size_t>(e.id)];
    m.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(e.dim));
    for (int i = 0; i < n; ++i) {
      const double cx = bank.labels[static_cast<std::size_t>(i)] ? mu : -mu;
      double zx = bank.latent[static_cast<std::size_t>(i) * 2 + 0];
      double zy = bank.latent[static_cast<std::size_t>(i) * 2 + 1];
      double s = noise_std;
      if (designated && bank.split[static_cast<std::size_t>(i)] == 0) {
        zx = cx + cfg.overfit_gap * (zx - cx);
        zy = cx + cfg.overfit_gap * (zy - cx);
        s *= cfg.overfit_gap;
      }
      float* row = m.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(e.dim);
      for (int d = 0; d < e.dim; ++d)
        row[d] = static_cast<float>(q0(d) * zx + q1(d) * zy + offset(d) + s * noise_rng.normal());
    }
  }

  validate_bank(bank);
  return bank;
}

bool banks_equal(const EmbeddingBank& a, const EmbeddingBank& b) {
  if (a.num_samples != b.num_samples || a.experts.size() != b.experts.size()) return false;
  for (std::size_t i = 0; i < a.experts.size(); ++i) {
    const auto& x = a.experts[i];
    const auto& y = b.experts[i];
    if (x.id != y.id || x.name != y.name || x.dim != y.dim || x.cost_tflops != y.cost_tflops)
      return false;
  }
  return a.labels == b.labels && a.split == b.split && a.embeddings == b.embeddings &&
         a.latent == b.latent;
}

namespace {

void write_f32_file(const fs::path& path, const float* data, std::size_t count) {
  std::vector<char> buf(count * 4);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    buf[i * 4 + 0] = static_cast<char>(bits & 0xff);
    buf[i * 4 + 1] = static_cast<char>((bits >> 8) & 0xff);
    buf[i * 4 + 2] = static_cast<char>((bits >> 16) & 0xff);
    buf[i * 4 + 3] = static_cast<char>((bits >> 24) & 0xff);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error("short write on " + path.string());
}

std::vector<float> read_f32_file(const fs::path& path, std::size_t expect_count) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw FormatError("missing embedding file " + path.string());
  if (size != expect_count * 4)
    throw FormatError(path.filename().string() + ": expected " + std::to_string(expect_count * 4) +
                      " bytes, found " + std::to_string(size));
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<char> buf(size);
  is.read(buf.data(), static_cast<std::streamsize>(size));
  if (!is) throw FormatError("short read on " + path.string());
  std::vector<float> out(expect_count);
  for (std::size_t i = 0; i < expect_count; ++i) {
    std::uint32_t bits = static_cast<std::uint8_t>(buf[i * 4 + 0]) |
                         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[i * 4 + 1])) << 8) |
                         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[i * 4 + 2])) << 16) |
                         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[i * 4 + 3])) << 24);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

void write_token_file(const fs::path& path, const std::vector<std::int8_t>& values,
                      const char* zero, const char* one) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  for (auto v : values) os << (v ? one : zero) << '\n';
}

std::vector<std::int8_t> read_token_file(const fs::path& path, std::size_t expect,
                                         const char* zero, const char* one) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<std::int8_t> out;
  std::string tok;
  while (is >> tok) {
    if (tok == zero) out.push_back(0);
    else if (tok == one) out.push_back(1);
    else throw FormatError(path.filename().string() + ": unexpected token '" + tok + "'");
  }
  if (out.size() != expect)
    throw FormatError(path.filename().string() + ": expected " + std::to_string(expect) +
                      " lines, found " + std::to_string(out.size()));
  return out;
}

}  // namespace

std::string save_bank(const EmbeddingBank& bank, const std::string& dir) {
  validate_bank(bank);
  const fs::path root(dir);
  fs::create_directories(root);

  write_token_file(root / "labels.txt", bank.labels, "0", "1");
  write_token_file(root / "split.txt", bank.split, "train", "test");

  json experts = json::array();
  for (const auto& e : bank.experts) {
    const std::string file = "expert_" + std::to_string(e.id) + ".f32";
    write_f32_file(root / file, bank.embeddings[static_cast<std::size_t>(e.id)].data(),
                   bank.embeddings[static_cast<std::size_t>(e.id)].size());
    experts.push_back({{"id", e.id},
                       {"name", e.name},
                       {"dim", e.dim},
                       {"cost_tflops", e.cost_tflops},
                       {"file", file}});
  }

  json manifest = {{"version", 1},
                   {"num_samples", bank.num_samples},
                   {"labels_file", "labels.txt"},
                   {"split_file", "split.txt"},
                   {"experts", experts}};
  if (bank.has_latent()) {
    write_f32_file(root / "latent.f32", bank.latent.data(), bank.latent.size());
    manifest["latent_file"] = "latent.f32";
  }

  const fs::path manifest_path = root / "manifest.json";
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw Error("cannot write " + manifest_path.string());
  os << manifest.dump(2) << '\n';
  return manifest_path.string();
}

EmbeddingBank load_bank(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw FormatError("cannot open manifest " + manifest_path);
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }

  EmbeddingBank bank;
  try {
    if (manifest.at("version").get<int>() != 1) throw FormatError("unsupported manifest version");
    bank.num_samples = manifest.at("num_samples").get<int>();
    if (bank.num_samples <= 0) throw FormatError("num_samples must be positive");

    const fs::path root = fs::path(manifest_path).parent_path();
    const auto n = static_cast<std::size_t>(bank.num_samples);
    bank.labels = read_token_file(root / manifest.at("labels_file").get<std::string>(), n, "0", "1");
    bank.split =
        read_token_file(root / manifest.at("split_file").get<std::string>(), n, "train", "test");

    std::set<int> seen_ids;
    struct Entry {
      ExpertSpec spec;
      std::string file;
    };
    std::vector<Entry> entries;
    for (const auto& j : manifest.at("experts")) {
      Entry e;
      e.spec.id = j.at("id").get<int>();
      e.spec.name = j.at("name").get<std::string>();
      e.spec.dim = j.at("dim").get<int>();
      e.spec.cost_tflops = j.at("cost_tflops").get<double>();
      e.file = j.at("file").get<std::string>();
      if (!seen_ids.insert(e.spec.id).second)
        throw FormatError("duplicate expert id " + std::to_string(e.spec.id));
      entries.push_back(std::move(e));
    }
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.spec.id < b.spec.id; });
    for (auto& e : entries) {
      bank.experts.push_back(e.spec);
      bank.embeddings.push_back(
          read_f32_file(root / e.file, n * static_cast<std::size_t>(e.spec.dim)));
    }
    if (manifest.contains("latent_file"))
      bank.latent = read_f32_file(root / manifest.at("latent_file").get<std::string>(), n * 2);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest field error: ") + e.what());
  }

  validate_bank(bank);
  return bank;
}

}  // namespace srpmoe
