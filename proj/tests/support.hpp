#pragma once

// Shared helpers for the unit tests: small random generators for property
// tests and a couple of fixtures that are expensive to rebuild.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "capkit/cli.hpp"
#include "capkit/corpus.hpp"
#include "capkit/features.hpp"
#include "capkit/harness.hpp"
#include "capkit/rng.hpp"

namespace capkit::testing {

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

inline std::vector<double> random_binary(Rng& rng, std::size_t n, double p_one = 0.2) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform() < p_one ? 1.0 : 0.0;
  return v;
}

/// Sentence of `len` words drawn from `pool`.
inline Tokens random_sentence(Rng& rng, const std::vector<std::string>& pool, std::size_t len) {
  Tokens t;
  for (std::size_t i = 0; i < len; ++i) t.push_back(pool[rng.index(pool.size())]);
  return t;
}

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> pool = {
      "the", "ball", "goal", "post", "pass", "shot", "left", "right", "over", "bar", "a", "and",
      "{player}", "{team}", ".", ",", "!", "corner", "keeper", "saves", "cross", "header", "wide", "low"};
  return pool;
}

/// Random clip features with the canonical stream shapes.
inline ClipFeatures random_features(Rng& rng, int frames, int vae_dim = 64) {
  ClipFeatures f;
  f.img = ArrayF({frames, kImgHeight, kImgWidth, 3});
  for (auto& x : f.img.data) x = static_cast<float>(rng.uniform());
  f.flow = ArrayF({frames, 512});
  for (auto& x : f.flow.data) x = static_cast<float>(rng.normal());
  f.vae = ArrayF({frames, vae_dim});
  for (auto& x : f.vae.data) x = static_cast<float>(rng.normal());
  return f;
}

/// Fresh empty scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("capkit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

/// Small model config sized for fast tests.
inline ModelConfig tiny_model(int vocab_size, std::uint64_t seed = 3) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = 16;
  c.ff_dim = 24;
  c.max_seq_len = 24;
  c.img_channels = {4, 4};
  c.flow_channels = 6;
  c.vae_channels = 6;
  c.fc2_width = 12;
  c.fc3_width = 12;
  c.seed = seed;
  return c;
}

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

/// Runs one capkit subcommand in-process.
inline CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "capkit");
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

/// Writes a run config sized so the whole pipeline takes seconds.
inline std::string write_fast_config(const std::string& dir, int epochs = 2) {
  const std::string path = dir + "/config.json";
  std::ofstream f(path);
  f << R"({"seed": 5,
  "synth": {"calibration_clips": 4, "vae_epochs": 1, "pca_dim": 8, "vae_latent_dim": 8},
  "train": {"epochs_max": )" << epochs << R"(, "patience": 5, "max_len": 16,
            "model": {"flow_dim": 16, "vae_dim": 8, "embed_dim": 16, "ff_dim": 24, "max_seq_len": 32, "img_channels": [4, 4],
                      "flow_channels": 6, "vae_channels": 6, "fc2_width": 12, "fc3_width": 12}},
  "triplet": {"epochs": 1}})";
  return path;
}

}  // namespace capkit::testing
