#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/pca.hpp"
#include "capkit/synth.hpp"
#include "capkit/tensor_io.hpp"
#include "capkit/vae.hpp"

namespace capkit {

/// Three temporally aligned visual streams for one clip.
struct ClipFeatures {
  ArrayF img;   // [T, 32, 64, 3]
  ArrayF flow;  // [T, 512]
  ArrayF vae;   // [T, D_vae]

  int frames() const { return img.shape.empty() ? 0 : static_cast<int>(img.shape[0]); }
};

/// Throws unless the streams share T, have the expected trailing shapes and
/// hold only finite values.
void validate_features(const ClipFeatures& f);

inline constexpr const char* kStreamNames[3] = {"img", "flow", "vae"};

/// Writes <dir>/<clip_id>.<stream>.json/.bin for the three streams.
void save_features(const std::string& dir, const std::string& clip_id, const ClipFeatures& f);
/// Reads the three stream files, e.g. externally produced features.
ClipFeatures load_features(const std::string& dir, const std::string& clip_id);

struct FeatureConfig {
  SceneConfig scene;
  double duration_s = 3.0;
  int pca_dim = 256;  // per flow channel
  /// Clips in the calibration match that the PCA and VAE are fitted on.
  int calibration_clips = 64;
  VaeConfig vae;
  std::uint64_t seed = 1;
};

struct FeatureModels {
  FlowPCA pca;
  VaeModel vae;
  std::vector<double> vae_loss_history;
};

/// Fits the flow PCA and trains the VAE on one synthetic calibration match
/// generated from `cfg.seed`; the models are then applied unchanged to all
/// other clips.
FeatureModels fit_feature_models(const FeatureConfig& cfg);

/// Fits on given clips: frames [T, H, W, 3] and true flows [T, 2, H, W].
FeatureModels fit_feature_models(std::span<const ArrayD> frames, std::span<const ArrayD> flows,
                                 const FeatureConfig& cfg);

ClipFeatures extract_features(const ArrayD& frames, const ArrayD& flow, const FeatureModels& models);
ClipFeatures extract_features(const SyntheticClip& clip, const FeatureModels& models);

struct SynthExample {
  CaptionRecord record;
  ClipFeatures features;
  ClipEvents events;
};

/// n clips with actions drawn from the real per-action frequencies, caption
/// records split 85/5/10 by `seed`, and all three feature streams.
std::vector<SynthExample> synth_dataset(int n, std::uint64_t seed, const FeatureModels& models,
                                        const FeatureConfig& cfg);

std::string clip_id_for(int index);
/// Generator seed of clip `index` in a dataset drawn with `seed`.
std::uint64_t clip_seed(std::uint64_t seed, int index);

}  // namespace capkit
