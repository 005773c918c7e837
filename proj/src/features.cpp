#include "capkit/features.hpp"

#include <cmath>
#include <cstdio>

#include "capkit/error.hpp"

namespace capkit {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kCalibrationSalt = 0xCA11B0A7ULL;

ArrayF to_f32(const ArrayD& a) {
  ArrayF f;
  f.shape = a.shape;
  f.data.assign(a.data.begin(), a.data.end());
  return f;
}

ArrayD frame_of(const ArrayD& clip, std::int64_t t) {
  std::vector<std::int64_t> shape(clip.shape.begin() + 1, clip.shape.end());
  const auto per = ArrayD::numel(shape);
  return ArrayD(std::move(shape),
                std::vector<double>(clip.data.begin() + static_cast<std::ptrdiff_t>(t * per),
                                    clip.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * per)));
}

}  // namespace

std::string clip_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%05d", index);
  return buf;
}

void validate_features(const ClipFeatures& f) {
  CAPKIT_CHECK(f.img.shape.size() == 4 && f.img.shape[1] == kImgHeight && f.img.shape[2] == kImgWidth &&
                   f.img.shape[3] == 3,
               "shape_mismatch", "img stream must be [T, 32, 64, 3]");
  CAPKIT_CHECK(f.flow.shape.size() == 2 && f.vae.shape.size() == 2, "shape_mismatch",
               "flow and vae streams must be [T, D]");
  const auto t = f.img.shape[0];
  CAPKIT_CHECK(t > 0, "shape_mismatch", "clip has no frames");
  CAPKIT_CHECK(f.flow.shape[0] == t && f.vae.shape[0] == t, "shape_mismatch",
               "feature streams disagree on frame count");
  for (const auto* a : {&f.img, &f.flow, &f.vae}) {
    for (float x : a->data) CAPKIT_CHECK(std::isfinite(x), "bad_features", "non-finite feature value");
  }
}

void save_features(const std::string& dir, const std::string& clip_id, const ClipFeatures& f) {
  write_tensor(dir + "/" + clip_id + ".img", f.img);
  write_tensor(dir + "/" + clip_id + ".flow", f.flow);
  write_tensor(dir + "/" + clip_id + ".vae", f.vae);
}

ClipFeatures load_features(const std::string& dir, const std::string& clip_id) {
  ClipFeatures f;
  f.img = read_tensor_f32(dir + "/" + clip_id + ".img");
  f.flow = read_tensor_f32(dir + "/" + clip_id + ".flow");
  f.vae = read_tensor_f32(dir + "/" + clip_id + ".vae");
  validate_features(f);
  return f;
}

FeatureModels fit_feature_models(std::span<const ArrayD> frames, std::span<const ArrayD> flows,
                                 const FeatureConfig& cfg) {
  CAPKIT_CHECK(!frames.empty() && frames.size() == flows.size(), "bad_input",
               "feature fitting needs matching, non-empty frame and flow clips");
  std::vector<ArrayD> flow_frames;
  std::vector<ArrayD> images;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const ArrayD small = downsample_rgb(frames[k]);
    for (std::int64_t t = 0; t < flows[k].shape[0]; ++t) {
      flow_frames.push_back(frame_of(flows[k], t));
      images.push_back(frame_of(small, t));
    }
  }
  FlowPCA pca = fit_flow_pca(flow_frames, cfg.pca_dim);
  flow_frames.clear();
  VaeConfig vc = cfg.vae;
  vc.height = kImgHeight;
  vc.width = kImgWidth;
  auto trained = train_vae(images, vc);
  return FeatureModels{std::move(pca), std::move(trained.model), std::move(trained.loss_history)};
}

FeatureModels fit_feature_models(const FeatureConfig& cfg) {
  CAPKIT_CHECK(cfg.calibration_clips >= 1, "bad_config", "calibration_clips must be >= 1");
  const std::uint64_t cal_seed = cfg.seed ^ kCalibrationSalt;
  std::vector<ArrayD> frames, flows;
  for (int k = 0; k < cfg.calibration_clips; ++k) {
    const std::uint64_t s = mix(cal_seed, static_cast<std::uint64_t>(k));
    auto clip = gen_clip(s, sample_action(s), cfg.duration_s, cfg.scene);
    frames.push_back(std::move(clip.frames));
    flows.push_back(std::move(clip.true_flow));
  }
  return fit_feature_models(frames, flows, cfg);
}

ClipFeatures extract_features(const ArrayD& frames, const ArrayD& flow, const FeatureModels& models) {
  ClipFeatures f;
  const ArrayD small = downsample_rgb(frames);
  f.img = to_f32(small);
  f.flow = to_f32(apply_pca_clip(models.pca, flow));
  f.vae = to_f32(vae_encode_clip(models.vae, small));
  validate_features(f);
  return f;
}

ClipFeatures extract_features(const SyntheticClip& clip, const FeatureModels& models) {
  return extract_features(clip.frames, clip.true_flow, models);
}

std::uint64_t clip_seed(std::uint64_t seed, int index) { return mix(seed, static_cast<std::uint64_t>(index)); }

std::vector<SynthExample> synth_dataset(int n, std::uint64_t seed, const FeatureModels& models,
                                        const FeatureConfig& cfg) {
  CAPKIT_CHECK(n >= 1, "bad_config", "need at least one clip");
  std::vector<SynthExample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = clip_seed(seed, i);
    const ActionCategory a = sample_action(s);
    const auto clip = gen_clip(s, a, cfg.duration_s, cfg.scene);
    out.push_back(SynthExample{CaptionRecord{clip_id_for(i), a, clip.caption, Split::kTrain},
                               extract_features(clip, models), clip.events});
  }
  std::vector<CaptionRecord> records;
  for (const auto& e : out) records.push_back(e.record);
  split_dataset(records, SplitRatios{}, seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].record.split = records[i].split;
  return out;
}

}  // namespace capkit
