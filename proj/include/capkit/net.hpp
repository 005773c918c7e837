#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "capkit/autograd.hpp"
#include "capkit/corpus.hpp"
#include "capkit/features.hpp"

namespace capkit {

enum Stream : int { kStreamImg = 0, kStreamFlow = 1, kStreamVae = 2 };

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 128;
  int n_heads = 2;
  int n_blocks = 1;
  int ff_dim = 256;
  int max_seq_len = 64;

  // Part B. img: two stride-2 3x3 convolutions per frame, average-pooled to
  // img_pool_h x img_pool_w, then mean and max over time.
  std::vector<int> img_channels{8, 16};
  int img_pool_h = 2;
  int img_pool_w = 4;
  // flow / vae: one same-padded temporal convolution, then mean and max.
  int flow_dim = 512;
  int flow_channels = 32;
  int vae_dim = 64;
  int vae_channels = 32;
  int temporal_kernel = 3;
  /// Width of FC2, the layer after the stream concatenation.
  int fc2_width = 128;
  /// Width of FC3, the first fusion layer of Part C.
  int fc3_width = 128;
  int sw_count = 55;
  std::array<bool, 3> streams{true, true, true};
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct ModelOutput {
  ag::Var logits_c;  // [L, V]
  ag::Var logits_a;  // [L, V]
  ag::Var sw_pred;   // [sw_count] in (0, 1)
};

class CaptionModel {
 public:
  explicit CaptionModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ag::ParameterStore& params() { return params_; }
  const ag::ParameterStore& params() const { return params_; }

  struct LinguisticOut {
    ag::Var logits_a;  // [L, V]
    ag::Var features;  // [L, embed_dim]
  };
  LinguisticOut part_a(std::span<const int> token_ids) const;

  struct VisualOut {
    ag::Var features;  // [fc2_width], >= 0
    ag::Var sw_pred;   // [sw_count]
  };
  VisualOut part_b(const ClipFeatures& clip) const;

  ag::Var part_c(const ag::Var& ling_features, const ag::Var& vis_features) const;

  ModelOutput forward(std::span<const int> token_ids, const ClipFeatures& clip) const;

  /// Greedy decoding from the action tag. The result excludes the tag and
  /// eos and holds at most max_len tokens.
  std::vector<TokenId> generate(const ClipFeatures& clip, ActionCategory action, int max_len) const;
  /// Same, with Part B already evaluated.
  std::vector<TokenId> generate(const ag::Var& vis_features, ActionCategory action, int max_len) const;

 private:
  ModelConfig config_;
  ag::ParameterStore params_;
};

/// Parameter count of a model built from `config`, without building it.
std::size_t parameter_count(const ModelConfig& config);

/// Teacher-forcing pair for one caption: inputs = [tag, c1..cn] and
/// targets = [c1..cn, eos]. Captions longer than max_seq_len - 1 are cut.
struct TeacherForcing {
  std::vector<int> inputs;
  std::vector<int> targets;
};
TeacherForcing teacher_forcing(const Vocabulary& vocab, ActionCategory action,
                               std::span<const std::string> caption, int max_seq_len);

/// 1 where the target token is a significant word.
std::vector<double> sw_target_mask(const Vocabulary& vocab, std::span<const int> targets,
                                   const SWLexicon& lexicon);

void save_model(const std::string& path, const CaptionModel& model);
CaptionModel load_model(const std::string& path);
/// Loads parameters into an existing model; the stored config must equal
/// the model's.
void load_model_into(const std::string& path, CaptionModel& model);

}  // namespace capkit
