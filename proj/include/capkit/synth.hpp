#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/tensor_io.hpp"

namespace capkit {

// ---------------------------------------------------------------------------
// Caption grammar
// ---------------------------------------------------------------------------

struct GrammarAttribute {
  std::string name;
  /// (value, phrase) pairs; the phrase replaces "$name" in the template.
  std::vector<std::pair<std::string, std::string>> values;
};

struct ActionGrammar {
  std::vector<GrammarAttribute> attributes;
  std::string template_text;
};

class CaptionGrammar {
 public:
  static CaptionGrammar from_json(std::string_view json_text);
  /// Grammar compiled in from data/grammar_v1.json.
  static const CaptionGrammar& builtin();

  int version() const { return version_; }
  const ActionGrammar& action(ActionCategory a) const { return actions_.at(a); }
  /// Expands the template for the chosen value index of each attribute.
  Tokens render(ActionCategory a, std::span<const int> value_index) const;

 private:
  int version_ = 0;
  std::array<ActionGrammar, kNumActions> actions_;
};

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct SceneConfig {
  int height = 64;
  int width = 128;
  int fps = 2;
};

/// A square sprite moving by integer displacements.
struct SpriteTrack {
  std::string role;
  std::array<double, 3> color{};
  int size = 4;
  /// positions[t] = top-left (x, y) at frame t; holds T + 1 entries so the
  /// displacement out of the last frame is defined.
  std::vector<std::array<int, 2>> positions;
};

struct ClipEvents {
  ActionCategory action = 0;
  /// (attribute name, value) in grammar order.
  std::vector<std::pair<std::string, std::string>> attributes;
};

struct SyntheticClip {
  ArrayD frames;     // [T, H, W, 3] in [0, 1]
  ArrayD true_flow;  // [T, 2, H, W]: u (x displacement) then v (y displacement)
  ClipEvents events;
  std::vector<SpriteTrack> sprites;  // in drawing order, last on top
  Tokens caption;
};

/// Number of frames for a clip of the given length at the scene frame rate.
int frame_count(double duration_s, const SceneConfig& scene);

/// Deterministic per (seed, action, duration). Value k of attribute 0 sets
/// the ball's vertical velocity, attribute 1 its horizontal speed and
/// attribute 2 the attacker's vertical velocity, so every attribute that
/// the caption mentions is visible in the motion.
SyntheticClip gen_clip(std::uint64_t seed, ActionCategory action, double duration_s,
                       const SceneConfig& scene = {},
                       const CaptionGrammar& grammar = CaptionGrammar::builtin());

/// Action drawn with the per-action caption frequencies of the real corpus.
ActionCategory sample_action(std::uint64_t seed);

// ---------------------------------------------------------------------------
// Image operations
// ---------------------------------------------------------------------------

inline constexpr int kImgHeight = 32;
inline constexpr int kImgWidth = 64;

/// Area-averaging resize of [T, H, W, 3] to [T, 32, 64, 3].
ArrayD downsample_rgb(const ArrayD& frames);

struct MaskGeometry {
  int bottom_height = 0;  // full-width strip along the bottom edge
  int right_width = 0;    // full-height strip along the right edge
  int square_side = 0;
  int square_top = 0;
  int square_left = 0;
};

/// Mask sizes scaled from a 224-high, 398-wide reference frame
/// (24-px bottom strip, 48-px right strip, 40x40 centre square).
MaskGeometry mask_geometry(int height, int width);

struct MaskedImage {
  ArrayD image;  // [H, W, 3] with masked pixels zeroed
  ArrayD mask;   // [H, W], 1 where masked
};

MaskedImage mask_regions(const ArrayD& image);

}  // namespace capkit
