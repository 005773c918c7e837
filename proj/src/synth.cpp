#include "capkit/synth.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "capkit/embedded_data.hpp"
#include "capkit/error.hpp"
#include "capkit/rng.hpp"

namespace capkit {

using nlohmann::json;

CaptionGrammar CaptionGrammar::from_json(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error("bad_grammar", std::string("grammar is not valid JSON: ") + e.what());
  }
  CaptionGrammar g;
  g.version_ = doc.value("version", 0);
  std::array<bool, kNumActions> seen{};
  for (const auto& a : doc.at("actions")) {
    const ActionCategory act = parse_action(a.at("action").get<std::string>());
    CAPKIT_CHECK(!seen[act], "bad_grammar", "duplicate grammar for " + std::string(action_name(act)));
    seen[act] = true;
    ActionGrammar ag;
    ag.template_text = a.at("template").get<std::string>();
    for (const auto& attr : a.at("attributes")) {
      GrammarAttribute ga;
      ga.name = attr.at("name").get<std::string>();
      for (const auto& v : attr.at("values")) {
        ga.values.emplace_back(v.at(0).get<std::string>(), v.at(1).get<std::string>());
      }
      CAPKIT_CHECK(ga.values.size() >= 2 && ga.values.size() <= 3, "bad_grammar",
                   "attribute " + ga.name + " needs 2 or 3 values");
      CAPKIT_CHECK(ag.template_text.find("$" + ga.name) != std::string::npos, "bad_grammar",
                   "template for " + std::string(action_name(act)) + " lacks $" + ga.name);
      ag.attributes.push_back(std::move(ga));
    }
    CAPKIT_CHECK(ag.attributes.size() <= 3, "bad_grammar", "at most 3 attributes per action");
    g.actions_[act] = std::move(ag);
  }
  for (std::size_t i = 0; i < kNumActions; ++i) {
    CAPKIT_CHECK(seen[i], "bad_grammar", "grammar lacks action " + std::string(kActionNames[i]));
  }
  return g;
}

const CaptionGrammar& CaptionGrammar::builtin() {
  static const CaptionGrammar g = from_json(embedded::kGrammarJson);
  return g;
}

Tokens CaptionGrammar::render(ActionCategory a, std::span<const int> value_index) const {
  const auto& ag = action(a);
  CAPKIT_CHECK(value_index.size() == ag.attributes.size(), "bad_grammar", "attribute count mismatch");
  std::string text = ag.template_text;
  for (std::size_t k = 0; k < ag.attributes.size(); ++k) {
    const auto& attr = ag.attributes[k];
    const std::string slot = "$" + attr.name;
    const auto& phrase = attr.values.at(static_cast<std::size_t>(value_index[k])).second;
    for (auto pos = text.find(slot); pos != std::string::npos; pos = text.find(slot, pos + phrase.size())) {
      text.replace(pos, slot.size(), phrase);
    }
  }
  return tokenize(text);
}

// ---------------------------------------------------------------------------

int frame_count(double duration_s, const SceneConfig& scene) {
  CAPKIT_CHECK(duration_s > 0.0, "bad_config", "clip duration must be positive");
  return std::max(1, static_cast<int>(std::lround(duration_s * scene.fps)));
}

namespace {

// Caption counts per action in the real corpus, used as sampling weights.
constexpr std::array<int, kNumActions> kActionFrequency = {
    2326, 3891, 2171, 1646, 2528, 3085, 769, 1252, 1295, 795, 1267, 399, 87, 44, 68, 33};

constexpr std::array<double, 3> kGrass = {0.16, 0.52, 0.18};
constexpr std::array<double, 3> kGrassDark = {0.13, 0.45, 0.15};
constexpr std::array<double, 3> kWhite = {0.95, 0.95, 0.95};
constexpr std::array<double, 3> kTeamA = {0.85, 0.15, 0.15};
constexpr std::array<double, 3> kTeamB = {0.15, 0.25, 0.85};
constexpr std::array<double, 3> kKeeper = {0.95, 0.85, 0.10};

int level(int index, int count, int magnitude) {
  // Evenly spaced integers in [-magnitude, magnitude].
  if (count <= 1) return 0;
  return -magnitude + (2 * magnitude * index) / (count - 1);
}

int speed(int index, int count) {
  static constexpr int kTwo[] = {2, 5};
  static constexpr int kThree[] = {1, 3, 5};
  return count == 3 ? kThree[index] : kTwo[index];
}

void paint_background(ArrayD& frames, int t, int h, int w) {
  double* f = frames.data.data() + static_cast<std::size_t>(t) * h * w * 3;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto& c = ((x / 8) % 2 == 0) ? kGrass : kGrassDark;
      std::copy(c.begin(), c.end(), f + (y * w + x) * 3);
    }
  }
  auto line = [&](int x0, int y0, int x1, int y1) {
    for (int y = std::max(0, y0); y <= std::min(h - 1, y1); ++y) {
      for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x) {
        std::copy(kWhite.begin(), kWhite.end(), f + (y * w + x) * 3);
      }
    }
  };
  line(w / 2, 0, w / 2, h - 1);                              // halfway line
  line(w - w / 6, h / 4, w - w / 6, h - h / 4);              // box front
  line(w - w / 6, h / 4, w - 1, h / 4);                      // box top
  line(w - w / 6, h - h / 4, w - 1, h - h / 4);              // box bottom
  line(w - 2, h / 2 - h / 10, w - 1, h / 2 + h / 10);        // goal mouth
}

}  // namespace

ActionCategory sample_action(std::uint64_t seed) {
  Rng rng(seed ^ 0xA5A5A5A5ULL);
  int total = 0;
  for (int f : kActionFrequency) total += f;
  auto r = static_cast<int>(rng.uniform_int(0, total - 1));
  for (std::size_t i = 0; i < kNumActions; ++i) {
    if (r < kActionFrequency[i]) return static_cast<ActionCategory>(i);
    r -= kActionFrequency[i];
  }
  return 0;
}

SyntheticClip gen_clip(std::uint64_t seed, ActionCategory action, double duration_s,
                       const SceneConfig& scene, const CaptionGrammar& grammar) {
  CAPKIT_CHECK(action < kNumActions, "unknown_action", "action index out of range");
  const int frames_n = frame_count(duration_s, scene);
  const int h = scene.height;
  const int w = scene.width;
  CAPKIT_CHECK(h >= kImgHeight && w >= kImgWidth, "bad_config", "scene smaller than feature resolution");
  Rng rng(seed);

  SyntheticClip clip;
  clip.events.action = action;
  const auto& ag = grammar.action(action);
  std::vector<int> choice;
  for (const auto& attr : ag.attributes) {
    const int k = static_cast<int>(rng.index(attr.values.size()));
    choice.push_back(k);
    clip.events.attributes.emplace_back(attr.name, attr.values[static_cast<std::size_t>(k)].first);
  }
  clip.caption = grammar.render(action, choice);

  auto attr_count = [&](std::size_t k) {
    return k < ag.attributes.size() ? static_cast<int>(ag.attributes[k].values.size()) : 0;
  };
  const int ball_vy = attr_count(0) ? level(choice[0], attr_count(0), 2) : 0;
  const int ball_vx = attr_count(1) ? speed(choice[1], attr_count(1)) : 3;
  const int attacker_vy =
      attr_count(2) ? level(choice[2], attr_count(2), 2) : static_cast<int>(rng.uniform_int(-1, 1));

  // Displacements start after the first frame so the opening frame shows the set-up.
  auto track = [&](std::string role, std::array<double, 3> color, int x0, int y0, int vx, int vy, int start) {
    SpriteTrack s;
    s.role = std::move(role);
    s.color = color;
    s.size = 4;
    for (int t = 0; t <= frames_n; ++t) {
      const int steps = std::max(0, t - start);
      s.positions.push_back({x0 + vx * steps, y0 + vy * steps});
    }
    return s;
  };

  const int ball_x = static_cast<int>(w / 6 + rng.uniform_int(-4, 4) + 2 * (action % 4));
  const int ball_y = static_cast<int>(h / 2 + rng.uniform_int(-6, 6));
  for (int i = 0; i < 4; ++i) {
    const bool team_a = i % 2 == 0;
    clip.sprites.push_back(track(team_a ? "team_a" : "team_b", team_a ? kTeamA : kTeamB,
                                 static_cast<int>(rng.uniform_int(w / 8, w - w / 4)),
                                 static_cast<int>(rng.uniform_int(4, h - 8)),
                                 static_cast<int>(rng.uniform_int(-1, 1)),
                                 static_cast<int>(rng.uniform_int(-1, 1)), 0));
  }
  clip.sprites.push_back(track("keeper", kKeeper, w - 8, static_cast<int>(h / 2 + rng.uniform_int(-4, 4)), 0,
                               static_cast<int>(rng.uniform_int(-1, 1)), 0));
  clip.sprites.push_back(track("attacker", kTeamA, ball_x - 5, ball_y + 1, 1, attacker_vy, 0));
  clip.sprites.push_back(track("ball", kWhite, ball_x, ball_y, ball_vx, ball_vy, 1));

  clip.frames = ArrayD({frames_n, h, w, 3});
  clip.true_flow = ArrayD({frames_n, 2, h, w});
  for (int t = 0; t < frames_n; ++t) {
    paint_background(clip.frames, t, h, w);
    double* f = clip.frames.data.data() + static_cast<std::size_t>(t) * h * w * 3;
    double* u = clip.true_flow.data.data() + static_cast<std::size_t>(t) * 2 * h * w;
    double* v = u + static_cast<std::size_t>(h) * w;
    for (const auto& s : clip.sprites) {
      const auto [x0, y0] = s.positions[static_cast<std::size_t>(t)];
      const auto [x1, y1] = s.positions[static_cast<std::size_t>(t) + 1];
      for (int y = std::max(0, y0); y < std::min(h, y0 + s.size); ++y) {
        for (int x = std::max(0, x0); x < std::min(w, x0 + s.size); ++x) {
          std::copy(s.color.begin(), s.color.end(), f + (y * w + x) * 3);
          u[y * w + x] = x1 - x0;
          v[y * w + x] = y1 - y0;
        }
      }
    }
  }
  return clip;
}

// ---------------------------------------------------------------------------

namespace {

// Overlap weights of a box filter mapping n_in samples onto n_out.
std::vector<std::vector<std::pair<int, double>>> box_weights(int n_in, int n_out) {
  std::vector<std::vector<std::pair<int, double>>> out(static_cast<std::size_t>(n_out));
  const double scale = static_cast<double>(n_in) / n_out;
  for (int o = 0; o < n_out; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(lo)); i < std::min(n_in, static_cast<int>(std::ceil(hi))); ++i) {
      const double cover = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (cover > 0.0) out[static_cast<std::size_t>(o)].emplace_back(i, cover / scale);
    }
  }
  return out;
}

}  // namespace

ArrayD downsample_rgb(const ArrayD& frames) {
  CAPKIT_CHECK(frames.shape.size() == 4 && frames.shape[3] == 3, "shape_mismatch",
               "downsample_rgb expects [T, H, W, 3]");
  const int t_n = static_cast<int>(frames.shape[0]);
  const int h = static_cast<int>(frames.shape[1]);
  const int w = static_cast<int>(frames.shape[2]);
  CAPKIT_CHECK(h >= kImgHeight && w >= kImgWidth, "shape_mismatch",
               "downsample_rgb: input " + std::to_string(h) + "x" + std::to_string(w) +
                   " smaller than 32x64");
  const auto wy = box_weights(h, kImgHeight);
  const auto wx = box_weights(w, kImgWidth);
  ArrayD out({t_n, kImgHeight, kImgWidth, 3});
  std::vector<double> rows(static_cast<std::size_t>(kImgHeight) * w * 3);
  for (int t = 0; t < t_n; ++t) {
    const double* src = frames.data.data() + static_cast<std::size_t>(t) * h * w * 3;
    std::fill(rows.begin(), rows.end(), 0.0);
    for (int oy = 0; oy < kImgHeight; ++oy) {
      for (const auto& [iy, a] : wy[static_cast<std::size_t>(oy)]) {
        for (int k = 0; k < w * 3; ++k) rows[static_cast<std::size_t>(oy) * w * 3 + k] += a * src[iy * w * 3 + k];
      }
    }
    double* dst = out.data.data() + static_cast<std::size_t>(t) * kImgHeight * kImgWidth * 3;
    for (int oy = 0; oy < kImgHeight; ++oy) {
      for (int ox = 0; ox < kImgWidth; ++ox) {
        for (int c = 0; c < 3; ++c) {
          double s = 0.0;
          for (const auto& [ix, b] : wx[static_cast<std::size_t>(ox)]) s += b * rows[(static_cast<std::size_t>(oy) * w + ix) * 3 + c];
          dst[(oy * kImgWidth + ox) * 3 + c] = std::clamp(s, 0.0, 1.0);
        }
      }
    }
  }
  return out;
}

MaskGeometry mask_geometry(int height, int width) {
  MaskGeometry g;
  g.bottom_height = static_cast<int>(std::lround(24.0 / 224.0 * height));
  g.right_width = static_cast<int>(std::lround(48.0 / 398.0 * width));
  g.square_side = static_cast<int>(std::lround(40.0 / 224.0 * height));
  g.square_top = (height - g.square_side) / 2;
  g.square_left = (width - g.square_side) / 2;
  return g;
}

MaskedImage mask_regions(const ArrayD& image) {
  CAPKIT_CHECK(image.shape.size() == 3 && image.shape[2] == 3, "shape_mismatch",
               "mask_regions expects [H, W, 3]");
  const int h = static_cast<int>(image.shape[0]);
  const int w = static_cast<int>(image.shape[1]);
  const auto g = mask_geometry(h, w);
  MaskedImage out{image, ArrayD({h, w})};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool masked = y >= h - g.bottom_height || x >= w - g.right_width ||
                          (y >= g.square_top && y < g.square_top + g.square_side && x >= g.square_left &&
                           x < g.square_left + g.square_side);
      if (!masked) continue;
      out.mask.data[static_cast<std::size_t>(y) * w + x] = 1.0;
      for (int c = 0; c < 3; ++c) out.image.data[(static_cast<std::size_t>(y) * w + x) * 3 + c] = 0.0;
    }
  }
  return out;
}

}  // namespace capkit
