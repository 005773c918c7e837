#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "capkit/error.hpp"
#include "capkit/synth.hpp"

using namespace capkit;

namespace {

const std::string& attribute(const SyntheticClip& c, const std::string& name) {
  for (const auto& [k, v] : c.events.attributes)
    if (k == name) return v;
  static const std::string none;
  return none;
}

bool has_token(const Tokens& t, const std::string& w) { return std::find(t.begin(), t.end(), w) != t.end(); }

// Area of the union of three axis-aligned rectangles by inclusion-exclusion.
struct Rect {
  int y0, y1, x0, x1;  // half-open
  long area() const { return std::max(0, y1 - y0) * static_cast<long>(std::max(0, x1 - x0)); }
};
Rect meet(const Rect& a, const Rect& b) {
  return {std::max(a.y0, b.y0), std::min(a.y1, b.y1), std::max(a.x0, b.x0), std::min(a.x1, b.x1)};
}
long union_area(const Rect& a, const Rect& b, const Rect& c) {
  return a.area() + b.area() + c.area() - meet(a, b).area() - meet(a, c).area() - meet(b, c).area() +
         meet(meet(a, b), c).area();
}

}  // namespace

TEST(GenClip, FrameCountAtTwoFps) {
  const auto c = gen_clip(7, parse_action("shots off target"), 4.0);
  EXPECT_EQ(c.frames.shape, (std::vector<std::int64_t>{8, 64, 128, 3}));
  EXPECT_EQ(c.true_flow.shape, (std::vector<std::int64_t>{8, 2, 64, 128}));
  for (double x : c.frames.data) ASSERT_TRUE(x >= 0.0 && x <= 1.0);
}

TEST(GenClip, Deterministic) {
  const auto a = gen_clip(99, parse_action("corner"), 3.0);
  const auto b = gen_clip(99, parse_action("corner"), 3.0);
  EXPECT_EQ(a.frames.data, b.frames.data);
  EXPECT_EQ(a.true_flow.data, b.true_flow.data);
  EXPECT_EQ(a.caption, b.caption);
  EXPECT_EQ(a.events.attributes, b.events.attributes);
}

TEST(GenClip, OverTheBarCaptionCarriesBothWords) {
  const auto action = parse_action("shots off target");
  int found = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto c = gen_clip(seed, action, 3.0);
    if (attribute(c, "height") != "over") continue;
    ++found;
    EXPECT_TRUE(has_token(c.caption, "over"));
    EXPECT_TRUE(has_token(c.caption, "bar"));
    const auto sw = sw_extract(c.caption, SWLexicon::builtin());
    EXPECT_TRUE(std::count(sw.begin(), sw.end(), *SWLexicon::builtin().lookup("over")) > 0);
    EXPECT_TRUE(std::count(sw.begin(), sw.end(), *SWLexicon::builtin().lookup("bar")) > 0);
  }
  EXPECT_GT(found, 5);
}

TEST(GenClip, CaptionsOnlyUseKnownActionsAndRender) {
  for (ActionCategory a = 0; a < kNumActions; ++a) {
    const auto c = gen_clip(a + 1000, a, 2.0);
    EXPECT_FALSE(c.caption.empty()) << action_name(a);
    EXPECT_EQ(c.events.action, a);
    for (const auto& t : c.caption) EXPECT_NE(t.front(), '$') << t;
  }
}

// Rebuilds, in test code, which sprite owns each pixel and checks that the
// flow equals that sprite's scripted displacement and zero elsewhere.
TEST(GenClip, FlowMatchesScriptedDisplacementProperty) {
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    const auto action = static_cast<ActionCategory>(seed % kNumActions);
    const auto c = gen_clip(seed * 31 + 5, action, 3.0);
    const int n = static_cast<int>(c.frames.shape[0]);
    const int h = static_cast<int>(c.frames.shape[1]);
    const int w = static_cast<int>(c.frames.shape[2]);
    for (int t = 0; t < n; ++t) {
      std::vector<int> owner(static_cast<std::size_t>(h) * w, -1);
      for (std::size_t s = 0; s < c.sprites.size(); ++s) {
        const auto [x0, y0] = c.sprites[s].positions[static_cast<std::size_t>(t)];
        for (int y = y0; y < y0 + c.sprites[s].size; ++y)
          for (int x = x0; x < x0 + c.sprites[s].size; ++x)
            if (y >= 0 && y < h && x >= 0 && x < w) owner[static_cast<std::size_t>(y) * w + x] = static_cast<int>(s);
      }
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int o = owner[static_cast<std::size_t>(y) * w + x];
          double du = 0.0, dv = 0.0;
          if (o >= 0) {
            const auto& p = c.sprites[static_cast<std::size_t>(o)].positions;
            du = p[static_cast<std::size_t>(t) + 1][0] - p[static_cast<std::size_t>(t)][0];
            dv = p[static_cast<std::size_t>(t) + 1][1] - p[static_cast<std::size_t>(t)][1];
            for (int ch = 0; ch < 3; ++ch) {
              ASSERT_EQ(c.frames.data[((static_cast<std::size_t>(t) * h + y) * w + x) * 3 + ch],
                        c.sprites[static_cast<std::size_t>(o)].color[static_cast<std::size_t>(ch)]);
            }
          }
          ASSERT_EQ(c.true_flow.data[((static_cast<std::size_t>(t) * 2 + 0) * h + y) * w + x], du);
          ASSERT_EQ(c.true_flow.data[((static_cast<std::size_t>(t) * 2 + 1) * h + y) * w + x], dv);
        }
      }
    }
  }
}

TEST(Downsample, ConstantStaysConstant) {
  ArrayD f({2, 64, 128, 3});
  std::fill(f.data.begin(), f.data.end(), 0.3);
  const auto d = downsample_rgb(f);
  EXPECT_EQ(d.shape, (std::vector<std::int64_t>{2, 32, 64, 3}));
  for (double x : d.data) EXPECT_NEAR(x, 0.3, 1e-12);
}

// A 2x2-pixel checkerboard halved in each direction maps each block onto one
// output pixel, so the average is only uniform for a 1-pixel checkerboard.
TEST(Downsample, CheckerboardAveragesToHalf) {
  ArrayD f({1, 64, 128, 3});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x)
      for (int ch = 0; ch < 3; ++ch) f.data[(static_cast<std::size_t>(y) * 128 + x) * 3 + ch] = (x + y) % 2;
  for (double x : downsample_rgb(f).data) EXPECT_NEAR(x, 0.5, 1e-12);

  ArrayD g({1, 64, 128, 3});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x)
      for (int ch = 0; ch < 3; ++ch) g.data[(static_cast<std::size_t>(y) * 128 + x) * 3 + ch] = (x / 2 + y / 2) % 2;
  const auto d = downsample_rgb(g);
  double mean = 0.0;
  for (double x : d.data) mean += x;
  EXPECT_NEAR(mean / static_cast<double>(d.size()), 0.5, 1e-12);
}

TEST(Downsample, NonIntegerFactorStaysInRangeAndPreservesMean) {
  ArrayD f({1, 45, 99, 3});
  for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = static_cast<double>((i * 7919) % 101) / 100.0;
  const auto d = downsample_rgb(f);
  double in = 0.0, out = 0.0;
  for (double x : f.data) in += x;
  for (double x : d.data) {
    out += x;
    EXPECT_TRUE(x >= 0.0 && x <= 1.0);
  }
  EXPECT_NEAR(in / static_cast<double>(f.size()), out / static_cast<double>(d.size()), 1e-9);
}

TEST(Downsample, RejectsSmallInput) {
  EXPECT_THROW(downsample_rgb(ArrayD({1, 16, 64, 3})), Error);
}

TEST(Mask, FullSizeGeometry) {
  const auto g = mask_geometry(224, 398);
  EXPECT_EQ(g.bottom_height, 24);
  EXPECT_EQ(g.right_width, 48);
  EXPECT_EQ(g.square_side, 40);
}

TEST(Mask, HalfScaleGeometry) {
  const auto g = mask_geometry(112, 199);
  EXPECT_EQ(g.bottom_height, 12);
  EXPECT_EQ(g.right_width, 24);
  EXPECT_EQ(g.square_side, 20);
}

TEST(Mask, ZeroImageUnchanged) {
  const ArrayD img({32, 64, 3});
  const auto m = mask_regions(img);
  EXPECT_EQ(m.image.data, img.data);
  ArrayD ones({32, 64, 3});
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  EXPECT_EQ(mask_regions(ones).mask.data, m.mask.data);
}

TEST(Mask, MaskedCountMatchesClosedFormProperty) {
  const std::vector<std::pair<int, int>> sizes = {{224, 398}, {112, 199}, {32, 64}, {64, 128}, {50, 77}, {97, 211}};
  for (const auto& [h, w] : sizes) {
    const auto g = mask_geometry(h, w);
    const Rect bottom{h - g.bottom_height, h, 0, w};
    const Rect right{0, h, w - g.right_width, w};
    const Rect square{g.square_top, g.square_top + g.square_side, g.square_left, g.square_left + g.square_side};
    ArrayD img({h, w, 3});
    std::fill(img.data.begin(), img.data.end(), 1.0);
    const auto m = mask_regions(img);
    double masked = 0.0;
    for (double x : m.mask.data) masked += x;
    EXPECT_EQ(static_cast<long>(masked), union_area(bottom, right, square)) << h << "x" << w;
    for (std::size_t p = 0; p < m.mask.size(); ++p)
      for (int ch = 0; ch < 3; ++ch) ASSERT_EQ(m.image.data[p * 3 + ch], 1.0 - m.mask.data[p]);
  }
}
