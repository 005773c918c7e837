#include <gtest/gtest.h>

#include <cmath>
#include <iostream>

#include "capkit/error.hpp"
#include "capkit/harness.hpp"
#include "capkit/net.hpp"
#include "support.hpp"

using namespace capkit;
using capkit::testing::random_features;
using capkit::testing::tiny_model;
namespace ag = capkit::ag;

namespace {

std::vector<int> random_ids(Rng& rng, int len, int vocab) {
  std::vector<int> ids(static_cast<std::size_t>(len));
  ids[0] = Vocabulary::kFirstTag + static_cast<int>(rng.index(kNumActions));
  for (int i = 1; i < len; ++i) ids[static_cast<std::size_t>(i)] = static_cast<int>(rng.index(static_cast<std::size_t>(vocab)));
  return ids;
}

bool rows_equal(const ag::Var& a, const ag::Var& b, int row) {
  const int v = a.dim(1);
  for (int k = 0; k < v; ++k)
    if (a.value()[static_cast<std::size_t>(row * v + k)] != b.value()[static_cast<std::size_t>(row * v + k)]) return false;
  return true;
}

}  // namespace

TEST(ModelConfig, ValidateAndJsonRoundTrip) {
  ModelConfig c = tiny_model(40);
  c.streams = {true, false, true};
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);

  ModelConfig bad = c;
  bad.embed_dim = 15;  // not divisible by two heads
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.streams = {false, false, false};
  EXPECT_THROW(bad.validate(), Error);
  auto j = c.to_json();
  j["embed_dimm"] = 3;
  EXPECT_THROW(ModelConfig::from_json(j), Error);
}

TEST(ModelConfig, DefaultsFollowTheArchitecture) {
  ModelConfig c;
  c.vocab_size = 1400;
  EXPECT_EQ(c.n_blocks, 1);
  EXPECT_EQ(c.n_heads, 2);
  EXPECT_EQ(c.sw_count, 55);
  const CaptionModel m(c);
  EXPECT_EQ(parameter_count(c), m.params().parameter_count());
  std::cout << "default parameter count (V=1400): " << parameter_count(c) << "\n";
}

TEST(ParameterCount, PureFunctionOfConfigProperty) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c = tiny_model(20 + static_cast<int>(rng.index(60)), rng.next_u64());
    c.embed_dim = 2 * (2 + static_cast<int>(rng.index(8)));
    c.ff_dim = 4 + static_cast<int>(rng.index(20));
    c.n_blocks = 1 + static_cast<int>(rng.index(2));
    c.streams = {rng.uniform() < 0.7, rng.uniform() < 0.7, true};
    const CaptionModel m(c);
    EXPECT_EQ(parameter_count(c), m.params().parameter_count());
  }
}

TEST(PartA, ShapesAndLimits) {
  const auto c = tiny_model(30);
  const CaptionModel m(c);
  const std::vector<int> ids = {Vocabulary::kFirstTag, 20, 21, 22};
  const auto out = m.part_a(ids);
  EXPECT_EQ(out.logits_a.shape(), (ag::Shape{4, 30}));
  EXPECT_EQ(out.features.shape(), (ag::Shape{4, c.embed_dim}));
  EXPECT_THROW(m.part_a(std::vector<int>(static_cast<std::size_t>(c.max_seq_len) + 1, 3)), Error);
  EXPECT_THROW(m.part_a(std::vector<int>{3, 30}), Error);
  EXPECT_THROW(m.part_a(std::vector<int>{}), Error);
}

TEST(PartA, CausalMaskProperty) {
  Rng rng(11);
  const int vocab = 40;
  const CaptionModel m(tiny_model(vocab));
  const auto clip = random_features(rng, 3);
  const auto vis = m.part_b(clip).features;
  for (int trial = 0; trial < 200; ++trial) {
    const int len = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(m.config().max_seq_len) - 1));
    auto ids = random_ids(rng, len, vocab);
    const int j = static_cast<int>(rng.index(static_cast<std::size_t>(len)));
    auto changed = ids;
    changed[static_cast<std::size_t>(j)] = (ids[static_cast<std::size_t>(j)] + 1 + static_cast<int>(rng.index(vocab - 1))) % vocab;
    const auto a = m.part_a(ids);
    const auto b = m.part_a(changed);
    const auto ca = m.part_c(a.features, vis);
    const auto cb = m.part_c(b.features, vis);
    for (int i = 0; i < j; ++i) {
      ASSERT_TRUE(rows_equal(a.logits_a, b.logits_a, i)) << "trial " << trial << " pos " << i << " j " << j;
      ASSERT_TRUE(rows_equal(ca, cb, i));
    }
    EXPECT_FALSE(rows_equal(a.logits_a, b.logits_a, j));
    EXPECT_FALSE(rows_equal(ca, cb, j));
  }
}

TEST(PartA, NearUniformAtInit) {
  ModelConfig c;
  c.vocab_size = 500;
  const CaptionModel m(c);
  Rng rng(3);
  const auto out = m.part_a(random_ids(rng, 12, 500));
  for (int i = 0; i < 12; ++i) {
    double z = 0.0, mx = -1e300;
    for (int k = 0; k < 500; ++k) mx = std::max(mx, out.logits_a.value()[static_cast<std::size_t>(i * 500 + k)]);
    for (int k = 0; k < 500; ++k) z += std::exp(out.logits_a.value()[static_cast<std::size_t>(i * 500 + k)] - mx);
    double kl = 0.0;  // KL(p || uniform)
    for (int k = 0; k < 500; ++k) {
      const double p = std::exp(out.logits_a.value()[static_cast<std::size_t>(i * 500 + k)] - mx) / z;
      kl += p * std::log(p * 500.0);
    }
    EXPECT_LT(kl, 0.05);
  }
}

TEST(PartB, RangesAndShapes) {
  Rng rng(4);
  const auto c = tiny_model(30);
  const CaptionModel m(c);
  for (int trial = 0; trial < 20; ++trial) {
    const auto out = m.part_b(random_features(rng, 1 + static_cast<int>(rng.index(8))));
    EXPECT_EQ(out.features.shape(), (ag::Shape{c.fc2_width}));
    EXPECT_EQ(out.sw_pred.shape(), (ag::Shape{55}));
    for (double x : out.features.value()) EXPECT_GE(x, 0.0);
    for (double x : out.sw_pred.value()) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
  }
  EXPECT_THROW(m.part_b(random_features(rng, 0)), Error);
}

TEST(PartB, EveryEnabledStreamIsWired) {
  Rng rng(5);
  for (const bool tiny : {true, false}) {
    ModelConfig c = tiny ? tiny_model(30) : ModelConfig{};
    c.vocab_size = 30;
    const CaptionModel m(c);
    const auto clip = random_features(rng, 6);
    const std::vector<int> ids = {Vocabulary::kFirstTag, 20, 21};
    const auto base = m.forward(ids, clip);
    for (int s = 0; s < 3; ++s) {
      auto zeroed = clip;
      auto& stream = s == kStreamImg ? zeroed.img : s == kStreamFlow ? zeroed.flow : zeroed.vae;
      std::fill(stream.data.begin(), stream.data.end(), 0.0f);
      const auto out = m.forward(ids, zeroed);
      EXPECT_NE(out.logits_c.value(), base.logits_c.value()) << kStreamNames[s];
      EXPECT_NE(out.sw_pred.value(), base.sw_pred.value()) << kStreamNames[s];
    }
  }
}

TEST(PartB, DisabledStreamIsIgnored) {
  Rng rng(6);
  auto c = tiny_model(30);
  c.streams = {true, false, true};
  const CaptionModel m(c);
  const auto clip = random_features(rng, 4);
  auto zeroed = clip;
  std::fill(zeroed.flow.data.begin(), zeroed.flow.data.end(), 0.0f);
  EXPECT_EQ(m.part_b(clip).sw_pred.value(), m.part_b(zeroed).sw_pred.value());
  EXPECT_FALSE(m.params().contains("flow.conv.w"));
}

TEST(PartC, FusionIsLive) {
  Rng rng(7);
  const auto c = tiny_model(30);
  const CaptionModel m(c);
  const auto ling = m.part_a(std::vector<int>{3, 20, 21}).features;
  const auto v1 = ag::constant({c.fc2_width}, capkit::testing::random_vector(rng, c.fc2_width, 0, 1));
  const auto v2 = ag::constant({c.fc2_width}, capkit::testing::random_vector(rng, c.fc2_width, 0, 1));
  const auto a = m.part_c(ling, v1);
  EXPECT_EQ(a.shape(), (ag::Shape{3, 30}));
  EXPECT_NE(a.value(), m.part_c(ling, v2).value());
  EXPECT_THROW(m.part_c(ling, ag::zeros({c.fc2_width + 1})), Error);
}

TEST(Forward, FiniteOverRandomInputsProperty) {
  Rng rng(8);
  const int vocab = 50;
  const CaptionModel m(tiny_model(vocab));
  for (int trial = 0; trial < 1000; ++trial) {
    auto clip = random_features(rng, 1 + static_cast<int>(rng.index(6)));
    const double s = std::exp(4.0 * rng.uniform() - 2.0);
    for (auto& x : clip.flow.data) x = static_cast<float>(x * s);
    const auto out = m.forward(random_ids(rng, 1 + static_cast<int>(rng.index(24)), vocab), clip);
    for (double x : out.logits_c.value()) ASSERT_TRUE(std::isfinite(x));
    for (double x : out.logits_a.value()) ASSERT_TRUE(std::isfinite(x));
    for (double x : out.sw_pred.value()) ASSERT_TRUE(x > 0.0 && x < 1.0);
  }
}

TEST(Generate, LengthLimitAndDeterminism) {
  Rng rng(9);
  const CaptionModel m(tiny_model(30));
  const auto clip = random_features(rng, 4);
  EXPECT_LE(m.generate(clip, 2, 1).size(), 1u);
  const auto a = m.generate(clip, 2, 20);
  EXPECT_EQ(a, m.generate(clip, 2, 20));
  EXPECT_LE(a.size(), 20u);
  for (auto id : a) {
    EXPECT_NE(id, Vocabulary::kEos);
  }
  EXPECT_LE(m.generate(clip, 2, 1000).size(), static_cast<std::size_t>(m.config().max_seq_len));
}

TEST(TeacherForcingPairs, OffByOne) {
  const auto v = Vocabulary::build(std::vector<Tokens>{{"corner", "kick", "."}}, 1);
  const auto a = parse_action("corner");
  const auto tf = teacher_forcing(v, a, Tokens{"corner", "kick", "."}, 64);
  EXPECT_EQ(tf.inputs, (std::vector<int>{v.tag_id(a), v.id("corner"), v.id("kick"), v.id(".")}));
  EXPECT_EQ(tf.targets, (std::vector<int>{v.id("corner"), v.id("kick"), v.id("."), Vocabulary::kEos}));
  const auto cut = teacher_forcing(v, a, Tokens{"corner", "kick", "."}, 3);
  EXPECT_EQ(cut.inputs.size(), 3u);
  EXPECT_EQ(cut.targets.back(), Vocabulary::kEos);
  const auto mask = sw_target_mask(v, tf.targets, SWLexicon::builtin());
  EXPECT_EQ(mask, (std::vector<double>{1, 1, 0, 0}));
}

TEST(Checkpoint, RoundTripAndMismatch) {
  Rng rng(10);
  const auto dir = capkit::testing::scratch_dir("ckpt");
  const CaptionModel m(tiny_model(30, 77));
  save_model(dir + "/m.ckpt", m);
  const auto back = load_model(dir + "/m.ckpt");
  EXPECT_EQ(back.config(), m.config());
  const auto clip = random_features(rng, 3);
  const std::vector<int> ids = {3, 20};
  EXPECT_EQ(back.forward(ids, clip).logits_c.value(), m.forward(ids, clip).logits_c.value());

  CaptionModel other(tiny_model(31));
  try {
    load_model_into(dir + "/m.ckpt", other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "checkpoint_mismatch");
  }
}

// A 5-clip corpus trained to near-zero loss must be decoded back exactly.
TEST(Generate, OverfitFiveClips) {
  Rng rng(12);
  std::vector<LabeledClip> clips;
  std::vector<Tokens> corpus;
  const std::vector<Tokens> captions = {
      {"{player}", "scores", "a", "goal", "."},
      {"corner", "kick", "for", "{team}", "."},
      {"{player}", "hits", "the", "post", "!"},
      {"the", "keeper", "saves", "it", "low", "."},
      {"a", "long", "pass", "to", "{player}", "."}};
  for (int i = 0; i < 5; ++i) {
    LabeledClip c;
    c.record = {"c" + std::to_string(i), static_cast<ActionCategory>(i % 2), captions[static_cast<std::size_t>(i)], Split::kTrain};
    c.features = random_features(rng, 4);
    clips.push_back(c);
    corpus.push_back(captions[static_cast<std::size_t>(i)]);
  }
  const auto vocab = Vocabulary::build(corpus, 1);
  TrainConfig tc;
  tc.model = tiny_model(0);
  tc.epochs_max = 150;
  tc.patience = 1000;
  tc.batch_size = 5;
  tc.learning_rate = 1e-2;
  tc.eval_every = 50;
  tc.max_len = 12;
  const auto result = train(clips, vocab, SWLexicon::builtin(), tc);
  EXPECT_LT(result.report.epoch_losses.back(), 0.05);
  for (const auto& c : clips) {
    const auto ids = result.model.generate(c.features, c.record.action, 12);
    EXPECT_EQ(vocab.decode(ids), c.record.tokens) << c.record.clip_id;
  }
}
