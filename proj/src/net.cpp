#include "capkit/net.hpp"

#include <algorithm>
#include <cmath>

#include "capkit/checkpoint.hpp"
#include "capkit/error.hpp"
#include "capkit/rng.hpp"

namespace capkit {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kProbFloor = 1e-7;
constexpr const char* kStreamKeys[3] = {"img", "flow", "vae"};

std::vector<double> normal_values(Rng& rng, std::size_t n, double sd) {
  std::vector<double> v(n);
  for (auto& x : v) x = sd * rng.normal();
  return v;
}

// Spatial size after a stride-2, pad-1, 3x3 convolution.
int halve(int s) { return (s + 2 - 3) / 2 + 1; }

int img_stream_width(const ModelConfig& c) {
  return 2 * c.img_channels.back() * c.img_pool_h * c.img_pool_w;
}

int fusion_input_width(const ModelConfig& c) {
  int w = 0;
  if (c.streams[kStreamImg]) w += img_stream_width(c);
  if (c.streams[kStreamFlow]) w += 2 * c.flow_channels;
  if (c.streams[kStreamVae]) w += 2 * c.vae_channels;
  return w;
}

// [T, H, W, 3] floats -> [T, 3, H, W] doubles.
ag::Var img_to_nchw(const ArrayF& img) {
  const int t = static_cast<int>(img.shape[0]);
  const int h = static_cast<int>(img.shape[1]);
  const int w = static_cast<int>(img.shape[2]);
  std::vector<double> out(img.data.size());
  std::size_t o = 0;
  for (int f = 0; f < t; ++f) {
    const float* src = img.data.data() + static_cast<std::size_t>(f) * h * w * 3;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < h * w; ++i) out[o++] = src[i * 3 + c];
    }
  }
  return ag::constant({t, 3, h, w}, std::move(out));
}

ag::Var rows_to_var(const ArrayF& a) {
  return ag::constant({static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1])},
                      std::vector<double>(a.data.begin(), a.data.end()));
}

ag::Var temporal_pool(const ag::Var& x) { return ag::concat({ag::mean_rows(x), ag::max_rows(x)}); }

}  // namespace

void ModelConfig::validate() const {
  CAPKIT_CHECK(vocab_size > Vocabulary::kFirstWord - 1, "bad_config",
               "vocab_size must cover the special and action tokens");
  CAPKIT_CHECK(embed_dim > 0 && n_heads > 0 && embed_dim % n_heads == 0, "bad_config",
               "embed_dim must be a positive multiple of n_heads");
  CAPKIT_CHECK(n_blocks >= 1 && ff_dim >= 1 && max_seq_len >= 2, "bad_config",
               "n_blocks, ff_dim and max_seq_len must be positive (max_seq_len >= 2)");
  CAPKIT_CHECK(std::any_of(streams.begin(), streams.end(), [](bool b) { return b; }), "bad_config",
               "at least one visual stream must be enabled");
  CAPKIT_CHECK(!img_channels.empty(), "bad_config", "img_channels must not be empty");
  int h = kImgHeight, w = kImgWidth;
  for (int c : img_channels) {
    CAPKIT_CHECK(c >= 1, "bad_config", "img channel counts must be positive");
    h = halve(h);
    w = halve(w);
  }
  CAPKIT_CHECK(img_pool_h >= 1 && img_pool_w >= 1 && h % img_pool_h == 0 && w % img_pool_w == 0, "bad_config",
               "img pooling grid must divide the " + std::to_string(h) + "x" + std::to_string(w) + " conv output");
  CAPKIT_CHECK(flow_dim >= 1 && vae_dim >= 1 && flow_channels >= 1 && vae_channels >= 1, "bad_config",
               "stream widths must be positive");
  CAPKIT_CHECK(temporal_kernel >= 1 && temporal_kernel % 2 == 1, "bad_config", "temporal_kernel must be odd");
  CAPKIT_CHECK(fc2_width >= 1 && fc3_width >= 1 && sw_count >= 1, "bad_config", "fusion widths must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json s = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) {
    if (streams[static_cast<std::size_t>(i)]) s.push_back(kStreamKeys[i]);
  }
  return {{"vocab_size", vocab_size},   {"embed_dim", embed_dim},
          {"n_heads", n_heads},         {"n_blocks", n_blocks},
          {"ff_dim", ff_dim},           {"max_seq_len", max_seq_len},
          {"img_channels", img_channels}, {"img_pool_h", img_pool_h},
          {"img_pool_w", img_pool_w},   {"flow_dim", flow_dim},
          {"flow_channels", flow_channels}, {"vae_dim", vae_dim},
          {"vae_channels", vae_channels}, {"temporal_kernel", temporal_kernel},
          {"fc2_width", fc2_width},     {"fc3_width", fc3_width},
          {"sw_count", sw_count},       {"streams", s},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "vocab_size", "embed_dim", "n_heads", "n_blocks", "ff_dim", "max_seq_len", "img_channels",
      "img_pool_h", "img_pool_w", "flow_dim", "flow_channels", "vae_dim", "vae_channels",
      "temporal_kernel", "fc2_width", "fc3_width", "sw_count", "streams", "seed"};
  CAPKIT_CHECK(j.is_object(), "bad_config", "model config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    CAPKIT_CHECK(std::find(known.begin(), known.end(), k) != known.end(), "bad_config",
                 "unknown model config key '" + k + "'");
  }
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.img_channels = j.value("img_channels", c.img_channels);
  c.img_pool_h = j.value("img_pool_h", c.img_pool_h);
  c.img_pool_w = j.value("img_pool_w", c.img_pool_w);
  c.flow_dim = j.value("flow_dim", c.flow_dim);
  c.flow_channels = j.value("flow_channels", c.flow_channels);
  c.vae_dim = j.value("vae_dim", c.vae_dim);
  c.vae_channels = j.value("vae_channels", c.vae_channels);
  c.temporal_kernel = j.value("temporal_kernel", c.temporal_kernel);
  c.fc2_width = j.value("fc2_width", c.fc2_width);
  c.fc3_width = j.value("fc3_width", c.fc3_width);
  c.sw_count = j.value("sw_count", c.sw_count);
  c.seed = j.value("seed", c.seed);
  if (j.contains("streams")) {
    c.streams = {false, false, false};
    for (const auto& s : j.at("streams")) {
      const auto name = s.get<std::string>();
      bool found = false;
      for (int i = 0; i < 3; ++i) {
        if (name == kStreamKeys[i]) {
          c.streams[static_cast<std::size_t>(i)] = true;
          found = true;
        }
      }
      CAPKIT_CHECK(found, "bad_config", "unknown stream '" + name + "' (expected img, flow or vae)");
    }
  }
  return c;
}

CaptionModel::CaptionModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto& c = config_;
  Rng rng(c.seed);
  const auto e = static_cast<std::size_t>(c.embed_dim);
  const auto v = static_cast<std::size_t>(c.vocab_size);

  auto dense = [&](const std::string& name, int in, int out) {
    params_.add(name + ".w", {in, out}, normal_values(rng, static_cast<std::size_t>(in) * out, kInitStd));
    params_.add(name + ".b", {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
  };
  auto norm = [&](const std::string& name, int n) {
    params_.add(name + ".g", {n}, std::vector<double>(static_cast<std::size_t>(n), 1.0));
    params_.add(name + ".b", {n}, std::vector<double>(static_cast<std::size_t>(n), 0.0));
  };

  // Part A
  params_.add("tok_emb", {c.vocab_size, c.embed_dim}, normal_values(rng, v * e, kInitStd));
  params_.add("pos_emb", {c.max_seq_len, c.embed_dim},
              normal_values(rng, static_cast<std::size_t>(c.max_seq_len) * e, kInitStd));
  for (int b = 0; b < c.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    norm(p + "ln1", c.embed_dim);
    dense(p + "qkv", c.embed_dim, 3 * c.embed_dim);
    dense(p + "proj", c.embed_dim, c.embed_dim);
    norm(p + "ln2", c.embed_dim);
    dense(p + "ff1", c.embed_dim, c.ff_dim);
    dense(p + "ff2", c.ff_dim, c.embed_dim);
  }
  norm("ln_f", c.embed_dim);
  dense("head_a", c.embed_dim, c.vocab_size);

  // Part B. Convolutions get He-scaled weights so ReLU stacks keep their
  // activation scale; std 0.02 would all but silence a 27-input filter.
  if (c.streams[kStreamImg]) {
    int in = 3;
    for (std::size_t i = 0; i < c.img_channels.size(); ++i) {
      const int out = c.img_channels[i];
      const std::string p = "img.conv" + std::to_string(i);
      params_.add(p + ".w", {out, in, 3, 3},
                  normal_values(rng, static_cast<std::size_t>(out) * in * 9, std::sqrt(2.0 / (in * 9))));
      params_.add(p + ".b", {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
      in = out;
    }
  }
  auto temporal = [&](const std::string& p, int in, int out) {
    const int fan = in * c.temporal_kernel;
    params_.add(p + ".w", {out, in, c.temporal_kernel},
                normal_values(rng, static_cast<std::size_t>(out) * fan, std::sqrt(2.0 / fan)));
    params_.add(p + ".b", {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
  };
  if (c.streams[kStreamFlow]) temporal("flow.conv", c.flow_dim, c.flow_channels);
  if (c.streams[kStreamVae]) temporal("vae.conv", c.vae_dim, c.vae_channels);
  dense("fc2", fusion_input_width(c), c.fc2_width);
  dense("sw_head", c.fc2_width, c.sw_count);

  // Part C
  dense("fc3", c.embed_dim + c.fc2_width, c.fc3_width);
  dense("out", c.fc3_width, c.vocab_size);
}

CaptionModel::LinguisticOut CaptionModel::part_a(std::span<const int> ids) const {
  using namespace ag;
  const auto& c = config_;
  const int len = static_cast<int>(ids.size());
  CAPKIT_CHECK(len >= 1, "bad_input", "part_a: empty token sequence");
  CAPKIT_CHECK(len <= c.max_seq_len, "seq_too_long",
               "sequence of " + std::to_string(len) + " tokens exceeds max_seq_len " + std::to_string(c.max_seq_len));
  for (int id : ids) {
    CAPKIT_CHECK(id >= 0 && id < c.vocab_size, "bad_token_id", "token id " + std::to_string(id) + " out of range");
  }
  const auto& P = params_;
  Var x = add(embedding(P.get("tok_emb"), ids), slice_rows(P.get("pos_emb"), 0, len));
  const int hd = c.embed_dim / c.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int b = 0; b < c.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    const Var h = layernorm(x, P.get(p + "ln1.g"), P.get(p + "ln1.b"));
    const Var qkv = linear(h, P.get(p + "qkv.w"), P.get(p + "qkv.b"));
    std::vector<Var> heads;
    for (int k = 0; k < c.n_heads; ++k) {
      const Var q = slice_cols(qkv, k * hd, (k + 1) * hd);
      const Var kk = slice_cols(qkv, c.embed_dim + k * hd, c.embed_dim + (k + 1) * hd);
      const Var vv = slice_cols(qkv, 2 * c.embed_dim + k * hd, 2 * c.embed_dim + (k + 1) * hd);
      heads.push_back(matmul(causal_softmax(matmul_bt(q, kk), att_scale), vv));
    }
    const Var att = heads.size() == 1 ? heads[0] : concat_cols(heads);
    x = add(x, linear(att, P.get(p + "proj.w"), P.get(p + "proj.b")));
    const Var h2 = layernorm(x, P.get(p + "ln2.g"), P.get(p + "ln2.b"));
    x = add(x, linear(gelu(linear(h2, P.get(p + "ff1.w"), P.get(p + "ff1.b"))), P.get(p + "ff2.w"),
                      P.get(p + "ff2.b")));
  }
  const Var feat = layernorm(x, P.get("ln_f.g"), P.get("ln_f.b"));
  return {linear(feat, P.get("head_a.w"), P.get("head_a.b")), feat};
}

CaptionModel::VisualOut CaptionModel::part_b(const ClipFeatures& clip) const {
  using namespace ag;
  const auto& c = config_;
  CAPKIT_CHECK(clip.frames() > 0, "bad_input", "part_b: clip has no frames");
  validate_features(clip);
  const auto& P = params_;
  std::vector<Var> pooled;
  if (c.streams[kStreamImg]) {
    const int t = clip.frames();
    Var h = img_to_nchw(clip.img);
    for (std::size_t i = 0; i < c.img_channels.size(); ++i) {
      const std::string p = "img.conv" + std::to_string(i);
      h = relu(conv2d(h, P.get(p + ".w"), P.get(p + ".b"), 2, 1));
    }
    h = avg_pool2d(h, c.img_pool_h, c.img_pool_w);
    pooled.push_back(temporal_pool(reshape(h, {t, static_cast<int>(h.size()) / t})));
  }
  if (c.streams[kStreamFlow]) {
    CAPKIT_CHECK(clip.flow.shape[1] == c.flow_dim, "shape_mismatch",
                 "flow stream width " + std::to_string(clip.flow.shape[1]) + " != " + std::to_string(c.flow_dim));
    pooled.push_back(temporal_pool(relu(conv1d_time(rows_to_var(clip.flow), P.get("flow.conv.w"),
                                                    P.get("flow.conv.b")))));
  }
  if (c.streams[kStreamVae]) {
    CAPKIT_CHECK(clip.vae.shape[1] == c.vae_dim, "shape_mismatch",
                 "vae stream width " + std::to_string(clip.vae.shape[1]) + " != " + std::to_string(c.vae_dim));
    pooled.push_back(temporal_pool(relu(conv1d_time(rows_to_var(clip.vae), P.get("vae.conv.w"),
                                                    P.get("vae.conv.b")))));
  }
  const Var joint = reshape(concat(pooled), {1, fusion_input_width(c)});
  const Var fc2 = linear(joint, P.get("fc2.w"), P.get("fc2.b"));
  const Var sw = clamp(sigmoid(linear(fc2, P.get("sw_head.w"), P.get("sw_head.b"))), kProbFloor, 1.0 - kProbFloor);
  return {reshape(relu(fc2), {c.fc2_width}), reshape(sw, {c.sw_count})};
}

ag::Var CaptionModel::part_c(const ag::Var& ling, const ag::Var& vis) const {
  using namespace ag;
  const auto& c = config_;
  CAPKIT_CHECK(ling.shape().size() == 2 && ling.dim(1) == c.embed_dim, "shape_mismatch",
               "part_c: linguistic features must be [L, " + std::to_string(c.embed_dim) + "]");
  CAPKIT_CHECK(static_cast<int>(vis.size()) == c.fc2_width, "shape_mismatch",
               "part_c: visual features must have " + std::to_string(c.fc2_width) + " values");
  const Var joint = concat_cols({ling, repeat_rows(reshape(vis, {c.fc2_width}), ling.dim(0))});
  const Var h = relu(linear(joint, params_.get("fc3.w"), params_.get("fc3.b")));
  return linear(h, params_.get("out.w"), params_.get("out.b"));
}

ModelOutput CaptionModel::forward(std::span<const int> ids, const ClipFeatures& clip) const {
  const auto a = part_a(ids);
  const auto b = part_b(clip);
  return {part_c(a.features, b.features), a.logits_a, b.sw_pred};
}

std::vector<TokenId> CaptionModel::generate(const ClipFeatures& clip, ActionCategory action, int max_len) const {
  ag::NoGradGuard guard;
  return generate(part_b(clip).features, action, max_len);
}

std::vector<TokenId> CaptionModel::generate(const ag::Var& vis, ActionCategory action, int max_len) const {
  CAPKIT_CHECK(action < kNumActions, "unknown_action", "action index out of range");
  ag::NoGradGuard guard;
  std::vector<int> ids{Vocabulary::kFirstTag + action};
  std::vector<TokenId> out;
  const int v = config_.vocab_size;
  while (static_cast<int>(out.size()) < max_len && static_cast<int>(ids.size()) <= config_.max_seq_len) {
    const auto logits = part_c(part_a(ids).features, vis);
    const double* last = logits.value().data() + (ids.size() - 1) * static_cast<std::size_t>(v);
    const int next = static_cast<int>(std::max_element(last, last + v) - last);
    if (next == Vocabulary::kEos) break;
    out.push_back(next);
    ids.push_back(next);
  }
  return out;
}

std::size_t parameter_count(const ModelConfig& config) { return CaptionModel(config).params().parameter_count(); }

TeacherForcing teacher_forcing(const Vocabulary& vocab, ActionCategory action, std::span<const std::string> caption,
                               int max_seq_len) {
  CAPKIT_CHECK(max_seq_len >= 2, "bad_config", "max_seq_len must be >= 2");
  auto ids = vocab.encode(caption);
  if (static_cast<int>(ids.size()) > max_seq_len - 1) ids.resize(static_cast<std::size_t>(max_seq_len - 1));
  TeacherForcing tf;
  tf.inputs.push_back(vocab.tag_id(action));
  tf.inputs.insert(tf.inputs.end(), ids.begin(), ids.end());
  tf.targets.assign(ids.begin(), ids.end());
  tf.targets.push_back(Vocabulary::kEos);
  return tf;
}

std::vector<double> sw_target_mask(const Vocabulary& vocab, std::span<const int> targets, const SWLexicon& lexicon) {
  std::vector<double> m;
  m.reserve(targets.size());
  for (int t : targets) {
    m.push_back(t >= Vocabulary::kFirstWord && lexicon.lookup(vocab.token(t)).has_value() ? 1.0 : 0.0);
  }
  return m;
}

void save_model(const std::string& path, const CaptionModel& model) {
  const nlohmann::json meta = {{"kind", "caption_model"}, {"config", model.config().to_json()}};
  TarWriter tar;
  tar.add("config.json", meta.dump(1));
  add_params(tar, model.params());
  tar.save(path);
}

namespace {

ModelConfig stored_config(const std::map<std::string, std::string>& entries, const std::string& path) {
  auto it = entries.find("config.json");
  CAPKIT_CHECK(it != entries.end(), "bad_archive", path + " has no config.json");
  const auto j = nlohmann::json::parse(it->second);
  CAPKIT_CHECK(j.value("kind", "") == "caption_model", "bad_archive", path + " is not a caption model checkpoint");
  return ModelConfig::from_json(j.at("config"));
}

}  // namespace

CaptionModel load_model(const std::string& path) {
  const auto entries = read_tar(path);
  CaptionModel model(stored_config(entries, path));
  load_params(entries, model.params());
  return model;
}

void load_model_into(const std::string& path, CaptionModel& model) {
  const auto entries = read_tar(path);
  CAPKIT_CHECK(stored_config(entries, path) == model.config(), "checkpoint_mismatch",
               path + " was saved with a different model config");
  load_params(entries, model.params());
}

}  // namespace capkit
