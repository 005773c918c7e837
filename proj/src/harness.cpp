#include "capkit/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "capkit/error.hpp"

namespace capkit {

namespace {

constexpr const char* kStreamKeys[3] = {"img", "flow", "vae"};

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

std::array<bool, 3> parse_streams(const nlohmann::json& j) {
  std::array<bool, 3> s{false, false, false};
  for (const auto& v : j) {
    const auto name = v.get<std::string>();
    bool found = false;
    for (int i = 0; i < 3; ++i) {
      if (name == kStreamKeys[i]) {
        s[static_cast<std::size_t>(i)] = true;
        found = true;
      }
    }
    CAPKIT_CHECK(found, "bad_config", "unknown stream '" + name + "' (expected img, flow or vae)");
  }
  return s;
}

nlohmann::json streams_json(const std::array<bool, 3>& s) {
  nlohmann::json j = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) {
    if (s[static_cast<std::size_t>(i)]) j.push_back(kStreamKeys[i]);
  }
  return j;
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  CAPKIT_CHECK(j.is_object(), "bad_config", where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    CAPKIT_CHECK(ok, "bad_config", "unknown " + where + " key '" + k + "'");
  }
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const ag::ParameterStore& p) {
  Snapshot s;
  for (const auto& [name, v] : p.entries()) s.push_back(v.value());
  return s;
}

void restore(ag::ParameterStore& p, const Snapshot& s) {
  auto& e = p.entries();
  for (std::size_t i = 0; i < e.size(); ++i) e[i].second.mutable_value() = s[i];
}

struct Prepared {
  TeacherForcing tf;
  std::vector<double> sw_mask;
  std::vector<double> sw_gt;
};

Prepared prepare(const LabeledClip& c, const Vocabulary& vocab, const SWLexicon& lexicon, int max_seq_len) {
  Prepared p;
  p.tf = teacher_forcing(vocab, c.record.action, c.record.tokens, max_seq_len);
  p.sw_mask = sw_target_mask(vocab, p.tf.targets, lexicon);
  p.sw_gt = sw_vector(c.record.tokens, lexicon);
  return p;
}

std::vector<Tokens> refs_of(std::span<const LabeledClip> clips) {
  std::vector<Tokens> r;
  r.reserve(clips.size());
  for (const auto& c : clips) r.push_back(c.record.tokens);
  return r;
}

std::string slug(const std::string& name) {
  std::string s;
  for (char ch : name) s += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  CAPKIT_CHECK(epochs_max >= 1, "bad_config", "epochs_max must be >= 1");
  CAPKIT_CHECK(batch_size >= 1, "bad_config", "batch_size must be >= 1");
  CAPKIT_CHECK(learning_rate > 0.0, "bad_config", "learning_rate must be positive");
  CAPKIT_CHECK(optimizer == "adam" || optimizer == "sgd", "bad_config",
               "optimizer must be 'adam' or 'sgd', got '" + optimizer + "'");
  CAPKIT_CHECK(grad_clip >= 0.0, "bad_config", "grad_clip must be >= 0");
  CAPKIT_CHECK(eval_every >= 1, "bad_config", "eval_every must be >= 1");
  CAPKIT_CHECK(patience >= 1, "bad_config", "patience must be >= 1");
  CAPKIT_CHECK(max_len >= 1, "bad_config", "max_len must be >= 1");
  CAPKIT_CHECK(std::any_of(streams.begin(), streams.end(), [](bool b) { return b; }), "bad_config",
               "at least one stream must be enabled");
  effective_weights().validate();
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (!use_l2) w.w2 = 0.0;
  if (!use_l3) w.w3 = 0.0;
  return w;
}

ModelConfig TrainConfig::model_config(const Vocabulary& vocab) const {
  ModelConfig m = model;
  m.vocab_size = static_cast<int>(vocab.size());
  m.streams = streams;
  m.seed = seed;
  return m;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json m = model.to_json();
  m.erase("vocab_size");
  m.erase("streams");
  m.erase("seed");
  return {{"epochs_max", epochs_max},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"optimizer", optimizer},
          {"grad_clip", grad_clip},
          {"eval_every", eval_every},
          {"patience", patience},
          {"seed", seed},
          {"weights", {{"w1", weights.w1}, {"w2", weights.w2}, {"w3", weights.w3}, {"sc", weights.sc}}},
          {"use_l2", use_l2},
          {"use_l3", use_l3},
          {"streams", streams_json(streams)},
          {"max_len", max_len},
          {"model", m}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"epochs_max", "batch_size", "learning_rate", "optimizer", "grad_clip", "eval_every", "patience",
                  "seed", "weights", "use_l2", "use_l3", "streams", "max_len", "model"},
                 "train config");
  TrainConfig c;
  c.epochs_max = j.value("epochs_max", c.epochs_max);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    reject_unknown(w, {"w1", "w2", "w3", "sc"}, "weights");
    c.weights.w1 = w.value("w1", c.weights.w1);
    c.weights.w2 = w.value("w2", c.weights.w2);
    c.weights.w3 = w.value("w3", c.weights.w3);
    c.weights.sc = w.value("sc", c.weights.sc);
  }
  c.use_l2 = j.value("use_l2", c.use_l2);
  c.use_l3 = j.value("use_l3", c.use_l3);
  if (j.contains("streams")) c.streams = parse_streams(j.at("streams"));
  c.max_len = j.value("max_len", c.max_len);
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

nlohmann::json RunReport::to_json() const {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& e : history) {
    h.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val", e.val.to_json()}});
  }
  return {{"history", h},
          {"epoch_losses", epoch_losses},
          {"best_epoch", best_epoch},
          {"best_checkpoint", best_checkpoint},
          {"test", test.to_json()},
          {"config", config},
          {"parameter_count", parameter_count},
          {"aborted", aborted},
          {"abort_reason", abort_reason}};
}

std::size_t select_best(std::span<const double> scores) {
  CAPKIT_CHECK(!scores.empty(), "bad_argument", "select_best: no scores");
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

std::vector<LabeledClip> select_split(std::span<const LabeledClip> clips, Split split) {
  std::vector<LabeledClip> out;
  for (const auto& c : clips) {
    if (c.record.split == split) out.push_back(c);
  }
  return out;
}

std::vector<Tokens> generate_captions(const CaptionModel& model, std::span<const LabeledClip> clips,
                                      const Vocabulary& vocab, int max_len) {
  std::vector<Tokens> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(vocab.decode(model.generate(c.features, c.record.action, max_len)));
  return out;
}

double teacher_forced_accuracy(const CaptionModel& model, std::span<const LabeledClip> clips, const Vocabulary& vocab) {
  ag::NoGradGuard guard;
  std::size_t right = 0, total = 0;
  const int v = model.config().vocab_size;
  for (const auto& c : clips) {
    const auto tf = teacher_forcing(vocab, c.record.action, c.record.tokens, model.config().max_seq_len);
    const auto out = model.forward(tf.inputs, c.features);
    for (std::size_t i = 0; i < tf.targets.size(); ++i) {
      const double* row = out.logits_c.value().data() + i * static_cast<std::size_t>(v);
      right += (std::max_element(row, row + v) - row) == tf.targets[i];
      ++total;
    }
  }
  return total ? static_cast<double>(right) / static_cast<double>(total) : 0.0;
}

TrainResult train(std::span<const LabeledClip> clips, const Vocabulary& vocab, const SWLexicon& lexicon,
                  const TrainConfig& config, const std::string& checkpoint_path, const LogFn& log) {
  config.validate();
  const LossWeights weights = config.effective_weights();
  TrainResult result{CaptionModel(config.model_config(vocab)), {}};
  CaptionModel& model = result.model;
  RunReport& report = result.report;
  report.config = config.to_json();
  report.parameter_count = model.params().parameter_count();

  const auto train_set = select_split(clips, Split::kTrain);
  CAPKIT_CHECK(!train_set.empty(), "empty_split", "no clips in the train split");
  auto val_set = select_split(clips, Split::kVal);
  if (val_set.empty()) {
    say(log, "warning: empty validation split; selecting checkpoints on the train split");
    val_set = train_set;
  }
  const auto val_refs = refs_of(val_set);

  std::vector<Prepared> prepared;
  prepared.reserve(train_set.size());
  for (const auto& c : train_set) prepared.push_back(prepare(c, vocab, lexicon, model.config().max_seq_len));

  ag::Adam adam(model.params(), {config.learning_rate});
  Rng rng(config.seed ^ 0x7EA1ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  Snapshot best = snapshot(model.params());
  double best_score = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  auto evaluate_now = [&](int epoch, double train_loss) {
    EvalPoint e{epoch, train_loss, evaluate_corpus(generate_captions(model, val_set, vocab, config.max_len),
                                                   val_refs, lexicon)};
    report.history.push_back(e);
    if (e.val.normalized > best_score) {
      best_score = e.val.normalized;
      best = snapshot(model.params());
      report.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d loss %.5f val B@4 %.2f CIDEr %.3f P %.1f R %.1f norm %.4f", epoch,
                  train_loss, e.val.bleu[3], e.val.cider, e.val.sw_precision, e.val.sw_recall, e.val.normalized);
    say(log, buf);
  };

  for (int epoch = 1; epoch <= config.epochs_max && !report.aborted; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      BatchLoss batch(weights);
      for (std::size_t k = start; k < end; ++k) {
        const auto& p = prepared[order[k]];
        const auto out = model.forward(p.tf.inputs, train_set[order[k]].features);
        batch.add(out.logits_c, out.logits_a, out.sw_pred, p.tf.targets, p.sw_mask, p.sw_gt);
      }
      const auto terms = batch.finish();
      const double loss = terms.total.item();
      if (!std::isfinite(loss)) {
        report.aborted = true;
        report.abort_reason = "non-finite loss in epoch " + std::to_string(epoch);
        say(log, "aborting: " + report.abort_reason);
        break;
      }
      model.params().zero_grad();
      ag::backward(terms.total);
      if (config.grad_clip > 0.0) model.params().clip_grad_norm(config.grad_clip);
      if (config.optimizer == "adam") {
        adam.step();
      } else {
        for (auto& [name, v] : model.params().entries()) {
          auto& val = v.mutable_value();
          const auto& g = v.grad();
          for (std::size_t i = 0; i < val.size() && i < g.size(); ++i) val[i] -= config.learning_rate * g[i];
        }
      }
      loss_sum += loss;
      ++batches;
    }
    if (report.aborted) break;
    report.epoch_losses.push_back(loss_sum / batches);
    if (epoch % config.eval_every == 0) {
      evaluate_now(epoch, report.epoch_losses.back());
      if (since_best >= config.patience) {
        say(log, "stopping: no improvement in " + std::to_string(config.patience) + " evaluations");
        break;
      }
    }
  }
  // Either no evaluation fell on an eval_every boundary or the run aborted
  // first; the current (last finite) parameters are then the only candidate.
  if (report.history.empty()) {
    evaluate_now(static_cast<int>(report.epoch_losses.size()),
                 report.epoch_losses.empty() ? std::numeric_limits<double>::quiet_NaN() : report.epoch_losses.back());
  }

  restore(model.params(), best);
  if (!checkpoint_path.empty()) {
    save_model(checkpoint_path, model);
    report.best_checkpoint = checkpoint_path;
  } else {
    report.best_checkpoint = "epoch-" + std::to_string(report.best_epoch);
  }

  const auto test_set = select_split(clips, Split::kTest);
  if (test_set.empty()) {
    report.test.warnings.push_back("empty test split");
  } else {
    report.test = evaluate_corpus(generate_captions(model, test_set, vocab, config.max_len), refs_of(test_set),
                                  lexicon);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Random baseline
// ---------------------------------------------------------------------------

RandomCaptioner::RandomCaptioner(std::span<const CaptionRecord> train_records) {
  for (const auto& r : train_records) pools_.at(r.action).push_back(r.tokens);
}

Tokens RandomCaptioner::sample(ActionCategory action, Rng& rng) const {
  CAPKIT_CHECK(action < kNumActions, "unknown_action", "action index out of range");
  const auto& pool = pools_[action];
  if (pool.empty()) {
    std::string valid;
    for (std::size_t a = 0; a < kNumActions; ++a) {
      if (pools_[a].empty()) continue;
      if (!valid.empty()) valid += ", ";
      valid += action_name(static_cast<ActionCategory>(a));
    }
    throw Error("unknown_action", "no training captions for action '" + std::string(action_name(action)) +
                                      "'; actions with captions: " + valid);
  }
  return pool[rng.index(pool.size())];
}

Tokens baseline_random(ActionCategory action, std::span<const CaptionRecord> train_records, Rng& rng) {
  return RandomCaptioner(train_records).sample(action, rng);
}

// ---------------------------------------------------------------------------
// Triplet embedding and k-NN
// ---------------------------------------------------------------------------

nlohmann::json TripletConfig::to_json() const {
  return {{"hidden", hidden},
          {"embed_dim", embed_dim},
          {"epochs", epochs},
          {"triplets_per_anchor", triplets_per_anchor},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"margin", margin},
          {"positive_threshold", positive_threshold},
          {"seed", seed}};
}

TripletConfig TripletConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"hidden", "embed_dim", "epochs", "triplets_per_anchor", "batch_size", "learning_rate", "margin",
                  "positive_threshold", "seed"},
                 "triplet config");
  TripletConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.epochs = j.value("epochs", c.epochs);
  c.triplets_per_anchor = j.value("triplets_per_anchor", c.triplets_per_anchor);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.margin = j.value("margin", c.margin);
  c.positive_threshold = j.value("positive_threshold", c.positive_threshold);
  c.seed = j.value("seed", c.seed);
  return c;
}

double caption_similarity(const Tokens& a, const Tokens& b, const SWLexicon& lexicon) {
  const auto ga = sw_extract(a, lexicon);
  const auto gb = sw_extract(b, lexicon);
  const std::set<SwGroupId> sa(ga.begin(), ga.end()), sb(gb.begin(), gb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t both = 0;
  for (auto g : sa) both += sb.count(g);
  return 2.0 * static_cast<double>(both) / static_cast<double>(sa.size() + sb.size());
}

std::vector<double> pooled_features(const ClipFeatures& clip) {
  validate_features(clip);
  const auto t = static_cast<std::size_t>(clip.frames());
  std::vector<double> out;
  for (const auto* a : {&clip.flow, &clip.vae}) {
    const auto d = static_cast<std::size_t>(a->shape[1]);
    std::vector<double> m(d, 0.0);
    for (std::size_t f = 0; f < t; ++f) {
      for (std::size_t i = 0; i < d; ++i) m[i] += a->data[f * d + i];
    }
    for (auto& x : m) out.push_back(x / static_cast<double>(t));
  }
  // 4 x 8 grid of 8 x 8 blocks per colour channel.
  constexpr int kBlock = 8;
  const int gh = kImgHeight / kBlock, gw = kImgWidth / kBlock;
  std::vector<double> grid(static_cast<std::size_t>(gh * gw * 3), 0.0);
  for (std::size_t f = 0; f < t; ++f) {
    const float* img = clip.img.data.data() + f * kImgHeight * kImgWidth * 3;
    for (int y = 0; y < kImgHeight; ++y) {
      for (int x = 0; x < kImgWidth; ++x) {
        for (int c = 0; c < 3; ++c) {
          grid[static_cast<std::size_t>(((y / kBlock) * gw + x / kBlock) * 3 + c)] += img[(y * kImgWidth + x) * 3 + c];
        }
      }
    }
  }
  for (auto& g : grid) out.push_back(g / static_cast<double>(t * kBlock * kBlock));
  return out;
}

TripletEmbedder::TripletEmbedder(int input_dim, const TripletConfig& config)
    : config_(config), input_dim_(input_dim), mean_(static_cast<std::size_t>(input_dim), 0.0),
      inv_std_(static_cast<std::size_t>(input_dim), 1.0) {
  CAPKIT_CHECK(input_dim >= 1 && config.hidden >= 1 && config.embed_dim >= 1, "bad_config",
               "triplet embedder widths must be positive");
  Rng rng(config.seed ^ 0x791E7ULL);
  auto dense = [&](const std::string& name, int in, int out, double sd) {
    std::vector<double> w(static_cast<std::size_t>(in) * out);
    for (auto& x : w) x = sd * rng.normal();
    params_.add(name + ".w", {in, out}, std::move(w));
    params_.add(name + ".b", {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
  };
  dense("l1", input_dim, config.hidden, std::sqrt(2.0 / input_dim));
  dense("l2", config.hidden, config.embed_dim, std::sqrt(1.0 / config.hidden));
}

void TripletEmbedder::set_standardisation(std::vector<double> mean, std::vector<double> inv_std) {
  CAPKIT_CHECK(mean.size() == static_cast<std::size_t>(input_dim_) && inv_std.size() == mean.size(),
               "shape_mismatch", "standardisation vectors must match the input width");
  mean_ = std::move(mean);
  inv_std_ = std::move(inv_std);
}

std::vector<double> TripletEmbedder::standardise(std::vector<double> x) const {
  CAPKIT_CHECK(x.size() == mean_.size(), "shape_mismatch", "triplet input width mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean_[i]) * inv_std_[i];
  return x;
}

ag::Var TripletEmbedder::embed_rows(const ag::Var& rows) const {
  const ag::Var h = ag::relu(ag::linear(rows, params_.get("l1.w"), params_.get("l1.b")));
  return ag::linear(h, params_.get("l2.w"), params_.get("l2.b"));
}

std::vector<double> TripletEmbedder::embed(const ClipFeatures& clip) const {
  ag::NoGradGuard guard;
  return embed_rows(ag::constant({1, input_dim_}, standardise(pooled_features(clip)))).value();
}

std::vector<Triplet> sample_triplets(std::span<const Tokens> captions, const SWLexicon& lexicon,
                                     const TripletConfig& config, Rng& rng) {
  constexpr int kTries = 64;
  const std::size_t n = captions.size();
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < n; ++a) {
    for (int r = 0; r < config.triplets_per_anchor; ++r) {
      std::optional<std::size_t> pos, neg;
      for (int t = 0; t < kTries && !pos; ++t) {
        const std::size_t c = rng.index(n);
        if (c != a && caption_similarity(captions[a], captions[c], lexicon) >= config.positive_threshold) pos = c;
      }
      for (int t = 0; t < kTries && !neg; ++t) {
        const std::size_t c = rng.index(n);
        if (caption_similarity(captions[a], captions[c], lexicon) < config.positive_threshold) neg = c;
      }
      if (pos && neg) out.push_back({a, *pos, *neg});
    }
  }
  return out;
}

ag::Var triplet_loss(const ag::Var& anchor, const ag::Var& positive, const ag::Var& negative, double margin) {
  using namespace ag;
  const int d = anchor.dim(1);
  const Var ones = constant({d, 1}, std::vector<double>(static_cast<std::size_t>(d), 1.0));
  auto dist = [&](const Var& x, const Var& y) { return sqrt(add_scalar(matmul(square(sub(x, y)), ones), 1e-12)); };
  return mean(relu(add_scalar(sub(dist(anchor, positive), dist(anchor, negative)), margin)));
}

TripletTrainResult train_triplet(std::span<const LabeledClip> clips, const SWLexicon& lexicon,
                                 const TripletConfig& config) {
  CAPKIT_CHECK(clips.size() >= 3, "too_few_clips", "triplet training needs at least 3 clips");
  std::vector<std::vector<double>> raw;
  std::vector<Tokens> captions;
  for (const auto& c : clips) {
    raw.push_back(pooled_features(c.features));
    captions.push_back(c.record.tokens);
  }
  const std::size_t d = raw[0].size();
  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  for (const auto& r : raw) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += r[i];
  }
  for (auto& m : mean) m /= static_cast<double>(raw.size());
  for (const auto& r : raw) {
    for (std::size_t i = 0; i < d; ++i) inv_std[i] += (r[i] - mean[i]) * (r[i] - mean[i]);
  }
  for (auto& s : inv_std) s = 1.0 / std::max(std::sqrt(s / static_cast<double>(raw.size())), 1e-6);

  TripletTrainResult result{TripletEmbedder(static_cast<int>(d), config), {}};
  auto& model = result.model;
  model.set_standardisation(mean, inv_std);
  std::vector<std::vector<double>> rows;
  for (auto& r : raw) rows.push_back(model.standardise(std::move(r)));

  ag::Adam adam(model.params(), {config.learning_rate});
  Rng rng(config.seed ^ 0x3A1ULL);
  const int di = static_cast<int>(d);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto triplets = sample_triplets(captions, lexicon, config, rng);
    if (triplets.empty()) {
      result.loss_history.push_back(0.0);
      continue;
    }
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t s = 0; s < triplets.size(); s += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e = std::min(triplets.size(), s + static_cast<std::size_t>(config.batch_size));
      const int b = static_cast<int>(e - s);
      std::vector<double> xa, xp, xn;
      for (std::size_t k = s; k < e; ++k) {
        xa.insert(xa.end(), rows[triplets[k].anchor].begin(), rows[triplets[k].anchor].end());
        xp.insert(xp.end(), rows[triplets[k].positive].begin(), rows[triplets[k].positive].end());
        xn.insert(xn.end(), rows[triplets[k].negative].begin(), rows[triplets[k].negative].end());
      }
      const auto loss = triplet_loss(model.embed_rows(ag::constant({b, di}, std::move(xa))),
                                     model.embed_rows(ag::constant({b, di}, std::move(xp))),
                                     model.embed_rows(ag::constant({b, di}, std::move(xn))), config.margin);
      model.params().zero_grad();
      ag::backward(loss);
      adam.step();
      loss_sum += loss.item();
      ++batches;
    }
    result.loss_history.push_back(loss_sum / batches);
  }
  return result;
}

KnnIndex build_knn_index(const TripletEmbedder& model, std::span<const LabeledClip> clips) {
  KnnIndex index;
  for (const auto& c : clips) {
    index.clip_ids.push_back(c.record.clip_id);
    index.points.push_back(model.embed(c.features));
    index.captions.push_back(c.record.tokens);
  }
  return index;
}

Tokens knn_caption(std::span<const double> query, const KnnIndex& index, int k) {
  CAPKIT_CHECK(k == 1, "unsupported", "only k = 1 nearest-neighbour captioning is supported");
  CAPKIT_CHECK(!index.points.empty(), "empty_index", "k-NN index is empty");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < index.points.size(); ++i) {
    CAPKIT_CHECK(index.points[i].size() == query.size(), "shape_mismatch", "query width differs from index");
    double d = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) d += (query[j] - index.points[i][j]) * (query[j] - index.points[i][j]);
    if (d < best_d || (d == best_d && index.clip_ids[i] < index.clip_ids[best])) {
      best_d = d;
      best = i;
    }
  }
  return index.captions[best];
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

std::vector<AblationRow> default_suite(const TrainConfig& base) {
  std::vector<AblationRow> rows;
  rows.push_back({"proposed", RowKind::kModel, base});
  TrainConfig no_l2 = base;
  no_l2.use_l2 = false;
  rows.push_back({"w/o L2", RowKind::kModel, no_l2});
  TrainConfig no_l3 = base;
  no_l3.use_l3 = false;
  rows.push_back({"w/o L3", RowKind::kModel, no_l3});
  TrainConfig img = base;
  img.streams = {true, false, false};
  img.use_l2 = false;
  img.use_l3 = false;
  rows.push_back({"img-L1", RowKind::kModel, img});
  rows.push_back({"k-NN", RowKind::kKnn, base});
  rows.push_back({"baseline", RowKind::kRandom, base});
  return rows;
}

AblationTable run_ablation(std::span<const AblationRow> suite, std::span<const LabeledClip> clips,
                           const Vocabulary& vocab, const SWLexicon& lexicon, const TripletConfig& triplet,
                           std::uint64_t seed, const std::string& checkpoint_dir, const LogFn& log) {
  AblationTable table;
  const auto train_set = select_split(clips, Split::kTrain);
  const auto test_set = select_split(clips, Split::kTest);
  const auto test_refs = refs_of(test_set);
  for (const auto& row : suite) {
    TableRow out;
    out.name = row.name;
    say(log, "== " + row.name);
    try {
      switch (row.kind) {
        case RowKind::kModel: {
          const std::string ckpt = checkpoint_dir.empty() ? "" : checkpoint_dir + "/" + slug(row.name) + ".ckpt";
          auto res = train(clips, vocab, lexicon, row.train, ckpt, log);
          out.metrics = res.report.test;
          table.runs.push_back(std::move(res.report));
          break;
        }
        case RowKind::kKnn: {
          TripletConfig tc = triplet;
          tc.seed = seed;
          const auto emb = train_triplet(train_set, lexicon, tc);
          const auto index = build_knn_index(emb.model, train_set);
          std::vector<Tokens> hyps;
          for (const auto& c : test_set) hyps.push_back(knn_caption(emb.model.embed(c.features), index));
          out.metrics = evaluate_corpus(hyps, test_refs, lexicon);
          break;
        }
        case RowKind::kRandom: {
          std::vector<CaptionRecord> recs;
          for (const auto& c : train_set) recs.push_back(c.record);
          const RandomCaptioner rc(recs);
          Rng rng(seed ^ 0xBA5EULL);
          std::vector<Tokens> hyps;
          for (const auto& c : test_set) hyps.push_back(rc.sample(c.record.action, rng));
          out.metrics = evaluate_corpus(hyps, test_refs, lexicon);
          break;
        }
      }
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
      say(log, "row '" + row.name + "' failed: " + out.error);
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: B@4 %.2f CIDEr %.3f P %.1f R %.1f div %.3f norm %.4f", row.name.c_str(),
                  out.metrics.bleu[3], out.metrics.cider, out.metrics.sw_precision, out.metrics.sw_recall,
                  out.metrics.diversity, out.metrics.normalized);
    say(log, buf);
    table.rows.push_back(std::move(out));
  }
  return table;
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json r = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j = {{"name", row.name}, {"ok", row.ok}, {"metrics", row.metrics.to_json()}};
    if (!row.ok) j["error"] = row.error;
    r.push_back(j);
  }
  nlohmann::json runs_j = nlohmann::json::array();
  for (const auto& run : runs) runs_j.push_back(run.to_json());
  return {{"rows", r}, {"runs", runs_j}};
}

AblationTable AblationTable::from_json(const nlohmann::json& j) {
  AblationTable t;
  for (const auto& r : j.at("rows")) {
    TableRow row;
    row.name = r.at("name");
    row.ok = r.value("ok", true);
    row.error = r.value("error", "");
    row.metrics = MetricsReport::from_json(r.at("metrics"));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string AblationTable::to_text() const {
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s %8s %10s %11s\n", "row", "B@4", "CIDEr", "P", "R", "Diversity",
                "Normalized");
  s += buf;
  for (const auto& r : rows) {
    if (!r.ok) {
      s += r.name + "  FAILED: " + r.error + "\n";
      continue;
    }
    const auto& m = r.metrics;
    std::snprintf(buf, sizeof buf, "%-10s %8.2f %8.3f %8.2f %8.2f %10.3f %11.3f\n", r.name.c_str(), m.bleu[3],
                  m.cider, m.sw_precision, m.sw_recall, m.diversity, m.normalized);
    s += buf;
  }
  return s;
}

AblationTable table_from_values(const nlohmann::json& input) {
  const auto& rows = input.is_object() ? input.at("rows") : input;
  CAPKIT_CHECK(rows.is_array(), "bad_input", "expected an array of metric rows");
  auto pick = [](const nlohmann::json& r, const char* a, const char* b) -> double {
    if (r.contains(a)) return r.at(a).get<double>();
    CAPKIT_CHECK(r.contains(b), "bad_input", std::string("row lacks '") + a + "'");
    return r.at(b).get<double>();
  };
  AblationTable t;
  for (const auto& r : rows) {
    TableRow row;
    row.name = r.value("name", "row" + std::to_string(t.rows.size() + 1));
    auto& m = row.metrics;
    m.bleu[3] = pick(r, "bleu4", "b4");
    m.cider = r.at("cider");
    m.sw_precision = pick(r, "precision", "sw_precision");
    m.sw_recall = pick(r, "recall", "sw_recall");
    m.diversity = r.value("diversity", 0.0);
    m.normalized = normalized_score(m.bleu[3], m.cider, m.sw_precision, m.sw_recall);
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace capkit
