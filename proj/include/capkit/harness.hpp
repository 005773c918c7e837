#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "capkit/corpus.hpp"
#include "capkit/features.hpp"
#include "capkit/metrics.hpp"
#include "capkit/net.hpp"
#include "capkit/objectives.hpp"
#include "capkit/rng.hpp"

namespace capkit {

/// A captioned clip with its visual streams.
struct LabeledClip {
  CaptionRecord record;
  ClipFeatures features;
};

using LogFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs_max = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::string optimizer = "adam";
  /// Global gradient-norm clip; 0 disables it.
  double grad_clip = 1.0;
  int eval_every = 1;
  /// Evaluations without a better validation normalized score before stopping.
  int patience = 10;
  std::uint64_t seed = 1;
  LossWeights weights;
  bool use_l2 = true;
  bool use_l3 = true;
  std::array<bool, 3> streams{true, true, true};
  /// Greedy decoding length limit during validation and testing.
  int max_len = 64;
  /// Architecture; vocab_size, streams and seed are filled in by train().
  ModelConfig model;

  void validate() const;
  /// Loss weights with w2 / w3 zeroed when the corresponding flag is off.
  LossWeights effective_weights() const;
  /// The model config train() builds: vocab size, streams and seed applied.
  ModelConfig model_config(const Vocabulary& vocab) const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected so typos do not silently fall back to defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EvalPoint {
  int epoch = 0;
  double train_loss = 0.0;
  MetricsReport val;
};

struct RunReport {
  std::vector<EvalPoint> history;
  /// Mean training loss per completed epoch.
  std::vector<double> epoch_losses;
  int best_epoch = 0;
  std::string best_checkpoint;
  MetricsReport test;
  nlohmann::json config;
  std::size_t parameter_count = 0;
  bool aborted = false;
  std::string abort_reason;

  nlohmann::json to_json() const;
};

/// Index of the first maximum.
std::size_t select_best(std::span<const double> scores);

struct TrainResult {
  CaptionModel model;
  RunReport report;
};

/// Teacher-forced training on the train split with greedy validation and
/// metric-based early stopping. The returned model holds the parameters of
/// the best validation evaluation; when `checkpoint_path` is non-empty they
/// are also written there.
TrainResult train(std::span<const LabeledClip> clips, const Vocabulary& vocab, const SWLexicon& lexicon,
                  const TrainConfig& config, const std::string& checkpoint_path = "", const LogFn& log = {});

std::vector<Tokens> generate_captions(const CaptionModel& model, std::span<const LabeledClip> clips,
                                      const Vocabulary& vocab, int max_len);

/// Fraction of teacher-forced target positions whose Part C argmax is right.
double teacher_forced_accuracy(const CaptionModel& model, std::span<const LabeledClip> clips,
                               const Vocabulary& vocab);

std::vector<LabeledClip> select_split(std::span<const LabeledClip> clips, Split split);

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Uniform choice among the training captions of each action.
class RandomCaptioner {
 public:
  explicit RandomCaptioner(std::span<const CaptionRecord> train_records);
  Tokens sample(ActionCategory action, Rng& rng) const;
  const std::vector<Tokens>& pool(ActionCategory action) const { return pools_.at(action); }

 private:
  std::array<std::vector<Tokens>, kNumActions> pools_;
};

Tokens baseline_random(ActionCategory action, std::span<const CaptionRecord> train_records, Rng& rng);

struct TripletConfig {
  int hidden = 64;
  int embed_dim = 32;
  int epochs = 15;
  int triplets_per_anchor = 2;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double margin = 0.2;
  /// Captions with SW-overlap F1 at or above this are positives.
  double positive_threshold = 0.5;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static TripletConfig from_json(const nlohmann::json& j);
};

/// SW-overlap F1 between two captions, on sets of SW groups. Two captions
/// without SWs count as identical.
double caption_similarity(const Tokens& a, const Tokens& b, const SWLexicon& lexicon);

/// Fixed-size clip summary fed to the triplet embedding: time-averaged flow
/// and VAE vectors plus a coarse time-averaged colour grid.
std::vector<double> pooled_features(const ClipFeatures& clip);

struct Triplet {
  std::size_t anchor, positive, negative;
};

class TripletEmbedder {
 public:
  TripletEmbedder(int input_dim, const TripletConfig& config);

  std::vector<double> embed(const ClipFeatures& clip) const;
  /// Graph-building form over standardised rows [N, input_dim].
  ag::Var embed_rows(const ag::Var& rows) const;
  std::vector<double> standardise(std::vector<double> x) const;

  ag::ParameterStore& params() { return params_; }
  const TripletConfig& config() const { return config_; }
  void set_standardisation(std::vector<double> mean, std::vector<double> inv_std);

 private:
  TripletConfig config_;
  int input_dim_;
  ag::ParameterStore params_;
  std::vector<double> mean_, inv_std_;
};

/// Triplets with sim(a, p) >= threshold > sim(a, n), drawn per anchor.
std::vector<Triplet> sample_triplets(std::span<const Tokens> captions, const SWLexicon& lexicon,
                                     const TripletConfig& config, Rng& rng);

/// Mean of max(0, d(a, p) - d(a, n) + margin) with Euclidean d.
ag::Var triplet_loss(const ag::Var& anchor, const ag::Var& positive, const ag::Var& negative, double margin);

struct TripletTrainResult {
  TripletEmbedder model;
  std::vector<double> loss_history;
};

TripletTrainResult train_triplet(std::span<const LabeledClip> clips, const SWLexicon& lexicon,
                                 const TripletConfig& config);

struct KnnIndex {
  std::vector<std::string> clip_ids;
  std::vector<std::vector<double>> points;
  std::vector<Tokens> captions;
};

KnnIndex build_knn_index(const TripletEmbedder& model, std::span<const LabeledClip> clips);

/// Caption of the nearest indexed point; equal distances go to the lowest
/// clip_id. Only k = 1 is supported.
Tokens knn_caption(std::span<const double> query, const KnnIndex& index, int k = 1);

// ---------------------------------------------------------------------------
// Ablation suite and reports
// ---------------------------------------------------------------------------

enum class RowKind { kModel, kKnn, kRandom };

struct AblationRow {
  std::string name;
  RowKind kind = RowKind::kModel;
  TrainConfig train;
};

/// proposed, w/o L2, w/o L3, img-L1, k-NN, baseline, derived from `base`.
std::vector<AblationRow> default_suite(const TrainConfig& base);

struct TableRow {
  std::string name;
  bool ok = true;
  std::string error;
  MetricsReport metrics;
};

struct AblationTable {
  std::vector<TableRow> rows;
  std::vector<RunReport> runs;  // one per model row that trained

  nlohmann::json to_json() const;
  static AblationTable from_json(const nlohmann::json& j);
  std::string to_text() const;
};

/// Trains and evaluates every row on the test split. A failing row is
/// recorded with its error and the suite carries on.
AblationTable run_ablation(std::span<const AblationRow> suite, std::span<const LabeledClip> clips,
                           const Vocabulary& vocab, const SWLexicon& lexicon, const TripletConfig& triplet,
                           std::uint64_t seed, const std::string& checkpoint_dir = "", const LogFn& log = {});

/// Rows from published metric values: [{"name", "bleu4", "cider",
/// "precision", "recall", "diversity"?}, ...]. Normalized scores are
/// recomputed from the four metrics.
AblationTable table_from_values(const nlohmann::json& rows);

}  // namespace capkit
