#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "capkit/corpus.hpp"

namespace capkit {

/// Corpus BLEU with orders 1..n, in percent. Clipped n-gram counts and
/// candidate/reference lengths are summed over the corpus before the
/// geometric mean and brevity penalty.
double bleu(std::span<const Tokens> hyps, std::span<const Tokens> refs, int n);
/// The same formula on a single pair.
double sentence_bleu(const Tokens& hyp, const Tokens& ref, int n);
/// B@1..B@4 from one pass over the corpus.
std::array<double, 4> bleu_1to4(std::span<const Tokens> hyps, std::span<const Tokens> refs);

/// CIDEr-D on a 0-10 scale: TF-IDF n-gram vectors (n = 1..4) with document
/// frequencies from the references, clipped cosine similarity, Gaussian
/// length penalty (sigma 6), averaged over n, times 10, mean over pairs.
double cider(std::span<const Tokens> hyps, std::span<const Tokens> refs);

struct SwScores {
  double precision = 0.0;  // percent
  double recall = 0.0;     // percent
  bool empty = false;      // no SWs anywhere in the corpus
};

/// Precision and recall of stemmed significant words. Each pair is matched
/// as a multiset; the corpus score sums matches and SW counts over pairs
/// (micro) or averages per-pair ratios over pairs with a non-zero
/// denominator (macro).
SwScores sw_precision_recall(std::span<const Tokens> hyps, std::span<const Tokens> refs,
                             const SWLexicon& lexicon, bool macro = false);

/// Distinct hypothesis sequences over distinct reference sequences.
double diversity(std::span<const Tokens> hyps, std::span<const Tokens> refs);

/// Mean of each metric divided by its nominal value (10, 0.55, 40, 40).
double normalized_score(double b4, double cider, double precision, double recall);

struct MetricsReport {
  std::array<double, 4> bleu{};  // B@1..B@4, percent
  double cider = 0.0;
  double sw_precision = 0.0;
  double sw_recall = 0.0;
  double diversity = 0.0;
  double normalized = 0.0;
  std::size_t pairs = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::string to_text() const;
};

MetricsReport evaluate_corpus(std::span<const Tokens> hyps, std::span<const Tokens> refs,
                              const SWLexicon& lexicon, bool macro = false);

/// Joins hypothesis and reference rows on clip_id. Every hypothesis must
/// have a reference; references without a hypothesis are ignored.
std::pair<std::vector<Tokens>, std::vector<Tokens>> join_on_clip_id(
    std::span<const std::pair<std::string, Tokens>> hyps,
    std::span<const std::pair<std::string, Tokens>> refs);

}  // namespace capkit
