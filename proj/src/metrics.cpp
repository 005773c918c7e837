#include "capkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

#include "capkit/error.hpp"

namespace capkit {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const Tokens& t, int n) {
  NgramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
    ++out[std::vector<std::string>(t.begin() + static_cast<std::ptrdiff_t>(i),
                                   t.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return out;
}

void check_aligned(std::span<const Tokens> hyps, std::span<const Tokens> refs, const char* what) {
  CAPKIT_CHECK(hyps.size() == refs.size(), "shape_mismatch",
               std::string(what) + ": " + std::to_string(hyps.size()) + " hypotheses vs " +
                   std::to_string(refs.size()) + " references");
}

struct BleuStats {
  std::array<double, 4> matched{};
  std::array<double, 4> total{};
  double hyp_len = 0.0;
  double ref_len = 0.0;

  void add(const Tokens& hyp, const Tokens& ref, int max_n) {
    hyp_len += static_cast<double>(hyp.size());
    ref_len += static_cast<double>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      const auto h = ngrams(hyp, n);
      const auto r = ngrams(ref, n);
      for (const auto& [g, c] : h) {
        auto it = r.find(g);
        if (it != r.end()) matched[static_cast<std::size_t>(n - 1)] += std::min(c, it->second);
        total[static_cast<std::size_t>(n - 1)] += c;
      }
    }
  }

  double score(int n) const {
    if (hyp_len == 0.0) return 0.0;
    double log_sum = 0.0;
    for (int k = 0; k < n; ++k) {
      if (matched[static_cast<std::size_t>(k)] == 0.0) return 0.0;
      log_sum += std::log(matched[static_cast<std::size_t>(k)] / total[static_cast<std::size_t>(k)]);
    }
    const double bp = std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
    return 100.0 * bp * std::exp(log_sum / n);
  }
};

std::size_t multiset_overlap(std::vector<SwGroupId> a, std::vector<SwGroupId> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<SwGroupId> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return both.size();
}

}  // namespace

double bleu(std::span<const Tokens> hyps, std::span<const Tokens> refs, int n) {
  CAPKIT_CHECK(n >= 1 && n <= 4, "bad_argument", "BLEU order must be 1..4");
  check_aligned(hyps, refs, "bleu");
  BleuStats s;
  for (std::size_t i = 0; i < hyps.size(); ++i) s.add(hyps[i], refs[i], n);
  return s.score(n);
}

double sentence_bleu(const Tokens& hyp, const Tokens& ref, int n) {
  return bleu(std::span<const Tokens>(&hyp, 1), std::span<const Tokens>(&ref, 1), n);
}

std::array<double, 4> bleu_1to4(std::span<const Tokens> hyps, std::span<const Tokens> refs) {
  check_aligned(hyps, refs, "bleu");
  BleuStats s;
  for (std::size_t i = 0; i < hyps.size(); ++i) s.add(hyps[i], refs[i], 4);
  return {s.score(1), s.score(2), s.score(3), s.score(4)};
}

double cider(std::span<const Tokens> hyps, std::span<const Tokens> refs) {
  check_aligned(hyps, refs, "cider");
  if (refs.empty()) return 0.0;
  constexpr int kMaxN = 4;
  constexpr double kSigma = 6.0;

  std::array<std::vector<NgramCounts>, kMaxN> ref_counts, hyp_counts;
  std::array<std::map<std::vector<std::string>, int>, kMaxN> df;
  for (int n = 1; n <= kMaxN; ++n) {
    auto& rc = ref_counts[static_cast<std::size_t>(n - 1)];
    auto& hc = hyp_counts[static_cast<std::size_t>(n - 1)];
    for (std::size_t i = 0; i < refs.size(); ++i) {
      rc.push_back(ngrams(refs[i], n));
      hc.push_back(ngrams(hyps[i], n));
      for (const auto& [g, c] : rc.back()) ++df[static_cast<std::size_t>(n - 1)][g];
    }
  }
  const double log_n = std::log(static_cast<double>(refs.size()));

  double total = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const double delta = static_cast<double>(hyps[i].size()) - static_cast<double>(refs[i].size());
    const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
    double pair = 0.0;
    for (int n = 0; n < kMaxN; ++n) {
      auto idf = [&](const std::vector<std::string>& g) {
        auto it = df[static_cast<std::size_t>(n)].find(g);
        const int d = it == df[static_cast<std::size_t>(n)].end() ? 0 : it->second;
        return log_n - std::log(std::max(1.0, static_cast<double>(d)));
      };
      const auto& h = hyp_counts[static_cast<std::size_t>(n)][i];
      const auto& r = ref_counts[static_cast<std::size_t>(n)][i];
      std::map<std::vector<std::string>, double> vr;
      double norm_h = 0.0, norm_r = 0.0;
      for (const auto& [g, c] : r) {
        const double w = c * idf(g);
        vr[g] = w;
        norm_r += w * w;
      }
      double dot = 0.0;
      for (const auto& [g, c] : h) {
        const double w = c * idf(g);
        norm_h += w * w;
        auto it = vr.find(g);
        if (it != vr.end()) dot += std::min(w, it->second) * it->second;
      }
      if (norm_h > 0.0 && norm_r > 0.0) pair += penalty * dot / (std::sqrt(norm_h) * std::sqrt(norm_r));
    }
    total += 10.0 * pair / kMaxN;
  }
  return total / static_cast<double>(refs.size());
}

SwScores sw_precision_recall(std::span<const Tokens> hyps, std::span<const Tokens> refs, const SWLexicon& lexicon,
                             bool macro) {
  check_aligned(hyps, refs, "sw_precision_recall");
  double matched = 0.0, n_hyp = 0.0, n_ref = 0.0;
  double p_sum = 0.0, r_sum = 0.0;
  std::size_t p_pairs = 0, r_pairs = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = sw_extract(hyps[i], lexicon);
    const auto r = sw_extract(refs[i], lexicon);
    const auto m = static_cast<double>(multiset_overlap(h, r));
    matched += m;
    n_hyp += static_cast<double>(h.size());
    n_ref += static_cast<double>(r.size());
    if (!h.empty()) {
      p_sum += m / static_cast<double>(h.size());
      ++p_pairs;
    }
    if (!r.empty()) {
      r_sum += m / static_cast<double>(r.size());
      ++r_pairs;
    }
  }
  SwScores s;
  s.empty = n_hyp == 0.0 && n_ref == 0.0;
  if (macro) {
    s.precision = p_pairs ? 100.0 * p_sum / static_cast<double>(p_pairs) : 0.0;
    s.recall = r_pairs ? 100.0 * r_sum / static_cast<double>(r_pairs) : 0.0;
  } else {
    s.precision = n_hyp > 0.0 ? 100.0 * matched / n_hyp : 0.0;
    s.recall = n_ref > 0.0 ? 100.0 * matched / n_ref : 0.0;
  }
  return s;
}

double diversity(std::span<const Tokens> hyps, std::span<const Tokens> refs) {
  CAPKIT_CHECK(!refs.empty(), "bad_argument", "diversity needs at least one reference");
  const std::set<Tokens> h(hyps.begin(), hyps.end());
  const std::set<Tokens> r(refs.begin(), refs.end());
  return static_cast<double>(h.size()) / static_cast<double>(r.size());
}

double normalized_score(double b4, double cider_score, double precision, double recall) {
  return 0.25 * (b4 / 10.0 + cider_score / 0.55 + precision / 40.0 + recall / 40.0);
}

MetricsReport evaluate_corpus(std::span<const Tokens> hyps, std::span<const Tokens> refs, const SWLexicon& lexicon,
                              bool macro) {
  check_aligned(hyps, refs, "evaluate");
  MetricsReport m;
  m.pairs = hyps.size();
  if (hyps.empty()) {
    m.warnings.push_back("empty corpus");
    return m;
  }
  m.bleu = bleu_1to4(hyps, refs);
  m.cider = cider(hyps, refs);
  const auto sw = sw_precision_recall(hyps, refs, lexicon, macro);
  m.sw_precision = sw.precision;
  m.sw_recall = sw.recall;
  if (sw.empty) m.warnings.push_back("no significant words in hypotheses or references; P and R set to 0");
  m.diversity = diversity(hyps, refs);
  m.normalized = normalized_score(m.bleu[3], m.cider, m.sw_precision, m.sw_recall);
  return m;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"bleu1", bleu[0]},
          {"bleu2", bleu[1]},
          {"bleu3", bleu[2]},
          {"bleu4", bleu[3]},
          {"cider", cider},
          {"sw_precision", sw_precision},
          {"sw_recall", sw_recall},
          {"diversity", diversity},
          {"normalized", normalized},
          {"pairs", pairs},
          {"warnings", warnings}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport m;
  m.bleu = {j.value("bleu1", 0.0), j.value("bleu2", 0.0), j.value("bleu3", 0.0), j.at("bleu4").get<double>()};
  m.cider = j.at("cider");
  m.sw_precision = j.at("sw_precision");
  m.sw_recall = j.at("sw_recall");
  m.diversity = j.value("diversity", 0.0);
  m.normalized = j.contains("normalized") ? j.at("normalized").get<double>()
                                          : normalized_score(m.bleu[3], m.cider, m.sw_precision, m.sw_recall);
  m.pairs = j.value("pairs", std::size_t{0});
  m.warnings = j.value("warnings", std::vector<std::string>{});
  return m;
}

std::string MetricsReport::to_text() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "pairs        %zu\n"
                "B@1          %.2f\nB@2          %.2f\nB@3          %.2f\nB@4          %.2f\n"
                "CIDEr        %.4f\n"
                "Precision    %.2f\nRecall       %.2f\n"
                "Diversity    %.4f\n"
                "Normalized   %.4f\n",
                pairs, bleu[0], bleu[1], bleu[2], bleu[3], cider, sw_precision, sw_recall, diversity, normalized);
  std::string s = buf;
  for (const auto& w : warnings) s += "warning: " + w + "\n";
  return s;
}

std::pair<std::vector<Tokens>, std::vector<Tokens>> join_on_clip_id(
    std::span<const std::pair<std::string, Tokens>> hyps, std::span<const std::pair<std::string, Tokens>> refs) {
  std::unordered_map<std::string, const Tokens*> by_id;
  for (const auto& [id, toks] : refs) {
    CAPKIT_CHECK(by_id.emplace(id, &toks).second, "duplicate_clip", "duplicate reference clip_id '" + id + "'");
  }
  std::vector<Tokens> h, r;
  std::set<std::string> seen;
  for (const auto& [id, toks] : hyps) {
    CAPKIT_CHECK(seen.insert(id).second, "duplicate_clip", "duplicate hypothesis clip_id '" + id + "'");
    auto it = by_id.find(id);
    CAPKIT_CHECK(it != by_id.end(), "missing_reference", "no reference for clip_id '" + id + "'");
    h.push_back(toks);
    r.push_back(*it->second);
  }
  return {std::move(h), std::move(r)};
}

}  // namespace capkit
