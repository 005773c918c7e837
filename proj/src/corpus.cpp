#include "capkit/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "capkit/embedded_data.hpp"
#include "capkit/error.hpp"
#include "capkit/porter.hpp"
#include "capkit/rng.hpp"

namespace capkit {

using nlohmann::json;

ActionCategory parse_action(std::string_view name) {
  for (std::size_t i = 0; i < kNumActions; ++i) {
    if (kActionNames[i] == name) return static_cast<ActionCategory>(i);
  }
  std::string valid;
  for (auto n : kActionNames) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw Error("unknown_action", "unknown action '" + std::string(name) + "'; valid: " + valid);
}

std::string_view action_name(ActionCategory a) {
  CAPKIT_CHECK(a < kNumActions, "unknown_action", "action index out of range");
  return kActionNames[a];
}

std::string action_tag(ActionCategory a) {
  std::string s(action_name(a));
  std::replace(s.begin(), s.end(), ' ', '-');
  return "<act:" + s + ">";
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw Error("bad_split", "unknown split '" + std::string(s) + "'");
}

EntityKind parse_entity_kind(std::string_view s) {
  if (s == "player") return EntityKind::kPlayer;
  if (s == "coach") return EntityKind::kCoach;
  if (s == "team") return EntityKind::kTeam;
  if (s == "time") return EntityKind::kTime;
  throw Error("bad_entity", "unknown entity category '" + std::string(s) + "'");
}

std::string_view entity_placeholder(EntityKind k) {
  switch (k) {
    case EntityKind::kPlayer: return "{player}";
    case EntityKind::kCoach: return "{coach}";
    case EntityKind::kTeam: return "{team}";
    case EntityKind::kTime: return "{time}";
  }
  return "{player}";
}

namespace {

bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || u >= 0x80;
}

}  // namespace

std::string anonymize(std::string_view text, const std::map<std::string, EntityKind>& entities) {
  std::vector<std::pair<std::string_view, EntityKind>> names;
  for (const auto& [name, kind] : entities) {
    if (!name.empty()) names.emplace_back(name, kind);
  }
  // Longest first; map order breaks length ties.
  std::stable_sort(names.begin(), names.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });

  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    if (i == 0 || !is_word_byte(text[i - 1])) {
      for (const auto& [name, kind] : names) {
        if (text.compare(i, name.size(), name) != 0) continue;
        const std::size_t end = i + name.size();
        if (end < text.size() && is_word_byte(text[end])) continue;
        out += entity_placeholder(kind);
        i = end;
        replaced = true;
        break;
      }
    }
    if (!replaced) out += text[i++];
  }
  return out;
}

namespace {

void flush_token(std::string& cur, Tokens& out) {
  std::size_t b = 0;
  std::size_t e = cur.size();
  while (b < e && cur[b] == '-') ++b;
  while (e > b && cur[e - 1] == '-') --e;
  std::string tok = cur.substr(b, e - b);
  cur.clear();
  const bool placeholder = tok.size() > 2 && tok.front() == '{' && tok.back() == '}' &&
                           tok.find_first_of("{}", 1) == tok.size() - 1;
  if (!placeholder) {
    std::erase_if(tok, [](char c) { return c == '{' || c == '}'; });
  }
  if (!tok.empty()) out.push_back(std::move(tok));
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const auto u = static_cast<unsigned char>(c);
    // U+2019 right single quotation mark, treated like an apostrophe.
    if (u == 0xE2 && i + 2 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        static_cast<unsigned char>(text[i + 2]) == 0x99) {
      i += 2;
      continue;
    }
    if (std::isspace(u)) {
      flush_token(cur, out);
    } else if (c == '!' || c == '.' || c == ',') {
      flush_token(cur, out);
      out.emplace_back(1, c);
    } else if (c == '\'') {
      continue;
    } else if (std::isalnum(u) || c == '-' || c == '{' || c == '}' || u >= 0x80) {
      cur += static_cast<char>(std::tolower(u));
    } else {
      flush_token(cur, out);
    }
  }
  flush_token(cur, out);
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string s;
  for (const auto& t : tokens) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

// ---------------------------------------------------------------------------

void Vocabulary::add(std::string token) {
  const auto id = static_cast<TokenId>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(std::move(token));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words, int min_count) {
  Vocabulary v;
  v.min_count_ = min_count;
  v.add("<pad>");
  v.add("<unk>");
  v.add("<eos>");
  for (std::size_t a = 0; a < kNumActions; ++a) v.add(action_tag(static_cast<ActionCategory>(a)));
  for (auto& w : words) {
    CAPKIT_CHECK(!v.contains(w), "bad_vocab", "duplicate vocabulary token '" + w + "'");
    v.add(std::move(w));
  }
  return v;
}

Vocabulary Vocabulary::build(std::span<const Tokens> corpus, int min_count) {
  CAPKIT_CHECK(min_count >= 1, "bad_config", "min_count must be >= 1");
  std::unordered_map<std::string, int> freq;
  for (const auto& sentence : corpus) {
    for (const auto& t : sentence) ++freq[t];
  }
  Vocabulary specials = from_words({}, min_count);
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [tok, n] : freq) {
    if (n >= min_count && !specials.contains(tok)) kept.emplace_back(tok, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [tok, n] : kept) words.push_back(tok);
  return from_words(std::move(words), min_count);
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  CAPKIT_CHECK(id >= 0 && static_cast<std::size_t>(id) < id_to_token_.size(), "bad_token_id",
               "token id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) != 0;
}

std::vector<std::string> Vocabulary::words() const {
  return {id_to_token_.begin() + kFirstWord, id_to_token_.end()};
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(std::span<const TokenId> ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

// ---------------------------------------------------------------------------

std::array<std::size_t, 3> split_sizes(std::size_t n, SplitRatios r) {
  CAPKIT_CHECK(r.train >= 0 && r.val >= 0 && r.test >= 0, "bad_config", "split ratios must be >= 0");
  CAPKIT_CHECK(std::abs(r.train + r.val + r.test - 1.0) < 1e-9, "bad_config",
               "split ratios must sum to 1");
  if (n < 3) return {n, 0, 0};
  const std::array<double, 3> exact = {r.train * static_cast<double>(n),
                                       r.val * static_cast<double>(n),
                                       r.test * static_cast<double>(n)};
  std::array<std::size_t, 3> sizes{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    sizes[i] = static_cast<std::size_t>(std::floor(exact[i] + 1e-9));
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return exact[a] - static_cast<double>(sizes[a]) > exact[b] - static_cast<double>(sizes[b]);
  });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

void split_dataset(std::vector<CaptionRecord>& records, SplitRatios ratios, std::uint64_t seed) {
  const auto sizes = split_sizes(records.size(), ratios);
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return records[a].clip_id < records[b].clip_id;
  });
  Rng rng(seed);
  rng.shuffle(idx);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Split s = Split::kTrain;
    if (k >= sizes[0] + sizes[1]) {
      s = Split::kTest;
    } else if (k >= sizes[0]) {
      s = Split::kVal;
    }
    records[idx[k]].split = s;
  }
}

// ---------------------------------------------------------------------------

SWLexicon SWLexicon::from_json(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error("bad_lexicon", std::string("lexicon is not valid JSON: ") + e.what());
  }
  CAPKIT_CHECK(doc.contains("groups") && doc["groups"].is_array(), "bad_lexicon",
               "lexicon needs a 'groups' array");
  SWLexicon lex;
  for (const auto& g : doc["groups"]) {
    SwGroup group;
    group.canonical = g.at("canonical").get<std::string>();
    group.members = g.at("members").get<std::vector<std::string>>();
    CAPKIT_CHECK(!group.members.empty(), "bad_lexicon", "group '" + group.canonical + "' is empty");
    const auto gid = static_cast<SwGroupId>(lex.groups_.size());
    for (const auto& m : group.members) {
      std::string stem = porter_stem(m);
      auto [it, inserted] = lex.stem_to_group_.emplace(stem, gid);
      CAPKIT_CHECK(inserted || it->second == gid, "bad_lexicon",
                   "surface form '" + m + "' collides with group '" +
                       lex.groups_[static_cast<std::size_t>(it->second)].canonical + "'");
      group.stems.push_back(std::move(stem));
    }
    lex.groups_.push_back(std::move(group));
  }
  CAPKIT_CHECK(lex.groups_.size() == kGroups, "bad_lexicon",
               "lexicon must have exactly " + std::to_string(kGroups) + " groups, got " +
                   std::to_string(lex.groups_.size()));
  return lex;
}

SWLexicon SWLexicon::load(const std::string& path) {
  std::ifstream in(path);
  CAPKIT_CHECK(in.good(), "io", "cannot open lexicon file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

const SWLexicon& SWLexicon::builtin() {
  static const SWLexicon lex = from_json(embedded::kLexiconJson);
  return lex;
}

std::optional<SwGroupId> SWLexicon::lookup(std::string_view token) const {
  auto it = stem_to_group_.find(porter_stem(token));
  if (it != stem_to_group_.end()) return it->second;
  if (token.find('-') != std::string_view::npos) {
    std::string joined(token);
    std::erase(joined, '-');
    it = stem_to_group_.find(porter_stem(joined));
    if (it != stem_to_group_.end()) return it->second;
  }
  return std::nullopt;
}

std::vector<SwGroupId> sw_extract(std::span<const std::string> tokens, const SWLexicon& lexicon) {
  std::vector<SwGroupId> out;
  for (const auto& t : tokens) {
    if (auto g = lexicon.lookup(t)) out.push_back(*g);
  }
  return out;
}

std::vector<double> sw_vector(std::span<const std::string> tokens, const SWLexicon& lexicon) {
  std::vector<double> v(lexicon.size(), 0.0);
  for (auto g : sw_extract(tokens, lexicon)) v[static_cast<std::size_t>(g)] = 1.0;
  return v;
}

// ---------------------------------------------------------------------------

namespace {

template <typename F>
void for_each_json_line(const std::string& path, F&& f) {
  std::ifstream in(path);
  CAPKIT_CHECK(in.good(), "io", "cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("bad_jsonl", path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    f(row, lineno);
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  CAPKIT_CHECK(out.good(), "io", "cannot write " + path);
  return out;
}

}  // namespace

std::vector<CaptionRecord> read_records_jsonl(const std::string& path) {
  std::vector<CaptionRecord> out;
  for_each_json_line(path, [&](const json& row, std::size_t lineno) {
    try {
      CaptionRecord r;
      r.clip_id = row.at("clip_id").get<std::string>();
      r.action = parse_action(row.at("action").get<std::string>());
      r.tokens = tokenize(row.at("caption").get<std::string>());
      if (row.contains("split")) r.split = parse_split(row["split"].get<std::string>());
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error("bad_jsonl", path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

void write_records_jsonl(const std::string& path, std::span<const CaptionRecord> records) {
  auto out = open_out(path);
  for (const auto& r : records) {
    json row = {{"clip_id", r.clip_id},
                {"action", std::string(action_name(r.action))},
                {"caption", join_tokens(r.tokens)},
                {"split", std::string(split_name(r.split))}};
    out << row.dump() << '\n';
  }
}

std::vector<std::pair<std::string, Tokens>> read_captions_jsonl(const std::string& path) {
  std::vector<std::pair<std::string, Tokens>> out;
  for_each_json_line(path, [&](const json& row, std::size_t lineno) {
    try {
      out.emplace_back(row.at("clip_id").get<std::string>(),
                       tokenize(row.at("caption").get<std::string>()));
    } catch (const json::exception& e) {
      throw Error("bad_jsonl", path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

void write_captions_jsonl(const std::string& path,
                          std::span<const std::pair<std::string, Tokens>> rows) {
  auto out = open_out(path);
  for (const auto& [id, toks] : rows) {
    out << json{{"clip_id", id}, {"caption", join_tokens(toks)}}.dump() << '\n';
  }
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
  auto out = open_out(path);
  out << json{{"min_count", vocab.min_count()}, {"words", vocab.words()}}.dump(1) << '\n';
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  CAPKIT_CHECK(in.good(), "io", "cannot open vocabulary " + path);
  try {
    json doc = json::parse(in);
    return Vocabulary::from_words(doc.at("words").get<std::vector<std::string>>(),
                                  doc.value("min_count", 1));
  } catch (const json::exception& e) {
    throw Error("bad_vocab", path + ": " + e.what());
  }
}

}  // namespace capkit
