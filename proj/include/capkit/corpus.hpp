#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace capkit {

// ---------------------------------------------------------------------------
// Action categories
// ---------------------------------------------------------------------------

inline constexpr std::size_t kNumActions = 16;

/// The sixteen event labels a caption can be conditioned on, in the order of
/// the dataset's per-action caption counts table.
inline constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "shots on target",   "corner",  "substitution",      "yellowcard",
    "shots off target",  "foul",    "kick-off",          "ball out of play",
    "goal",              "direct freekick", "offside",   "indirect freekick",
    "penalty",           "redcard", "clearance",         "yellow-red card"};

using ActionCategory = std::uint8_t;

/// Throws `capkit::Error("unknown_action")` with the list of valid names.
ActionCategory parse_action(std::string_view name);
std::string_view action_name(ActionCategory a);
/// Vocabulary tag token for an action, e.g. "<act:yellow-red-card>".
std::string action_tag(ActionCategory a);

// ---------------------------------------------------------------------------
// Records and text handling
// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { kTrain, kVal, kTest };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct CaptionRecord {
  std::string clip_id;
  ActionCategory action = 0;
  std::vector<std::string> tokens;
  Split split = Split::kTrain;
};

using Tokens = std::vector<std::string>;

enum class EntityKind : std::uint8_t { kPlayer, kCoach, kTeam, kTime };
EntityKind parse_entity_kind(std::string_view s);
std::string_view entity_placeholder(EntityKind k);

/// Replaces every occurrence of a known surface name with its placeholder.
/// At each position the longest matching name wins. Matches must sit on
/// word boundaries.
std::string anonymize(std::string_view text,
                      const std::map<std::string, EntityKind>& entities);

/// Lowercases, splits on whitespace and unkept punctuation, and emits each
/// of "!", ".", "," as a separate token. Apostrophes are dropped inside
/// words; hyphens and "{...}" placeholders survive.
Tokens tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

using TokenId = std::int32_t;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kFirstTag = 3;
  static constexpr TokenId kFirstWord = kFirstTag + static_cast<TokenId>(kNumActions);

  /// Tokens with frequency >= min_count, ordered by frequency descending
  /// then alphabetically. Specials and all action tags are unconditional.
  static Vocabulary build(std::span<const Tokens> corpus, int min_count);

  /// Rebuilds from an explicit word list (ids kFirstWord.. in order).
  static Vocabulary from_words(std::vector<std::string> words, int min_count);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  TokenId tag_id(ActionCategory a) const { return kFirstTag + a; }
  bool is_tag(TokenId id) const { return id >= kFirstTag && id < kFirstWord; }
  std::size_t size() const { return id_to_token_.size(); }
  int min_count() const { return min_count_; }
  /// Non-special words in id order.
  std::vector<std::string> words() const;

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  Tokens decode(std::span<const TokenId> ids) const;

 private:
  void add(std::string token);

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  int min_count_ = 1;
};

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitRatios {
  double train = 0.85;
  double val = 0.05;
  double test = 0.10;
};

/// Sizes by largest remainder, membership by a seeded shuffle of the input
/// order. Fewer than three records all go to train.
void split_dataset(std::vector<CaptionRecord>& records, SplitRatios ratios,
                   std::uint64_t seed);

/// Split sizes for n records under the largest-remainder rule.
std::array<std::size_t, 3> split_sizes(std::size_t n, SplitRatios ratios);

// ---------------------------------------------------------------------------
// Significant words
// ---------------------------------------------------------------------------

using SwGroupId = std::int32_t;

struct SwGroup {
  std::string canonical;
  std::vector<std::string> members;
  std::vector<std::string> stems;
};

class SWLexicon {
 public:
  static constexpr std::size_t kGroups = 55;

  /// Parses {"groups": [{"canonical", "members": [...]}, ...]}.
  static SWLexicon from_json(std::string_view json_text);
  static SWLexicon load(const std::string& path);
  /// The lexicon compiled into the library from data/sw_lexicon.json.
  static const SWLexicon& builtin();

  std::size_t size() const { return groups_.size(); }
  const SwGroup& group(SwGroupId g) const { return groups_.at(static_cast<std::size_t>(g)); }
  const std::vector<SwGroup>& groups() const { return groups_; }

  /// Group of a single token: whole-token stem first, then the stem of the
  /// token with hyphens removed ("free-kick" -> "freekick").
  std::optional<SwGroupId> lookup(std::string_view token) const;

 private:
  std::vector<SwGroup> groups_;
  std::unordered_map<std::string, SwGroupId> stem_to_group_;
};

/// Group ids of all significant tokens, order and repeats preserved.
std::vector<SwGroupId> sw_extract(std::span<const std::string> tokens, const SWLexicon& lexicon);

/// Presence vector of length lexicon.size().
std::vector<double> sw_vector(std::span<const std::string> tokens, const SWLexicon& lexicon);

// ---------------------------------------------------------------------------
// JSONL dataset files
// ---------------------------------------------------------------------------

/// {clip_id, action, caption, split?}; the caption is tokenized on read.
std::vector<CaptionRecord> read_records_jsonl(const std::string& path);
void write_records_jsonl(const std::string& path, std::span<const CaptionRecord> records);

/// Plain {clip_id, caption} rows, as used by generated hypotheses.
std::vector<std::pair<std::string, Tokens>> read_captions_jsonl(const std::string& path);
void write_captions_jsonl(const std::string& path,
                          std::span<const std::pair<std::string, Tokens>> rows);

void save_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::string& path);

}  // namespace capkit
