#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace graphloc {

enum class Speaker { locator, observer };
enum class Split { train, val_seen, val_unseen, test };

std::string_view to_string(Speaker s);
std::string_view to_string(Split s);
Speaker parse_speaker(std::string_view s);
Split parse_split(std::string_view s);

struct Message {
  Speaker speaker = Speaker::observer;
  std::string text;

  friend bool operator==(const Message&, const Message&) = default;
};

struct Dialog {
  std::vector<Message> messages;

  friend bool operator==(const Dialog&, const Dialog&) = default;
};

struct Episode {
  std::string episode_id;
  std::string environment_id;
  Dialog dialog;
  std::string target_node;
  Split split = Split::train;

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Throws ValidationError if a message is blank or the dialog is empty.
void validate_dialog(const Dialog& dialog);

using TokenId = std::int32_t;

/// Token <-> id bijection. Reserved tokens occupy ids [0, kReservedCount):
/// the eight specials first, then the two speaker tags.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kCls = 3;
  static constexpr TokenId kSep = 4;
  static constexpr TokenId kImg = 5;
  static constexpr TokenId kMsgStart = 6;
  static constexpr TokenId kMsgStop = 7;
  static constexpr TokenId kLocatorTag = 8;
  static constexpr TokenId kObserverTag = 9;
  static constexpr TokenId kSpecialCount = 8;
  static constexpr TokenId kReservedCount = 10;

  /// Only the reserved tokens.
  Vocabulary();
  /// `tokens` in id order; must start with the reserved tokens.
  explicit Vocabulary(std::vector<std::string> tokens);

  static const std::vector<std::string>& reserved_tokens();

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return ids_.find(token) != ids_.end(); }
  /// Unknown tokens map to kUnk.
  TokenId encode(std::string_view token) const;
  const std::string& decode(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Tokens eligible for masking: everything outside the reserved range.
  static bool is_maskable(TokenId id) { return id >= kReservedCount; }

  friend bool operator==(const Vocabulary& lhs, const Vocabulary& rhs) {
    return lhs.tokens_ == rhs.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId, std::less<>> ids_;
};

/// Lowercases ASCII letters, splits on Unicode whitespace and turns every
/// ASCII punctuation character into its own token.
std::vector<std::string> tokenize(std::string_view text);

/// [MSG_START] speaker-tag tokens... [MSG_STOP] for each message.
std::vector<TokenId> flatten_dialog(const Dialog& dialog, const Vocabulary& vocab);

/// Keeps the most recent `max_length` ids.
std::vector<TokenId> truncate_history(std::vector<TokenId> ids, std::size_t max_length);

/// Every token with count >= min_count, ordered by count desc then lexicographically.
Vocabulary build_vocab(const std::vector<Episode>& corpus, int min_count);

std::vector<Episode> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::vector<Episode>& corpus, const std::filesystem::path& path);

Vocabulary load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);

}  // namespace graphloc
