#include "graphloc/episodes.hpp"

#include "graphloc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <utility>

namespace graphloc {

using nlohmann::json;

std::string_view to_string(Speaker s) { return s == Speaker::locator ? "locator" : "observer"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val_seen: return "val_seen";
    case Split::val_unseen: return "val_unseen";
    case Split::test: return "test";
  }
  return "train";
}

Speaker parse_speaker(std::string_view s) {
  if (s == "locator") return Speaker::locator;
  if (s == "observer") return Speaker::observer;
  throw ValidationError("unknown speaker '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  for (Split split : {Split::train, Split::val_seen, Split::val_unseen, Split::test}) {
    if (s == to_string(split)) return split;
  }
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

void validate_dialog(const Dialog& dialog) {
  if (dialog.messages.empty()) throw ValidationError("dialog has no messages");
  for (const auto& m : dialog.messages) {
    if (std::all_of(m.text.begin(), m.text.end(),
                    [](unsigned char c) { return std::isspace(c) != 0; })) {
      throw ValidationError("dialog contains a blank message");
    }
  }
}

// ---------------------------------------------------------------- vocabulary

const std::vector<std::string>& Vocabulary::reserved_tokens() {
  static const std::vector<std::string> reserved = {
      "[PAD]", "[UNK]",       "[MASK]",     "[CLS]", "[SEP]",
      "[IMG]", "[MSG_START]", "[MSG_STOP]", "<loc>", "<obs>"};
  return reserved;
}

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& reserved = reserved_tokens();
  if (tokens_.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), tokens_.begin())) {
    throw ValidationError("vocabulary must start with the reserved tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocabulary::encode(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::decode(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

// ----------------------------------------------------------------- tokenizer

namespace {

// Decodes one UTF-8 code point starting at `pos`; malformed bytes decode as
// themselves so the tokenizer never fails.
char32_t next_code_point(std::string_view s, std::size_t& pos) {
  const auto lead = static_cast<unsigned char>(s[pos]);
  std::size_t extra = 0;
  char32_t cp = lead;
  if (lead >= 0xF0 && lead < 0xF8) {
    extra = 3;
    cp = lead & 0x07;
  } else if (lead >= 0xE0) {
    extra = 2;
    cp = lead & 0x0F;
  } else if (lead >= 0xC0) {
    extra = 1;
    cp = lead & 0x1F;
  }
  if (lead >= 0x80 && (extra == 0 || pos + extra >= s.size())) {
    ++pos;
    return lead;
  }
  for (std::size_t i = 1; i <= extra; ++i) {
    const auto c = static_cast<unsigned char>(s[pos + i]);
    if ((c & 0xC0) != 0x80) {
      ++pos;
      return lead;
    }
    cp = (cp << 6) | (c & 0x3F);
  }
  pos += extra + 1;
  return cp;
}

bool is_unicode_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

bool is_ascii_punct(char32_t c) {
  return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
         (c >= 0x7B && c <= 0x7E);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t start = pos;
    const char32_t cp = next_code_point(text, pos);
    if (is_unicode_space(cp)) {
      flush();
    } else if (is_ascii_punct(cp)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(cp));
    } else if (cp >= 'A' && cp <= 'Z') {
      current.push_back(static_cast<char>(cp - 'A' + 'a'));
    } else {
      current.append(text.substr(start, pos - start));
    }
  }
  flush();
  return tokens;
}

std::vector<TokenId> flatten_dialog(const Dialog& dialog, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& m : dialog.messages) {
    ids.push_back(Vocabulary::kMsgStart);
    ids.push_back(m.speaker == Speaker::locator ? Vocabulary::kLocatorTag
                                                : Vocabulary::kObserverTag);
    for (const auto& tok : tokenize(m.text)) ids.push_back(vocab.encode(tok));
    ids.push_back(Vocabulary::kMsgStop);
  }
  return ids;
}

std::vector<TokenId> truncate_history(std::vector<TokenId> ids, std::size_t max_length) {
  if (ids.size() > max_length) {
    ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(max_length));
  }
  return ids;
}

Vocabulary build_vocab(const std::vector<Episode>& corpus, int min_count) {
  std::map<std::string, long> counts;
  for (const auto& ep : corpus) {
    for (const auto& m : ep.dialog.messages) {
      for (auto& tok : tokenize(m.text)) ++counts[std::move(tok)];
    }
  }
  const auto& reserved = Vocabulary::reserved_tokens();
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && std::find(reserved.begin(), reserved.end(), tok) == reserved.end()) {
      kept.emplace_back(tok, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  std::vector<std::string> tokens = reserved;
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

// ------------------------------------------------------------------------ I/O

namespace {

json episode_to_json(const Episode& ep) {
  json dialog = json::array();
  for (const auto& m : ep.dialog.messages) {
    dialog.push_back({{"speaker", to_string(m.speaker)}, {"text", m.text}});
  }
  return {{"episode_id", ep.episode_id},
          {"environment_id", ep.environment_id},
          {"split", to_string(ep.split)},
          {"target_node", ep.target_node},
          {"dialog", std::move(dialog)}};
}

Episode episode_from_json(const json& j) {
  Episode ep;
  ep.episode_id = j.at("episode_id").get<std::string>();
  ep.environment_id = j.at("environment_id").get<std::string>();
  ep.split = parse_split(j.at("split").get<std::string>());
  ep.target_node = j.at("target_node").get<std::string>();
  for (const auto& jm : j.at("dialog")) {
    ep.dialog.messages.push_back(
        {parse_speaker(jm.at("speaker").get<std::string>()), jm.at("text").get<std::string>()});
  }
  validate_dialog(ep.dialog);
  return ep;
}

}  // namespace

std::vector<Episode> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  std::vector<Episode> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      corpus.push_back(episode_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

void save_corpus(const std::vector<Episode>& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus " + path.string());
  for (const auto& ep : corpus) out << episode_to_json(ep).dump() << '\n';
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  try {
    return Vocabulary(json::parse(in).at("tokens").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw ValidationError("malformed vocabulary " + path.string() + ": " + e.what());
  }
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << json{{"tokens", vocab.tokens()}}.dump() << '\n';
}

}  // namespace graphloc
