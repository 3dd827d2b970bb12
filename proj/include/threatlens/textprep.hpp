#pragma once

// Tweet normalization, keyword filtering, vocabularies and integer encoding.
//
// Everything here is a pure function over immutable inputs.

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "threatlens/csv.hpp"
#include "threatlens/digest.hpp"

namespace threatlens {

using Timestamp = std::chrono::sys_seconds;

// Parses "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS" with an optional "Z" or "+00:00"
// suffix (a space is also accepted in place of 'T'). Throws FormatError.
Timestamp parse_timestamp(std::string_view text);
// Always "YYYY-MM-DDTHH:MM:SSZ".
std::string format_timestamp(Timestamp ts);

enum class AccountSet { S1, S2 };

std::string_view to_string(AccountSet set);
AccountSet parse_account_set(std::string_view text);

struct Tweet {
  std::string id;
  std::string account;
  Timestamp posted_at{};
  std::string text;
  AccountSet account_set = AccountSet::S1;
};

struct TokenizedTweet {
  Tweet source;
  std::vector<std::string> tokens;
};

struct KeywordSet {
  std::string infrastructure_name;
  std::set<std::string> keywords;
};

inline constexpr std::size_t kDefaultMaxLen = 40;
inline constexpr std::size_t kMaxWordLength = 30;

// Lower-cases, deletes hyperlinks, replaces every character outside
// [a-z0-9.-_:] by a space and splits on whitespace. Leftover "http"/"https"
// fragments are dropped. Throws EmptyAfterNormalization.
std::vector<std::string> normalize(std::string_view text);

// Same as normalize() but returns an empty list instead of throwing.
std::vector<std::string> normalize_lenient(std::string_view text);

TokenizedTweet tokenize(const Tweet& tweet);

bool keyword_filter(const std::vector<std::string>& tokens, const KeywordSet& keywords);
// Keywords that occur in some token, in sorted order.
std::vector<std::string> matched_keywords(const std::vector<std::string>& tokens,
                                          const KeywordSet& keywords);

// One keyword per line; blank lines and '#' comments are skipped. A keyword
// that does not survive normalization unchanged throws InvalidKeyword.
KeywordSet parse_keywords(std::istream& in, std::string infrastructure_name,
                          const std::string& source_name = "<keywords>");
KeywordSet load_keywords(const std::filesystem::path& path, std::string infrastructure_name = {});

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();
  // `words` and `chars` list the non-reserved entries in id order starting at 2.
  Vocabulary(std::vector<std::string> words, std::string chars);

  int word_id(std::string_view word) const;
  int char_id(char ch) const;
  const std::string& word(int id) const;
  char character(int id) const;

  std::size_t word_count() const noexcept { return words_.size(); }
  std::size_t char_count() const noexcept { return chars_.size(); }

  // Non-reserved entries in id order (what the constructor takes).
  std::vector<std::string> words() const;
  std::string chars() const;

  // Stable 64-bit FNV-1a digest of the id assignment, as 16 hex digits.
  std::string hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.chars_ == b.chars_;
  }

 private:
  std::vector<std::string> words_;
  std::string chars_;
  std::unordered_map<std::string, int> word_index_;
  std::array<int, 256> char_index_{};
};

// Words reaching `min_count` get ids from 2 upward in frequency-descending
// order, ties broken lexicographically. All characters are kept.
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus,
                            std::size_t min_count = 1);

struct SentenceEncoding {
  std::vector<int> word_ids;
  std::vector<std::vector<int>> char_ids;
  std::size_t size() const noexcept { return word_ids.size(); }
};

SentenceEncoding encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                        std::size_t max_len = kDefaultMaxLen);

// Tweet CSV: header `id,account,posted_at,account_set,text` (extra trailing
// columns are allowed and ignored here).
Tweet parse_tweet_record(const CsvRecord& record, const std::string& source_name);
void check_tweet_header(const CsvRecord& header, const std::string& source_name,
                        const std::vector<std::string>& extra_columns = {});
std::vector<Tweet> read_tweets(std::istream& in, const std::string& source_name = "<tweets>");

}  // namespace threatlens
