#include "threatlens/textprep.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>

#include "threatlens/errors.hpp"

namespace threatlens {

namespace {

bool is_token_char(char ch) {
  return (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9') || ch == '.' || ch == '-' ||
         ch == '_' || ch == ':';
}

bool is_space(char ch) {
  return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v';
}

bool starts_with_at(std::string_view text, std::size_t pos, std::string_view prefix) {
  return text.substr(pos, prefix.size()) == prefix;
}

bool is_link_remnant(std::string_view token) {
  return token == "http" || token == "https" || token.starts_with("http:") ||
         token.starts_with("https:");
}

int parse_int(std::string_view text, std::string_view what, std::string_view whole) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError("<timestamp>", 0,
                      "bad " + std::string(what) + " in timestamp '" + std::string(whole) + "'");
  }
  return value;
}

std::string trim(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_space(text[begin])) ++begin;
  while (end > begin && is_space(text[end - 1])) --end;
  return std::string(text.substr(begin, end - begin));
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  const std::string whole(text);
  std::string_view rest = text;
  if (rest.ends_with("Z")) {
    rest.remove_suffix(1);
  } else if (rest.ends_with("+00:00")) {
    rest.remove_suffix(6);
  }
  if (rest.size() != 10 && rest.size() != 19) {
    throw FormatError("<timestamp>", 0, "unrecognized timestamp '" + whole + "'");
  }
  if (rest[4] != '-' || rest[7] != '-') {
    throw FormatError("<timestamp>", 0, "unrecognized timestamp '" + whole + "'");
  }
  const int y = parse_int(rest.substr(0, 4), "year", whole);
  const int mo = parse_int(rest.substr(5, 2), "month", whole);
  const int d = parse_int(rest.substr(8, 2), "day", whole);
  int hh = 0, mm = 0, ss = 0;
  if (rest.size() == 19) {
    if ((rest[10] != 'T' && rest[10] != ' ') || rest[13] != ':' || rest[16] != ':') {
      throw FormatError("<timestamp>", 0, "unrecognized timestamp '" + whole + "'");
    }
    hh = parse_int(rest.substr(11, 2), "hour", whole);
    mm = parse_int(rest.substr(14, 2), "minute", whole);
    ss = parse_int(rest.substr(17, 2), "second", whole);
  }
  const year_month_day date{year{y}, month{static_cast<unsigned>(mo)},
                            day{static_cast<unsigned>(d)}};
  if (!date.ok() || hh > 23 || mm > 59 || ss > 60) {
    throw FormatError("<timestamp>", 0, "out-of-range timestamp '" + whole + "'");
  }
  return sys_days{date} + hours{hh} + minutes{mm} + seconds{ss};
}

std::string format_timestamp(Timestamp ts) {
  using namespace std::chrono;
  const auto day_point = floor<days>(ts);
  const year_month_day date{day_point};
  const hh_mm_ss time{ts - day_point};
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%04d-%02u-%02uT%02d:%02d:%02dZ", int(date.year()),
                unsigned(date.month()), unsigned(date.day()), int(time.hours().count()),
                int(time.minutes().count()), int(time.seconds().count()));
  return buffer;
}

std::string_view to_string(AccountSet set) { return set == AccountSet::S1 ? "S1" : "S2"; }

AccountSet parse_account_set(std::string_view text) {
  if (text == "S1" || text == "s1") return AccountSet::S1;
  if (text == "S2" || text == "s2") return AccountSet::S2;
  throw FormatError("<account_set>", 0, "account_set must be S1 or S2, got '" + std::string(text) + "'");
}

std::vector<std::string> normalize_lenient(std::string_view text) {
  std::string lowered(text);
  for (char& ch : lowered) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }

  std::string cleaned;
  cleaned.reserve(lowered.size());
  for (std::size_t i = 0; i < lowered.size();) {
    if (starts_with_at(lowered, i, "http://") || starts_with_at(lowered, i, "https://") ||
        starts_with_at(lowered, i, "t.co/")) {
      while (i < lowered.size() && !is_space(lowered[i])) ++i;
      cleaned.push_back(' ');
      continue;
    }
    const char ch = lowered[i++];
    cleaned.push_back(is_token_char(ch) ? ch : ' ');
  }

  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && cleaned[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < cleaned.size() && cleaned[i] != ' ') ++i;
    if (i > start) {
      std::string_view token(cleaned.data() + start, i - start);
      if (!is_link_remnant(token)) tokens.emplace_back(token);
    }
  }
  return tokens;
}

std::vector<std::string> normalize(std::string_view text) {
  auto tokens = normalize_lenient(text);
  if (tokens.empty()) {
    throw EmptyAfterNormalization("text has no tokens after normalization: '" +
                                  std::string(text.substr(0, 80)) + "'");
  }
  return tokens;
}

TokenizedTweet tokenize(const Tweet& tweet) { return TokenizedTweet{tweet, normalize(tweet.text)}; }

bool keyword_filter(const std::vector<std::string>& tokens, const KeywordSet& keywords) {
  for (const auto& token : tokens) {
    for (const auto& keyword : keywords.keywords) {
      if (token.find(keyword) != std::string::npos) return true;
    }
  }
  return false;
}

std::vector<std::string> matched_keywords(const std::vector<std::string>& tokens,
                                          const KeywordSet& keywords) {
  std::vector<std::string> matched;
  for (const auto& keyword : keywords.keywords) {
    const bool hit = std::any_of(tokens.begin(), tokens.end(), [&](const std::string& token) {
      return token.find(keyword) != std::string::npos;
    });
    if (hit) matched.push_back(keyword);
  }
  return matched;
}

KeywordSet parse_keywords(std::istream& in, std::string infrastructure_name,
                          const std::string& source_name) {
  KeywordSet set{std::move(infrastructure_name), {}};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string keyword = trim(line);
    if (keyword.empty() || keyword.front() == '#') continue;
    for (char& ch : keyword) {
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    }
    const auto normalized = normalize_lenient(keyword);
    if (normalized.size() != 1 || normalized.front() != keyword) {
      throw InvalidKeyword(source_name + ":" + std::to_string(line_no) + ": keyword '" + keyword +
                           "' is not a single normalized token");
    }
    set.keywords.insert(keyword);
  }
  if (set.keywords.empty()) throw InvalidKeyword(source_name + ": keyword set is empty");
  return set;
}

KeywordSet load_keywords(const std::filesystem::path& path, std::string infrastructure_name) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), 0, "cannot open keyword file");
  if (infrastructure_name.empty()) infrastructure_name = path.stem().string();
  return parse_keywords(in, std::move(infrastructure_name), path.string());
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary({}, {}) {}

Vocabulary::Vocabulary(std::vector<std::string> words, std::string chars) {
  words_ = {"<pad>", "<unk>"};
  chars_ = std::string{'\0', '\1'};
  char_index_.fill(kUnk);
  word_index_.emplace(words_[kPad], kPad);
  word_index_.emplace(words_[kUnk], kUnk);
  for (auto& word : words) {
    if (word_index_.count(word)) throw ConfigError("duplicate vocabulary word '" + word + "'");
    word_index_.emplace(word, static_cast<int>(words_.size()));
    words_.push_back(std::move(word));
  }
  std::array<bool, 256> seen{};
  for (char ch : chars) {
    auto& flag = seen[static_cast<unsigned char>(ch)];
    if (flag) throw ConfigError(std::string("duplicate vocabulary character '") + ch + "'");
    flag = true;
    char_index_[static_cast<unsigned char>(ch)] = static_cast<int>(chars_.size());
    chars_.push_back(ch);
  }
}

int Vocabulary::word_id(std::string_view word) const {
  auto it = word_index_.find(std::string(word));
  return it == word_index_.end() ? kUnk : it->second;
}

int Vocabulary::char_id(char ch) const { return char_index_[static_cast<unsigned char>(ch)]; }

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("word id " + std::to_string(id) + " out of range");
  }
  return words_[id];
}

char Vocabulary::character(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= chars_.size()) {
    throw IndexError("char id " + std::to_string(id) + " out of range");
  }
  return chars_[id];
}

std::vector<std::string> Vocabulary::words() const { return {words_.begin() + 2, words_.end()}; }

std::string Vocabulary::chars() const { return chars_.substr(2); }

std::string Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("words");
  for (std::size_t i = 2; i < words_.size(); ++i) {
    h = fnv1a64(words_[i], h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  h = fnv1a64("chars", h);
  h = fnv1a64(chars_.substr(2), h);
  return hex64(h);
}

namespace {

template <typename Key>
std::vector<Key> by_frequency(const std::map<Key, std::size_t>& counts, std::size_t min_count) {
  std::vector<std::pair<Key, std::size_t>> entries;
  for (const auto& [key, count] : counts) {
    if (count >= min_count) entries.emplace_back(key, count);
  }
  // std::map iteration is already lexicographic, so a stable sort on count
  // keeps ties in lexicographic order.
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<Key> keys;
  keys.reserve(entries.size());
  for (auto& entry : entries) keys.push_back(std::move(entry.first));
  return keys;
}

}  // namespace

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus,
                            std::size_t min_count) {
  if (corpus.empty()) throw EmptyCorpus("cannot build a vocabulary from an empty corpus");
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  std::map<std::string, std::size_t> word_counts;
  std::map<char, std::size_t> char_counts;
  for (const auto& sentence : corpus) {
    for (const auto& token : sentence) {
      ++word_counts[token];
      for (char ch : token) ++char_counts[ch];
    }
  }
  auto words = by_frequency(word_counts, min_count);
  auto char_list = by_frequency(char_counts, 1);
  return Vocabulary(std::move(words), std::string(char_list.begin(), char_list.end()));
}

SentenceEncoding encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                        std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  SentenceEncoding enc;
  const std::size_t n = std::min(tokens.size(), max_len);
  enc.word_ids.reserve(n);
  enc.char_ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& token = tokens[i];
    enc.word_ids.push_back(vocab.word_id(token));
    std::vector<int> chars;
    const std::size_t len = std::min(token.size(), kMaxWordLength);
    chars.reserve(len);
    for (std::size_t c = 0; c < len; ++c) chars.push_back(vocab.char_id(token[c]));
    if (chars.empty()) chars.push_back(Vocabulary::kUnk);
    enc.char_ids.push_back(std::move(chars));
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Tweet CSV

namespace {
const std::vector<std::string> kTweetColumns = {"id", "account", "posted_at", "account_set", "text"};
}

void check_tweet_header(const CsvRecord& header, const std::string& source_name,
                        const std::vector<std::string>& extra_columns) {
  std::vector<std::string> expected = kTweetColumns;
  expected.insert(expected.end(), extra_columns.begin(), extra_columns.end());
  std::vector<std::string> got = header.fields;
  if (!got.empty() && got.front().starts_with("\xEF\xBB\xBF")) got.front().erase(0, 3);
  if (got != expected) {
    std::string want;
    for (const auto& column : expected) want += (want.empty() ? "" : ",") + column;
    throw FormatError(source_name, header.line, "expected header '" + want + "'");
  }
}

Tweet parse_tweet_record(const CsvRecord& record, const std::string& source_name) {
  if (record.fields.size() < kTweetColumns.size()) {
    throw FormatError(source_name, record.line,
                      "expected at least 5 fields, got " + std::to_string(record.fields.size()));
  }
  Tweet tweet;
  tweet.id = record.fields[0];
  tweet.account = record.fields[1];
  try {
    tweet.posted_at = parse_timestamp(record.fields[2]);
    tweet.account_set = parse_account_set(record.fields[3]);
  } catch (const FormatError& e) {
    throw FormatError(source_name, record.line, e.what());
  }
  tweet.text = record.fields[4];
  if (tweet.id.empty()) throw FormatError(source_name, record.line, "empty tweet id");
  if (tweet.text.empty()) throw FormatError(source_name, record.line, "empty tweet text");
  return tweet;
}

std::vector<Tweet> read_tweets(std::istream& in, const std::string& source_name) {
  CsvReader reader(in, source_name);
  auto header = reader.next();
  if (!header) throw FormatError(source_name, 0, "empty file");
  check_tweet_header(*header, source_name);
  std::vector<Tweet> tweets;
  std::set<std::string> ids;
  while (auto record = reader.next()) {
    if (record->fields.size() == 1 && record->fields[0].empty()) continue;
    Tweet tweet = parse_tweet_record(*record, source_name);
    if (!ids.insert(tweet.id).second) {
      throw FormatError(source_name, record->line, "duplicate tweet id '" + tweet.id + "'");
    }
    tweets.push_back(std::move(tweet));
  }
  return tweets;
}

}  // namespace threatlens
