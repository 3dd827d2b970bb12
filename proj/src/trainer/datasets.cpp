#include "threatlens/datasets.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "threatlens/errors.hpp"

namespace threatlens {

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open file");
  return in;
}

}  // namespace

std::size_t ClassificationDataset::positives() const {
  std::size_t count = 0;
  for (const auto& example : examples) count += example.label == 1;
  return count;
}

std::size_t ClassificationDataset::negatives() const { return examples.size() - positives(); }

ClassificationDataset read_classification_csv(std::istream& in, const std::string& source_name) {
  CsvReader reader(in, source_name);
  auto header = reader.next();
  if (!header) throw FormatError(source_name, 0, "empty file");
  check_tweet_header(*header, source_name, {"label"});
  ClassificationDataset dataset;
  dataset.name = source_name;
  std::set<std::string> ids;
  while (auto record = reader.next()) {
    if (record->fields.size() == 1 && record->fields[0].empty()) continue;
    if (record->fields.size() != 6) {
      throw FormatError(source_name, record->line,
                        "expected 6 fields, got " + std::to_string(record->fields.size()));
    }
    LabeledTweet example;
    example.tweet = parse_tweet_record(*record, source_name);
    const std::string& label = record->fields[5];
    if (label != "0" && label != "1") {
      throw FormatError(source_name, record->line, "label must be 0 or 1, got '" + label + "'");
    }
    example.label = label == "1";
    if (!ids.insert(example.tweet.id).second) {
      throw FormatError(source_name, record->line, "duplicate tweet id '" + example.tweet.id + "'");
    }
    dataset.examples.push_back(std::move(example));
  }
  if (dataset.examples.empty()) throw FormatError(source_name, 0, "no examples");
  return dataset;
}

ClassificationDataset load_classification_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  auto dataset = read_classification_csv(in, path.string());
  dataset.name = path.stem().string();
  return dataset;
}

void write_classification_csv(std::ostream& out, const ClassificationDataset& dataset) {
  write_csv_row(out, {"id", "account", "posted_at", "account_set", "text", "label"});
  for (const auto& example : dataset.examples) {
    const auto& t = example.tweet;
    write_csv_row(out, {t.id, t.account, format_timestamp(t.posted_at),
                        std::string(to_string(t.account_set)), t.text,
                        std::to_string(example.label)});
  }
}

std::size_t NerDataset::token_count() const {
  std::size_t count = 0;
  for (const auto& s : sentences) count += s.tokens.size();
  return count;
}

NerDataset read_conll(std::istream& in, const std::string& source_name) {
  NerDataset dataset;
  dataset.name = source_name;
  NerSentence current;
  bool open = false;  // a sentence has started, even if all its tokens were dropped
  auto flush = [&] {
    if (!current.tokens.empty()) dataset.sentences.push_back(std::move(current));
    current = {};
    open = false;
  };
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (number == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
      continue;
    }
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(source_name, number, "expected 'token<TAB>label'");
    }
    int label = 0;
    try {
      label = LabelSet::index(line.substr(tab + 1));
    } catch (const InvalidLabel& e) {
      throw FormatError(source_name, number, e.what());
    }
    open = true;
    for (auto& piece : normalize_lenient(line.substr(0, tab))) {
      current.tokens.push_back(std::move(piece));
      current.labels.push_back(label);
    }
  }
  if (open || !current.tokens.empty()) flush();
  if (dataset.sentences.empty()) throw FormatError(source_name, 0, "no sentences");
  return dataset;
}

NerDataset load_conll(const std::filesystem::path& path) {
  auto in = open_input(path);
  auto dataset = read_conll(in, path.string());
  dataset.name = path.stem().string();
  return dataset;
}

void write_conll(std::ostream& out, const NerDataset& dataset) {
  for (const auto& sentence : dataset.sentences) {
    for (std::size_t t = 0; t < sentence.tokens.size(); ++t) {
      out << sentence.tokens[t] << '\t' << LabelSet::name(sentence.labels[t]) << '\n';
    }
    out << '\n';
  }
}

std::vector<std::vector<std::string>> corpus_tokens(const ClassificationDataset& dataset) {
  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(dataset.examples.size());
  for (const auto& example : dataset.examples) {
    corpus.push_back(normalize_lenient(example.tweet.text));
  }
  return corpus;
}

std::vector<std::vector<std::string>> corpus_tokens(const NerDataset& dataset) {
  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(dataset.sentences.size());
  for (const auto& sentence : dataset.sentences) corpus.push_back(sentence.tokens);
  return corpus;
}

std::vector<ClassifierExample> encode_dataset(const ClassificationDataset& dataset,
                                              const Vocabulary& vocab, std::size_t max_len) {
  std::vector<ClassifierExample> examples;
  examples.reserve(dataset.examples.size());
  for (const auto& example : dataset.examples) {
    examples.push_back(
        {encode(normalize_lenient(example.tweet.text), vocab, max_len), example.label});
  }
  return examples;
}

std::vector<NerExample> encode_dataset(const NerDataset& dataset, const Vocabulary& vocab,
                                       std::size_t max_len) {
  std::vector<NerExample> examples;
  examples.reserve(dataset.sentences.size());
  for (const auto& sentence : dataset.sentences) {
    NerExample example{encode(sentence.tokens, vocab, max_len), sentence.labels};
    example.labels.resize(example.encoding.size());
    examples.push_back(std::move(example));
  }
  return examples;
}

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::vector<int> chars;
  for (char ch : vocab.chars()) chars.push_back(static_cast<unsigned char>(ch));
  const nlohmann::json json = {{"hash", vocab.hash()}, {"words", vocab.words()}, {"chars", chars}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path.string(), 0, "cannot write file");
  out << json.dump(1) << '\n';
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    const auto json = nlohmann::json::parse(in);
    std::string chars;
    for (int byte : json.at("chars").get<std::vector<int>>()) {
      if (byte < 0 || byte > 255) throw FormatError(path.string(), 0, "bad character code");
      chars.push_back(static_cast<char>(byte));
    }
    Vocabulary vocab(json.at("words").get<std::vector<std::string>>(), chars);
    if (json.contains("hash") && json.at("hash").get<std::string>() != vocab.hash()) {
      throw FormatError(path.string(), 0, "vocabulary hash does not match its contents");
    }
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string(), 0, std::string("bad vocabulary file: ") + e.what());
  }
}

}  // namespace threatlens
