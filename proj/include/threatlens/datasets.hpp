#pragma once

// Labelled corpora: tweet CSV with a relevance column, and CoNLL-style
// token/label files for the tagger.

#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "threatlens/classifier.hpp"
#include "threatlens/ner.hpp"
#include "threatlens/textprep.hpp"

namespace threatlens {

struct LabeledTweet {
  Tweet tweet;
  int label = 0;  // 1 = relevant
};

struct ClassificationDataset {
  std::string name;
  std::vector<LabeledTweet> examples;

  std::size_t positives() const;
  std::size_t negatives() const;
};

// Header `id,account,posted_at,account_set,text,label`, label in {0,1}.
// Throws FormatError with the offending line.
ClassificationDataset read_classification_csv(std::istream& in,
                                              const std::string& source_name = "<dataset>");
ClassificationDataset load_classification_csv(const std::filesystem::path& path);
void write_classification_csv(std::ostream& out, const ClassificationDataset& dataset);

struct NerSentence {
  std::vector<std::string> tokens;
  std::vector<int> labels;
};

struct NerDataset {
  std::string name;
  std::vector<NerSentence> sentences;

  std::size_t token_count() const;
};

// One `token<TAB>label` per line, blank line between sentences. Tokens are
// normalized like tweet text: a token that normalizes to nothing is dropped
// and one that splits keeps its label on every piece.
NerDataset read_conll(std::istream& in, const std::string& source_name = "<conll>");
NerDataset load_conll(const std::filesystem::path& path);
void write_conll(std::ostream& out, const NerDataset& dataset);

std::vector<std::vector<std::string>> corpus_tokens(const ClassificationDataset& dataset);
std::vector<std::vector<std::string>> corpus_tokens(const NerDataset& dataset);

std::vector<ClassifierExample> encode_dataset(const ClassificationDataset& dataset,
                                              const Vocabulary& vocab,
                                              std::size_t max_len = kDefaultMaxLen);
// Labels are cut to the encoded length.
std::vector<NerExample> encode_dataset(const NerDataset& dataset, const Vocabulary& vocab,
                                       std::size_t max_len = kDefaultMaxLen);

// Vocabulary files: JSON {"words": [...], "chars": [...]} with the
// non-reserved entries in id order, plus the hash for reference.
void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::filesystem::path& path);

}  // namespace threatlens
