#pragma once

// Replay pipeline: tweet CSV -> keyword filter -> relevance classifier ->
// tagger -> JSON-lines alerts.

#include <filesystem>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "threatlens/classifier.hpp"
#include "threatlens/ner.hpp"
#include "threatlens/textprep.hpp"

namespace spdlog {
class logger;
}

namespace threatlens {

struct AlertEntity {
  std::string text;
  std::string label;  // never "O"
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive token index

  bool operator==(const AlertEntity&) const = default;
};

struct AlertRecord {
  std::string tweet_id;
  std::string account;
  Timestamp posted_at{};
  std::string infrastructure;
  std::vector<std::string> matched_keywords;
  double relevance = 0.0;
  std::vector<std::string> tokens;
  std::vector<AlertEntity> entities;
  std::string classifier_version;
  std::string ner_version;
  Timestamp emitted_at{};

  bool operator==(const AlertRecord&) const = default;

  // Fields in declaration order.
  nlohmann::ordered_json to_json() const;
  // Throws FormatError on a missing or ill-typed field, a span outside the
  // tokens, an O label or a probability outside [0, 1].
  static AlertRecord from_json(const nlohmann::json& json);
};

// One compact JSON object and a newline.
void emit_alert(std::ostream& sink, const AlertRecord& record);
std::vector<AlertRecord> read_alerts(std::istream& in, const std::string& source_name = "<alerts>");

struct PipelineSummary {
  std::size_t ingested = 0;
  std::size_t filtered_out = 0;
  std::size_t classified_irrelevant = 0;
  std::size_t alerts = 0;
  std::size_t malformed = 0;

  bool conserved() const {
    return ingested == filtered_out + classified_irrelevant + alerts + malformed;
  }
  nlohmann::ordered_json to_json() const;
};

// Every model comes with the vocabulary it was trained on; the checkpoint's
// vocabulary hash must match.
struct PipelineConfig {
  std::filesystem::path keywords;
  std::string infrastructure;
  std::filesystem::path classifier_checkpoint;
  std::filesystem::path classifier_vocabulary;
  std::filesystem::path ner_checkpoint;
  std::filesystem::path ner_vocabulary;
  std::filesystem::path input;
  std::filesystem::path output;
  std::optional<double> threshold;

  // Keys: keywords, infrastructure (optional), classifier, classifier_vocab,
  // ner, ner_vocab (defaults to classifier_vocab), input, output, threshold
  // (optional). Relative paths are resolved against `base_dir`.
  static PipelineConfig from_json(const nlohmann::json& json,
                                  const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path);
};

class Pipeline {
 public:
  Pipeline(KeywordSet keywords, ClassifierModel classifier, Vocabulary classifier_vocab,
           std::string classifier_version, NerModel ner, Vocabulary ner_vocab,
           std::string ner_version, double threshold = kDefaultThreshold);

  // Loads everything the config names. Missing files throw FormatError or
  // CheckpointError; a checkpoint/vocabulary hash mismatch throws
  // VocabularyMismatch.
  static Pipeline load(const PipelineConfig& config);

  // The alert for one tweet, or nothing if it was filtered or judged
  // irrelevant. `summary` is updated (not `ingested`/`malformed`).
  std::optional<AlertRecord> process(const Tweet& tweet, PipelineSummary& summary) const;

  // Replays a tweet CSV into `sink`. A bad header or unreadable input throws;
  // a malformed row is logged, counted and skipped.
  PipelineSummary run(std::istream& input, std::ostream& sink,
                      const std::string& source_name = "<input>",
                      spdlog::logger* log = nullptr) const;

  const KeywordSet& keywords() const noexcept { return keywords_; }
  double threshold() const noexcept { return threshold_; }

 private:
  KeywordSet keywords_;
  ClassifierModel classifier_;
  Vocabulary classifier_vocab_;
  std::string classifier_version_;
  NerModel ner_;
  Vocabulary ner_vocab_;
  std::string ner_version_;
  double threshold_;
};

// Loads and runs a config end to end, writing config.output.
PipelineSummary run_pipeline(const PipelineConfig& config, spdlog::logger* log = nullptr);

// Throws VocabularyMismatch unless `checkpoint_hash` equals the vocabulary's.
void require_vocabulary(const std::string& checkpoint_hash, const Vocabulary& vocab,
                        const std::string& what);

}  // namespace threatlens
