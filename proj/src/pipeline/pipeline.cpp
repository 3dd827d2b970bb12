#include "threatlens/pipeline.hpp"

#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "threatlens/checkpoint.hpp"
#include "threatlens/datasets.hpp"
#include "threatlens/errors.hpp"

namespace threatlens {

namespace {

template <typename T>
T field(const nlohmann::json& json, const char* key, const std::string& source) {
  try {
    return json.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source, 0, std::string("alert field '") + key + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  std::filesystem::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

nlohmann::ordered_json AlertRecord::to_json() const {
  nlohmann::ordered_json entity_list = nlohmann::ordered_json::array();
  for (const auto& e : entities) {
    nlohmann::ordered_json item;
    item["text"] = e.text;
    item["label"] = e.label;
    item["span"] = {e.begin, e.end};
    entity_list.push_back(std::move(item));
  }
  nlohmann::ordered_json json;
  json["tweet_id"] = tweet_id;
  json["account"] = account;
  json["posted_at"] = format_timestamp(posted_at);
  json["infrastructure"] = infrastructure;
  json["matched_keywords"] = matched_keywords;
  json["relevance"] = relevance;
  json["tokens"] = tokens;
  json["entities"] = std::move(entity_list);
  json["classifier_version"] = classifier_version;
  json["ner_version"] = ner_version;
  json["emitted_at"] = format_timestamp(emitted_at);
  return json;
}

AlertRecord AlertRecord::from_json(const nlohmann::json& json) {
  const std::string src = "<alert>";
  if (!json.is_object()) throw FormatError(src, 0, "alert must be a JSON object");
  AlertRecord r;
  r.tweet_id = field<std::string>(json, "tweet_id", src);
  r.account = field<std::string>(json, "account", src);
  r.posted_at = parse_timestamp(field<std::string>(json, "posted_at", src));
  r.infrastructure = field<std::string>(json, "infrastructure", src);
  r.matched_keywords = field<std::vector<std::string>>(json, "matched_keywords", src);
  r.relevance = field<double>(json, "relevance", src);
  if (!(r.relevance >= 0.0 && r.relevance <= 1.0)) {
    throw FormatError(src, 0, "relevance must lie in [0, 1]");
  }
  r.tokens = field<std::vector<std::string>>(json, "tokens", src);
  for (const auto& item : field<nlohmann::json>(json, "entities", src)) {
    AlertEntity e;
    e.text = field<std::string>(item, "text", src);
    e.label = field<std::string>(item, "label", src);
    const auto span = field<std::vector<std::size_t>>(item, "span", src);
    if (span.size() != 2) throw FormatError(src, 0, "entity span must be [begin, end]");
    e.begin = span[0];
    e.end = span[1];
    if (e.begin >= e.end || e.end > r.tokens.size()) {
      throw FormatError(src, 0, "entity span outside the tokens");
    }
    int label = 0;
    try {
      label = LabelSet::index(e.label);
    } catch (const InvalidLabel& err) {
      throw FormatError(src, 0, err.what());
    }
    if (label == LabelSet::outside) throw FormatError(src, 0, "entity labelled O");
    r.entities.push_back(std::move(e));
  }
  r.classifier_version = field<std::string>(json, "classifier_version", src);
  r.ner_version = field<std::string>(json, "ner_version", src);
  r.emitted_at = parse_timestamp(field<std::string>(json, "emitted_at", src));
  return r;
}

void emit_alert(std::ostream& sink, const AlertRecord& record) {
  sink << record.to_json().dump() << '\n';
  if (!sink) throw Error("alert sink is not writable");
}

std::vector<AlertRecord> read_alerts(std::istream& in, const std::string& source_name) {
  std::vector<AlertRecord> records;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      records.push_back(AlertRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(source_name, number, e.what());
    } catch (const FormatError& e) {
      throw FormatError(source_name, number, e.what());
    }
  }
  return records;
}

nlohmann::ordered_json PipelineSummary::to_json() const {
  nlohmann::ordered_json json;
  json["ingested"] = ingested;
  json["filtered_out"] = filtered_out;
  json["classified_irrelevant"] = classified_irrelevant;
  json["alerts"] = alerts;
  json["malformed"] = malformed;
  return json;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& json,
                                         const std::filesystem::path& base_dir) {
  static const std::set<std::string> known = {"keywords", "infrastructure",   "classifier",
                                              "classifier_vocab", "ner", "ner_vocab",
                                              "input", "output", "threshold"};
  if (!json.is_object()) throw ConfigError("pipeline config must be a JSON object");
  for (const auto& [key, value] : json.items()) {
    if (!known.count(key)) throw ConfigError("unknown pipeline config key '" + key + "'");
  }
  try {
    PipelineConfig c;
    auto path = [&](const char* key) { return resolve(base_dir, json.at(key).get<std::string>()); };
    c.keywords = path("keywords");
    c.infrastructure = json.value("infrastructure", std::string());
    c.classifier_checkpoint = path("classifier");
    c.classifier_vocabulary = path("classifier_vocab");
    c.ner_checkpoint = path("ner");
    c.ner_vocabulary = json.contains("ner_vocab") ? path("ner_vocab") : c.classifier_vocabulary;
    c.input = path("input");
    c.output = path("output");
    if (json.contains("threshold")) {
      c.threshold = json.at("threshold").get<double>();
      if (!(*c.threshold >= 0.0 && *c.threshold <= 1.0)) {
        throw ConfigError("threshold must lie in [0, 1]");
      }
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad pipeline config: ") + e.what());
  }
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), 0, "cannot open file");
  nlohmann::json json;
  try {
    json = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string(), 0, e.what());
  }
  return from_json(json, path.parent_path());
}

void require_vocabulary(const std::string& checkpoint_hash, const Vocabulary& vocab,
                        const std::string& what) {
  if (checkpoint_hash != vocab.hash()) {
    throw VocabularyMismatch(what + " was trained with vocabulary " + checkpoint_hash +
                             " but the supplied vocabulary is " + vocab.hash());
  }
}

Pipeline::Pipeline(KeywordSet keywords, ClassifierModel classifier, Vocabulary classifier_vocab,
                   std::string classifier_version, NerModel ner, Vocabulary ner_vocab,
                   std::string ner_version, double threshold)
    : keywords_(std::move(keywords)),
      classifier_(std::move(classifier)),
      classifier_vocab_(std::move(classifier_vocab)),
      classifier_version_(std::move(classifier_version)),
      ner_(std::move(ner)),
      ner_vocab_(std::move(ner_vocab)),
      ner_version_(std::move(ner_version)),
      threshold_(threshold) {}

Pipeline Pipeline::load(const PipelineConfig& config) {
  auto keywords = load_keywords(config.keywords, config.infrastructure);
  const auto classifier_ckpt = load_checkpoint(config.classifier_checkpoint);
  const auto ner_ckpt = load_checkpoint(config.ner_checkpoint);
  auto classifier_vocab = load_vocabulary(config.classifier_vocabulary);
  auto ner_vocab = load_vocabulary(config.ner_vocabulary);
  require_vocabulary(classifier_ckpt.vocab_hash, classifier_vocab,
                     "classifier " + config.classifier_checkpoint.string());
  require_vocabulary(ner_ckpt.vocab_hash, ner_vocab, "tagger " + config.ner_checkpoint.string());
  return Pipeline(std::move(keywords), ClassifierModel::from_checkpoint(classifier_ckpt),
                  std::move(classifier_vocab), classifier_ckpt.content_hash(),
                  NerModel::from_checkpoint(ner_ckpt), std::move(ner_vocab),
                  ner_ckpt.content_hash(), config.threshold.value_or(kDefaultThreshold));
}

std::optional<AlertRecord> Pipeline::process(const Tweet& tweet, PipelineSummary& summary) const {
  auto tokens = normalize_lenient(tweet.text);
  if (!keyword_filter(tokens, keywords_)) {
    ++summary.filtered_out;
    return std::nullopt;
  }
  const double p = relevance_probability(
      classifier_, encode(tokens, classifier_vocab_, classifier_.config().max_len));
  if (!is_relevant(p, threshold_)) {
    ++summary.classified_irrelevant;
    return std::nullopt;
  }
  const auto tagged = tag(ner_, encode(tokens, ner_vocab_, tokens.size()), tokens);

  AlertRecord r;
  r.tweet_id = tweet.id;
  r.account = tweet.account;
  r.posted_at = tweet.posted_at;
  r.infrastructure = keywords_.infrastructure_name;
  r.matched_keywords = matched_keywords(tokens, keywords_);
  r.relevance = p;
  for (const auto& span : tagged.spans) {
    r.entities.push_back(
        {span_text(tagged.tokens, span), LabelSet::name(span.label), span.begin, span.end});
  }
  r.tokens = std::move(tokens);
  r.classifier_version = classifier_version_;
  r.ner_version = ner_version_;
  r.emitted_at = tweet.posted_at;
  ++summary.alerts;
  return r;
}

PipelineSummary Pipeline::run(std::istream& input, std::ostream& sink,
                              const std::string& source_name, spdlog::logger* log) const {
  if (!log) log = spdlog::default_logger_raw();
  CsvReader reader(input, source_name);
  const auto header = reader.next();
  if (!header) throw FormatError(source_name, 0, "empty input");
  std::vector<std::string> extra;
  if (header->fields.size() > 5) extra.assign(header->fields.begin() + 5, header->fields.end());
  check_tweet_header(*header, source_name, extra);

  PipelineSummary summary;
  while (true) {
    std::optional<CsvRecord> record;
    try {
      record = reader.next();
    } catch (const FormatError& e) {
      // An unterminated quote swallows the rest of the file.
      ++summary.ingested;
      ++summary.malformed;
      log->warn("skipping malformed row: {}", e.what());
      break;
    }
    if (!record) break;
    if (record->fields.size() == 1 && record->fields[0].empty()) continue;
    ++summary.ingested;
    Tweet tweet;
    try {
      tweet = parse_tweet_record(*record, source_name);
    } catch (const FormatError& e) {
      ++summary.malformed;
      log->warn("skipping malformed row: {}", e.what());
      continue;
    }
    if (auto alert = process(tweet, summary)) emit_alert(sink, *alert);
  }
  return summary;
}

PipelineSummary run_pipeline(const PipelineConfig& config, spdlog::logger* log) {
  const Pipeline pipeline = Pipeline::load(config);
  std::ifstream input(config.input, std::ios::binary);
  if (!input) throw FormatError(config.input.string(), 0, "cannot open input");
  std::ofstream sink(config.output, std::ios::binary | std::ios::trunc);
  if (!sink) throw Error("cannot write alerts to " + config.output.string());
  auto summary = pipeline.run(input, sink, config.input.string(), log);
  sink.flush();
  if (!sink) throw Error("failed writing alerts to " + config.output.string());
  return summary;
}

}  // namespace threatlens
