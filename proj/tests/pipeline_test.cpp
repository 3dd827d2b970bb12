#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "synthetic.hpp"
#include "threatlens/checkpoint.hpp"
#include "threatlens/datasets.hpp"
#include "threatlens/errors.hpp"
#include "threatlens/pipeline.hpp"
#include "threatlens/training.hpp"

namespace threatlens {
namespace {

namespace fs = std::filesystem;

AlertRecord sample_alert() {
  AlertRecord r;
  r.tweet_id = "829";
  r.account = "vulnfeed";
  r.posted_at = parse_timestamp("2017-01-31T10:00:00Z");
  r.infrastructure = "A";
  r.matched_keywords = {"linux"};
  r.relevance = 0.987654321012345;
  r.tokens = {"vuln:", "linux", "kernel", "cve-2017-5546", "local", "denial", "of", "service",
              "vulnerability"};
  r.entities = {{"linux kernel", "PRO", 1, 3},
                {"cve-2017-5546", "ID", 3, 4},
                {"local denial of service vulnerability", "VUL", 4, 9}};
  r.classifier_version = "00000000000000aa";
  r.ner_version = "00000000000000bb";
  r.emitted_at = r.posted_at;
  return r;
}

TEST(AlertRecord, JsonRoundTrip) {
  const auto r = sample_alert();
  std::stringstream sink;
  emit_alert(sink, r);
  AlertRecord empty = r;
  empty.entities.clear();
  emit_alert(sink, empty);
  const auto back = read_alerts(sink);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], r);
  EXPECT_EQ(back[1], empty);
}

TEST(AlertRecord, StableFieldOrder) {
  const auto json = sample_alert().to_json();
  std::vector<std::string> keys;
  for (const auto& [key, value] : json.items()) keys.push_back(key);
  EXPECT_EQ(keys, (std::vector<std::string>{"tweet_id", "account", "posted_at", "infrastructure",
                                            "matched_keywords", "relevance", "tokens", "entities",
                                            "classifier_version", "ner_version", "emitted_at"}));
  std::ostringstream a, b;
  emit_alert(a, sample_alert());
  emit_alert(b, sample_alert());
  const std::string line = a.str();
  EXPECT_EQ(line, b.str());
  EXPECT_EQ(std::count(line.begin(), line.end(), '\n'), 1);
}

TEST(AlertRecord, SpanArithmetic) {
  const auto r = sample_alert();
  const EntitySpan span{LabelSet::index("PRO"), 1, 3};
  EXPECT_EQ(span_text(r.tokens, span), "linux kernel");
}

TEST(AlertRecord, RejectsInvalidRecords) {
  auto base = nlohmann::json::parse(sample_alert().to_json().dump());
  auto outside = base;
  outside["entities"][0]["label"] = "O";
  EXPECT_THROW(AlertRecord::from_json(outside), FormatError);
  auto past_end = base;
  past_end["entities"][0]["span"] = {8, 10};
  EXPECT_THROW(AlertRecord::from_json(past_end), FormatError);
  auto prob = base;
  prob["relevance"] = 1.5;
  EXPECT_THROW(AlertRecord::from_json(prob), FormatError);
  auto missing = base;
  missing.erase("ner_version");
  EXPECT_THROW(AlertRecord::from_json(missing), FormatError);
  std::istringstream garbage("{\"tweet_id\": 1}\n");
  EXPECT_THROW(read_alerts(garbage), FormatError);
}

// Small trained models over the synthetic corpora.
struct Models {
  Vocabulary classifier_vocab;
  ClassifierModel classifier;
  Vocabulary ner_vocab;
  NerModel ner;
};

const Models& models() {
  static const Models m = [] {
    const auto corpus = synthetic::relevance_corpus(300, 1);
    auto cvocab = build_vocabulary(corpus_tokens(corpus));
    const auto examples = encode_dataset(corpus, cvocab);
    ClassifierConfig cc;
    cc.embedding_dim = 8;
    cc.kernel_heights = {1, 2, 3};
    cc.filters_per_kernel = 8;
    TrainOptions options;
    options.policy.batch_size = 16;
    options.policy.max_epochs = 20;
    options.policy.patience = 3;
    options.adam.learning_rate = 0.01;
    auto classifier = train_classifier(ClassifierModel::create(cc, cvocab.word_count(), 2),
                                       examples, examples, options)
                          .model;

    const auto tagging = synthetic::tagging_corpus(80, 2);
    auto nvocab = build_vocabulary(corpus_tokens(tagging));
    const auto tagged = encode_dataset(tagging, nvocab);
    NerConfig nc;
    nc.word_dim = 8;
    nc.char_dim = 6;
    nc.char_hidden = 8;
    nc.word_hidden = 10;
    nc.dropout_after_char = false;
    nc.dropout_after_word = false;
    options.policy.max_epochs = 15;
    options.adam.learning_rate = 0.02;
    auto ner = train_ner(NerModel::create(nc, nvocab.word_count(), nvocab.char_count(), 3), tagged,
                         tagged, options)
                   .model;
    return Models{cvocab, classifier, nvocab, ner};
  }();
  return m;
}

KeywordSet keywords() {
  KeywordSet k;
  k.infrastructure_name = "A";
  k.keywords = {"apache", "linux", "tomcat", "nginx"};
  return k;
}

Pipeline make_pipeline(double threshold = kDefaultThreshold) {
  const auto& m = models();
  return Pipeline(keywords(), m.classifier, m.classifier_vocab, "c1", m.ner, m.ner_vocab, "n1",
                  threshold);
}

Tweet tweet(std::string id, std::string text) {
  Tweet t;
  t.id = std::move(id);
  t.account = "acct";
  t.posted_at = parse_timestamp("2017-03-01T12:00:00Z");
  t.text = std::move(text);
  return t;
}

TEST(Pipeline, NoKeywordIsFilteredOut) {
  PipelineSummary s;
  EXPECT_FALSE(make_pipeline().process(tweet("1", "new exploit for windows"), s));
  EXPECT_EQ(s.filtered_out, 1u);
  EXPECT_EQ(s.alerts, 0u);
}

TEST(Pipeline, ClassifierDecidesRelevance) {
  PipelineSummary s;
  const auto pipeline = make_pipeline();
  EXPECT_FALSE(pipeline.process(tweet("1", "apache team release today"), s));
  EXPECT_EQ(s.classified_irrelevant, 1u);
  const auto alert =
      pipeline.process(tweet("2", "Vuln: Apache Tomcat CVE-2016-6816 exploit https://t.co/PfOd"), s);
  ASSERT_TRUE(alert);
  EXPECT_EQ(s.alerts, 1u);
  EXPECT_EQ(alert->tweet_id, "2");
  EXPECT_EQ(alert->infrastructure, "A");
  EXPECT_EQ(alert->matched_keywords, (std::vector<std::string>{"apache", "tomcat"}));
  EXPECT_EQ(alert->classifier_version, "c1");
  EXPECT_EQ(alert->emitted_at, alert->posted_at);
  EXPECT_GE(alert->relevance, 0.5);
  EXPECT_EQ(alert->tokens.front(), "vuln:");
}

TEST(Pipeline, ThresholdOverride) {
  PipelineSummary s;
  const auto strict = make_pipeline(1.0).process(tweet("1", "apache exploit"), s);
  if (strict) {
    EXPECT_EQ(strict->relevance, 1.0);
  } else {
    EXPECT_EQ(s.classified_irrelevant, 1u);
  }
  PipelineSummary all;
  EXPECT_TRUE(make_pipeline(0.0).process(tweet("1", "apache team release today"), all));
  EXPECT_EQ(all.alerts, 1u);
}

std::string replay_csv(std::size_t n, std::uint64_t seed, std::size_t* malformed_rows) {
  const auto corpus = synthetic::relevance_corpus(n, seed);
  std::ostringstream csv;
  write_csv_row(csv, {"id", "account", "posted_at", "account_set", "text"});
  Rng rng(seed);
  *malformed_rows = 0;
  for (const auto& e : corpus.examples) {
    const auto& t = e.tweet;
    const double roll = rng.uniform();
    if (roll < 0.02) {
      write_csv_row(csv, {t.id, t.account, "yesterday", "S1", t.text});
      ++*malformed_rows;
    } else if (roll < 0.03) {
      write_csv_row(csv, {t.id, t.account});
      ++*malformed_rows;
    } else {
      // Drop the keyword from a share of tweets.
      std::string text = t.text;
      if (roll > 0.8) text = "nothing to see " + std::to_string(rng.index(100));
      write_csv_row(csv, {t.id, t.account, format_timestamp(t.posted_at), "S2", text});
    }
  }
  return csv.str();
}

TEST(Pipeline, CountConservationOnThousandTweetReplay) {
  std::size_t malformed = 0;
  std::istringstream input(replay_csv(1000, 7, &malformed));
  std::ostringstream sink;
  const auto summary = make_pipeline().run(input, sink, "replay.csv");
  EXPECT_EQ(summary.ingested, 1000u);
  EXPECT_EQ(summary.malformed, malformed);
  EXPECT_TRUE(summary.conserved()) << summary.to_json().dump();
  EXPECT_GT(summary.filtered_out, 0u);
  EXPECT_GT(summary.classified_irrelevant, 0u);
  EXPECT_GT(summary.alerts, 0u);

  std::istringstream written(sink.str());
  const auto alerts = read_alerts(written);
  EXPECT_EQ(alerts.size(), summary.alerts);
  for (const auto& a : alerts) {
    for (const auto& e : a.entities) {
      EXPECT_NE(e.label, "O");
      EXPECT_LT(e.begin, e.end);
      EXPECT_LE(e.end, a.tokens.size());
    }
  }
}

TEST(Pipeline, ConservationAcrossRandomReplays) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::size_t malformed = 0;
    Rng rng(seed);
    std::istringstream input(replay_csv(20 + rng.index(80), seed, &malformed));
    std::ostringstream sink;
    const auto summary = make_pipeline(rng.uniform()).run(input, sink);
    EXPECT_TRUE(summary.conserved()) << summary.to_json().dump();
    EXPECT_EQ(summary.malformed, malformed);
  }
}

TEST(Pipeline, ReplayIsByteIdentical) {
  std::size_t malformed = 0;
  const auto csv = replay_csv(300, 3, &malformed);
  std::istringstream a_in(csv), b_in(csv);
  std::ostringstream a_out, b_out;
  make_pipeline().run(a_in, a_out);
  make_pipeline().run(b_in, b_out);
  EXPECT_FALSE(a_out.str().empty());
  EXPECT_EQ(a_out.str(), b_out.str());
}

TEST(Pipeline, BadHeaderIsFatal) {
  std::istringstream input("id,text\n1,apache\n");
  std::ostringstream sink;
  EXPECT_THROW(make_pipeline().run(input, sink), FormatError);
  std::istringstream empty("");
  EXPECT_THROW(make_pipeline().run(empty, sink), FormatError);
}

TEST(Pipeline, UnterminatedQuoteCountsAsMalformed) {
  std::istringstream input(
      "id,account,posted_at,account_set,text\n"
      "1,a,2017-01-01,S1,apache exploit\n"
      "2,a,2017-01-01,S1,\"apache never closed\n");
  std::ostringstream sink;
  const auto summary = make_pipeline().run(input, sink);
  EXPECT_EQ(summary.ingested, 2u);
  EXPECT_EQ(summary.malformed, 1u);
  EXPECT_TRUE(summary.conserved());
}

class PipelineFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("threatlens_pipeline_" + std::string(::testing::UnitTest::GetInstance()
                                                     ->current_test_info()
                                                     ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const auto& m = models();
    save_checkpoint(dir_ / "classifier.ckpt", m.classifier.to_checkpoint(m.classifier_vocab.hash()));
    save_checkpoint(dir_ / "ner.ckpt", m.ner.to_checkpoint(m.ner_vocab.hash()));
    save_vocabulary(dir_ / "classifier.vocab.json", m.classifier_vocab);
    save_vocabulary(dir_ / "ner.vocab.json", m.ner_vocab);
    std::ofstream(dir_ / "keywords.txt") << "# infrastructure A\napache\nlinux\ntomcat\nnginx\n";
    std::size_t malformed = 0;
    std::ofstream(dir_ / "tweets.csv") << replay_csv(200, 5, &malformed);
  }
  void TearDown() override { fs::remove_all(dir_); }

  nlohmann::json config_json() const {
    return {{"keywords", "keywords.txt"},   {"infrastructure", "A"},
            {"classifier", "classifier.ckpt"}, {"classifier_vocab", "classifier.vocab.json"},
            {"ner", "ner.ckpt"},             {"ner_vocab", "ner.vocab.json"},
            {"input", "tweets.csv"},         {"output", "alerts.jsonl"}};
  }

  fs::path dir_;
};

TEST_F(PipelineFiles, RunsFromConfig) {
  const auto config = PipelineConfig::from_json(config_json(), dir_);
  const auto summary = run_pipeline(config);
  EXPECT_EQ(summary.ingested, 200u);
  EXPECT_TRUE(summary.conserved());
  std::ifstream alerts(dir_ / "alerts.jsonl");
  const auto records = read_alerts(alerts);
  EXPECT_EQ(records.size(), summary.alerts);
  ASSERT_FALSE(records.empty());
  const auto& m = models();
  EXPECT_EQ(records[0].classifier_version,
            m.classifier.to_checkpoint(m.classifier_vocab.hash()).content_hash());
}

TEST_F(PipelineFiles, VocabularyMismatchIsRefused) {
  auto json = config_json();
  json["classifier_vocab"] = "ner.vocab.json";
  EXPECT_THROW(Pipeline::load(PipelineConfig::from_json(json, dir_)), VocabularyMismatch);
}

TEST_F(PipelineFiles, ConfigErrors) {
  auto json = config_json();
  json["colour"] = "blue";
  EXPECT_THROW(PipelineConfig::from_json(json, dir_), ConfigError);
  json = config_json();
  json.erase("input");
  EXPECT_THROW(PipelineConfig::from_json(json, dir_), ConfigError);
  json = config_json();
  json["threshold"] = 2.0;
  EXPECT_THROW(PipelineConfig::from_json(json, dir_), ConfigError);
  json = config_json();
  json["input"] = "missing.csv";
  EXPECT_THROW(run_pipeline(PipelineConfig::from_json(json, dir_)), FormatError);
  json = config_json();
  json["ner"] = "classifier.ckpt";
  json["ner_vocab"] = "classifier.vocab.json";
  EXPECT_THROW(Pipeline::load(PipelineConfig::from_json(json, dir_)), CheckpointError);
}

}  // namespace
}  // namespace threatlens
