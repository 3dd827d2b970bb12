#pragma once

// Generated corpora shared by the pipeline, CLI and acceptance tests.

#include <string>
#include <vector>

#include "threatlens/datasets.hpp"
#include "threatlens/tensor.hpp"

namespace threatlens::synthetic {

inline const std::vector<std::string>& triggers() {
  static const std::vector<std::string> words = {"exploit", "vulnerability", "overflow",
                                                 "backdoor", "rce",           "0day",
                                                 "xss",      "injection"};
  return words;
}

inline const std::vector<std::string>& infrastructure_words() {
  static const std::vector<std::string> words = {"apache", "tomcat", "linux", "windows",
                                                 "nginx",  "mysql",  "chrome", "openssl"};
  return words;
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = [] {
    const std::vector<std::string> stems = {
        "new",     "release", "update",  "team",    "today",  "server", "cloud",  "deploy",
        "config",  "version", "support", "feature", "guide",  "talk",   "blog",   "week",
        "install", "docs",    "user",    "project", "build",  "test",   "data",   "speed",
        "migrate", "network", "service", "event",   "launch", "review", "backup", "monitor"};
    std::vector<std::string> out = stems;
    for (const auto& s : stems) out.push_back(s + "s");
    return out;
  }();
  return words;
}

inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

// A tweet is relevant iff it contains a trigger word. Every tweet mentions an
// infrastructure word so it passes the keyword filter.
inline ClassificationDataset relevance_corpus(std::size_t n, std::uint64_t seed,
                                              const std::string& id_prefix = "t") {
  Rng rng(seed);
  const auto& fill = filler_words();
  const auto& infra = infrastructure_words();
  const auto& trig = triggers();
  ClassificationDataset data;
  data.name = "synthetic";
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = 6 + rng.index(14);
    std::vector<std::string> words;
    for (std::size_t t = 0; t < len; ++t) words.push_back(fill[rng.index(fill.size())]);
    words[rng.index(len)] = infra[rng.index(infra.size())];
    const int label = rng.bernoulli(0.5) ? 1 : 0;
    if (label) {
      const std::size_t count = 1 + rng.index(2);
      for (std::size_t c = 0; c < count; ++c) {
        words.insert(words.begin() + static_cast<long>(rng.index(words.size() + 1)),
                     trig[rng.index(trig.size())]);
      }
    }
    if (rng.bernoulli(0.3)) words.push_back("https://t.co/x" + std::to_string(i));
    LabeledTweet example;
    example.tweet.id = id_prefix + std::to_string(i);
    example.tweet.account = "acct" + std::to_string(rng.index(20));
    example.tweet.posted_at = parse_timestamp("2017-01-01") + std::chrono::hours(i);
    example.tweet.account_set = AccountSet::S1;
    example.tweet.text = join(words);
    example.label = label;
    data.examples.push_back(std::move(example));
  }
  return data;
}

struct Phrase {
  std::vector<std::string> words;
  int label;
};

inline std::string random_cve(Rng& rng) {
  std::string digits = std::to_string(1000 + rng.index(9000));
  if (rng.bernoulli(0.3)) digits += std::to_string(rng.index(10));
  return "cve-" + std::to_string(2014 + rng.index(6)) + "-" + digits;
}

// Sentences shaped like "vuln: <PRO> <ID> <VUL...> <link>", with optional
// ORG and VER phrases. IDs are random so they are mostly unseen words.
inline NerDataset tagging_corpus(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::vector<std::string>> products = {
      {"apache", "tomcat"}, {"linux", "kernel"}, {"broadcom"},       {"vmware", "player"},
      {"mysql"},            {"openssl"},         {"nginx"},          {"red", "hat"},
      {"chrome"},           {"php"},             {"wordpress"},      {"cisco", "ios"}};
  static const std::vector<std::vector<std::string>> vulns = {
      {"security", "bypass", "vulnerability"},
      {"local", "denial", "of", "service", "vulnerability"},
      {"remote", "code", "execution", "vulnerability"},
      {"stack-based", "buffer", "overflow", "vulnerability"},
      {"privilege", "escalation", "vulnerability"},
      {"memory", "corruption", "vulnerability"},
      {"cross", "site", "scripting", "vulnerability"},
      {"information", "disclosure", "vulnerability"}};
  static const std::vector<std::string> orgs = {"microsoft", "google", "oracle", "adobe", "ibm"};
  Rng rng(seed);
  NerDataset data;
  data.name = "synthetic";
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Phrase> phrases;
    phrases.push_back({{"vuln:"}, 0});
    if (rng.bernoulli(0.3)) phrases.push_back({{orgs[rng.index(orgs.size())]}, 1});
    phrases.push_back({products[rng.index(products.size())], 2});
    if (rng.bernoulli(0.3)) {
      phrases.push_back({{std::to_string(1 + rng.index(20)) + "." + std::to_string(rng.index(10))},
                         3});
    }
    phrases.push_back({{random_cve(rng)}, 5});
    phrases.push_back({vulns[rng.index(vulns.size())], 4});
    if (rng.bernoulli(0.5)) phrases.push_back({{"patch", "now"}, 0});
    NerSentence sentence;
    for (const auto& p : phrases) {
      for (const auto& w : p.words) {
        sentence.tokens.push_back(w);
        sentence.labels.push_back(p.label);
      }
    }
    data.sentences.push_back(std::move(sentence));
  }
  return data;
}

}  // namespace threatlens::synthetic
