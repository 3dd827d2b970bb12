// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits non-zero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "synthetic.hpp"
#include "threatlens/checkpoint.hpp"
#include "threatlens/classifier.hpp"
#include "threatlens/crf.hpp"
#include "threatlens/datasets.hpp"
#include "threatlens/gradcheck.hpp"
#include "threatlens/lstm.hpp"
#include "threatlens/ner.hpp"
#include "threatlens/ops.hpp"
#include "threatlens/pipeline.hpp"
#include "threatlens/training.hpp"

namespace threatlens {
namespace {

namespace fs = std::filesystem;

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

Outcome pass(std::string detail) { return {Status::pass, std::move(detail)}; }
Outcome fail(std::string detail) { return {Status::fail, std::move(detail)}; }
Outcome skip(std::string detail) { return {Status::skip, std::move(detail)}; }

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

// Tolerances and targets.
constexpr double kOracleTolerance = 1e-9;
constexpr double kGradTolerance = 1e-4;
constexpr std::uint64_t kGradSeeds = 20;
constexpr double kSyntheticRateTarget = 0.98;
constexpr double kSyntheticF1Target = 0.95;
constexpr double kPublishedRateTolerance = 0.07;
constexpr double kPublishedF1Tolerance = 0.05;
constexpr double kPublishedCnnTpr = 0.916;
constexpr double kPublishedCnnTnr = 0.904;
constexpr double kPublishedNerF1 = 0.932;
constexpr std::uint64_t kSeed = 20170131;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  t.set_requires_grad(true);
  return t;
}

// ---------------------------------------------------------------------------
// 1. CRF against exhaustive enumeration

Outcome crf_oracle() {
  Rng rng(kSeed);
  double worst_z = 0.0, worst_v = 0.0;
  std::size_t path_mismatch = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(5), m = 1 + rng.index(4);
    Tensor e({n, m});
    for (double& v : e.values()) v = rng.uniform(-3, 3);
    CrfParams crf = CrfParams::zeros(m);
    for (double& v : crf.transitions.values()) v = rng.uniform(-3, 3);

    std::vector<int> labels(n, 0);
    std::vector<double> scores;
    double best = -INFINITY;
    while (true) {
      const double s = sequence_score(e, labels, crf);
      scores.push_back(s);
      best = std::max(best, s);
      std::size_t i = 0;
      while (i < n && ++labels[i] == static_cast<int>(m)) labels[i++] = 0;
      if (i == n) break;
    }
    worst_z = std::max(worst_z, std::abs(log_partition(e, crf) - ops::logsumexp(scores)));
    const auto v = viterbi(e, crf);
    worst_v = std::max(worst_v, std::abs(v.score - best));
    if (std::abs(sequence_score(e, v.labels, crf) - v.score) > kOracleTolerance) ++path_mismatch;
  }
  const std::string detail = "500 instances, max |logZ err| " + fmt(worst_z) +
                             ", max |viterbi err| " + fmt(worst_v) + ", path mismatches " +
                             std::to_string(path_mismatch);
  if (worst_z <= kOracleTolerance && worst_v <= kOracleTolerance && path_mismatch == 0) {
    return pass(detail);
  }
  return fail(detail);
}

// ---------------------------------------------------------------------------
// 2. Gradient checks

double worst_over_seeds(const std::function<double(Rng&, std::uint64_t)>& one) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
    Rng rng(mix_seed(kSeed, seed));
    worst = std::max(worst, one(rng, seed));
  }
  return worst;
}

SentenceEncoding random_encoding(Rng& rng, std::size_t words, std::size_t chars, std::size_t n) {
  SentenceEncoding enc;
  for (std::size_t t = 0; t < n; ++t) {
    enc.word_ids.push_back(static_cast<int>(rng.index(words)));
    std::vector<int> cs(1 + rng.index(4));
    for (int& c : cs) c = static_cast<int>(rng.index(chars));
    enc.char_ids.push_back(cs);
  }
  return enc;
}

Outcome gradient_checks() {
  std::vector<std::pair<std::string, double>> results;

  results.emplace_back("classifier", worst_over_seeds([](Rng& rng, std::uint64_t seed) {
    ClassifierConfig config;
    config.embedding_dim = 1 + rng.index(4);
    config.kernel_heights = {1, 2 + rng.index(2)};
    config.filters_per_kernel = 1 + rng.index(3);
    config.dropout_p = 0.5;
    auto model = ClassifierModel::create(config, 7, seed);
    for (double& v : model.output_bias().values()) v = rng.uniform(-0.5, 0.5);
    const ClassifierExample example{random_encoding(rng, 7, 3, 1 + rng.index(5)),
                                    static_cast<int>(rng.index(2))};
    auto params = model.trainable_parameters();
    return grad_check(
               [&](Tape& tape) { return classifier_loss(tape, model, example, Mode::train, 99); },
               params)
        .max_relative_error;
  }));

  results.emplace_back("ner", worst_over_seeds([](Rng& rng, std::uint64_t seed) {
    NerConfig config;
    config.word_dim = 1 + rng.index(3);
    config.char_dim = 1 + rng.index(3);
    config.char_hidden = 1 + rng.index(2);
    config.word_hidden = 1 + rng.index(2);
    config.dropout_after_char = seed % 2 == 0;
    config.dropout_after_word = seed % 3 == 0;
    auto model = NerModel::create(config, 6, 5, seed);
    for (double& v : model.crf.transitions.values()) v = rng.uniform(-0.5, 0.5);
    NerExample example{random_encoding(rng, 6, 5, 1 + rng.index(4)), {}};
    for (std::size_t t = 0; t < example.encoding.size(); ++t) {
      example.labels.push_back(static_cast<int>(rng.index(LabelSet::size)));
    }
    auto params = tensors_of(model.parameters());
    return grad_check([&](Tape& tape) { return ner_loss(tape, model, example, Mode::train, 7); },
                      params)
        .max_relative_error;
  }));

  results.emplace_back("lstm_step", worst_over_seeds([](Rng& rng, std::uint64_t) {
    const std::size_t in = 1 + rng.index(4), hid = 1 + rng.index(3);
    auto cell = LstmCell::create(in, hid, rng);
    Tensor x = random_tensor({in}, rng), h = random_tensor({hid}, rng), c = random_tensor({hid}, rng);
    Tensor wh = random_tensor({hid}, rng), wc = random_tensor({hid}, rng);
    std::vector<Tensor> params = {cell.weights, cell.bias, x, h, c};
    return grad_check(
               [&](Tape& tape) {
                 auto next = lstm_step(tape, cell, x, h, c);
                 return ops::add(tape, ops::sum(tape, ops::mul(tape, next.h, wh)),
                                 ops::sum(tape, ops::mul(tape, next.c, wc)));
               },
               params)
        .max_relative_error;
  }));

  results.emplace_back("conv_text", worst_over_seeds([](Rng& rng, std::uint64_t seed) {
    const std::size_t d = 1 + rng.index(4), h = 1 + rng.index(3), n = h + rng.index(4);
    const std::size_t f = 1 + rng.index(3);
    Tensor s = random_tensor({n, d}, rng), w = random_tensor({f, h, d}, rng);
    Tensor b = random_tensor({f}, rng), probe = random_tensor({n - h + 1, f}, rng);
    const auto act = seed % 2 ? ops::Activation::tanh : ops::Activation::identity;
    std::vector<Tensor> params = {s, w, b};
    return grad_check(
               [&](Tape& tape) {
                 return ops::sum(tape, ops::mul(tape, ops::conv_text(tape, s, w, b, act), probe));
               },
               params)
        .max_relative_error;
  }));

  results.emplace_back("softmax_xent", worst_over_seeds([](Rng& rng, std::uint64_t) {
    const std::size_t m = 2 + rng.index(5);
    Tensor logits = random_tensor({m}, rng, 3.0);
    const std::size_t target = rng.index(m);
    std::vector<Tensor> params = {logits};
    return grad_check([&](Tape& tape) { return ops::softmax_xent(tape, logits, target).loss; },
                      params)
        .max_relative_error;
  }));

  std::string detail = std::to_string(kGradSeeds) + " seeds each, max rel err:";
  bool ok = true;
  for (const auto& [name, err] : results) {
    detail += " " + name + "=" + fmt(err);
    ok = ok && err < kGradTolerance;
  }
  return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------------------
// 3. Shapes and conservation

Outcome shapes_and_conservation() {
  Rng rng(kSeed);
  std::size_t conv_bad = 0;
  Tape tape(false);
  for (std::size_t n = 1; n <= 20; ++n) {
    for (std::size_t h = 1; h <= n; ++h) {
      Tensor s({n, 3}, 0.1), w({2, h, 3}, 0.1), b({2});
      const auto out = ops::conv_text(tape, s, w, b, ops::Activation::relu);
      if (out.dim(0) != n - h + 1) ++conv_bad;
    }
  }
  double softmax_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> logits(1 + rng.index(10));
    for (double& v : logits) v = rng.uniform(-50, 50);
    double total = 0.0;
    for (double p : ops::softmax(logits)) total += p;
    softmax_err = std::max(softmax_err, std::abs(total - 1.0));
  }
  std::size_t dropout_bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor({1 + rng.index(20)}, rng);
    const auto y = ops::dropout(tape, x, 0.5, Mode::infer, rng);
    if (!std::equal(x.values().begin(), x.values().end(), y.values().begin())) ++dropout_bad;
  }

  // Pipeline replay: 1000 synthetic tweets with malformed and off-topic rows.
  const auto corpus = synthetic::relevance_corpus(1000, kSeed);
  std::ostringstream csv;
  write_csv_row(csv, {"id", "account", "posted_at", "account_set", "text"});
  std::size_t malformed = 0;
  for (const auto& e : corpus.examples) {
    const double roll = rng.uniform();
    if (roll < 0.02) {
      write_csv_row(csv, {e.tweet.id, e.tweet.account, "not-a-date", "S1", e.tweet.text});
      ++malformed;
    } else {
      const std::string text = roll > 0.8 ? "weekend plans" : e.tweet.text;
      write_csv_row(csv, {e.tweet.id, e.tweet.account, format_timestamp(e.tweet.posted_at), "S1",
                          text});
    }
  }
  const auto vocab = build_vocabulary(corpus_tokens(corpus));
  ClassifierConfig cc;
  cc.embedding_dim = 4;
  cc.kernel_heights = {1, 2};
  cc.filters_per_kernel = 3;
  NerConfig nc;
  nc.word_dim = 4;
  nc.char_dim = 3;
  nc.char_hidden = 3;
  nc.word_hidden = 3;
  KeywordSet keywords;
  keywords.keywords = {"apache", "linux", "nginx"};
  const Pipeline pipeline(keywords, ClassifierModel::create(cc, vocab.word_count(), 1), vocab, "c",
                          NerModel::create(nc, vocab.word_count(), vocab.char_count(), 2), vocab,
                          "n");
  std::istringstream input(csv.str());
  std::ostringstream sink;
  const auto summary = pipeline.run(input, sink);

  const std::string detail =
      "conv length mismatches " + std::to_string(conv_bad) + " over 1<=h<=n<=20, softmax max |sum-1| " +
      fmt(softmax_err) + ", dropout infer mismatches " + std::to_string(dropout_bad) +
      ", replay " + summary.to_json().dump() + (summary.conserved() ? " conserved" : " NOT conserved");
  const bool ok = conv_bad == 0 && softmax_err < 1e-12 && dropout_bad == 0 &&
                  summary.conserved() && summary.ingested == 1000 && summary.malformed == malformed;
  return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------------------
// 4, 6, 7. Synthetic end-to-end learning, determinism, checkpoint round trip

struct SyntheticRun {
  ClassMetrics cnn;
  std::size_t cnn_epochs = 0;
  NerMetrics ner;
  std::size_t ner_epochs = 0;
  ClassifierModel cnn_model;
  std::vector<ClassifierExample> cnn_test;
  NerModel ner_model;
  std::vector<NerExample> ner_test;
  Vocabulary cnn_vocab, ner_vocab;
};

SyntheticRun synthetic_run() {
  SyntheticRun run{};
  const auto corpus = synthetic::relevance_corpus(2000, kSeed);
  ClassificationDataset train, val, test;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    (i < 1200 ? train : i < 1500 ? val : test).examples.push_back(corpus.examples[i]);
  }
  run.cnn_vocab = build_vocabulary(corpus_tokens(train));
  ClassifierConfig config;  // [3,5,7] / 128 / 0.5, random d=100
  TrainOptions options;     // 100 epochs, batch 256, patience 10, default Adam
  options.seed = kSeed;
  auto cnn = train_classifier(ClassifierModel::create(config, run.cnn_vocab.word_count(), kSeed),
                              encode_dataset(train, run.cnn_vocab),
                              encode_dataset(val, run.cnn_vocab), options);
  run.cnn_test = encode_dataset(test, run.cnn_vocab);
  run.cnn = evaluate_classifier(cnn.model, run.cnn_test);
  run.cnn_epochs = cnn.history.epochs.size();
  run.cnn_model = std::move(cnn.model);

  const auto tagging = synthetic::tagging_corpus(800, kSeed);
  NerDataset ntrain, nval, ntest;
  for (std::size_t i = 0; i < tagging.sentences.size(); ++i) {
    (i < 500 ? ntrain : i < 600 ? nval : ntest).sentences.push_back(tagging.sentences[i]);
  }
  run.ner_vocab = build_vocabulary(corpus_tokens(ntrain));
  NerConfig nconfig;  // 100 / 25 / 100 / 100, both dropouts
  TrainOptions noptions;
  noptions.seed = kSeed;
  noptions.policy.batch_size = 32;
  auto ner = train_ner(
      NerModel::create(nconfig, run.ner_vocab.word_count(), run.ner_vocab.char_count(), kSeed),
      encode_dataset(ntrain, run.ner_vocab), encode_dataset(nval, run.ner_vocab), noptions);
  run.ner_test = encode_dataset(ntest, run.ner_vocab);
  run.ner = evaluate_ner(ner.model, run.ner_test);
  run.ner_epochs = ner.history.epochs.size();
  run.ner_model = std::move(ner.model);
  return run;
}

Outcome synthetic_learning(const SyntheticRun& run) {
  const std::string detail = "CNN test TPR " + fmt(run.cnn.tpr()) + " TNR " + fmt(run.cnn.tnr()) +
                             " (" + std::to_string(run.cnn_epochs) + " epochs); NER test micro-F1 " +
                             fmt(run.ner.micro.f1) + " (" + std::to_string(run.ner_epochs) +
                             " epochs)";
  const bool ok = run.cnn.tpr() >= kSyntheticRateTarget && run.cnn.tnr() >= kSyntheticRateTarget &&
                  run.ner.micro.f1 >= kSyntheticF1Target;
  return ok ? pass(detail) : fail(detail);
}

Outcome determinism(const SyntheticRun& a, const SyntheticRun& b) {
  const bool same_metrics = a.cnn.to_json() == b.cnn.to_json() &&
                            a.ner.to_json() == b.ner.to_json() && a.cnn_epochs == b.cnn_epochs &&
                            a.ner_epochs == b.ner_epochs;

  // Two replays through the trained models.
  const auto corpus = synthetic::relevance_corpus(400, kSeed + 1);
  std::ostringstream csv;
  write_classification_csv(csv, corpus);
  KeywordSet keywords;
  keywords.infrastructure_name = "A";
  keywords.keywords = {"apache", "linux", "tomcat"};
  auto replay = [&](const SyntheticRun& run) {
    const Pipeline pipeline(keywords, run.cnn_model, run.cnn_vocab, "c", run.ner_model,
                            run.ner_vocab, "n");
    std::istringstream input(csv.str());
    std::ostringstream sink;
    pipeline.run(input, sink);
    return sink.str();
  };
  const auto first = replay(a), second = replay(a), third = replay(b);
  const bool same_alerts = first == second && first == third && !first.empty();
  const std::string detail = std::string("metrics ") + (same_metrics ? "identical" : "differ") +
                             " across two seeded runs; alert files " +
                             (same_alerts ? "byte-identical" : "differ") + " (" +
                             std::to_string(first.size()) + " bytes)";
  return same_metrics && same_alerts ? pass(detail) : fail(detail);
}

Outcome checkpoint_round_trip(const SyntheticRun& run) {
  const fs::path dir = fs::temp_directory_path() / "threatlens_acceptance";
  fs::create_directories(dir);
  save_checkpoint(dir / "cnn.ckpt", run.cnn_model.to_checkpoint(run.cnn_vocab.hash()));
  save_checkpoint(dir / "ner.ckpt", run.ner_model.to_checkpoint(run.ner_vocab.hash()));
  const auto cnn = ClassifierModel::from_checkpoint(load_checkpoint(dir / "cnn.ckpt"));
  const auto ner = NerModel::from_checkpoint(load_checkpoint(dir / "ner.ckpt"));
  fs::remove_all(dir);

  const auto cnn_metrics = evaluate_classifier(cnn, run.cnn_test);
  const auto ner_metrics = evaluate_ner(ner, run.ner_test);
  bool same_probs = true;
  for (const auto& e : run.cnn_test) {
    same_probs = same_probs && relevance_probability(cnn, e.encoding) ==
                                   relevance_probability(run.cnn_model, e.encoding);
  }
  const bool ok = cnn_metrics.to_json() == run.cnn.to_json() &&
                  ner_metrics.to_json() == run.ner.to_json() && same_probs;
  return ok ? pass("reloaded CNN and NER reproduce test metrics and probabilities bit-exactly")
            : fail("reloaded models give different metrics");
}

// ---------------------------------------------------------------------------
// 5. Published-dataset reproduction

Outcome published_reproduction() {
  const char* root = std::getenv("THREATLENS_DATASET_DIR");
  if (!root) return skip("published dataset unavailable (set THREATLENS_DATASET_DIR)");
  const fs::path dir(root);
  for (const char* name : {"A1.csv", "A2.csv", "A1.conll", "A2.conll"}) {
    if (!fs::exists(dir / name)) {
      return skip(std::string("published dataset incomplete: missing ") + name);
    }
  }
  const auto a1 = load_classification_csv(dir / "A1.csv");
  const auto a2 = load_classification_csv(dir / "A2.csv");
  const auto vocab = build_vocabulary(corpus_tokens(a1));
  TrainOptions options;
  options.seed = kSeed;
  auto cnn = train_classifier(ClassifierModel::create({}, vocab.word_count(), kSeed),
                              encode_dataset(a1, vocab), encode_dataset(a2, vocab), options);
  const auto m = evaluate_classifier(cnn.model, encode_dataset(a2, vocab));

  const auto n1 = load_conll(dir / "A1.conll");
  const auto n2 = load_conll(dir / "A2.conll");
  const auto nvocab = build_vocabulary(corpus_tokens(n1));
  const std::size_t no_limit = std::numeric_limits<std::size_t>::max();
  const auto n2_examples = encode_dataset(n2, nvocab, no_limit);
  auto ner = train_ner(NerModel::create({}, nvocab.word_count(), nvocab.char_count(), kSeed),
                       encode_dataset(n1, nvocab, no_limit), n2_examples, options);
  const double f1 = evaluate_ner(ner.model, n2_examples).micro.f1;

  const std::string detail = "A2 TPR " + fmt(m.tpr()) + " TNR " + fmt(m.tnr()) + " NER F1 " +
                             fmt(f1);
  const bool ok = std::abs(m.tpr() - kPublishedCnnTpr) <= kPublishedRateTolerance &&
                  std::abs(m.tnr() - kPublishedCnnTnr) <= kPublishedRateTolerance &&
                  std::abs(f1 - kPublishedNerF1) <= kPublishedF1Tolerance;
  return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------------------

bool report(int number, const std::string& name, const Outcome& outcome, double seconds) {
  static const char* const labels[] = {"PASS", "FAIL", "SKIP"};
  std::cout << labels[static_cast<int>(outcome.status)] << " criterion " << number << " (" << name
            << "): " << outcome.detail << " [" << fmt(seconds) << " s]" << std::endl;
  return outcome.status != Status::fail;
}

template <typename F>
bool timed(int number, const std::string& name, F&& run) {
  const auto start = std::chrono::steady_clock::now();
  Outcome outcome;
  try {
    outcome = run();
  } catch (const std::exception& e) {
    outcome = fail(std::string("exception: ") + e.what());
  }
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return report(number, name, outcome, elapsed.count());
}

}  // namespace
}  // namespace threatlens

int main() {
  using namespace threatlens;
  spdlog::set_level(spdlog::level::off);
  bool ok = true;
  ok &= timed(1, "CRF oracle", crf_oracle);
  ok &= timed(2, "gradient checks", gradient_checks);
  ok &= timed(3, "shapes and conservation", shapes_and_conservation);

  std::optional<SyntheticRun> first, second;
  ok &= timed(4, "synthetic end-to-end learning", [&] {
    first = synthetic_run();
    return synthetic_learning(*first);
  });
  ok &= timed(5, "published-dataset reproduction", published_reproduction);
  ok &= timed(6, "determinism", [&] {
    if (!first) return fail("criterion 4 did not produce models");
    second = synthetic_run();
    return determinism(*first, *second);
  });
  ok &= timed(7, "checkpoint round trip", [&] {
    if (!first) return fail("criterion 4 did not produce models");
    return checkpoint_round_trip(*first);
  });
  return ok ? 0 : 1;
}
