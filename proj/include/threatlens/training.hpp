#pragma once

// Mini-batch Adam training with validation early stopping, k-fold splits
// and evaluation.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "threatlens/adam.hpp"
#include "threatlens/classifier.hpp"
#include "threatlens/metrics.hpp"
#include "threatlens/ner.hpp"

namespace threatlens {

struct EarlyStopPolicy {
  std::size_t max_epochs = 100;
  std::size_t batch_size = 256;
  std::size_t patience = 10;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static EarlyStopPolicy from_json(const nlohmann::json& json);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double score = 0.0;  // monitored metric, higher is better
  bool improved = false;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_score = 0.0;
  bool stopped_early = false;

  nlohmann::json to_json() const;
};

struct EarlyStopHooks {
  std::function<double(std::size_t epoch)> train_epoch;  // returns mean loss
  std::function<double()> evaluate;
  std::function<void()> save_best;
  std::function<void()> restore_best;
  std::function<void(const EpochRecord&)> on_epoch;  // optional
};

// Runs epochs until max_epochs, or until `patience` consecutive epochs fail
// to strictly improve on the best score; the best snapshot is restored
// before returning.
TrainingHistory run_early_stopping(const EarlyStopPolicy& policy, const EarlyStopHooks& hooks);

struct TrainOptions {
  EarlyStopPolicy policy;
  AdamOptions adam;
  std::uint64_t seed = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Monitored score: -distance to (1, 1) on `val`.
struct ClassifierRun {
  ClassifierModel model;
  TrainingHistory history;
};
ClassifierRun train_classifier(ClassifierModel model, std::span<const ClassifierExample> train,
                               std::span<const ClassifierExample> val,
                               const TrainOptions& options);

// Monitored score: micro-F1 on `val`.
struct NerRun {
  NerModel model;
  TrainingHistory history;
};
NerRun train_ner(NerModel model, std::span<const NerExample> train,
                 std::span<const NerExample> val, const TrainOptions& options);

ClassMetrics evaluate_classifier(const ClassifierModel& model,
                                 std::span<const ClassifierExample> examples,
                                 double threshold = kDefaultThreshold);
NerMetrics evaluate_ner(const NerModel& model, std::span<const NerExample> examples);

// Shuffles 0..n-1 under `seed` and deals it into k folds whose sizes differ
// by at most one (the first n % k folds get the extra index). Throws
// InsufficientData when n < k.
std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t k, std::uint64_t seed);

// Round i of cross-validation: fold i is held out for scoring, fold
// (i + 1) % k drives early stopping and the rest is trained on.
struct CvSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> early_stop;
  std::vector<std::size_t> held_out;
};
CvSplit cv_split(const std::vector<std::vector<std::size_t>>& folds, std::size_t round);

template <typename T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(items[i]);
  return out;
}

}  // namespace threatlens
