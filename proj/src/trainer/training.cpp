#include "threatlens/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "threatlens/errors.hpp"

namespace threatlens {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kStepStream = 0x5354;

using Snapshot = std::vector<std::vector<double>>;

Snapshot take_snapshot(const std::vector<NamedTensor>& params) {
  Snapshot snapshot;
  snapshot.reserve(params.size());
  for (const auto& p : params) {
    const auto values = p.tensor.values();
    snapshot.emplace_back(values.begin(), values.end());
  }
  return snapshot;
}

void restore_snapshot(const std::vector<NamedTensor>& params, const Snapshot& snapshot) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    t.assign(snapshot[i]);
  }
}

// Shuffles `examples` in place and feeds it batch by batch to `step`;
// returns the example-weighted mean loss.
template <typename Example, typename Step>
double run_epoch(std::vector<Example>& examples, std::size_t batch_size, std::uint64_t seed,
                 std::size_t epoch, Step step) {
  Rng shuffle_rng(mix_seed(mix_seed(seed, kShuffleStream), epoch));
  shuffle_rng.shuffle(examples);
  Rng step_rng(mix_seed(mix_seed(seed, kStepStream), epoch));
  double total = 0.0;
  for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    std::span<const Example> batch(examples.data() + begin, end - begin);
    total += step(batch, step_rng) * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(examples.size());
}

template <typename Example>
void check_splits(std::span<const Example> train, std::span<const Example> val) {
  if (train.empty()) throw InsufficientData("training split is empty");
  if (val.empty()) throw InsufficientData("validation split is empty");
}

}  // namespace

void EarlyStopPolicy::validate() const {
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

nlohmann::json EarlyStopPolicy::to_json() const {
  return {{"max_epochs", max_epochs}, {"batch_size", batch_size}, {"patience", patience}};
}

EarlyStopPolicy EarlyStopPolicy::from_json(const nlohmann::json& json) {
  EarlyStopPolicy policy;
  try {
    for (const auto& [key, value] : json.items()) {
      if (key == "max_epochs") {
        policy.max_epochs = value.get<std::size_t>();
      } else if (key == "batch_size") {
        policy.batch_size = value.get<std::size_t>();
      } else if (key == "patience") {
        policy.patience = value.get<std::size_t>();
      } else {
        throw ConfigError("unknown early-stopping key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad early-stopping policy: ") + e.what());
  }
  policy.validate();
  return policy;
}

nlohmann::json TrainingHistory::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"score", e.score},
                    {"improved", e.improved}});
  }
  return {{"best_epoch", best_epoch},
          {"best_score", best_score},
          {"stopped_early", stopped_early},
          {"epochs", rows}};
}

TrainingHistory run_early_stopping(const EarlyStopPolicy& policy, const EarlyStopHooks& hooks) {
  policy.validate();
  TrainingHistory history;
  history.best_score = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= policy.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = hooks.train_epoch(epoch);
    record.score = hooks.evaluate();
    if (std::isnan(record.score)) throw NumericError("validation score is NaN");
    record.improved = record.score > history.best_score;
    if (record.improved) {
      history.best_score = record.score;
      history.best_epoch = epoch;
      since_best = 0;
      hooks.save_best();
    } else {
      ++since_best;
    }
    history.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
    if (since_best >= policy.patience) {
      history.stopped_early = epoch < policy.max_epochs;
      break;
    }
  }
  hooks.restore_best();
  return history;
}

ClassifierRun train_classifier(ClassifierModel model, std::span<const ClassifierExample> train,
                               std::span<const ClassifierExample> val,
                               const TrainOptions& options) {
  check_splits(train, val);
  std::vector<ClassifierExample> order(train.begin(), train.end());
  AdamState adam;
  adam.options = options.adam;
  const auto params = model.parameters();
  Snapshot best;
  EarlyStopHooks hooks;
  hooks.train_epoch = [&](std::size_t epoch) {
    return run_epoch(order, options.policy.batch_size, options.seed, epoch,
                     [&](std::span<const ClassifierExample> batch, Rng& rng) {
                       return train_step(model, batch, adam, rng);
                     });
  };
  hooks.evaluate = [&] { return -evaluate_classifier(model, val).distance(); };
  hooks.save_best = [&] { best = take_snapshot(params); };
  hooks.restore_best = [&] {
    if (!best.empty()) restore_snapshot(params, best);
  };
  hooks.on_epoch = options.on_epoch;
  auto history = run_early_stopping(options.policy, hooks);
  return {std::move(model), std::move(history)};
}

NerRun train_ner(NerModel model, std::span<const NerExample> train, std::span<const NerExample> val,
                 const TrainOptions& options) {
  check_splits(train, val);
  std::vector<NerExample> order(train.begin(), train.end());
  AdamState adam;
  adam.options = options.adam;
  const auto params = model.parameters();
  Snapshot best;
  EarlyStopHooks hooks;
  hooks.train_epoch = [&](std::size_t epoch) {
    return run_epoch(order, options.policy.batch_size, options.seed, epoch,
                     [&](std::span<const NerExample> batch, Rng& rng) {
                       return train_step_ner(model, batch, adam, rng);
                     });
  };
  hooks.evaluate = [&] { return evaluate_ner(model, val).micro.f1; };
  hooks.save_best = [&] { best = take_snapshot(params); };
  hooks.restore_best = [&] {
    if (!best.empty()) restore_snapshot(params, best);
  };
  hooks.on_epoch = options.on_epoch;
  auto history = run_early_stopping(options.policy, hooks);
  return {std::move(model), std::move(history)};
}

ClassMetrics evaluate_classifier(const ClassifierModel& model,
                                 std::span<const ClassifierExample> examples, double threshold) {
  ClassMetrics m;
  for (const auto& example : examples) {
    m.add(predict(model, example.encoding, threshold), example.label == 1);
  }
  return m;
}

NerMetrics evaluate_ner(const NerModel& model, std::span<const NerExample> examples) {
  std::vector<std::vector<int>> gold, predicted;
  gold.reserve(examples.size());
  predicted.reserve(examples.size());
  for (const auto& example : examples) {
    gold.push_back(example.labels);
    predicted.push_back(predict_labels(model, example.encoding));
  }
  return ner_metrics(gold, predicted);
}

std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k must be at least 2");
  if (n < k) {
    throw InsufficientData("cannot split " + std::to_string(n) + " examples into " +
                           std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + next, order.begin() + next + size);
    next += size;
  }
  return folds;
}

CvSplit cv_split(const std::vector<std::vector<std::size_t>>& folds, std::size_t round) {
  const std::size_t k = folds.size();
  if (k < 3) throw ConfigError("cross-validation needs at least 3 folds");
  if (round >= k) throw IndexError("fold round out of range");
  CvSplit split;
  const std::size_t stop = (round + 1) % k;
  for (std::size_t f = 0; f < k; ++f) {
    auto& target = f == round ? split.held_out : f == stop ? split.early_stop : split.train;
    target.insert(target.end(), folds[f].begin(), folds[f].end());
  }
  return split;
}

}  // namespace threatlens
