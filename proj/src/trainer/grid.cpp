#include "threatlens/grid.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <thread>

#include "threatlens/digest.hpp"
#include "threatlens/errors.hpp"

namespace threatlens {

namespace {

constexpr std::uint64_t kFoldStream = 0x464f;
constexpr std::uint64_t kModelStream = 0x4d44;
constexpr std::uint64_t kTrainStream = 0x5452;

template <typename T>
void read_list(const nlohmann::json& json, const char* key, std::vector<T>& target) {
  if (!json.contains(key)) return;
  target = json.at(key).get<std::vector<T>>();
  if (target.empty()) throw ConfigError(std::string("grid list '") + key + "' is empty");
}

void check_keys(const nlohmann::json& json, std::initializer_list<const char*> allowed) {
  if (!json.is_object()) throw ConfigError("grid must be a JSON object");
  for (const auto& [key, value] : json.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown grid key '" + key + "'");
    }
  }
}

struct FoldOutcome {
  nlohmann::json metrics;
  std::vector<double> values;  // task-specific numbers averaged across folds
};

// Evaluates every config on every CV round. `run_fold(config, round)`
// returns the round's outcome; `summarize(means)` turns the averaged values
// into (mean json, score).
template <typename Config, typename RunFold, typename Summarize>
std::vector<GridRow> run_grid(const std::vector<Config>& configs, std::size_t rounds,
                              const GridOptions& options, RunFold run_fold, Summarize summarize) {
  std::vector<GridRow> rows(configs.size());
  std::mutex mutex;
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      GridRow row;
      row.index = i;
      row.config = configs[i].to_json();
      row.config_hash = config_hash(row.config);
      try {
        configs[i].validate();
        std::vector<double> sums;
        for (std::size_t r = 0; r < rounds; ++r) {
          FoldOutcome fold = run_fold(configs[i], r);
          if (sums.empty()) sums.assign(fold.values.size(), 0.0);
          for (std::size_t v = 0; v < sums.size(); ++v) sums[v] += fold.values[v];
          row.folds.push_back(std::move(fold.metrics));
        }
        for (double& s : sums) s /= static_cast<double>(rounds);
        std::tie(row.mean, row.score) = summarize(sums);
      } catch (const std::exception& e) {
        row.folds.clear();
        row.mean = nullptr;
        row.score = 0.0;
        row.error = e.what();
      }
      std::lock_guard lock(mutex);
      rows[i] = std::move(row);
      if (options.on_row) options.on_row(rows[i]);
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, configs.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const bool fa = !rows[a].error.empty(), fb = !rows[b].error.empty();
    if (fa != fb) return fb;
    if (fa) return false;
    return rows[a].score > rows[b].score;
  });
  for (std::size_t r = 0; r < order.size(); ++r) rows[order[r]].rank = r + 1;
  return rows;
}

TrainOptions fold_train_options(const GridOptions& options, std::size_t round) {
  TrainOptions train;
  train.policy = options.policy;
  train.adam = options.adam;
  train.seed = mix_seed(mix_seed(options.seed, kTrainStream), round);
  return train;
}

}  // namespace

std::string to_string(HeightScheme scheme) {
  switch (scheme) {
    case HeightScheme::sequential: return "sequential";
    case HeightScheme::odd: return "odd";
    case HeightScheme::even: return "even";
  }
  return "?";
}

HeightScheme parse_height_scheme(const std::string& text) {
  if (text == "sequential") return HeightScheme::sequential;
  if (text == "odd") return HeightScheme::odd;
  if (text == "even") return HeightScheme::even;
  throw ConfigError("height scheme must be sequential, odd or even, got '" + text + "'");
}

std::vector<std::size_t> kernel_heights(HeightScheme scheme, std::size_t count) {
  std::vector<std::size_t> heights(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (scheme) {
      case HeightScheme::sequential: heights[i] = 2 + i; break;
      case HeightScheme::odd: heights[i] = 3 + 2 * i; break;
      case HeightScheme::even: heights[i] = 2 + 2 * i; break;
    }
  }
  return heights;
}

ClassifierGrid ClassifierGrid::full(EmbeddingInit init) {
  ClassifierGrid grid;
  grid.embedding_init = init;
  grid.embedding_dims = init == EmbeddingInit::pretrained ? std::vector<std::size_t>{300}
                                                          : std::vector<std::size_t>{100, 200, 300};
  grid.kernel_counts = {3, 4, 5, 6};
  grid.height_schemes = {HeightScheme::sequential, HeightScheme::odd, HeightScheme::even};
  grid.filters = {64, 128, 192, 256};
  grid.dropouts = {0.3, 0.5, 0.6};
  return grid;
}

std::vector<ClassifierConfig> ClassifierGrid::configs() const {
  std::vector<ClassifierConfig> out;
  for (std::size_t d : embedding_dims) {
    for (std::size_t k : kernel_counts) {
      for (HeightScheme scheme : height_schemes) {
        for (std::size_t f : filters) {
          for (double p : dropouts) {
            ClassifierConfig c;
            c.embedding_dim = d;
            c.embedding_init = embedding_init;
            c.kernel_heights = kernel_heights(scheme, k);
            c.filters_per_kernel = f;
            c.dropout_p = p;
            out.push_back(std::move(c));
          }
        }
      }
    }
  }
  return out;
}

nlohmann::json ClassifierGrid::to_json() const {
  std::vector<std::string> schemes;
  for (auto s : height_schemes) schemes.push_back(to_string(s));
  return {{"task", "classifier"},
          {"embedding_init", to_string(embedding_init)},
          {"embedding_dims", embedding_dims},
          {"kernel_counts", kernel_counts},
          {"height_schemes", schemes},
          {"filters", filters},
          {"dropouts", dropouts}};
}

ClassifierGrid ClassifierGrid::from_json(const nlohmann::json& json) {
  check_keys(json, {"task", "embedding_init", "embedding_dims", "kernel_counts",
                    "height_schemes", "filters", "dropouts"});
  try {
    if (json.contains("task") && json.at("task") != "classifier") {
      throw ConfigError("grid task is not 'classifier'");
    }
    const auto init = json.contains("embedding_init")
                          ? parse_embedding_init(json.at("embedding_init").get<std::string>())
                          : EmbeddingInit::random;
    ClassifierGrid grid = full(init);
    read_list(json, "embedding_dims", grid.embedding_dims);
    read_list(json, "kernel_counts", grid.kernel_counts);
    std::vector<std::string> schemes;
    read_list(json, "height_schemes", schemes);
    if (!schemes.empty()) {
      grid.height_schemes.clear();
      for (const auto& s : schemes) grid.height_schemes.push_back(parse_height_scheme(s));
    }
    read_list(json, "filters", grid.filters);
    read_list(json, "dropouts", grid.dropouts);
    return grid;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad classifier grid: ") + e.what());
  }
}

NerGrid NerGrid::full(EmbeddingInit init) {
  NerGrid grid;
  grid.embedding_init = init;
  grid.word_dims = init == EmbeddingInit::pretrained ? std::vector<std::size_t>{300}
                                                     : std::vector<std::size_t>{100, 200, 300};
  grid.char_dims = {25, 50, 100};
  grid.char_hiddens = {100, 200, 300};
  grid.word_hiddens = {100, 200, 300};
  grid.placements = {{false, false}, {true, false}, {false, true}, {true, true}};
  return grid;
}

std::vector<NerConfig> NerGrid::configs() const {
  std::vector<NerConfig> out;
  for (std::size_t wd : word_dims) {
    for (std::size_t cd : char_dims) {
      for (std::size_t ch : char_hiddens) {
        for (std::size_t wh : word_hiddens) {
          for (const auto& placement : placements) {
            NerConfig c;
            c.word_dim = wd;
            c.char_dim = cd;
            c.char_hidden = ch;
            c.word_hidden = wh;
            c.dropout_after_char = placement.after_char;
            c.dropout_after_word = placement.after_word;
            c.embedding_init = embedding_init;
            out.push_back(c);
          }
        }
      }
    }
  }
  return out;
}

nlohmann::json NerGrid::to_json() const {
  nlohmann::json placement_list = nlohmann::json::array();
  for (const auto& p : placements) placement_list.push_back({p.after_char, p.after_word});
  return {{"task", "ner"},
          {"embedding_init", to_string(embedding_init)},
          {"word_dims", word_dims},
          {"char_dims", char_dims},
          {"char_hiddens", char_hiddens},
          {"word_hiddens", word_hiddens},
          {"placements", placement_list}};
}

NerGrid NerGrid::from_json(const nlohmann::json& json) {
  check_keys(json, {"task", "embedding_init", "word_dims", "char_dims", "char_hiddens",
                    "word_hiddens", "placements"});
  try {
    if (json.contains("task") && json.at("task") != "ner") throw ConfigError("grid task is not 'ner'");
    const auto init = json.contains("embedding_init")
                          ? parse_embedding_init(json.at("embedding_init").get<std::string>())
                          : EmbeddingInit::random;
    NerGrid grid = full(init);
    read_list(json, "word_dims", grid.word_dims);
    read_list(json, "char_dims", grid.char_dims);
    read_list(json, "char_hiddens", grid.char_hiddens);
    read_list(json, "word_hiddens", grid.word_hiddens);
    std::vector<std::pair<bool, bool>> placements;
    read_list(json, "placements", placements);
    if (!placements.empty()) {
      grid.placements.clear();
      for (auto [c, w] : placements) grid.placements.push_back({c, w});
    }
    return grid;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad NER grid: ") + e.what());
  }
}

nlohmann::json GridRow::to_json() const {
  nlohmann::json json = {{"index", index},   {"rank", rank},          {"config_hash", config_hash},
                         {"config", config}, {"score", score},        {"mean", mean},
                         {"folds", folds}};
  if (!error.empty()) json["error"] = error;
  return json;
}

std::string config_hash(const nlohmann::json& config) { return hex64(fnv1a64(config.dump())); }

std::vector<GridRow> grid_search_classifier(const ClassifierGrid& grid,
                                            std::span<const ClassifierExample> data,
                                            std::size_t vocab_size, const GridOptions& options,
                                            const Tensor* pretrained) {
  options.policy.validate();
  if (grid.embedding_init == EmbeddingInit::pretrained && !pretrained) {
    throw ConfigError("pretrained grid needs an embedding table");
  }
  const auto folds = kfold(data.size(), options.folds, mix_seed(options.seed, kFoldStream));
  auto run_fold = [&](const ClassifierConfig& config, std::size_t round) {
    const CvSplit split = cv_split(folds, round);
    auto model = ClassifierModel::create(config, vocab_size, mix_seed(options.seed, kModelStream));
    if (config.embedding_init == EmbeddingInit::pretrained) {
      model.freeze_embeddings(options.freeze_pretrained);
      model.set_embeddings(pretrained->clone());
    }
    const auto train = gather(data, std::span<const std::size_t>(split.train));
    const auto stop = gather(data, std::span<const std::size_t>(split.early_stop));
    const auto held = gather(data, std::span<const std::size_t>(split.held_out));
    auto run = train_classifier(std::move(model), train, stop, fold_train_options(options, round));
    const ClassMetrics m = evaluate_classifier(run.model, held);
    nlohmann::json metrics = m.to_json();
    metrics["best_epoch"] = run.history.best_epoch;
    return FoldOutcome{std::move(metrics), {m.tpr(), m.tnr()}};
  };
  auto summarize = [](const std::vector<double>& means) {
    const double distance = distance_to_ideal(means[0], means[1]);
    nlohmann::json mean = {{"tpr", means[0]}, {"tnr", means[1]}, {"distance", distance}};
    return std::pair{mean, -distance};
  };
  return run_grid(grid.configs(), options.folds, options, run_fold, summarize);
}

std::vector<GridRow> grid_search_ner(const NerGrid& grid, std::span<const NerExample> data,
                                     std::size_t word_vocab, std::size_t char_vocab,
                                     const GridOptions& options, const Tensor* pretrained) {
  options.policy.validate();
  if (grid.embedding_init == EmbeddingInit::pretrained && !pretrained) {
    throw ConfigError("pretrained grid needs an embedding table");
  }
  const auto folds = kfold(data.size(), options.folds, mix_seed(options.seed, kFoldStream));
  auto run_fold = [&](const NerConfig& config, std::size_t round) {
    const CvSplit split = cv_split(folds, round);
    auto model =
        NerModel::create(config, word_vocab, char_vocab, mix_seed(options.seed, kModelStream));
    if (config.embedding_init == EmbeddingInit::pretrained) {
      model.freeze_embeddings(options.freeze_pretrained);
      model.set_word_embeddings(pretrained->clone());
    }
    const auto train = gather(data, std::span<const std::size_t>(split.train));
    const auto stop = gather(data, std::span<const std::size_t>(split.early_stop));
    const auto held = gather(data, std::span<const std::size_t>(split.held_out));
    auto run = train_ner(std::move(model), train, stop, fold_train_options(options, round));
    const NerMetrics m = evaluate_ner(run.model, held);
    nlohmann::json metrics = m.to_json();
    metrics["best_epoch"] = run.history.best_epoch;
    return FoldOutcome{std::move(metrics),
                       {m.micro.precision, m.micro.recall, m.micro.f1, m.entity.f1}};
  };
  auto summarize = [](const std::vector<double>& means) {
    nlohmann::json mean = {{"precision", means[0]},
                           {"recall", means[1]},
                           {"f1", means[2]},
                           {"entity_f1", means[3]}};
    return std::pair{mean, means[2]};
  };
  return run_grid(grid.configs(), options.folds, options, run_fold, summarize);
}

void write_grid_report(std::ostream& out, const std::vector<GridRow>& rows) {
  for (const auto& row : rows) out << row.to_json().dump() << '\n';
}

const GridRow& best_row(const std::vector<GridRow>& rows) {
  for (const auto& row : rows) {
    if (row.rank == 1 && row.error.empty()) return row;
  }
  throw InsufficientData("no grid configuration succeeded");
}

}  // namespace threatlens
