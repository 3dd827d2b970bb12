#include "threatlens/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "threatlens/checkpoint.hpp"
#include "threatlens/datasets.hpp"
#include "threatlens/embeddings.hpp"
#include "threatlens/errors.hpp"
#include "threatlens/grid.hpp"
#include "threatlens/pipeline.hpp"
#include "threatlens/training.hpp"

namespace threatlens {

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kEmbeddingStream = 0x454d;
constexpr std::uint64_t kTrainingStream = 0x5452;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
};

struct Context {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
  std::shared_ptr<spdlog::logger> log;
};

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path, 0, "cannot open file");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path, 0, e.what());
  }
}

nlohmann::json load_config(const Common& common, std::set<std::string> allowed) {
  if (common.config.empty()) return nlohmann::json::object();
  auto json = load_json(common.config);
  if (!json.is_object()) throw ConfigError(common.config + ": config must be a JSON object");
  for (const auto& [key, value] : json.items()) {
    if (!allowed.count(key)) throw ConfigError(common.config + ": unknown key '" + key + "'");
  }
  return json;
}

template <typename T>
T config_value(const nlohmann::json& json, const char* key, T fallback) {
  if (!json.contains(key)) return fallback;
  try {
    return json.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

TrainOptions train_options(const nlohmann::json& cfg, std::uint64_t seed,
                           const std::shared_ptr<spdlog::logger>& log) {
  TrainOptions options;
  if (cfg.contains("policy")) options.policy = EarlyStopPolicy::from_json(cfg.at("policy"));
  options.adam.learning_rate = config_value(cfg, "learning_rate", options.adam.learning_rate);
  options.seed = mix_seed(seed, kTrainingStream);
  options.on_epoch = [log](const EpochRecord& e) {
    log->info("epoch {} loss {:.6f} score {:.6f}{}", e.epoch, e.train_loss, e.score,
              e.improved ? " *" : "");
  };
  return options;
}

template <typename Config>
Config model_config(const nlohmann::json& cfg) {
  nlohmann::json json = Config{}.to_json();
  if (cfg.contains("model")) {
    if (!cfg.at("model").is_object()) throw ConfigError("config key 'model' must be an object");
    json.update(cfg.at("model"));
  }
  Config config = Config::from_json(json);
  config.validate();
  return config;
}

std::optional<Tensor> pretrained_table(const std::string& path, const Vocabulary& vocab,
                                       std::size_t dim, std::uint64_t seed,
                                       const std::shared_ptr<spdlog::logger>& log) {
  if (path.empty()) throw ConfigError("pretrained embeddings need --embeddings");
  auto table = load_pretrained(path, vocab, mix_seed(seed, kEmbeddingStream));
  if (table.dim != dim) {
    throw ConfigError("embedding file has dimension " + std::to_string(table.dim) +
                      ", config expects " + std::to_string(dim));
  }
  log->info("pretrained vectors: {} found, {} missing", table.found, table.missing);
  return std::move(table.table);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("failed writing " + path);
}

// Writes to --out when given, else to stdout.
void emit(Context& ctx, const Common& common, const std::string& text) {
  if (common.out.empty()) {
    ctx.out << text;
  } else {
    write_text(common.out, text);
  }
}

fs::path output_dir(const Common& common) {
  if (common.out.empty()) throw UsageError("--out is required");
  fs::create_directories(common.out);
  return common.out;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string input, keywords, infrastructure;
};

int cmd_preprocess(Context& ctx, const Common& common, const PreprocessArgs& args) {
  std::ifstream in(args.input, std::ios::binary);
  if (!in) throw FormatError(args.input, 0, "cannot open file");
  const auto tweets = read_tweets(in, args.input);
  std::optional<KeywordSet> keywords;
  if (!args.keywords.empty()) keywords = load_keywords(args.keywords, args.infrastructure);

  std::ostringstream csv;
  write_csv_row(csv, {"id", "account", "posted_at", "account_set", "text"});
  std::size_t kept = 0;
  for (const auto& tweet : tweets) {
    const auto tokens = normalize_lenient(tweet.text);
    if (tokens.empty() || (keywords && !keyword_filter(tokens, *keywords))) continue;
    std::string text;
    for (const auto& t : tokens) text += (text.empty() ? "" : " ") + t;
    write_csv_row(csv, {tweet.id, tweet.account, format_timestamp(tweet.posted_at),
                        std::string(to_string(tweet.account_set)), text});
    ++kept;
  }
  emit(ctx, common, csv.str());
  ctx.log->info("kept {} of {} tweets", kept, tweets.size());
  return kExitOk;
}

struct TrainArgs {
  std::string train, val, embeddings;
};

int cmd_train_classifier(Context& ctx, const Common& common, const TrainArgs& args) {
  const auto cfg =
      load_config(common, {"model", "policy", "learning_rate", "freeze_embeddings", "min_count"});
  const auto config = model_config<ClassifierConfig>(cfg);
  const auto dir = output_dir(common);
  const auto train_set = load_classification_csv(args.train);
  const auto val_set = load_classification_csv(args.val);
  const auto vocab =
      build_vocabulary(corpus_tokens(train_set), config_value<std::size_t>(cfg, "min_count", 1));
  const auto train = encode_dataset(train_set, vocab, config.max_len);
  const auto val = encode_dataset(val_set, vocab, config.max_len);
  ctx.log->info("classifier: {} train / {} validation tweets, vocabulary {}", train.size(),
                val.size(), vocab.word_count());

  auto model = ClassifierModel::create(config, vocab.word_count(), common.seed);
  if (config.embedding_init == EmbeddingInit::pretrained) {
    model.freeze_embeddings(config_value(cfg, "freeze_embeddings", false));
    model.set_embeddings(
        *pretrained_table(args.embeddings, vocab, config.embedding_dim, common.seed, ctx.log));
  }
  auto run = train_classifier(std::move(model), train, val, train_options(cfg, common.seed, ctx.log));

  save_checkpoint(dir / "classifier.ckpt", run.model.to_checkpoint(vocab.hash()));
  save_vocabulary(dir / "classifier.vocab.json", vocab);
  write_text((dir / "classifier.history.json").string(), run.history.to_json().dump(1) + "\n");
  const nlohmann::json result = {{"best_epoch", run.history.best_epoch},
                                 {"validation", evaluate_classifier(run.model, val).to_json()}};
  ctx.out << result.dump() << '\n';
  return kExitOk;
}

int cmd_train_ner(Context& ctx, const Common& common, const TrainArgs& args) {
  const auto cfg =
      load_config(common, {"model", "policy", "learning_rate", "freeze_embeddings", "min_count"});
  const auto config = model_config<NerConfig>(cfg);
  const auto dir = output_dir(common);
  const auto train_set = load_conll(args.train);
  const auto val_set = load_conll(args.val);
  const auto vocab =
      build_vocabulary(corpus_tokens(train_set), config_value<std::size_t>(cfg, "min_count", 1));
  // The tagger sees whole tweets, so sentences are not truncated.
  const std::size_t no_limit = std::numeric_limits<std::size_t>::max();
  const auto train = encode_dataset(train_set, vocab, no_limit);
  const auto val = encode_dataset(val_set, vocab, no_limit);
  ctx.log->info("tagger: {} train / {} validation sentences, vocabulary {}", train.size(),
                val.size(), vocab.word_count());

  auto model = NerModel::create(config, vocab.word_count(), vocab.char_count(), common.seed);
  if (config.embedding_init == EmbeddingInit::pretrained) {
    model.freeze_embeddings(config_value(cfg, "freeze_embeddings", false));
    model.set_word_embeddings(
        *pretrained_table(args.embeddings, vocab, config.word_dim, common.seed, ctx.log));
  }
  auto run = train_ner(std::move(model), train, val, train_options(cfg, common.seed, ctx.log));

  save_checkpoint(dir / "ner.ckpt", run.model.to_checkpoint(vocab.hash()));
  save_vocabulary(dir / "ner.vocab.json", vocab);
  write_text((dir / "ner.history.json").string(), run.history.to_json().dump(1) + "\n");
  const nlohmann::json result = {{"best_epoch", run.history.best_epoch},
                                 {"validation", evaluate_ner(run.model, val).to_json()}};
  ctx.out << result.dump() << '\n';
  return kExitOk;
}

struct GridArgs {
  std::string task, data, grid, embeddings;
};

int cmd_grid_search(Context& ctx, const Common& common, const GridArgs& args) {
  const auto cfg = load_config(common, {"folds", "workers", "policy", "learning_rate",
                                        "freeze_embeddings", "min_count"});
  GridOptions options;
  options.folds = config_value<std::size_t>(cfg, "folds", 10);
  options.workers = config_value<std::size_t>(cfg, "workers", 1);
  if (cfg.contains("policy")) options.policy = EarlyStopPolicy::from_json(cfg.at("policy"));
  options.adam.learning_rate = config_value(cfg, "learning_rate", options.adam.learning_rate);
  options.freeze_pretrained = config_value(cfg, "freeze_embeddings", false);
  options.seed = common.seed;
  options.on_row = [&](const GridRow& row) {
    if (row.error.empty()) {
      ctx.log->info("config {} ({}) score {:.6f}", row.index, row.config_hash, row.score);
    } else {
      ctx.log->warn("config {} ({}) failed: {}", row.index, row.config_hash, row.error);
    }
  };
  const auto grid_json = args.grid.empty() ? nlohmann::json::object() : load_json(args.grid);
  const auto min_count = config_value<std::size_t>(cfg, "min_count", 1);

  std::vector<GridRow> rows;
  if (args.task == "classifier") {
    const auto grid = ClassifierGrid::from_json(grid_json);
    const auto data = load_classification_csv(args.data);
    const auto vocab = build_vocabulary(corpus_tokens(data), min_count);
    std::optional<Tensor> table;
    if (grid.embedding_init == EmbeddingInit::pretrained) {
      table = pretrained_table(args.embeddings, vocab, 300, common.seed, ctx.log);
    }
    ctx.log->info("classifier grid: {} configs x {} folds", grid.configs().size(), options.folds);
    rows = grid_search_classifier(grid, encode_dataset(data, vocab), vocab.word_count(), options,
                                  table ? &*table : nullptr);
  } else {
    const auto grid = NerGrid::from_json(grid_json);
    const auto data = load_conll(args.data);
    const auto vocab = build_vocabulary(corpus_tokens(data), min_count);
    std::optional<Tensor> table;
    if (grid.embedding_init == EmbeddingInit::pretrained) {
      table = pretrained_table(args.embeddings, vocab, 300, common.seed, ctx.log);
    }
    ctx.log->info("tagger grid: {} configs x {} folds", grid.configs().size(), options.folds);
    rows = grid_search_ner(grid, encode_dataset(data, vocab, std::numeric_limits<std::size_t>::max()),
                           vocab.word_count(), vocab.char_count(), options,
                           table ? &*table : nullptr);
  }
  std::ostringstream report;
  write_grid_report(report, rows);
  emit(ctx, common, report.str());
  const auto& best = best_row(rows);
  ctx.log->info("best config {} ({}) score {:.6f}", best.index, best.config_hash, best.score);
  return kExitOk;
}

struct ModelArgs {
  std::string model, vocab, data;
};

int cmd_evaluate(Context& ctx, const Common& common, const ModelArgs& args) {
  const auto checkpoint = load_checkpoint(args.model);
  const auto vocab = load_vocabulary(args.vocab);
  require_vocabulary(checkpoint.vocab_hash, vocab, args.model);
  nlohmann::json result = {{"kind", checkpoint.kind}, {"model_version", checkpoint.content_hash()}};
  if (checkpoint.kind == "classifier") {
    const auto model = ClassifierModel::from_checkpoint(checkpoint);
    const auto data = encode_dataset(load_classification_csv(args.data), vocab, model.config().max_len);
    result["metrics"] = evaluate_classifier(model, data).to_json();
  } else if (checkpoint.kind == "ner") {
    const auto model = NerModel::from_checkpoint(checkpoint);
    const auto data =
        encode_dataset(load_conll(args.data), vocab, std::numeric_limits<std::size_t>::max());
    result["metrics"] = evaluate_ner(model, data).to_json();
  } else {
    throw CheckpointError("unknown checkpoint kind '" + checkpoint.kind + "'");
  }
  emit(ctx, common, result.dump() + "\n");
  return kExitOk;
}

int cmd_run(Context& ctx, const Common& common) {
  if (common.config.empty()) throw UsageError("run needs --config");
  auto config = PipelineConfig::load(common.config);
  if (!common.out.empty()) config.output = common.out;
  const auto summary = run_pipeline(config, ctx.log.get());
  ctx.out << summary.to_json().dump() << '\n';
  return kExitOk;
}

int cmd_tag(Context& ctx, const ModelArgs& args) {
  const auto checkpoint = load_checkpoint(args.model);
  const auto vocab = load_vocabulary(args.vocab);
  require_vocabulary(checkpoint.vocab_hash, vocab, args.model);
  const auto model = NerModel::from_checkpoint(checkpoint);
  const std::string text(std::istreambuf_iterator<char>(ctx.in), {});
  auto tokens = normalize(text);
  const auto enc = encode(tokens, vocab, tokens.size());
  const auto tagged = tag(model, enc, std::move(tokens));
  for (std::size_t i = 0; i < tagged.tokens.size(); ++i) {
    ctx.out << tagged.tokens[i] << '\t' << LabelSet::name(tagged.labels[i]) << '\n';
  }
  return kExitOk;
}

std::optional<std::uint64_t> env_seed() {
  const char* value = std::getenv("THREATLENS_SEED");
  if (!value || !*value) return std::nullopt;
  std::uint64_t seed = 0;
  const char* end = value + std::char_traits<char>::length(value);
  const auto [ptr, ec] = std::from_chars(value, end, seed);
  if (ec != std::errc() || ptr != end) {
    throw UsageError(std::string("THREATLENS_SEED is not an unsigned integer: '") + value + "'");
  }
  return seed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto log = std::make_shared<spdlog::logger>("threatlens", sink);
  log->set_pattern("[%l] %v");
  Context ctx{in, out, err, log};

  CLI::App app{"Tweet threat detection: relevance classifier and entity tagger", "threatlens"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", common.seed, "Random seed (THREATLENS_SEED overrides)");
    cmd->add_option("--config", common.config, "JSON config file");
    cmd->add_option("--out", common.out, "Output file or directory");
  };

  PreprocessArgs pre;
  auto* preprocess = app.add_subcommand("preprocess", "Normalize and keyword-filter a tweet CSV");
  preprocess->add_option("--input", pre.input, "Tweet CSV")->required();
  preprocess->add_option("--keywords", pre.keywords, "Keyword file (one per line)");
  preprocess->add_option("--infrastructure", pre.infrastructure, "Infrastructure name");
  add_common(preprocess);

  TrainArgs train_c, train_n;
  auto* train_classifier_cmd =
      app.add_subcommand("train-classifier", "Train the relevance classifier");
  train_classifier_cmd->add_option("--train", train_c.train, "Labelled tweet CSV")->required();
  train_classifier_cmd->add_option("--val", train_c.val, "Validation CSV")->required();
  train_classifier_cmd->add_option("--embeddings", train_c.embeddings, "Pretrained vectors");
  add_common(train_classifier_cmd);

  auto* train_ner_cmd = app.add_subcommand("train-ner", "Train the entity tagger");
  train_ner_cmd->add_option("--train", train_n.train, "CoNLL training file")->required();
  train_ner_cmd->add_option("--val", train_n.val, "CoNLL validation file")->required();
  train_ner_cmd->add_option("--embeddings", train_n.embeddings, "Pretrained vectors");
  add_common(train_ner_cmd);

  GridArgs grid;
  auto* grid_cmd = app.add_subcommand("grid-search", "Cross-validated hyperparameter search");
  grid_cmd->add_option("--task", grid.task, "classifier or ner")
      ->required()
      ->check(CLI::IsMember({"classifier", "ner"}));
  grid_cmd->add_option("--data", grid.data, "Dataset file")->required();
  grid_cmd->add_option("--grid", grid.grid, "Grid JSON restricting the value lists");
  grid_cmd->add_option("--embeddings", grid.embeddings, "Pretrained vectors");
  add_common(grid_cmd);

  ModelArgs eval;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  evaluate_cmd->add_option("--model", eval.model, "Checkpoint")->required();
  evaluate_cmd->add_option("--vocab", eval.vocab, "Vocabulary JSON")->required();
  evaluate_cmd->add_option("--data", eval.data, "Dataset file")->required();
  add_common(evaluate_cmd);

  auto* run_cmd = app.add_subcommand("run", "Replay a tweet CSV through the pipeline");
  add_common(run_cmd);

  ModelArgs tag_args;
  auto* tag_cmd = app.add_subcommand("tag", "Tag one tweet read from stdin");
  tag_cmd->add_option("--model", tag_args.model, "Tagger checkpoint")->required();
  tag_cmd->add_option("--vocab", tag_args.vocab, "Vocabulary JSON")->required();
  add_common(tag_cmd);

  try {
    if (!args.empty() && !args[0].starts_with("-")) {
      const auto subcommands = app.get_subcommands([](CLI::App*) { return true; });
      if (std::none_of(subcommands.begin(), subcommands.end(),
                       [&](CLI::App* cmd) { return cmd->get_name() == args[0]; })) {
        throw UsageError("unknown subcommand '" + args[0] + "'");
      }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (auto seed = env_seed()) common.seed = *seed;

    if (preprocess->parsed()) return cmd_preprocess(ctx, common, pre);
    if (train_classifier_cmd->parsed()) return cmd_train_classifier(ctx, common, train_c);
    if (train_ner_cmd->parsed()) return cmd_train_ner(ctx, common, train_n);
    if (grid_cmd->parsed()) return cmd_grid_search(ctx, common, grid);
    if (evaluate_cmd->parsed()) return cmd_evaluate(ctx, common, eval);
    if (run_cmd->parsed()) return cmd_run(ctx, common);
    if (tag_cmd->parsed()) return cmd_tag(ctx, tag_args);
    throw UsageError("no subcommand");
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace threatlens
