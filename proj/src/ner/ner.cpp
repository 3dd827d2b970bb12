#include "threatlens/ner.hpp"

#include <algorithm>
#include <set>

#include "threatlens/errors.hpp"
#include "threatlens/ops.hpp"

namespace threatlens {

namespace {

constexpr std::uint64_t kWordEmbeddingStream = 1;
constexpr std::uint64_t kCharEmbeddingStream = 2;
constexpr std::uint64_t kCharFwdStream = 3;
constexpr std::uint64_t kCharBwdStream = 4;
constexpr std::uint64_t kWordFwdStream = 5;
constexpr std::uint64_t kWordBwdStream = 6;
constexpr std::uint64_t kProjectionStream = 7;
constexpr std::uint64_t kCharDropoutStream = 1;
constexpr std::uint64_t kWordDropoutStream = 2;
constexpr double kEmbeddingScale = 0.25;

const char* const kConfigKeys[] = {"word_dim",           "char_dim",           "char_hidden",
                                   "word_hidden",        "dropout_after_char", "dropout_after_word",
                                   "embedding_init"};

Tensor uniform_table(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(Shape{rows, cols});
  for (double& v : t.values()) v = rng.uniform(-kEmbeddingScale, kEmbeddingScale);
  t.set_requires_grad(true);
  return t;
}

void check_structure(const NerConfig& config) {
  if (config.word_dim == 0 || config.char_dim == 0 || config.char_hidden == 0 ||
      config.word_hidden == 0) {
    throw ConfigError("ner dimensions must be positive");
  }
}

void check_labels(std::span<const int> labels) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= LabelSet::size) {
      throw InvalidLabel("ner label " + std::to_string(y) + " out of range");
    }
  }
}

}  // namespace

const std::vector<std::string>& LabelSet::names() {
  static const std::vector<std::string> labels = {"O", "ORG", "PRO", "VER", "VUL", "ID"};
  return labels;
}

const std::string& LabelSet::name(int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= size) {
    throw InvalidLabel("ner label " + std::to_string(label) + " out of range");
  }
  return names()[static_cast<std::size_t>(label)];
}

int LabelSet::index(const std::string& name) {
  const auto& all = names();
  auto it = std::find(all.begin(), all.end(), name);
  if (it == all.end()) throw InvalidLabel("unknown ner label \"" + name + "\"");
  return static_cast<int>(it - all.begin());
}

void NerConfig::validate() const {
  check_structure(*this);
  static const std::set<std::size_t> char_dims = {25, 50, 100};
  static const std::set<std::size_t> hiddens = {100, 200, 300};
  if (!char_dims.count(char_dim)) throw ConfigError("char_dim must be one of 25, 50, 100");
  if (!hiddens.count(char_hidden)) throw ConfigError("char_hidden must be one of 100, 200, 300");
  if (!hiddens.count(word_hidden)) throw ConfigError("word_hidden must be one of 100, 200, 300");
  if (embedding_init == EmbeddingInit::pretrained ? word_dim != 300 : !hiddens.count(word_dim)) {
    throw ConfigError("word_dim must be 100, 200 or 300 (300 when pretrained)");
  }
}

nlohmann::json NerConfig::to_json() const {
  return {{"word_dim", word_dim},
          {"char_dim", char_dim},
          {"char_hidden", char_hidden},
          {"word_hidden", word_hidden},
          {"dropout_after_char", dropout_after_char},
          {"dropout_after_word", dropout_after_word},
          {"embedding_init", to_string(embedding_init)}};
}

NerConfig NerConfig::from_json(const nlohmann::json& json) {
  if (!json.is_object()) throw ConfigError("ner config must be a JSON object");
  for (const auto& [key, value] : json.items()) {
    if (std::find(std::begin(kConfigKeys), std::end(kConfigKeys), key) == std::end(kConfigKeys)) {
      throw ConfigError("unknown ner config key \"" + key + "\"");
    }
  }
  for (const char* key : kConfigKeys) {
    if (!json.contains(key)) throw ConfigError(std::string("missing ner config key \"") + key + "\"");
  }
  NerConfig config;
  try {
    config.word_dim = json.at("word_dim").get<std::size_t>();
    config.char_dim = json.at("char_dim").get<std::size_t>();
    config.char_hidden = json.at("char_hidden").get<std::size_t>();
    config.word_hidden = json.at("word_hidden").get<std::size_t>();
    config.dropout_after_char = json.at("dropout_after_char").get<bool>();
    config.dropout_after_word = json.at("dropout_after_word").get<bool>();
    config.embedding_init = parse_embedding_init(json.at("embedding_init").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad ner config: ") + e.what());
  }
  return config;
}

NerModel NerModel::create(const NerConfig& config, std::size_t word_vocab, std::size_t char_vocab,
                          std::uint64_t seed) {
  check_structure(config);
  if (word_vocab == 0 || char_vocab == 0) throw ConfigError("vocabulary is empty");
  NerModel model;
  model.config_ = config;
  model.seed_ = seed;
  model.word_embeddings =
      uniform_table(word_vocab, config.word_dim, mix_seed(seed, kWordEmbeddingStream));
  model.char_embeddings =
      uniform_table(char_vocab, config.char_dim, mix_seed(seed, kCharEmbeddingStream));
  Rng char_fwd(mix_seed(seed, kCharFwdStream)), char_bwd(mix_seed(seed, kCharBwdStream));
  model.char_fwd = LstmCell::create(config.char_dim, config.char_hidden, char_fwd);
  model.char_bwd = LstmCell::create(config.char_dim, config.char_hidden, char_bwd);
  Rng word_fwd(mix_seed(seed, kWordFwdStream)), word_bwd(mix_seed(seed, kWordBwdStream));
  model.word_fwd = LstmCell::create(model.word_width(), config.word_hidden, word_fwd);
  model.word_bwd = LstmCell::create(model.word_width(), config.word_hidden, word_bwd);
  Rng proj(mix_seed(seed, kProjectionStream));
  model.projection = glorot_uniform(Shape{2 * config.word_hidden, LabelSet::size},
                                    2 * config.word_hidden, LabelSet::size, proj);
  model.projection_bias = Tensor(Shape{LabelSet::size});
  model.projection_bias.set_requires_grad(true);
  model.crf = CrfParams::zeros(LabelSet::size);
  return model;
}

void NerModel::set_word_embeddings(Tensor table) {
  if (table.shape() != word_embeddings.shape()) {
    throw ShapeError("word embedding table " + shape_string(table.shape()) + " does not match " +
                     shape_string(word_embeddings.shape()));
  }
  table.set_requires_grad(!frozen_);
  word_embeddings = std::move(table);
}

void NerModel::freeze_embeddings(bool frozen) {
  frozen_ = frozen;
  word_embeddings.set_requires_grad(!frozen);
}

std::vector<NamedTensor> NerModel::parameters() const {
  return {{"word_embedding", word_embeddings},
          {"char_embedding", char_embeddings},
          {"char_fwd.weight", char_fwd.weights},
          {"char_fwd.bias", char_fwd.bias},
          {"char_bwd.weight", char_bwd.weights},
          {"char_bwd.bias", char_bwd.bias},
          {"word_fwd.weight", word_fwd.weights},
          {"word_fwd.bias", word_fwd.bias},
          {"word_bwd.weight", word_bwd.weights},
          {"word_bwd.bias", word_bwd.bias},
          {"projection.weight", projection},
          {"projection.bias", projection_bias},
          {"crf.transitions", crf.transitions}};
}

std::vector<Tensor> NerModel::trainable_parameters() const {
  std::vector<Tensor> params;
  for (auto& entry : parameters()) {
    if (entry.tensor.requires_grad()) params.push_back(entry.tensor);
  }
  return params;
}

Checkpoint NerModel::to_checkpoint(const std::string& vocab_hash) const {
  Checkpoint ckpt;
  ckpt.kind = "ner";
  ckpt.vocab_hash = vocab_hash;
  ckpt.hyperparameters = config_.to_json();
  ckpt.metadata = {{"seed", seed_}, {"freeze_embeddings", frozen_}, {"labels", LabelSet::names()}};
  ckpt.tensors = parameters();
  return ckpt;
}

NerModel NerModel::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "ner") {
    throw CheckpointError("expected an ner checkpoint, got \"" + checkpoint.kind + "\"");
  }
  if (checkpoint.metadata.contains("labels") &&
      checkpoint.metadata.at("labels") != nlohmann::json(LabelSet::names())) {
    throw CheckpointError("ner checkpoint uses a different label set");
  }
  const auto config = NerConfig::from_json(checkpoint.hyperparameters);
  check_structure(config);
  NerModel model;
  model.config_ = config;
  model.seed_ = checkpoint.metadata.value("seed", std::uint64_t{0});
  auto take = [&](const std::string& name, const Shape& shape) {
    Tensor t = checkpoint.tensor(name).clone();
    if (t.shape() != shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_string(t.shape()) +
                            ", expected " + shape_string(shape));
    }
    t.set_requires_grad(true);
    return t;
  };
  auto rows = [&](const std::string& name, std::size_t cols) {
    const Tensor& t = checkpoint.tensor(name);
    if (t.rank() != 2 || t.dim(1) != cols) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_string(t.shape()));
    }
    return t.dim(0);
  };
  auto cell = [&](const std::string& prefix, std::size_t in, std::size_t hid) {
    LstmCell c;
    c.input_dim = in;
    c.hidden_dim = hid;
    c.weights = take(prefix + ".weight", Shape{4 * hid, in + hid});
    c.bias = take(prefix + ".bias", Shape{4 * hid});
    return c;
  };
  model.word_embeddings =
      take("word_embedding", Shape{rows("word_embedding", config.word_dim), config.word_dim});
  model.char_embeddings =
      take("char_embedding", Shape{rows("char_embedding", config.char_dim), config.char_dim});
  model.char_fwd = cell("char_fwd", config.char_dim, config.char_hidden);
  model.char_bwd = cell("char_bwd", config.char_dim, config.char_hidden);
  model.word_fwd = cell("word_fwd", model.word_width(), config.word_hidden);
  model.word_bwd = cell("word_bwd", model.word_width(), config.word_hidden);
  model.projection = take("projection.weight", Shape{2 * config.word_hidden, LabelSet::size});
  model.projection_bias = take("projection.bias", Shape{LabelSet::size});
  model.crf.label_count = LabelSet::size;
  model.crf.transitions =
      take("crf.transitions", Shape{LabelSet::size + 2, LabelSet::size + 2});
  model.freeze_embeddings(checkpoint.metadata.value("freeze_embeddings", false));
  return model;
}

Tensor encode_words(Tape& tape, const NerModel& model, const SentenceEncoding& enc, Mode mode,
                    std::uint64_t dropout_seed, CharCache* cache) {
  const std::size_t n = enc.size();
  if (n == 0) throw EmptySequence("cannot tag an empty sentence");
  if (enc.char_ids.size() != n) throw ShapeError("encoding has mismatched word and char counts");
  Tensor words = ops::embed(tape, enc.word_ids, model.word_embeddings);

  CharCache local;
  CharCache& reps = cache ? *cache : local;
  std::vector<Tensor> char_rows;
  char_rows.reserve(n);
  for (const auto& chars : enc.char_ids) {
    auto it = reps.find(chars);
    if (it == reps.end()) {
      Tensor embedded = ops::embed(tape, chars, model.char_embeddings);
      it = reps.emplace(chars, bilstm_final(tape, model.char_fwd, model.char_bwd, embedded)).first;
    }
    char_rows.push_back(it->second);
  }
  Tensor x = ops::concat_columns(tape, words, ops::stack_rows(tape, char_rows));
  if (mode == Mode::train && model.config().dropout_after_char) {
    Rng rng(mix_seed(dropout_seed, kCharDropoutStream));
    x = ops::dropout(tape, x, kNerDropout, mode, rng);
  }
  return x;
}

Tensor emissions(Tape& tape, const NerModel& model, const SentenceEncoding& enc, Mode mode,
                 std::uint64_t dropout_seed, CharCache* cache) {
  Tensor x = encode_words(tape, model, enc, mode, dropout_seed, cache);
  Tensor states = bilstm_all(tape, model.word_fwd, model.word_bwd, x);
  if (mode == Mode::train && model.config().dropout_after_word) {
    Rng rng(mix_seed(dropout_seed, kWordDropoutStream));
    states = ops::dropout(tape, states, kNerDropout, mode, rng);
  }
  return ops::linear(tape, states, model.projection, model.projection_bias);
}

Tensor ner_loss(Tape& tape, const NerModel& model, const NerExample& example, Mode mode,
                std::uint64_t dropout_seed, CharCache* cache) {
  check_labels(example.labels);
  if (example.labels.size() != example.encoding.size()) {
    throw ShapeError("ner example has " + std::to_string(example.labels.size()) + " labels for " +
                     std::to_string(example.encoding.size()) + " tokens");
  }
  Tensor scores = emissions(tape, model, example.encoding, mode, dropout_seed, cache);
  return nll_loss(tape, scores, example.labels, model.crf);
}

Tensor ner_batch_loss(Tape& tape, const NerModel& model, std::span<const NerExample> batch,
                      std::uint64_t step_seed) {
  if (batch.empty()) throw InsufficientData("empty training batch");
  CharCache cache;
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    losses.push_back(ner_loss(tape, model, batch[i], Mode::train, mix_seed(step_seed, i), &cache));
  }
  return ops::mean(tape, losses);
}

double train_step_ner(NerModel& model, std::span<const NerExample> batch, AdamState& adam,
                      Rng& rng) {
  Tape tape;
  Tensor loss = ner_batch_loss(tape, model, batch, rng.fork());
  tape.backward(loss);
  auto params = model.trainable_parameters();
  adam_step(adam, params);
  return loss.item();
}

std::vector<EntitySpan> spans_from_labels(std::span<const int> labels) {
  check_labels(labels);
  std::vector<EntitySpan> spans;
  for (std::size_t t = 0; t < labels.size();) {
    std::size_t end = t + 1;
    while (end < labels.size() && labels[end] == labels[t]) ++end;
    if (labels[t] != LabelSet::outside) spans.push_back({labels[t], t, end});
    t = end;
  }
  return spans;
}

std::vector<int> labels_from_spans(std::span<const EntitySpan> spans, std::size_t length) {
  std::vector<int> labels(length, LabelSet::outside);
  for (const auto& span : spans) {
    if (span.begin >= span.end || span.end > length) {
      throw IndexError("entity span [" + std::to_string(span.begin) + ", " +
                       std::to_string(span.end) + ") outside " + std::to_string(length) +
                       " tokens");
    }
    std::fill(labels.begin() + static_cast<std::ptrdiff_t>(span.begin),
              labels.begin() + static_cast<std::ptrdiff_t>(span.end), span.label);
  }
  return labels;
}

std::string span_text(std::span<const std::string> tokens, const EntitySpan& span) {
  if (span.begin >= span.end || span.end > tokens.size()) {
    throw IndexError("entity span outside the token list");
  }
  std::string text = tokens[span.begin];
  for (std::size_t t = span.begin + 1; t < span.end; ++t) text += " " + tokens[t];
  return text;
}

std::vector<int> predict_labels(const NerModel& model, const SentenceEncoding& enc) {
  if (enc.size() == 0) return {};
  Tape tape(false);
  return viterbi(emissions(tape, model, enc, Mode::infer), model.crf).labels;
}

TaggedTweet tag(const NerModel& model, const SentenceEncoding& enc,
                std::vector<std::string> tokens) {
  if (tokens.size() < enc.size()) {
    throw ShapeError("tag: " + std::to_string(tokens.size()) + " tokens for an encoding of " +
                     std::to_string(enc.size()));
  }
  tokens.resize(enc.size());
  TaggedTweet tagged;
  tagged.labels = predict_labels(model, enc);
  tagged.spans = spans_from_labels(tagged.labels);
  tagged.tokens = std::move(tokens);
  return tagged;
}

}  // namespace threatlens
