#include "threatlens/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "threatlens/errors.hpp"
#include "threatlens/ops.hpp"

namespace threatlens {

namespace {

constexpr std::uint64_t kEmbeddingStream = 1;
constexpr std::uint64_t kKernelStream = 0x1000;
constexpr std::uint64_t kOutputStream = 0x2000;
constexpr std::uint64_t kDropoutStream = 0x3000;
constexpr double kEmbeddingScale = 0.25;
constexpr std::size_t kClasses = 2;

const char* const kConfigKeys[] = {"embedding_dim",      "embedding_init", "kernel_heights",
                                   "filters_per_kernel", "dropout_p",      "max_len"};

std::string kernel_name(std::size_t height, const char* part) {
  return "conv.h" + std::to_string(height) + "." + part;
}

void check_structure(const ClassifierConfig& config) {
  if (config.embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  if (config.filters_per_kernel == 0) throw ConfigError("filters_per_kernel must be positive");
  if (config.kernel_heights.empty()) throw ConfigError("at least one kernel height is required");
  std::set<std::size_t> seen;
  for (std::size_t h : config.kernel_heights) {
    if (h == 0) throw ConfigError("kernel heights must be positive");
    if (!seen.insert(h).second) throw ConfigError("duplicate kernel height " + std::to_string(h));
  }
  if (!(config.dropout_p >= 0.0 && config.dropout_p < 1.0)) {
    throw ConfigError("dropout_p must be in [0, 1)");
  }
  if (config.max_len == 0) throw ConfigError("max_len must be positive");
}

}  // namespace

std::string to_string(EmbeddingInit init) {
  return init == EmbeddingInit::random ? "random" : "pretrained";
}

EmbeddingInit parse_embedding_init(const std::string& text) {
  if (text == "random") return EmbeddingInit::random;
  if (text == "pretrained") return EmbeddingInit::pretrained;
  throw ConfigError("embedding_init must be \"random\" or \"pretrained\", got \"" + text + "\"");
}

void ClassifierConfig::validate() const {
  check_structure(*this);
  const std::size_t k = kernel_heights.size();
  if (k < 3 || k > 6) throw ConfigError("kernel count must be between 3 and 6");
  if (!std::is_sorted(kernel_heights.begin(), kernel_heights.end())) {
    throw ConfigError("kernel heights must be strictly increasing");
  }
  static const std::set<std::size_t> filters = {64, 128, 192, 256};
  if (!filters.count(filters_per_kernel)) {
    throw ConfigError("filters_per_kernel must be one of 64, 128, 192, 256");
  }
  static const std::set<double> rates = {0.3, 0.5, 0.6};
  if (!rates.count(dropout_p)) throw ConfigError("dropout_p must be one of 0.3, 0.5, 0.6");
  if (embedding_init == EmbeddingInit::pretrained ? embedding_dim != 300
                                                  : (embedding_dim != 100 && embedding_dim != 200 &&
                                                     embedding_dim != 300)) {
    throw ConfigError("embedding_dim must be 100, 200 or 300 (300 when pretrained)");
  }
}

nlohmann::json ClassifierConfig::to_json() const {
  return {{"embedding_dim", embedding_dim},   {"embedding_init", to_string(embedding_init)},
          {"kernel_heights", kernel_heights}, {"filters_per_kernel", filters_per_kernel},
          {"dropout_p", dropout_p},           {"max_len", max_len}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& json) {
  if (!json.is_object()) throw ConfigError("classifier config must be a JSON object");
  for (const auto& [key, value] : json.items()) {
    if (std::find(std::begin(kConfigKeys), std::end(kConfigKeys), key) == std::end(kConfigKeys)) {
      throw ConfigError("unknown classifier config key \"" + key + "\"");
    }
  }
  for (const char* key : kConfigKeys) {
    if (!json.contains(key)) throw ConfigError(std::string("missing classifier config key \"") + key + "\"");
  }
  ClassifierConfig config;
  try {
    config.embedding_dim = json.at("embedding_dim").get<std::size_t>();
    config.embedding_init = parse_embedding_init(json.at("embedding_init").get<std::string>());
    config.kernel_heights = json.at("kernel_heights").get<std::vector<std::size_t>>();
    config.filters_per_kernel = json.at("filters_per_kernel").get<std::size_t>();
    config.dropout_p = json.at("dropout_p").get<double>();
    config.max_len = json.at("max_len").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad classifier config: ") + e.what());
  }
  return config;
}

ClassifierModel ClassifierModel::create(const ClassifierConfig& config, std::size_t vocab_size,
                                        std::uint64_t seed) {
  check_structure(config);
  if (vocab_size == 0) throw ConfigError("vocabulary is empty");
  ClassifierModel model;
  model.config_ = config;
  model.seed_ = seed;
  const std::size_t d = config.embedding_dim, f = config.filters_per_kernel;

  Rng emb_rng(mix_seed(seed, kEmbeddingStream));
  model.embeddings_ = Tensor(Shape{vocab_size, d});
  for (double& v : model.embeddings_.values()) v = emb_rng.uniform(-kEmbeddingScale, kEmbeddingScale);
  model.embeddings_.set_requires_grad(true);

  // Every kernel and its block of output rows draw from streams keyed by the
  // kernel height, so reordering the heights only reorders the blocks.
  const std::size_t features = f * config.kernel_heights.size();
  const double out_bound = std::sqrt(6.0 / static_cast<double>(features + kClasses));
  model.output_weights_ = Tensor(Shape{features, kClasses});
  auto out = model.output_weights_.values();
  for (std::size_t k = 0; k < config.kernel_heights.size(); ++k) {
    const std::size_t h = config.kernel_heights[k];
    Rng rng(mix_seed(seed, kKernelStream + h));
    model.kernels_.push_back({h, glorot_uniform(Shape{f, h, d}, h * d, f * h * d, rng),
                              Tensor(Shape{f})});
    model.kernels_.back().bias.set_requires_grad(true);
    Rng out_rng(mix_seed(seed, kOutputStream + h));
    for (std::size_t i = 0; i < f * kClasses; ++i) {
      out[k * f * kClasses + i] = out_rng.uniform(-out_bound, out_bound);
    }
  }
  model.output_weights_.set_requires_grad(true);
  model.output_bias_ = Tensor(Shape{kClasses});
  model.output_bias_.set_requires_grad(true);
  return model;
}

std::size_t ClassifierModel::feature_size() const noexcept {
  return config_.filters_per_kernel * config_.kernel_heights.size();
}

std::size_t ClassifierModel::min_length() const noexcept {
  return *std::max_element(config_.kernel_heights.begin(), config_.kernel_heights.end());
}

void ClassifierModel::set_embeddings(Tensor table) {
  if (table.shape() != embeddings_.shape()) {
    throw ShapeError("embedding table " + shape_string(table.shape()) + " does not match " +
                     shape_string(embeddings_.shape()));
  }
  table.set_requires_grad(!frozen_);
  embeddings_ = std::move(table);
}

void ClassifierModel::freeze_embeddings(bool frozen) {
  frozen_ = frozen;
  embeddings_.set_requires_grad(!frozen);
}

std::vector<NamedTensor> ClassifierModel::parameters() const {
  std::vector<NamedTensor> params = {{"embedding", embeddings_}};
  for (const auto& kernel : kernels_) {
    params.push_back({kernel_name(kernel.height, "weight"), kernel.weights});
    params.push_back({kernel_name(kernel.height, "bias"), kernel.bias});
  }
  params.push_back({"output.weight", output_weights_});
  params.push_back({"output.bias", output_bias_});
  return params;
}

std::vector<Tensor> ClassifierModel::trainable_parameters() const {
  std::vector<Tensor> params;
  for (auto& entry : parameters()) {
    if (entry.tensor.requires_grad()) params.push_back(entry.tensor);
  }
  return params;
}

Checkpoint ClassifierModel::to_checkpoint(const std::string& vocab_hash) const {
  Checkpoint ckpt;
  ckpt.kind = "classifier";
  ckpt.vocab_hash = vocab_hash;
  ckpt.hyperparameters = config_.to_json();
  ckpt.metadata = {{"seed", seed_}, {"freeze_embeddings", frozen_}};
  ckpt.tensors = parameters();
  return ckpt;
}

ClassifierModel ClassifierModel::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "classifier") {
    throw CheckpointError("expected a classifier checkpoint, got \"" + checkpoint.kind + "\"");
  }
  const auto config = ClassifierConfig::from_json(checkpoint.hyperparameters);
  check_structure(config);
  const Tensor& table = checkpoint.tensor("embedding");
  if (table.rank() != 2 || table.dim(1) != config.embedding_dim) {
    throw CheckpointError("classifier embedding has shape " + shape_string(table.shape()));
  }
  ClassifierModel model;
  model.config_ = config;
  model.seed_ = checkpoint.metadata.value("seed", std::uint64_t{0});
  const std::size_t f = config.filters_per_kernel, d = config.embedding_dim;
  auto take = [&](const std::string& name, const Shape& shape) {
    Tensor t = checkpoint.tensor(name).clone();
    if (t.shape() != shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_string(t.shape()) +
                            ", expected " + shape_string(shape));
    }
    t.set_requires_grad(true);
    return t;
  };
  model.embeddings_ = take("embedding", table.shape());
  for (std::size_t h : config.kernel_heights) {
    model.kernels_.push_back({h, take(kernel_name(h, "weight"), Shape{f, h, d}),
                              take(kernel_name(h, "bias"), Shape{f})});
  }
  model.output_weights_ = take("output.weight", Shape{model.feature_size(), kClasses});
  model.output_bias_ = take("output.bias", Shape{kClasses});
  model.freeze_embeddings(checkpoint.metadata.value("freeze_embeddings", false));
  return model;
}

Tensor classifier_features(Tape& tape, const ClassifierModel& model, const SentenceEncoding& enc,
                           Mode mode, std::uint64_t dropout_seed) {
  std::vector<int> ids(enc.word_ids.begin(), enc.word_ids.end());
  if (ids.size() < model.min_length()) ids.resize(model.min_length(), Vocabulary::kPad);
  const Tensor sentence = ops::embed(tape, ids, model.embeddings());
  const double p = model.config().dropout_p;
  std::vector<Tensor> blocks;
  blocks.reserve(model.kernels().size());
  for (const auto& kernel : model.kernels()) {
    Tensor maps = ops::conv_text(tape, sentence, kernel.weights, kernel.bias, ops::Activation::relu);
    Tensor pooled = ops::max_over_time(tape, maps);
    if (mode == Mode::train && p > 0.0) {
      Rng rng(mix_seed(dropout_seed, kDropoutStream + kernel.height));
      pooled = ops::dropout(tape, pooled, p, mode, rng);
    }
    blocks.push_back(std::move(pooled));
  }
  return ops::concat(tape, blocks);
}

Tensor classifier_logits(Tape& tape, const ClassifierModel& model, const SentenceEncoding& enc,
                         Mode mode, std::uint64_t dropout_seed) {
  Tensor features = classifier_features(tape, model, enc, mode, dropout_seed);
  return ops::linear(tape, features, model.output_weights(), model.output_bias());
}

Tensor classifier_loss(Tape& tape, const ClassifierModel& model, const ClassifierExample& example,
                       Mode mode, std::uint64_t dropout_seed) {
  if (example.label != 0 && example.label != 1) {
    throw InvalidLabel("classifier label must be 0 or 1, got " + std::to_string(example.label));
  }
  Tensor logits = classifier_logits(tape, model, example.encoding, mode, dropout_seed);
  return ops::softmax_xent(tape, logits, static_cast<std::size_t>(example.label)).loss;
}

Tensor classifier_batch_loss(Tape& tape, const ClassifierModel& model,
                             std::span<const ClassifierExample> batch, std::uint64_t step_seed) {
  if (batch.empty()) throw InsufficientData("empty training batch");
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    losses.push_back(classifier_loss(tape, model, batch[i], Mode::train, mix_seed(step_seed, i)));
  }
  return ops::mean(tape, losses);
}

double train_step(ClassifierModel& model, std::span<const ClassifierExample> batch,
                  AdamState& adam, Rng& rng) {
  Tape tape;
  Tensor loss = classifier_batch_loss(tape, model, batch, rng.fork());
  tape.backward(loss);
  auto params = model.trainable_parameters();
  adam_step(adam, params);
  return loss.item();
}

double relevance_probability(const ClassifierModel& model, const SentenceEncoding& enc) {
  Tape tape(false);
  Tensor logits = classifier_logits(tape, model, enc, Mode::infer);
  return ops::softmax(logits.values())[1];
}

bool predict(const ClassifierModel& model, const SentenceEncoding& enc, double threshold) {
  return is_relevant(relevance_probability(model, enc), threshold);
}

}  // namespace threatlens
