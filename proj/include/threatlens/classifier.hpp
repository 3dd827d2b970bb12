#pragma once

// CNN relevance classifier: word embeddings, one convolution filter bank per
// kernel height, max-over-time pooling, dropout and a two-way softmax.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "threatlens/adam.hpp"
#include "threatlens/checkpoint.hpp"
#include "threatlens/tensor.hpp"
#include "threatlens/textprep.hpp"

namespace threatlens {

enum class EmbeddingInit { random, pretrained };

std::string to_string(EmbeddingInit init);
EmbeddingInit parse_embedding_init(const std::string& text);

struct ClassifierConfig {
  std::size_t embedding_dim = 100;
  EmbeddingInit embedding_init = EmbeddingInit::random;
  std::vector<std::size_t> kernel_heights = {3, 5, 7};
  std::size_t filters_per_kernel = 128;
  double dropout_p = 0.5;
  std::size_t max_len = kDefaultMaxLen;

  // Checks the grid-search value sets (3-6 strictly increasing heights,
  // f in {64,128,192,256}, ...). Throws ConfigError.
  void validate() const;

  nlohmann::json to_json() const;
  // Every field is required and unknown keys are rejected.
  static ClassifierConfig from_json(const nlohmann::json& json);

  bool operator==(const ClassifierConfig&) const = default;
};

struct ConvKernel {
  std::size_t height = 0;
  Tensor weights;  // [f x h x d]
  Tensor bias;     // [f]
};

class ClassifierModel {
 public:
  // Any positive sizes are accepted here; ClassifierConfig::validate is the
  // stricter check applied to user configs. Heights must be distinct.
  static ClassifierModel create(const ClassifierConfig& config, std::size_t vocab_size,
                                std::uint64_t seed);

  const ClassifierConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t feature_size() const noexcept;
  // Input length the forward pass pads up to.
  std::size_t min_length() const noexcept;

  Tensor& embeddings() noexcept { return embeddings_; }
  const Tensor& embeddings() const noexcept { return embeddings_; }
  std::vector<ConvKernel>& kernels() noexcept { return kernels_; }
  const std::vector<ConvKernel>& kernels() const noexcept { return kernels_; }
  Tensor& output_weights() noexcept { return output_weights_; }
  const Tensor& output_weights() const noexcept { return output_weights_; }
  Tensor& output_bias() noexcept { return output_bias_; }
  const Tensor& output_bias() const noexcept { return output_bias_; }

  // Replaces the embedding table, e.g. with pretrained vectors [V x d].
  void set_embeddings(Tensor table);
  bool embeddings_frozen() const noexcept { return frozen_; }
  void freeze_embeddings(bool frozen);

  std::vector<NamedTensor> parameters() const;
  std::vector<Tensor> trainable_parameters() const;

  Checkpoint to_checkpoint(const std::string& vocab_hash) const;
  static ClassifierModel from_checkpoint(const Checkpoint& checkpoint);

 private:
  ClassifierConfig config_;
  std::uint64_t seed_ = 0;
  bool frozen_ = false;
  Tensor embeddings_;  // [V x d]
  std::vector<ConvKernel> kernels_;
  Tensor output_weights_;  // [k*f x 2]
  Tensor output_bias_;     // [2]
};

struct ClassifierExample {
  SentenceEncoding encoding;
  int label = 0;  // 1 = relevant
};

// Pooled (and, in train mode, dropped-out) feature vector of length k*f.
// `dropout_seed` is only read in train mode; each kernel block draws its mask
// from its own stream derived from the seed and the kernel height.
Tensor classifier_features(Tape& tape, const ClassifierModel& model, const SentenceEncoding& enc,
                           Mode mode, std::uint64_t dropout_seed = 0);

// Logits [2] (index 1 = relevant).
Tensor classifier_logits(Tape& tape, const ClassifierModel& model, const SentenceEncoding& enc,
                         Mode mode, std::uint64_t dropout_seed = 0);

// Cross-entropy for one example.
Tensor classifier_loss(Tape& tape, const ClassifierModel& model, const ClassifierExample& example,
                       Mode mode, std::uint64_t dropout_seed = 0);

// Mean cross-entropy over the batch in train mode. No update is applied.
Tensor classifier_batch_loss(Tape& tape, const ClassifierModel& model,
                             std::span<const ClassifierExample> batch, std::uint64_t step_seed);

// One Adam step on the batch mean loss; returns that loss. Dropout masks come
// from `rng`.
double train_step(ClassifierModel& model, std::span<const ClassifierExample> batch,
                  AdamState& adam, Rng& rng);

// p(relevant), inference mode.
double relevance_probability(const ClassifierModel& model, const SentenceEncoding& enc);

inline constexpr double kDefaultThreshold = 0.5;

// Relevant iff p >= threshold.
bool predict(const ClassifierModel& model, const SentenceEncoding& enc,
             double threshold = kDefaultThreshold);
inline bool is_relevant(double probability, double threshold = kDefaultThreshold) {
  return probability >= threshold;
}

}  // namespace threatlens
