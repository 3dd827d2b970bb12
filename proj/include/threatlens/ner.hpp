#pragma once

// Char+word BiLSTM-CRF tagger. Each word is represented by its embedding
// concatenated with the final states of a character-level BiLSTM; a
// word-level BiLSTM reads the sentence and a linear layer scores the labels
// for the CRF.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "threatlens/adam.hpp"
#include "threatlens/checkpoint.hpp"
#include "threatlens/classifier.hpp"
#include "threatlens/crf.hpp"
#include "threatlens/lstm.hpp"
#include "threatlens/textprep.hpp"

namespace threatlens {

// Fixed label order; O is index 0.
struct LabelSet {
  static constexpr std::size_t size = 6;
  static constexpr int outside = 0;
  static const std::vector<std::string>& names();
  static const std::string& name(int label);
  // Throws InvalidLabel for anything outside the set.
  static int index(const std::string& name);
};

struct NerConfig {
  std::size_t word_dim = 100;
  std::size_t char_dim = 25;
  std::size_t char_hidden = 100;
  std::size_t word_hidden = 100;
  bool dropout_after_char = true;
  bool dropout_after_word = true;
  EmbeddingInit embedding_init = EmbeddingInit::random;

  void validate() const;
  nlohmann::json to_json() const;
  static NerConfig from_json(const nlohmann::json& json);

  bool operator==(const NerConfig&) const = default;
};

inline constexpr double kNerDropout = 0.5;

class NerModel {
 public:
  static NerModel create(const NerConfig& config, std::size_t word_vocab, std::size_t char_vocab,
                         std::uint64_t seed);

  const NerConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t word_width() const noexcept {
    return config_.word_dim + 2 * config_.char_hidden;
  }

  Tensor word_embeddings;  // [V x d_w]
  Tensor char_embeddings;  // [C x d_c]
  LstmCell char_fwd, char_bwd;
  LstmCell word_fwd, word_bwd;
  Tensor projection;       // [2*h_t x 6]
  Tensor projection_bias;  // [6]
  CrfParams crf;

  void set_word_embeddings(Tensor table);
  bool embeddings_frozen() const noexcept { return frozen_; }
  void freeze_embeddings(bool frozen);

  std::vector<NamedTensor> parameters() const;
  std::vector<Tensor> trainable_parameters() const;

  Checkpoint to_checkpoint(const std::string& vocab_hash) const;
  static NerModel from_checkpoint(const Checkpoint& checkpoint);

 private:
  NerConfig config_;
  std::uint64_t seed_ = 0;
  bool frozen_ = false;
};

// Character BiLSTM outputs keyed by character-id sequence, shared by repeated
// words within one tape.
using CharCache = std::map<std::vector<int>, Tensor>;

// [n x (d_w + 2*h_c)]
Tensor encode_words(Tape& tape, const NerModel& model, const SentenceEncoding& enc, Mode mode,
                    std::uint64_t dropout_seed = 0, CharCache* cache = nullptr);

// [n x 6]
Tensor emissions(Tape& tape, const NerModel& model, const SentenceEncoding& enc, Mode mode,
                 std::uint64_t dropout_seed = 0, CharCache* cache = nullptr);

struct NerExample {
  SentenceEncoding encoding;
  std::vector<int> labels;
};

Tensor ner_loss(Tape& tape, const NerModel& model, const NerExample& example, Mode mode,
                std::uint64_t dropout_seed = 0, CharCache* cache = nullptr);

// Mean CRF negative log-likelihood over the batch in train mode.
Tensor ner_batch_loss(Tape& tape, const NerModel& model, std::span<const NerExample> batch,
                      std::uint64_t step_seed);

double train_step_ner(NerModel& model, std::span<const NerExample> batch, AdamState& adam,
                      Rng& rng);

struct EntitySpan {
  int label = 0;
  std::size_t begin = 0;  // token index, inclusive
  std::size_t end = 0;    // exclusive
  bool operator==(const EntitySpan&) const = default;
};

// Maximal runs of one non-O label.
std::vector<EntitySpan> spans_from_labels(std::span<const int> labels);
std::vector<int> labels_from_spans(std::span<const EntitySpan> spans, std::size_t length);
std::string span_text(std::span<const std::string> tokens, const EntitySpan& span);

struct TaggedTweet {
  std::vector<std::string> tokens;
  std::vector<int> labels;
  std::vector<EntitySpan> spans;
};

// Viterbi labels for the encoded tokens. `tokens` are the words behind `enc`
// (only the first enc.size() are kept). An empty encoding gives an empty
// result.
TaggedTweet tag(const NerModel& model, const SentenceEncoding& enc,
                std::vector<std::string> tokens);
std::vector<int> predict_labels(const NerModel& model, const SentenceEncoding& enc);

}  // namespace threatlens
