#pragma once

// Hyperparameter grids, k-fold cross-validated grid search and the JSON-lines
// report.

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "threatlens/classifier.hpp"
#include "threatlens/ner.hpp"
#include "threatlens/training.hpp"

namespace threatlens {

// How `count` kernel heights are laid out: 2,3,4,...; 3,5,7,...; 2,4,6,...
enum class HeightScheme { sequential, odd, even };

std::string to_string(HeightScheme scheme);
HeightScheme parse_height_scheme(const std::string& text);
std::vector<std::size_t> kernel_heights(HeightScheme scheme, std::size_t count);

struct ClassifierGrid {
  EmbeddingInit embedding_init = EmbeddingInit::random;
  std::vector<std::size_t> embedding_dims;
  std::vector<std::size_t> kernel_counts;
  std::vector<HeightScheme> height_schemes;
  std::vector<std::size_t> filters;
  std::vector<double> dropouts;

  // The full published search space for the given initialization.
  static ClassifierGrid full(EmbeddingInit init);
  // Cartesian product, dims outermost and dropout innermost.
  std::vector<ClassifierConfig> configs() const;

  nlohmann::json to_json() const;
  // Lists absent from `json` keep the full-grid values.
  static ClassifierGrid from_json(const nlohmann::json& json);
};

struct DropoutPlacement {
  bool after_char = false;
  bool after_word = false;
  bool operator==(const DropoutPlacement&) const = default;
};

struct NerGrid {
  EmbeddingInit embedding_init = EmbeddingInit::random;
  std::vector<std::size_t> word_dims;
  std::vector<std::size_t> char_dims;
  std::vector<std::size_t> char_hiddens;
  std::vector<std::size_t> word_hiddens;
  std::vector<DropoutPlacement> placements;

  static NerGrid full(EmbeddingInit init);
  // Word dims outermost, then char dims, char hiddens, word hiddens,
  // placements.
  std::vector<NerConfig> configs() const;

  nlohmann::json to_json() const;
  static NerGrid from_json(const nlohmann::json& json);
};

struct GridRow {
  std::size_t index = 0;  // position in grid order
  nlohmann::json config;
  std::string config_hash;  // FNV-1a of the compact config JSON
  std::vector<nlohmann::json> folds;
  nlohmann::json mean;
  double score = 0.0;  // higher is better
  std::size_t rank = 0;  // 1-based; failed configs rank last
  std::string error;     // empty on success

  nlohmann::json to_json() const;
};

struct GridOptions {
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  EarlyStopPolicy policy;
  AdamOptions adam;
  bool freeze_pretrained = false;
  // Called once per finished config, serialized across workers.
  std::function<void(const GridRow&)> on_row;
};

std::string config_hash(const nlohmann::json& config);

// Every config is cross-validated on the same folds with the same model
// seed. Classifier rows score -distance((mean TPR, mean TNR), (1, 1)); NER
// rows score mean micro-F1. Ties keep grid order. `pretrained` is required
// when the grid uses pretrained embeddings.
std::vector<GridRow> grid_search_classifier(const ClassifierGrid& grid,
                                            std::span<const ClassifierExample> data,
                                            std::size_t vocab_size, const GridOptions& options,
                                            const Tensor* pretrained = nullptr);
std::vector<GridRow> grid_search_ner(const NerGrid& grid, std::span<const NerExample> data,
                                     std::size_t word_vocab, std::size_t char_vocab,
                                     const GridOptions& options,
                                     const Tensor* pretrained = nullptr);

// One JSON object per line, in grid order.
void write_grid_report(std::ostream& out, const std::vector<GridRow>& rows);
// The successful row with rank 1; throws InsufficientData if every config failed.
const GridRow& best_row(const std::vector<GridRow>& rows);

}  // namespace threatlens
