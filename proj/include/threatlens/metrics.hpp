#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "threatlens/ner.hpp"

namespace threatlens {

struct ClassMetrics {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  // A rate with an empty denominator (no positives, or no negatives) is 1:
  // nothing was missed.
  double tpr() const;
  double tnr() const;
  // Euclidean distance of (tpr, tnr) from (1, 1).
  double distance() const;

  void add(bool predicted_relevant, bool gold_relevant);
  nlohmann::json to_json() const;
};

ClassMetrics classification_metrics(std::span<const int> predicted, std::span<const int> gold);
double distance_to_ideal(double tpr, double tnr);

struct Prf {
  std::size_t correct = 0, predicted = 0, gold = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;

  nlohmann::json to_json() const;
};

// P = correct/predicted and R = correct/gold. With nothing predicted and
// nothing in the gold standard both are 1; otherwise an empty denominator
// gives 0. F1 = 2PR/(P+R), or 0 when P+R = 0.
Prf make_prf(std::size_t correct, std::size_t predicted, std::size_t gold);

struct NerMetrics {
  Prf micro;                                 // token level, non-O labels
  std::array<Prf, LabelSet::size> per_label;  // index 0 (O) is left empty
  Prf entity;                                // exact span and label match

  nlohmann::json to_json() const;
};

NerMetrics ner_metrics(std::span<const std::vector<int>> gold,
                       std::span<const std::vector<int>> predicted);

// Index of the candidate closest to (1, 1); the earliest wins ties.
std::size_t select_classifier(std::span<const ClassMetrics> candidates);
// Index of the highest micro-F1; the earliest wins ties.
std::size_t select_ner(std::span<const NerMetrics> candidates);

}  // namespace threatlens
