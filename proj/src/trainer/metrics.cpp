#include "threatlens/metrics.hpp"

#include <cmath>
#include <set>
#include <tuple>

#include "threatlens/errors.hpp"

namespace threatlens {

namespace {

double rate(std::size_t hit, std::size_t miss) {
  const std::size_t total = hit + miss;
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

double ClassMetrics::tpr() const { return rate(tp, fn); }
double ClassMetrics::tnr() const { return rate(tn, fp); }
double ClassMetrics::distance() const { return distance_to_ideal(tpr(), tnr()); }

void ClassMetrics::add(bool predicted_relevant, bool gold_relevant) {
  if (gold_relevant) {
    ++(predicted_relevant ? tp : fn);
  } else {
    ++(predicted_relevant ? fp : tn);
  }
}

nlohmann::json ClassMetrics::to_json() const {
  return {{"tp", tp},       {"tn", tn},       {"fp", fp},
          {"fn", fn},       {"tpr", tpr()},   {"tnr", tnr()},
          {"distance", distance()}};
}

ClassMetrics classification_metrics(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.size() != gold.size()) throw ShapeError("prediction and gold counts differ");
  ClassMetrics m;
  for (std::size_t i = 0; i < gold.size(); ++i) m.add(predicted[i] == 1, gold[i] == 1);
  return m;
}

double distance_to_ideal(double tpr, double tnr) { return std::hypot(1.0 - tpr, 1.0 - tnr); }

nlohmann::json Prf::to_json() const {
  return {{"correct", correct},     {"predicted", predicted}, {"gold", gold},
          {"precision", precision}, {"recall", recall},       {"f1", f1}};
}

Prf make_prf(std::size_t correct, std::size_t predicted, std::size_t gold) {
  Prf prf{correct, predicted, gold};
  const bool vacuous = predicted == 0 && gold == 0;
  prf.precision = predicted ? static_cast<double>(correct) / predicted : (vacuous ? 1.0 : 0.0);
  prf.recall = gold ? static_cast<double>(correct) / gold : (vacuous ? 1.0 : 0.0);
  const double sum = prf.precision + prf.recall;
  prf.f1 = sum > 0.0 ? 2.0 * prf.precision * prf.recall / sum : 0.0;
  return prf;
}

nlohmann::json NerMetrics::to_json() const {
  nlohmann::json labels = nlohmann::json::object();
  for (std::size_t l = 1; l < LabelSet::size; ++l) {
    labels[LabelSet::name(static_cast<int>(l))] = per_label[l].to_json();
  }
  return {{"micro", micro.to_json()}, {"per_label", labels}, {"entity", entity.to_json()}};
}

NerMetrics ner_metrics(std::span<const std::vector<int>> gold,
                       std::span<const std::vector<int>> predicted) {
  if (gold.size() != predicted.size()) throw ShapeError("prediction and gold sentence counts differ");
  std::array<std::size_t, LabelSet::size> correct{}, n_pred{}, n_gold{};
  std::size_t span_correct = 0, span_pred = 0, span_gold = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const auto& g = gold[s];
    const auto& p = predicted[s];
    if (g.size() != p.size()) {
      throw ShapeError("sentence " + std::to_string(s) + ": label counts differ");
    }
    for (std::size_t t = 0; t < g.size(); ++t) {
      if (g[t] < 0 || g[t] >= static_cast<int>(LabelSet::size) || p[t] < 0 ||
          p[t] >= static_cast<int>(LabelSet::size)) {
        throw InvalidLabel("label index out of range");
      }
      ++n_gold[g[t]];
      ++n_pred[p[t]];
      if (g[t] == p[t]) ++correct[g[t]];
    }
    const auto gs = spans_from_labels(g);
    const auto ps = spans_from_labels(p);
    std::set<std::tuple<int, std::size_t, std::size_t>> gold_set;
    for (const auto& span : gs) gold_set.emplace(span.label, span.begin, span.end);
    for (const auto& span : ps) span_correct += gold_set.count({span.label, span.begin, span.end});
    span_pred += ps.size();
    span_gold += gs.size();
  }
  NerMetrics m;
  std::size_t c = 0, np = 0, ng = 0;
  for (std::size_t l = 1; l < LabelSet::size; ++l) {
    m.per_label[l] = make_prf(correct[l], n_pred[l], n_gold[l]);
    c += correct[l];
    np += n_pred[l];
    ng += n_gold[l];
  }
  m.micro = make_prf(c, np, ng);
  m.entity = make_prf(span_correct, span_pred, span_gold);
  return m;
}

std::size_t select_classifier(std::span<const ClassMetrics> candidates) {
  if (candidates.empty()) throw InsufficientData("no candidates to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].distance() < candidates[best].distance()) best = i;
  }
  return best;
}

std::size_t select_ner(std::span<const NerMetrics> candidates) {
  if (candidates.empty()) throw InsufficientData("no candidates to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].micro.f1 > candidates[best].micro.f1) best = i;
  }
  return best;
}

}  // namespace threatlens
