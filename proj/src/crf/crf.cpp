#include "threatlens/crf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "threatlens/errors.hpp"
#include "threatlens/ops.hpp"

namespace threatlens {

namespace {

void check_inputs(const Tensor& emissions, const CrfParams& crf) {
  const std::size_t m = crf.label_count;
  if (m == 0) throw ShapeError("crf needs at least one label");
  if (crf.transitions.shape() != Shape{m + 2, m + 2}) {
    throw ShapeError("crf transitions " + shape_string(crf.transitions.shape()) + " for " +
                     std::to_string(m) + " labels");
  }
  if (emissions.rank() != 2 || emissions.dim(1) != m) {
    throw ShapeError("emissions " + shape_string(emissions.shape()) + " for " +
                     std::to_string(m) + " labels");
  }
  if (emissions.dim(0) == 0) throw EmptySequence("crf over an empty sequence");
}

void check_labels(std::span<const int> labels, const Tensor& emissions, std::size_t m) {
  if (labels.size() != emissions.dim(0)) {
    throw ShapeError("label sequence length " + std::to_string(labels.size()) +
                     " != emission rows " + std::to_string(emissions.dim(0)));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= m) {
      throw InvalidLabel("label " + std::to_string(y) + " outside [0, " + std::to_string(m) + ")");
    }
  }
}

double lse(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == -INFINITY) return hi;
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

// alpha[t*m + j]: log-sum of all prefixes ending in j at t, emission included.
std::vector<double> forward(const Tensor& e, const CrfParams& crf) {
  const std::size_t n = e.dim(0), m = crf.label_count;
  const Tensor& tr = crf.transitions;
  std::vector<double> alpha(n * m);
  for (std::size_t j = 0; j < m; ++j) alpha[j] = tr.at(crf.start(), j) + e.at(0, j);
  std::vector<double> terms(m);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < m; ++i) terms[i] = alpha[(t - 1) * m + i] + tr.at(i, j);
      alpha[t * m + j] = ops::logsumexp(terms) + e.at(t, j);
    }
  }
  return alpha;
}

// beta[t*m + i]: log-sum of all suffixes after t given label i at t, STOP included.
std::vector<double> backward(const Tensor& e, const CrfParams& crf) {
  const std::size_t n = e.dim(0), m = crf.label_count;
  const Tensor& tr = crf.transitions;
  std::vector<double> beta(n * m);
  for (std::size_t i = 0; i < m; ++i) beta[(n - 1) * m + i] = tr.at(i, crf.stop());
  std::vector<double> terms(m);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        terms[j] = tr.at(i, j) + e.at(t + 1, j) + beta[(t + 1) * m + j];
      }
      beta[t * m + i] = ops::logsumexp(terms);
    }
  }
  return beta;
}

double finish(const std::vector<double>& alpha, const Tensor& e, const CrfParams& crf) {
  const std::size_t n = e.dim(0), m = crf.label_count;
  double log_z = -INFINITY;
  for (std::size_t j = 0; j < m; ++j) {
    log_z = lse(log_z, alpha[(n - 1) * m + j] + crf.transitions.at(j, crf.stop()));
  }
  if (!std::isfinite(log_z)) throw NumericError("crf log partition is not finite");
  return log_z;
}

}  // namespace

CrfParams CrfParams::zeros(std::size_t label_count) {
  CrfParams crf;
  crf.label_count = label_count;
  crf.transitions = Tensor(Shape{label_count + 2, label_count + 2});
  crf.transitions.set_requires_grad(true);
  return crf;
}

double sequence_score(const Tensor& emissions, std::span<const int> labels, const CrfParams& crf) {
  check_inputs(emissions, crf);
  check_labels(labels, emissions, crf.label_count);
  const Tensor& tr = crf.transitions;
  double score = tr.at(crf.start(), labels[0]);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    score += emissions.at(t, labels[t]);
    if (t > 0) score += tr.at(labels[t - 1], labels[t]);
  }
  return score + tr.at(labels.back(), crf.stop());
}

double log_partition(const Tensor& emissions, const CrfParams& crf) {
  check_inputs(emissions, crf);
  return finish(forward(emissions, crf), emissions, crf);
}

Tensor nll_loss(Tape& tape, const Tensor& emissions, std::span<const int> labels,
                const CrfParams& crf) {
  const double score = sequence_score(emissions, labels, crf);
  const auto alpha = forward(emissions, crf);
  const double log_z = finish(alpha, emissions, crf);
  // log Z includes y's own path; clamp away rounding below zero
  Tensor loss = Tensor::scalar(std::max(0.0, log_z - score));
  if (!std::isfinite(loss.item())) throw NumericError("crf loss is not finite");

  const Tensor& tr = crf.transitions;
  if (tape.recording() && (emissions.requires_grad() || tr.requires_grad())) {
    loss.set_requires_grad(true);
    std::vector<int> gold(labels.begin(), labels.end());
    tape.record([emissions, crf, gold, alpha, log_z, loss] {
      const std::size_t n = emissions.dim(0), m = crf.label_count, w = m + 2;
      const double g = loss.grad()[0];
      const auto beta = backward(emissions, crf);
      const Tensor& tr = crf.transitions;
      const bool want_e = emissions.requires_grad(), want_t = tr.requires_grad();
      auto de = want_e ? emissions.grad() : std::span<double>{};
      auto dt = want_t ? tr.grad() : std::span<double>{};
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t j = 0; j < m; ++j) {
          const double marginal = std::exp(alpha[t * m + j] + beta[t * m + j] - log_z);
          if (want_e) de[t * m + j] += g * marginal;
          if (want_t && t == 0) dt[crf.start() * w + j] += g * marginal;
          if (want_t && t == n - 1) dt[j * w + crf.stop()] += g * marginal;
          if (want_t && t > 0) {
            for (std::size_t i = 0; i < m; ++i) {
              const double pair = std::exp(alpha[(t - 1) * m + i] + tr.at(i, j) +
                                           emissions.at(t, j) + beta[t * m + j] - log_z);
              dt[i * w + j] += g * pair;
            }
          }
        }
      }
      for (std::size_t t = 0; t < n; ++t) {
        const auto y = static_cast<std::size_t>(gold[t]);
        if (want_e) de[t * m + y] -= g;
        if (want_t) {
          const std::size_t prev = t == 0 ? crf.start() : static_cast<std::size_t>(gold[t - 1]);
          dt[prev * w + y] -= g;
        }
      }
      if (want_t) dt[static_cast<std::size_t>(gold.back()) * w + crf.stop()] -= g;
    });
  }
  return loss;
}

ViterbiResult viterbi(const Tensor& emissions, const CrfParams& crf) {
  check_inputs(emissions, crf);
  const std::size_t n = emissions.dim(0), m = crf.label_count;
  const Tensor& tr = crf.transitions;
  std::vector<double> best(n * m);
  std::vector<int> back(n * m, 0);
  for (std::size_t j = 0; j < m; ++j) best[j] = tr.at(crf.start(), j) + emissions.at(0, j);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < m; ++j) {
      double top = best[(t - 1) * m] + tr.at(0, j);
      int arg = 0;
      for (std::size_t i = 1; i < m; ++i) {
        const double cand = best[(t - 1) * m + i] + tr.at(i, j);
        if (cand > top) {
          top = cand;
          arg = static_cast<int>(i);
        }
      }
      best[t * m + j] = top + emissions.at(t, j);
      back[t * m + j] = arg;
    }
  }
  ViterbiResult result;
  result.score = best[(n - 1) * m] + tr.at(0, crf.stop());
  int last = 0;
  for (std::size_t j = 1; j < m; ++j) {
    const double cand = best[(n - 1) * m + j] + tr.at(j, crf.stop());
    if (cand > result.score) {
      result.score = cand;
      last = static_cast<int>(j);
    }
  }
  result.labels.assign(n, 0);
  result.labels[n - 1] = last;
  for (std::size_t t = n - 1; t > 0; --t) {
    result.labels[t - 1] = back[t * m + static_cast<std::size_t>(result.labels[t])];
  }
  return result;
}

}  // namespace threatlens
