#pragma once

// Linear-chain CRF over m labels. The transition matrix has two extra virtual
// states, START (index m) and STOP (index m+1); transitions(i, j) scores the
// move from label i to label j.

#include <cstddef>
#include <span>
#include <vector>

#include "threatlens/tensor.hpp"

namespace threatlens {

struct CrfParams {
  std::size_t label_count = 0;
  Tensor transitions;  // [(m+2) x (m+2)]

  static CrfParams zeros(std::size_t label_count);
  std::size_t start() const noexcept { return label_count; }
  std::size_t stop() const noexcept { return label_count + 1; }
};

// Emissions E are [n x m].
double sequence_score(const Tensor& emissions, std::span<const int> labels, const CrfParams& crf);

// Forward algorithm in log space.
double log_partition(const Tensor& emissions, const CrfParams& crf);

// log Z - score(y). Gradients reach the emissions and the transitions through
// the forward-backward marginals.
Tensor nll_loss(Tape& tape, const Tensor& emissions, std::span<const int> labels,
                const CrfParams& crf);

struct ViterbiResult {
  std::vector<int> labels;
  double score = 0.0;
};

// Ties go to the lowest label index, both for the final label and at every
// backtracking step.
ViterbiResult viterbi(const Tensor& emissions, const CrfParams& crf);

}  // namespace threatlens
