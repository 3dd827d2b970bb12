#include <gtest/gtest.h>

#include <cmath>

#include "threatlens/crf.hpp"
#include "threatlens/errors.hpp"
#include "threatlens/gradcheck.hpp"
#include "threatlens/ops.hpp"

namespace threatlens {
namespace {

// Exhaustive oracle: scores every one of the m^n label sequences directly
// from the definition, without sharing code with the forward algorithm.
struct Enumeration {
  double log_z = 0.0;
  double best = -INFINITY;
  std::vector<std::vector<int>> paths;
  std::vector<double> scores;
};

double direct_score(const Tensor& e, const std::vector<int>& y, const Tensor& tr, std::size_t m) {
  double s = tr.at(m, y[0]) + tr.at(y.back(), m + 1);
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += e.at(t, y[t]);
    if (t) s += tr.at(y[t - 1], y[t]);
  }
  return s;
}

Enumeration enumerate(const Tensor& e, const Tensor& tr, std::size_t m) {
  const std::size_t n = e.dim(0);
  Enumeration out;
  std::vector<int> y(n, 0);
  while (true) {
    out.paths.push_back(y);
    out.scores.push_back(direct_score(e, y, tr, m));
    std::size_t k = 0;
    while (k < n && ++y[k] == static_cast<int>(m)) y[k++] = 0;
    if (k == n) break;
  }
  for (double s : out.scores) out.best = std::max(out.best, s);
  double total = 0.0;
  for (double s : out.scores) total += std::exp(s - out.best);
  out.log_z = out.best + std::log(total);
  return out;
}

CrfParams random_crf(std::size_t m, Rng& rng, double scale) {
  auto crf = CrfParams::zeros(m);
  for (double& v : crf.transitions.values()) v = rng.uniform(-scale, scale);
  return crf;
}

Tensor random_emissions(std::size_t n, std::size_t m, Rng& rng, double scale) {
  Tensor e(Shape{n, m});
  for (double& v : e.values()) v = rng.uniform(-scale, scale);
  e.set_requires_grad(true);
  return e;
}

TEST(Crf, SequenceScoreExamples) {
  auto crf = CrfParams::zeros(2);
  const std::vector<int> y01 = {0, 1};
  EXPECT_EQ(sequence_score(Tensor(Shape{2, 2}, {1, 0, 0, 1}), y01, crf), 2.0);
  const std::vector<int> y1 = {1};
  EXPECT_EQ(sequence_score(Tensor(Shape{1, 2}, {0.25, -3.5}), y1, crf), -3.5);
  EXPECT_EQ(sequence_score(Tensor(Shape{2, 2}), y01, crf), 0.0);

  const std::vector<int> bad = {0, 2};
  EXPECT_THROW(sequence_score(Tensor(Shape{2, 2}), bad, crf), InvalidLabel);
  const std::vector<int> negative = {-1, 0};
  EXPECT_THROW(sequence_score(Tensor(Shape{2, 2}), negative, crf), InvalidLabel);
  EXPECT_THROW(sequence_score(Tensor(Shape{3, 2}), y01, crf), ShapeError);
}

TEST(Crf, LogPartitionExamples) {
  auto crf = CrfParams::zeros(2);
  EXPECT_NEAR(log_partition(Tensor(Shape{1, 2}, {0.3, -1.2}), crf),
              std::log(std::exp(0.3) + std::exp(-1.2)), 1e-12);
  const double expected = std::log(std::exp(2.0) + 2.0 * std::exp(1.0) + 1.0);
  EXPECT_NEAR(log_partition(Tensor(Shape{2, 2}, {1, 0, 0, 1}), crf), expected, 1e-12);
  EXPECT_THROW(log_partition(Tensor(Shape{0, 2}), crf), EmptySequence);
}

TEST(Crf, ForwardMatchesEnumeration) {
  Rng rng(11);
  int checked = 0;
  for (std::size_t m = 1; m <= 8; ++m) {
    for (std::size_t n = 1; n <= 12; ++n) {
      if (std::pow(double(m), double(n)) > 4096) break;
      for (int rep = 0; rep < 3; ++rep) {
        auto crf = random_crf(m, rng, 2.0);
        Tensor e = random_emissions(n, m, rng, 3.0);
        const auto oracle = enumerate(e, crf.transitions, m);
        ASSERT_NEAR(log_partition(e, crf), oracle.log_z, 1e-9) << "n=" << n << " m=" << m;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(Crf, ViterbiMatchesEnumeration) {
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(5), m = 1 + rng.index(4);
    auto crf = random_crf(m, rng, 2.0);
    Tensor e = random_emissions(n, m, rng, 3.0);
    const auto oracle = enumerate(e, crf.transitions, m);
    const auto result = viterbi(e, crf);
    ASSERT_EQ(result.labels.size(), n);
    EXPECT_NEAR(result.score, oracle.best, 1e-9);
    EXPECT_NEAR(direct_score(e, result.labels, crf.transitions, m), oracle.best, 1e-9);
    EXPECT_LE(result.score, log_partition(e, crf) + 1e-12);
  }
}

TEST(Crf, ViterbiTieBreaking) {
  auto crf = CrfParams::zeros(2);
  auto r = viterbi(Tensor(Shape{2, 2}, {1, 0, 0, 1}), crf);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(r.score, 2.0);

  auto flat = CrfParams::zeros(4);
  for (double& v : flat.transitions.values()) v = 0.7;
  auto tied = viterbi(Tensor(Shape{5, 4}, 1.5), flat);
  EXPECT_EQ(tied.labels, std::vector<int>(5, 0));

  // tie between the last two labels at the final step only
  auto crf3 = CrfParams::zeros(3);
  auto last = viterbi(Tensor(Shape{2, 3}, {5, 0, 0, 0, 2, 2}), crf3);
  EXPECT_EQ(last.labels, (std::vector<int>{0, 1}));
}

TEST(Crf, NllExamples) {
  auto single = CrfParams::zeros(1);
  Tape tape(false);
  const std::vector<int> zeros(4, 0);
  Rng rng(5);
  EXPECT_NEAR(nll_loss(tape, random_emissions(4, 1, rng, 5.0), zeros, single).item(), 0.0, 1e-12);

  auto crf = CrfParams::zeros(3);
  const std::vector<int> y = {2, 0, 1, 1};
  Tensor peaked(Shape{4, 3}, -100.0);
  for (std::size_t t = 0; t < 4; ++t) peaked.values()[t * 3 + y[t]] = 100.0;
  EXPECT_LT(nll_loss(tape, peaked, y, crf).item(), 1e-6);
}

TEST(Crf, NllIsNonNegativeAndDominates) {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(6), m = 1 + rng.index(5);
    auto crf = random_crf(m, rng, 3.0);
    Tensor e = random_emissions(n, m, rng, 5.0);
    std::vector<int> y(n);
    for (auto& label : y) label = static_cast<int>(rng.index(m));
    Tape tape(false);
    EXPECT_GE(nll_loss(tape, e, y, crf).item(), 0.0);
    EXPECT_GE(log_partition(e, crf) + 1e-12 * (1 + std::abs(sequence_score(e, y, crf))),
              sequence_score(e, y, crf));
  }
}

TEST(Crf, NllGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.index(5), m = 1 + rng.index(4);
    auto crf = random_crf(m, rng, 1.0);
    Tensor e = random_emissions(n, m, rng, 2.0);
    std::vector<int> y(n);
    for (auto& label : y) label = static_cast<int>(rng.index(m));
    std::vector<Tensor> params = {e, crf.transitions};
    auto result =
        grad_check([&](Tape& tape) { return nll_loss(tape, e, y, crf); }, params);
    EXPECT_LT(result.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Crf, NllGradientFlowsThroughDownstreamOps) {
  Rng rng(40);
  auto crf = random_crf(3, rng, 1.0);
  Tensor e = random_emissions(4, 3, rng, 2.0);
  const std::vector<int> y = {0, 2, 2, 1};
  std::vector<Tensor> params = {e, crf.transitions};
  auto result = grad_check(
      [&](Tape& tape) {
        const Tensor losses[] = {nll_loss(tape, e, y, crf), nll_loss(tape, e, y, crf)};
        return ops::scale(tape, ops::mean(tape, losses), 3.0);
      },
      params);
  EXPECT_LT(result.max_relative_error, 1e-4);
  EXPECT_GT(std::abs(result.analytic) + std::abs(result.numeric), 0.0);
}

TEST(Crf, ConstantShiftInvariance) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(6), m = 1 + rng.index(5);
    auto crf = random_crf(m, rng, 2.0);
    Tensor e = random_emissions(n, m, rng, 3.0);
    std::vector<int> y(n);
    for (auto& label : y) label = static_cast<int>(rng.index(m));
    // uniform shift, and a per-position shift: both add the same amount to every path
    const double c = rng.uniform(-10, 10);
    Tensor uniform = e.clone(), per_row = e.clone();
    double row_total = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ct = rng.uniform(-10, 10);
      row_total += ct;
      for (std::size_t j = 0; j < m; ++j) {
        uniform.values()[t * m + j] += c;
        per_row.values()[t * m + j] += ct;
      }
    }
    Tape tape(false);
    const double base = nll_loss(tape, e, y, crf).item();
    EXPECT_NEAR(log_partition(uniform, crf), log_partition(e, crf) + c * double(n), 1e-9);
    EXPECT_NEAR(sequence_score(per_row, y, crf), sequence_score(e, y, crf) + row_total, 1e-9);
    EXPECT_NEAR(nll_loss(tape, uniform, y, crf).item(), base, 1e-9);
    EXPECT_NEAR(nll_loss(tape, per_row, y, crf).item(), base, 1e-9);
    EXPECT_EQ(viterbi(uniform, crf).labels, viterbi(e, crf).labels);
  }
}

}  // namespace
}  // namespace threatlens
