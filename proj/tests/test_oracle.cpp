#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "clarinet/oracle.hpp"
#include "clarinet/verify.hpp"

using namespace clarinet;
using oracle::DiscreteToyProblem;

namespace {

DiscreteToyProblem single_input(std::vector<double> eta, std::vector<double> p) {
  const auto k = static_cast<Eigen::Index>(eta.size());
  DiscreteToyProblem problem{{1.0}, Matrix(1, k), Matrix(1, k)};
  for (Eigen::Index j = 0; j < k; ++j) {
    problem.label_given_input(0, j) = eta[static_cast<std::size_t>(j)];
    problem.predictor(0, j) = p[static_cast<std::size_t>(j)];
  }
  return problem;
}

/// Second transcription of the complementary population risk: sum over
/// (x, y, ybar) triples of P(x) P(y|x) / (K-1) times the per-example estimator.
double triple_sum_complementary_risk(const DiscreteToyProblem& problem) {
  const int k = problem.num_classes();
  double risk = 0.0;
  for (std::size_t x = 0; x < problem.num_inputs(); ++x) {
    const auto row = static_cast<Eigen::Index>(x);
    double all = 0.0;
    for (int c = 0; c < k; ++c) all += -std::log(problem.predictor(row, c));
    for (int y = 0; y < k; ++y) {
      for (int b = 0; b < k; ++b) {
        if (b == y) continue;
        const double weight = problem.input_probs[x] * problem.label_given_input(row, y) / (k - 1);
        risk += weight * (all - (k - 1) * -std::log(problem.predictor(row, b)));
      }
    }
  }
  return risk;
}

}  // namespace

TEST(ToyProblem, PointMassPredictorHasZeroRisk) {
  auto problem = single_input({0.0, 1.0, 0.0}, {0.0, 1.0, 0.0});
  EXPECT_NEAR(oracle::exact_true_risk(problem), 0.0, 1e-12);
}

TEST(ToyProblem, UniformPredictorHasLogKRisk) {
  for (int k : {2, 5, 10}) {
    const auto problem = oracle::random_problem(7, k, 100 + k);
    DiscreteToyProblem uniform = problem;
    uniform.predictor.setConstant(1.0 / k);
    EXPECT_NEAR(oracle::exact_true_risk(uniform), std::log(k), 1e-12);
    EXPECT_NEAR(oracle::exact_complementary_risk(uniform), std::log(k), 1e-12);
  }
}

TEST(ToyProblem, ValidationRejectsMalformedProblems) {
  auto problem = oracle::random_problem(3, 3, 1);
  problem.input_probs[0] += 0.1;
  EXPECT_THROW(problem.validate(), std::invalid_argument);
  problem = oracle::random_problem(3, 3, 1);
  problem.predictor(1, 1) += 0.2;
  EXPECT_THROW(problem.validate(), std::invalid_argument);
  EXPECT_THROW(oracle::random_problem(51, 3, 1).validate(), std::invalid_argument);
  EXPECT_THROW(oracle::random_problem(5, 11, 1).validate(), std::invalid_argument);
  problem = oracle::random_problem(3, 3, 1);
  problem.predictor.conservativeResize(2, 3);
  EXPECT_THROW(problem.validate(), std::invalid_argument);
}

TEST(ToyProblem, FiveByThreeMatchesTripleSum) {
  const auto problem = oracle::random_problem(5, 3, 2024);
  EXPECT_NEAR(oracle::exact_complementary_risk(problem), triple_sum_complementary_risk(problem), 1e-12);
}

TEST(ToyProblem, ComplementaryRiskEqualsTrueRisk) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int k = 2 + static_cast<int>(seed % 5);
    const auto problem = oracle::random_problem(3 + seed % 8, k, seed);
    EXPECT_NEAR(oracle::exact_complementary_risk(problem), oracle::exact_true_risk(problem), 1e-10)
        << "seed " << seed << " K=" << k;
  }
}

TEST(MonteCarlo, LibraryEstimatorIsUnbiased) {
  const auto problem = oracle::random_problem(10, 4, 77);
  const auto r = oracle::monte_carlo_estimator_check(problem, 100000, 5, verify::library_estimator);
  EXPECT_EQ(r.batches, 200u);
  EXPECT_LE(r.deviation_in_standard_errors(), 3.0) << r.empirical_mean << " vs " << r.exact_true_risk;
}

TEST(MonteCarlo, SignFlipIsDetected) {
  const auto problem = oracle::random_problem(10, 4, 77);
  const auto r = oracle::monte_carlo_estimator_check(problem, 100000, 5, verify::sign_flipped_estimator);
  EXPECT_GT(r.deviation_in_standard_errors(), 3.0);
}

TEST(MonteCarlo, DoublingSamplesShrinksStandardError) {
  const auto problem = oracle::random_problem(10, 4, 78);
  const auto a = oracle::monte_carlo_estimator_check(problem, 100000, 11, verify::library_estimator);
  const auto b = oracle::monte_carlo_estimator_check(problem, 200000, 12, verify::library_estimator);
  EXPECT_NEAR(b.standard_error / a.standard_error, 1.0 / std::sqrt(2.0), 0.1);
}

TEST(MonteCarlo, RejectsTooFewSamples) {
  const auto problem = oracle::random_problem(4, 3, 1);
  EXPECT_THROW(oracle::monte_carlo_estimator_check(problem, 999, 1, verify::library_estimator),
               std::invalid_argument);
}

TEST(MonteCarlo, SingleInputVarianceMatchesClosedForm) {
  // With one input and batch size 1 each batch value is one example's contribution.
  const auto problem = single_input({0.5, 0.3, 0.2}, {0.6, 0.25, 0.15});
  const double closed = oracle::single_input_estimator_variance(problem);
  auto single_example = [](const Matrix& probs, std::span<const int> ybar) {
    double all = 0.0;
    for (Eigen::Index k = 0; k < probs.cols(); ++k) all += -std::log(probs(0, k));
    return all - static_cast<double>(probs.cols() - 1) * -std::log(probs(0, ybar[0]));
  };
  const auto r = oracle::monte_carlo_estimator_check(problem, 200000, 3, single_example, 1);
  EXPECT_NEAR(r.per_example_variance / closed, 1.0, 0.1);
  EXPECT_LE(r.deviation_in_standard_errors(), 4.0);
  EXPECT_THROW(oracle::single_input_estimator_variance(oracle::random_problem(2, 3, 1)), std::invalid_argument);
}

TEST(GradientCheck, QuadraticIsExactToRoundOff) {
  const std::vector<double> params{0.3, -1.2, 2.5, 0.7};
  std::vector<double> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(2.0 * (i + 1.0) * params[i]);
  auto fn = [](std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i + 1.0) * v[i] * v[i];
    return s;
  };
  EXPECT_LT(oracle::finite_difference_gradient_check(fn, params, analytic, 1e-5), 1e-9);
  analytic[2] *= 1.01;
  EXPECT_GT(oracle::finite_difference_gradient_check(fn, params, analytic, 1e-5), 5e-3);
}

TEST(GradientCheck, AbortsOnNonFiniteProbe) {
  const std::vector<double> params{1.0, 0.0};
  const std::vector<double> analytic{0.0, 0.0};
  auto fn = [](std::span<const double> v) { return v[1] > 0.0 ? std::numeric_limits<double>::quiet_NaN() : 0.0; };
  try {
    oracle::finite_difference_gradient_check(fn, params, analytic, 1e-6);
    ADD_FAILURE() << "non-finite probe accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
  }
}

TEST(GradientCheck, RejectsBadArguments) {
  const std::vector<double> params{1.0};
  const std::vector<double> analytic{0.0, 0.0};
  auto fn = [](std::span<const double>) { return 0.0; };
  EXPECT_THROW(oracle::finite_difference_gradient_check(fn, params, analytic, 1e-6), std::invalid_argument);
  const std::vector<double> ok{0.0};
  EXPECT_THROW(oracle::finite_difference_gradient_check(fn, params, ok, 1e-2), std::invalid_argument);
  EXPECT_THROW(oracle::finite_difference_gradient_check(fn, params, ok, 1e-9), std::invalid_argument);
}

TEST(Verify, AllChecksPassOnTheLibrary) {
  const auto results = verify::run_all({});
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

TEST(Verify, SignFlipCanaryFails) {
  verify::Options options;
  options.estimator = verify::sign_flipped_estimator;
  EXPECT_FALSE(verify::check_binary_exactness(options.estimator).passed);
  EXPECT_FALSE(verify::check_monte_carlo(options.estimator).passed);
}

TEST(Verify, SharpeningChecksHoldAboveUnitTemperature) {
  EXPECT_TRUE(verify::check_sharpening(2.0).passed);
}
