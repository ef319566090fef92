#pragma once

// Brute-force reference computations. Nothing in this header calls into the
// loss or conditioning code: each quantity is transcribed directly from its
// defining sum so that it can serve as an independent check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "clarinet/random.hpp"
#include "clarinet/types.hpp"

namespace clarinet::oracle {

/// Finite input set with P(x), true-label table P(Y|x) and a fixed predictor p(x).
struct DiscreteToyProblem {
  std::vector<double> input_probs;
  Matrix label_given_input;  // m x K
  Matrix predictor;          // m x K

  std::size_t num_inputs() const { return input_probs.size(); }
  int num_classes() const { return static_cast<int>(label_given_input.cols()); }

  void validate() const {
    const auto m = static_cast<Eigen::Index>(input_probs.size());
    if (m == 0 || m > 50 || label_given_input.rows() != m || predictor.rows() != m ||
        predictor.cols() != label_given_input.cols() || label_given_input.cols() < 2 ||
        label_given_input.cols() > 10) {
      throw std::invalid_argument("DiscreteToyProblem: inconsistent shapes");
    }
    auto in_simplex = [](auto row) {
      return (row.array() >= 0.0).all() && std::abs(row.sum() - 1.0) < 1e-9;
    };
    double total = 0.0;
    for (double p : input_probs) {
      if (p < 0.0) throw std::invalid_argument("DiscreteToyProblem: negative input probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("DiscreteToyProblem: P(x) not normalized");
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!in_simplex(label_given_input.row(i)) || !in_simplex(predictor.row(i))) {
        throw std::invalid_argument("DiscreteToyProblem: row outside the simplex");
      }
    }
  }
};

namespace detail {

inline double cross_entropy(double p) { return -std::log(std::max(p, 1e-12)); }

inline std::vector<double> random_simplex(std::size_t k, Rng& rng) {
  std::vector<double> v(k);
  double total = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - rng.uniform());  // Exp(1) -> Dirichlet(1,...,1)
    total += x;
  }
  for (double& x : v) x /= total;
  return v;
}

}  // namespace detail

inline DiscreteToyProblem random_problem(std::size_t num_inputs, int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  DiscreteToyProblem p;
  p.input_probs = detail::random_simplex(num_inputs, rng);
  p.label_given_input.resize(static_cast<Eigen::Index>(num_inputs), num_classes);
  p.predictor.resize(static_cast<Eigen::Index>(num_inputs), num_classes);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(num_inputs); ++i) {
    const auto eta = detail::random_simplex(static_cast<std::size_t>(num_classes), rng);
    const auto f = detail::random_simplex(static_cast<std::size_t>(num_classes), rng);
    for (int k = 0; k < num_classes; ++k) {
      p.label_given_input(i, k) = eta[static_cast<std::size_t>(k)];
      p.predictor(i, k) = f[static_cast<std::size_t>(k)];
    }
  }
  return p;
}

/// sum_x P(x) sum_y P(y|x) l(p(x), y).
inline double exact_true_risk(const DiscreteToyProblem& problem) {
  problem.validate();
  double risk = 0.0;
  for (std::size_t x = 0; x < problem.num_inputs(); ++x) {
    const auto row = static_cast<Eigen::Index>(x);
    double inner = 0.0;
    for (int y = 0; y < problem.num_classes(); ++y) {
      inner += problem.label_given_input(row, y) * detail::cross_entropy(problem.predictor(row, y));
    }
    risk += problem.input_probs[x] * inner;
  }
  return risk;
}

/// Population complementary-label risk
///   sum_x P(x) [ sum_k l(p(x), k) - (K-1) sum_k P(Ybar = k | x) l(p(x), k) ]
/// with P(Ybar = k | x) = (1 - P(Y = k | x)) / (K-1) under uniform complementary labels.
inline double exact_complementary_risk(const DiscreteToyProblem& problem) {
  problem.validate();
  const int k_count = problem.num_classes();
  double risk = 0.0;
  for (std::size_t x = 0; x < problem.num_inputs(); ++x) {
    const auto row = static_cast<Eigen::Index>(x);
    double all_classes = 0.0;
    double complementary = 0.0;
    for (int k = 0; k < k_count; ++k) {
      const double loss = detail::cross_entropy(problem.predictor(row, k));
      double eta_bar = 0.0;  // sum over true classes y != k of P(y|x) / (K-1)
      for (int y = 0; y < k_count; ++y) {
        if (y != k) eta_bar += problem.label_given_input(row, y) / (k_count - 1);
      }
      all_classes += loss;
      complementary += eta_bar * loss;
    }
    risk += problem.input_probs[x] * (all_classes - (k_count - 1) * complementary);
  }
  return risk;
}

/// Batch estimator under test: probability rows and complementary labels in,
/// total complementary loss out.
using BatchEstimator = std::function<double(const Matrix& probs, std::span<const int> ybar)>;

struct MonteCarloResult {
  double empirical_mean = 0.0;
  double exact_true_risk = 0.0;
  double standard_error = 0.0;
  /// Variance of a single-example contribution, estimated as batch_size * Var(batch value).
  double per_example_variance = 0.0;
  std::size_t batches = 0;

  double deviation_in_standard_errors() const {
    return std::abs(empirical_mean - exact_true_risk) / standard_error;
  }
};

/// Samples (x, ybar) pairs from the problem, evaluates `estimator` on consecutive
/// batches and reports the batch mean with its standard error.
inline MonteCarloResult monte_carlo_estimator_check(const DiscreteToyProblem& problem, std::size_t n_samples,
                                                    std::uint64_t seed, const BatchEstimator& estimator,
                                                    std::size_t batch_size = 500) {
  problem.validate();
  if (n_samples < 1000) throw std::invalid_argument("monte_carlo_estimator_check: need >= 1000 samples");
  if (batch_size == 0 || batch_size > n_samples) batch_size = std::min<std::size_t>(500, n_samples);
  const int k_count = problem.num_classes();
  Rng rng(seed);

  auto draw = [&rng](auto weights_at, std::size_t n) {
    double u = rng.uniform(), acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += weights_at(i);
      if (u < acc) return i;
    }
    return n - 1;
  };

  const std::size_t batches = n_samples / batch_size;
  std::vector<double> values;
  values.reserve(batches);
  Matrix probs(static_cast<Eigen::Index>(batch_size), k_count);
  std::vector<int> ybar(batch_size);
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t x = draw([&](std::size_t j) { return problem.input_probs[j]; }, problem.num_inputs());
      const auto row = static_cast<Eigen::Index>(x);
      const auto y = static_cast<int>(draw(
          [&](std::size_t j) { return problem.label_given_input(row, static_cast<Eigen::Index>(j)); },
          static_cast<std::size_t>(k_count)));
      int comp = static_cast<int>(rng.below(static_cast<std::uint64_t>(k_count - 1)));
      if (comp >= y) ++comp;
      probs.row(static_cast<Eigen::Index>(i)) = problem.predictor.row(row);
      ybar[i] = comp;
    }
    values.push_back(estimator(probs, ybar));
  }

  MonteCarloResult r;
  r.batches = batches;
  r.exact_true_risk = exact_true_risk(problem);
  double sum = 0.0;
  for (double v : values) sum += v;
  r.empirical_mean = sum / static_cast<double>(batches);
  double sq = 0.0;
  for (double v : values) sq += (v - r.empirical_mean) * (v - r.empirical_mean);
  const double var = sq / static_cast<double>(batches - 1);
  r.standard_error = std::sqrt(var / static_cast<double>(batches));
  r.per_example_variance = var * static_cast<double>(batch_size);
  return r;
}

/// Closed-form variance of one example's contribution
///   v(ybar) = sum_k l(p, k) - (K-1) l(p, ybar)
/// for a single-input problem (ybar ~ (1 - eta) / (K-1)).
inline double single_input_estimator_variance(const DiscreteToyProblem& problem) {
  problem.validate();
  if (problem.num_inputs() != 1) throw std::invalid_argument("single_input_estimator_variance: m must be 1");
  const int k_count = problem.num_classes();
  double mean = 0.0, second = 0.0;
  for (int k = 0; k < k_count; ++k) {
    const double q = (1.0 - problem.label_given_input(0, k)) / (k_count - 1);
    const double l = detail::cross_entropy(problem.predictor(0, k));
    mean += q * l;
    second += q * l * l;
  }
  return static_cast<double>(k_count - 1) * (k_count - 1) * (second - mean * mean);
}

/// Central differences against an analytic gradient over a random subsample of
/// coordinates. Relative error uses max(|a|, |b|, 1e-8) as denominator.
inline double finite_difference_gradient_check(const std::function<double(std::span<const double>)>& fn,
                                               std::span<const double> params,
                                               std::span<const double> analytic, double epsilon,
                                               std::size_t max_coordinates = 50, std::uint64_t seed = 0) {
  if (params.size() != analytic.size()) throw std::invalid_argument("gradient check: size mismatch");
  if (!(epsilon >= 1e-7 && epsilon <= 1e-4)) throw std::invalid_argument("gradient check: epsilon out of range");
  std::vector<std::size_t> coords(params.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (coords.size() > max_coordinates) {
    Rng rng(seed);
    auto perm = rng.permutation(coords.size());
    coords.assign(perm.begin(), perm.begin() + static_cast<long>(max_coordinates));
  }
  std::vector<double> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t c : coords) {
    probe[c] = params[c] + epsilon;
    const double up = fn(probe);
    probe[c] = params[c] - epsilon;
    const double down = fn(probe);
    probe[c] = params[c];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      std::ostringstream msg;
      msg << "gradient check: non-finite probe value at coordinate " << c;
      throw std::runtime_error(msg.str());
    }
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[c]), 1e-8});
    worst = std::max(worst, std::abs(numeric - analytic[c]) / denom);
  }
  return worst;
}

}  // namespace clarinet::oracle
