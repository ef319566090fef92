#pragma once

// Oracle-backed self checks shared by `clarinet_cli verify` and the test suite.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "clarinet/conditioning.hpp"
#include "clarinet/label_space.hpp"
#include "clarinet/losses.hpp"
#include "clarinet/models.hpp"
#include "clarinet/oracle.hpp"
#include "clarinet/trainers.hpp"

namespace clarinet::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// The estimator the library ships: mini-batch class proportions, per-class
/// terms, summed.
inline double library_estimator(const Matrix& probs, std::span<const int> ybar) {
  const auto partition = partition_by_complementary_label(ybar, static_cast<int>(probs.cols()));
  return total_complementary_loss(complementary_losses<double>(probs, partition, partition.proportions<double>()));
}

/// Deliberately broken copy of the per-class estimator with the sign of its
/// first term flipped. Used to confirm the checks below can fail.
inline double sign_flipped_estimator(const Matrix& probs, std::span<const int> ybar) {
  const int k_count = static_cast<int>(probs.cols());
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(k_count));
  for (std::size_t i = 0; i < ybar.size(); ++i) members[static_cast<std::size_t>(ybar[i])].push_back(static_cast<Eigen::Index>(i));
  const double n = static_cast<double>(ybar.size());
  double total = 0.0;
  for (int k = 0; k < k_count; ++k) {
    const auto& own = members[static_cast<std::size_t>(k)];
    double first = 0.0;
    if (!own.empty()) {
      double s = 0.0;
      for (Eigen::Index i : own) s += -std::log(std::max(probs(i, k), 1e-12));
      first = -(k_count - 1) * (static_cast<double>(own.size()) / n) / static_cast<double>(own.size()) * s;
    }
    double second = 0.0;
    for (int j = 0; j < k_count; ++j) {
      const auto& other = members[static_cast<std::size_t>(j)];
      if (other.empty()) continue;
      double s = 0.0;
      for (Eigen::Index i : other) s += -std::log(std::max(probs(i, k), 1e-12));
      second += (static_cast<double>(other.size()) / n) / static_cast<double>(other.size()) * s;
    }
    total += -first + second;
  }
  return total;
}

struct Options {
  oracle::BatchEstimator estimator = library_estimator;
  /// Temperature used by the sharpening property checks.
  double sharpen_temperature = 0.5;
  std::uint64_t seed = 2024;
};

namespace detail {

template <typename Fn>
CheckResult timed(const std::string& name, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = name;
  try {
    fn(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << std::scientific << v;
  return s.str();
}

inline std::vector<double> random_simplex(std::size_t k, Rng& rng) {
  std::vector<double> v(k);
  double total = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - rng.uniform());
    total += x;
  }
  for (double& x : v) x /= total;
  return v;
}

inline Matrix random_inputs(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

/// Small smooth network for gradient checks.
inline ModelTriple tiny_model(int input, int num_classes, std::uint64_t seed) {
  ArchitectureConfig cfg;
  cfg.input_shape = {input};
  cfg.feature_widths = {6, 5};
  cfg.classifier_hidden = {4};
  cfg.discriminator_hidden = {4};
  cfg.activation = "tanh";
  cfg.num_classes = num_classes;
  return build_model_triple(cfg, seed);
}

inline std::vector<int> random_labels(std::size_t n, int k, Rng& rng) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
  return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Individual checks
// ---------------------------------------------------------------------------

inline CheckResult check_population_identity(std::size_t problems = 20, std::uint64_t seed = 1) {
  return detail::timed("estimator identity (population)", [&](CheckResult& r) {
    double worst = 0.0;
    for (std::size_t p = 0; p < problems; ++p) {
      const int k = 2 + static_cast<int>(p % 5);
      const auto problem = oracle::random_problem(3 + p % 8, k, derive_seed(seed, p));
      worst = std::max(worst, std::abs(oracle::exact_complementary_risk(problem) - oracle::exact_true_risk(problem)));
    }
    r.passed = worst < 1e-10;
    r.detail = std::to_string(problems) + " problems, K in 2..6, max |diff| = " + detail::fmt(worst);
  });
}

inline CheckResult check_binary_exactness(const oracle::BatchEstimator& estimator, std::size_t batches = 1000,
                                          std::uint64_t seed = 2) {
  return detail::timed("estimator identity (K=2 batches)", [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t n = 1 + rng.below(64);
      Matrix probs(static_cast<Eigen::Index>(n), 2);
      std::vector<int> ybar(n);
      double ce = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double p0 = rng.uniform(0.01, 0.99);
        probs(static_cast<Eigen::Index>(i), 0) = p0;
        probs(static_cast<Eigen::Index>(i), 1) = 1.0 - p0;
        ybar[i] = static_cast<int>(rng.below(2));
        ce += -std::log(probs(static_cast<Eigen::Index>(i), 1 - ybar[i]));
      }
      ce /= static_cast<double>(n);
      worst = std::max(worst, std::abs(estimator(probs, ybar) - ce));
    }
    r.passed = worst < 1e-9;
    r.detail = std::to_string(batches) + " batches, max |estimator - CE| = " + detail::fmt(worst);
  });
}

inline CheckResult check_monte_carlo(const oracle::BatchEstimator& estimator, std::size_t samples = 100000,
                                     std::uint64_t seed = 3) {
  return detail::timed("Monte-Carlo unbiasedness (K=4)", [&](CheckResult& r) {
    const auto problem = oracle::random_problem(10, 4, seed);
    const auto mc = oracle::monte_carlo_estimator_check(problem, samples, derive_seed(seed, 1), estimator);
    const double z = mc.deviation_in_standard_errors();
    r.passed = z <= 3.0;
    std::ostringstream s;
    s << "mean " << std::setprecision(6) << mc.empirical_mean << " vs exact " << mc.exact_true_risk << " ("
      << std::setprecision(2) << z << " stderr)";
    r.detail = s.str();
  });
}

inline CheckResult check_transition_matrices(int max_k = 20) {
  return detail::timed("transition matrix identities", [&](CheckResult& r) {
    double worst = 0.0;
    bool closed_form = true;
    for (int k = 2; k <= max_k; ++k) {
      const auto tm = build_transition_matrix<double>(LabelSpace(k));
      Matrix product = Matrix::Zero(k, k);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
          for (int m = 0; m < k; ++m) product(i, j) += tm.q()(i, m) * tm.inverse()(m, j);
      worst = std::max(worst, (product - Matrix::Identity(k, k)).cwiseAbs().maxCoeff());
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) closed_form &= tm.inverse()(i, j) == (i == j ? -(k - 2.0) : 1.0);
    }
    r.passed = worst < 1e-12 && closed_form;
    r.detail = "K = 2.." + std::to_string(max_k) + ", max |Q Q^-1 - I| = " + detail::fmt(worst) +
               (closed_form ? ", inverse entries exact" : ", inverse entries differ from closed form");
  });
}

/// Complementary loss through a tiny MLP, both as a total and as the negative part.
inline CheckResult check_complementary_gradient(std::uint64_t seed = 4) {
  return detail::timed("gradient: complementary loss", [&](CheckResult& r) {
    Rng rng(seed);
    ModelTriple model = detail::tiny_model(4, 3, seed);
    const Matrix x = detail::random_inputs(8, 4, rng);
    const std::vector<int> ybar = detail::random_labels(8, 3, rng);
    const auto partition = partition_by_complementary_label(ybar, 3);
    const auto pi = partition.proportions<double>();
    auto params = model.classifier_parameters();
    const std::vector<double> theta = flatten_values(params);

    double worst = 0.0;
    for (bool negative_only : {false, true}) {
      std::vector<bool> mask(3, true);
      if (negative_only) {
        const auto per_class = complementary_losses<double>(predict(model, x).probs, partition, pi);
        for (std::size_t k = 0; k < 3; ++k) mask[k] = per_class.values[k] < 0.0;
        if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) continue;
      }
      auto value = [&](std::span<const double> t) {
        assign_values(params, t);
        const auto per_class = complementary_losses<double>(predict(model, x).probs, partition, pi);
        double v = 0.0;
        for (std::size_t k = 0; k < 3; ++k) v += mask[k] ? per_class.values[k] : 0.0;
        return v;
      };
      assign_values(params, theta);
      model.zero_grad();
      const Prediction p = predict(model, x);
      model.feature_extractor.backward(
          model.label_predictor.backward(complementary_loss_logit_gradient<double>(p.probs, partition, pi, mask)));
      const auto analytic = flatten_gradients(params);
      worst = std::max(worst, oracle::finite_difference_gradient_check(value, theta, analytic, 1e-6, 60, seed));
      assign_values(params, theta);
    }
    r.passed = worst < 1e-4;
    r.detail = "K=3, batch 8, max rel err " + detail::fmt(worst);
  });
}

/// Adversarial loss through gradient reversal, for detached and non-detached
/// conditioning and for the feature-only discriminator input.
inline CheckResult check_adversarial_gradient(std::uint64_t seed = 5) {
  return detail::timed("gradient: adversarial loss via reversal", [&](CheckResult& r) {
    Rng rng(seed);
    const Matrix x = detail::random_inputs(9, 4, rng);
    const AdversarialSplit split{3, 3, 3};
    const double lambda = 0.7;
    double worst_fd = 0.0, worst_reversal = 0.0;

    for (int variant = 0; variant < 3; ++variant) {
      ModelTriple model = detail::tiny_model(4, 3, seed + static_cast<std::uint64_t>(variant));
      AdversarialPassOptions opt;
      opt.temperature = 0.5;
      opt.lambda = lambda;
      opt.detach_predictions = variant == 0;
      opt.conditioned = variant != 2;
      if (!opt.conditioned) {
        ArchitectureConfig cfg = model.config;
        cfg.discriminator_input = DiscriminatorInput::kFeatures;
        model = build_model_triple(cfg, seed);
      }
      // Entropy weights are constants of the loss.
      const Matrix sharp = sharpen_rows<double>(predict(model, x).probs, opt.temperature);
      const std::vector<double> weights = entropy_weights(sharp);

      auto d_params = model.discriminator.parameters();
      auto c_params = model.classifier_parameters();
      const auto d_theta = flatten_values(d_params);
      const auto c_theta = flatten_values(c_params);

      model.zero_grad();
      adversarial_pass(model, x, split, opt, true, &weights);
      const auto d_grad = flatten_gradients(d_params);
      const auto c_grad = flatten_gradients(c_params);

      // Discriminator: direction * L.
      auto d_value = [&](std::span<const double> t) {
        assign_values(d_params, t);
        return opt.direction * adversarial_pass(model, x, split, opt, false, &weights);
      };
      worst_fd = std::max(worst_fd, oracle::finite_difference_gradient_check(d_value, d_theta, d_grad, 1e-6, 60, seed));
      assign_values(d_params, d_theta);

      // Classifier through reversal: -lambda * direction * L. With detached
      // predictions the sharpened factor is held at its current value.
      ModelTriple frozen = model;
      auto c_value = [&](std::span<const double> t) {
        assign_values(c_params, t);
        if (!opt.detach_predictions || !opt.conditioned) {
          return -lambda * opt.direction * adversarial_pass(model, x, split, opt, false, &weights);
        }
        const Matrix h = model.feature_extractor.forward(x);
        const Matrix d = sigmoid(model.discriminator.forward(condition_rows<double>(h, sharp)));
        AdversarialBatchTerms<double> sides[3];
        for (int s = 0; s < 3; ++s) {
          sides[s].tag = s == 0 ? DomainTag::kSourceTrue : s == 1 ? DomainTag::kSourceComplementary : DomainTag::kTarget;
          for (int i = 3 * s; i < 3 * s + 3; ++i) {
            sides[s].weights.push_back(weights[static_cast<std::size_t>(i)]);
            sides[s].disc_outputs.push_back(d(i, 0));
          }
        }
        return -lambda * opt.direction * scattered_adversarial_loss_pc(sides[0], sides[1], sides[2]);
      };
      worst_fd = std::max(worst_fd, oracle::finite_difference_gradient_check(c_value, c_theta, c_grad, 1e-6, 60, seed));
      assign_values(c_params, c_theta);

      // Reversal contract: the classifier gradient equals -lambda times the
      // gradient obtained with lambda = 1 and no sign change.
      AdversarialPassOptions plain = opt;
      plain.lambda = 1.0;
      frozen.zero_grad();
      adversarial_pass(frozen, x, split, plain, true, &weights);
      auto f_params = frozen.classifier_parameters();
      const auto reversed_unit = flatten_gradients(f_params);  // = -1 * no-reversal gradient
      for (std::size_t i = 0; i < c_grad.size(); ++i) {
        const double expected = -lambda * (-reversed_unit[i]);
        const double denom = std::max({std::abs(expected), std::abs(c_grad[i]), 1e-300});
        if (expected != 0.0 || c_grad[i] != 0.0) {
          worst_reversal = std::max(worst_reversal, std::abs(expected - c_grad[i]) / denom);
        }
      }
    }
    r.passed = worst_fd < 1e-4 && worst_reversal < 1e-12;
    r.detail = "max rel err " + detail::fmt(worst_fd) + ", reversal rel dev " + detail::fmt(worst_reversal);
  });
}

/// alpha * true-label loss + (1 - alpha) * complementary loss through a tiny MLP.
inline CheckResult check_combined_gradient(std::uint64_t seed = 6) {
  return detail::timed("gradient: PC combined loss", [&](CheckResult& r) {
    Rng rng(seed);
    ModelTriple model = detail::tiny_model(4, 4, seed);
    const Matrix xt = detail::random_inputs(6, 4, rng);
    const Matrix xc = detail::random_inputs(10, 4, rng);
    const std::vector<int> y = detail::random_labels(6, 4, rng);
    const std::vector<int> ybar = detail::random_labels(10, 4, rng);
    const auto partition = partition_by_complementary_label(ybar, 4);
    const auto pi = partition.proportions<double>();
    const double alpha = 0.3;
    auto params = model.classifier_parameters();
    const auto theta = flatten_values(params);

    auto value = [&](std::span<const double> t) {
      assign_values(params, t);
      const double lt = true_label_loss<double>(predict(model, xt).probs, y);
      const double lc = total_complementary_loss(complementary_losses<double>(predict(model, xc).probs, partition, pi));
      return combined_classification_loss(lt, lc, alpha);
    };
    model.zero_grad();
    Prediction pt = predict(model, xt);
    model.feature_extractor.backward(model.label_predictor.backward(alpha * true_label_logit_gradient<double>(pt.probs, y)));
    Prediction pc = predict(model, xc);
    model.feature_extractor.backward(model.label_predictor.backward(
        (1.0 - alpha) * complementary_loss_logit_gradient<double>(pc.probs, partition, pi, std::vector<bool>(4, true))));
    const auto analytic = flatten_gradients(params);
    const double worst = oracle::finite_difference_gradient_check(value, theta, analytic, 1e-6, 60, seed);
    assign_values(params, theta);
    r.passed = worst < 1e-4;
    r.detail = "alpha 0.3, max rel err " + detail::fmt(worst);
  });
}

inline CheckResult check_reversal_contract(std::uint64_t seed = 7) {
  return detail::timed("gradient reversal contract", [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    bool identity = true;
    for (double lambda : {0.0, 0.1, 1.0, 2.5}) {
      const Matrix u = detail::random_inputs(5, 7, rng);
      const GradientReversal grl(lambda);
      identity &= (grl.forward(u).array() == u.array()).all();
      const Matrix g = grl.backward(u);
      for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double expected = -lambda * u.data()[i];
        const double denom = std::max(std::abs(expected), 1e-300);
        if (expected != 0.0) worst = std::max(worst, std::abs(g.data()[i] - expected) / denom);
        else worst = std::max(worst, std::abs(g.data()[i]));
      }
    }
    r.passed = identity && worst < 1e-12;
    r.detail = std::string(identity ? "forward identity, " : "forward NOT identity, ") + "backward rel dev " +
               detail::fmt(worst);
  });
}

/// Temperature-independent properties of sharpening, evaluated at `temperature`.
inline CheckResult check_sharpening(double temperature, std::size_t draws = 10000, std::uint64_t seed = 8) {
  return detail::timed("sharpening properties", [&](CheckResult& r) {
    Rng rng(seed);
    double identity_dev = 0.0, min_peak = 1.0;
    std::size_t argmax_broken = 0, entropy_broken = 0;
    for (std::size_t n = 0; n < draws; ++n) {
      const std::size_t k = 2 + rng.below(9);
      const auto f = detail::random_simplex(k, rng);
      const std::span<const double> fs(f);
      const auto same = sharpen<double>(fs, 1.0);
      for (std::size_t i = 0; i < k; ++i) identity_dev = std::max(identity_dev, std::abs(same.probs[i] - f[i]));

      const auto top = std::max_element(f.begin(), f.end());
      std::vector<double> sorted = f;
      std::sort(sorted.rbegin(), sorted.rend());
      // Non-tied: the leader beats the runner-up by at least 10 percent.
      if (sorted[0] >= 1.1 * sorted[1]) {
        const auto cold = sharpen<double>(fs, 0.01);
        min_peak = std::min(min_peak, cold.probs[static_cast<std::size_t>(top - f.begin())]);
      }

      const auto t = sharpen<double>(fs, temperature);
      if (std::max_element(t.probs.begin(), t.probs.end()) - t.probs.begin() != top - f.begin()) ++argmax_broken;
      const double h_in = prediction_entropy<double>(fs);
      const double h_out = prediction_entropy(t);
      const bool ok = temperature <= 1.0 ? h_out <= h_in + 1e-12 : h_out >= h_in - 1e-12;
      if (!ok) ++entropy_broken;
    }
    r.passed = identity_dev < 1e-12 && min_peak >= 0.999 && argmax_broken == 0 && entropy_broken == 0;
    std::ostringstream s;
    s << "l=" << temperature << ": identity dev " << detail::fmt(identity_dev) << ", min peak at l=0.01 "
      << std::setprecision(6) << min_peak << ", argmax changes " << argmax_broken << ", entropy violations "
      << entropy_broken;
    r.detail = s.str();
  });
}

inline std::vector<CheckResult> run_all(const Options& options = {}) {
  std::vector<CheckResult> out;
  out.push_back(check_population_identity(20, options.seed));
  out.push_back(check_binary_exactness(options.estimator, 1000, options.seed + 1));
  out.push_back(check_monte_carlo(options.estimator, 100000, options.seed + 2));
  out.push_back(check_transition_matrices(20));
  out.push_back(check_complementary_gradient(options.seed + 3));
  out.push_back(check_adversarial_gradient(options.seed + 4));
  out.push_back(check_combined_gradient(options.seed + 5));
  out.push_back(check_reversal_contract(options.seed + 6));
  out.push_back(check_sharpening(options.sharpen_temperature, 10000, options.seed + 7));
  return out;
}

inline bool print_table(std::ostream& os, const std::vector<CheckResult>& results) {
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  bool all = true;
  for (const auto& r : results) {
    all &= r.passed;
    os << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(static_cast<int>(width) + 2) << r.name
       << std::right << std::fixed << std::setprecision(2) << std::setw(7) << r.seconds << "s  " << r.detail
       << '\n';
    os.unsetf(std::ios::fixed);
  }
  return all;
}

}  // namespace clarinet::verify
