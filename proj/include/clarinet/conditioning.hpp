#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "clarinet/types.hpp"

namespace clarinet {

template <typename T = double>
struct SharpenedPrediction {
  std::vector<T> probs;
  T temperature = T(1);
};

/// Temperature sharpening T(f)_k = f_k^(1/l) / sum_j f_j^(1/l), computed in the log domain.
template <typename T>
SharpenedPrediction<T> sharpen(std::span<const T> f, T l) {
  if (!(l > T(0))) throw std::invalid_argument("sharpen: temperature must be positive");
  if (f.empty()) throw std::invalid_argument("sharpen: empty prediction");
  std::vector<T> logs(f.size());
  T max_log = -std::numeric_limits<T>::infinity();
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (!(f[k] >= T(0))) throw std::invalid_argument("sharpen: negative probability");
    logs[k] = f[k] > T(0) ? std::log(f[k]) / l : -std::numeric_limits<T>::infinity();
    max_log = std::max(max_log, logs[k]);
  }
  if (!std::isfinite(max_log)) throw std::invalid_argument("sharpen: all-zero prediction");
  SharpenedPrediction<T> out{std::vector<T>(f.size()), l};
  T total = 0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    out.probs[k] = std::exp(logs[k] - max_log);
    total += out.probs[k];
  }
  for (T& p : out.probs) p /= total;
  return out;
}

template <typename T>
MatrixT<T> sharpen_rows(const MatrixT<T>& probs, T l) {
  MatrixT<T> out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto s = sharpen(std::span<const T>(probs.row(i).data(), static_cast<std::size_t>(probs.cols())), l);
    for (Eigen::Index k = 0; k < probs.cols(); ++k) out(i, k) = s.probs[static_cast<std::size_t>(k)];
  }
  return out;
}

/// For probs = softmax(z), sharpen(probs, l) = softmax(z / l); this maps an upstream
/// gradient on the sharpened rows back to the logits z.
template <typename T>
MatrixT<T> sharpen_logit_backward(const MatrixT<T>& sharpened, const MatrixT<T>& upstream, T l) {
  MatrixT<T> grad(sharpened.rows(), sharpened.cols());
  for (Eigen::Index i = 0; i < sharpened.rows(); ++i) {
    const T dot = sharpened.row(i).dot(upstream.row(i));
    grad.row(i) = (sharpened.row(i).array() * (upstream.row(i).array() - dot)) / l;
  }
  return grad;
}

/// Shannon entropy (natural log), 0 log 0 = 0.
template <typename T>
T prediction_entropy(std::span<const T> t) {
  T h = 0;
  for (T p : t) {
    if (p > T(0)) h -= p * std::log(p);
  }
  return std::max(h, T(0));
}

template <typename T>
T prediction_entropy(const SharpenedPrediction<T>& t) {
  return prediction_entropy(std::span<const T>(t.probs));
}

/// Entropy-conditioning weight 1 + exp(-H), in (1, 2].
template <typename T>
T sample_weight(T entropy) {
  if (entropy < T(0)) throw std::invalid_argument("sample_weight: negative entropy");
  return T(1) + std::exp(-entropy);
}

template <typename T = double>
struct ConditionedFeature {
  std::vector<T> joint;
  std::size_t feature_dim = 0;
};

/// Row-major flattened outer product: joint[i*K + k] = g[i] * t[k].
template <typename T>
ConditionedFeature<T> conditioned_feature(std::span<const T> g, const SharpenedPrediction<T>& t) {
  if (g.empty()) throw std::invalid_argument("conditioned_feature: empty feature vector");
  const std::size_t num_classes = t.probs.size();
  ConditionedFeature<T> out{std::vector<T>(g.size() * num_classes), g.size()};
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t k = 0; k < num_classes; ++k) out.joint[i * num_classes + k] = g[i] * t.probs[k];
  }
  return out;
}

/// Batch form of conditioned_feature: row n is vec(features_n outer preds_n).
template <typename T>
MatrixT<T> condition_rows(const MatrixT<T>& features, const MatrixT<T>& preds) {
  if (features.rows() != preds.rows()) throw std::invalid_argument("condition_rows: row mismatch");
  if (features.cols() == 0) throw std::invalid_argument("condition_rows: empty feature vector");
  const auto d = features.cols();
  const auto k = preds.cols();
  MatrixT<T> out(features.rows(), d * k);
  for (Eigen::Index n = 0; n < features.rows(); ++n) {
    for (Eigen::Index i = 0; i < d; ++i) {
      out.row(n).segment(i * k, k) = features(n, i) * preds.row(n);
    }
  }
  return out;
}

/// Splits an upstream gradient on condition_rows output into gradients on both factors.
template <typename T>
void condition_rows_backward(const MatrixT<T>& features, const MatrixT<T>& preds,
                             const MatrixT<T>& upstream, MatrixT<T>& grad_features,
                             MatrixT<T>& grad_preds) {
  const auto d = features.cols();
  const auto k = preds.cols();
  grad_features.setZero(features.rows(), d);
  grad_preds.setZero(preds.rows(), k);
  for (Eigen::Index n = 0; n < features.rows(); ++n) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto block = upstream.row(n).segment(i * k, k);
      grad_features(n, i) = block.dot(preds.row(n));
      grad_preds.row(n) += features(n, i) * block;
    }
  }
}

enum class DomainTag { kSourceTrue, kSourceComplementary, kTarget };

/// Per-example entropy weights and discriminator outputs for one side of the batch.
template <typename T = double>
struct AdversarialBatchTerms {
  std::vector<T> weights;
  std::vector<T> disc_outputs;
  DomainTag tag = DomainTag::kSourceComplementary;

  bool empty() const { return weights.empty(); }
};

namespace detail {

template <typename T>
T clamp_disc(T d) {
  return std::clamp(d, static_cast<T>(kDiscriminatorClamp), T(1) - static_cast<T>(kDiscriminatorClamp));
}

/// Weighted mean of log D (source sides) or log(1 - D) (target side).
template <typename T>
T weighted_side_term(const AdversarialBatchTerms<T>& side) {
  if (side.weights.size() != side.disc_outputs.size()) {
    throw std::invalid_argument("adversarial loss: weight/output length mismatch");
  }
  T num = 0, den = 0;
  for (std::size_t i = 0; i < side.weights.size(); ++i) {
    const T d = clamp_disc(side.disc_outputs[i]);
    num += side.weights[i] * (side.tag == DomainTag::kTarget ? std::log(T(1) - d) : std::log(d));
    den += side.weights[i];
  }
  return num / den;
}

}  // namespace detail

/// Weighted-mean log D on the source side plus weighted-mean log(1 - D) on the target side.
template <typename T>
T scattered_adversarial_loss_cc(const AdversarialBatchTerms<T>& source,
                                const AdversarialBatchTerms<T>& target) {
  if (source.empty() || target.empty()) {
    throw std::invalid_argument("scattered_adversarial_loss_cc: both sides must be nonempty");
  }
  return detail::weighted_side_term(source) + detail::weighted_side_term(target);
}

/// Three-sided form with a true-labeled source side; an empty source side contributes zero.
template <typename T>
T scattered_adversarial_loss_pc(const AdversarialBatchTerms<T>& true_source,
                                const AdversarialBatchTerms<T>& comp_source,
                                const AdversarialBatchTerms<T>& target) {
  if (target.empty()) throw std::invalid_argument("scattered_adversarial_loss_pc: empty target");
  if (true_source.empty() && comp_source.empty()) {
    throw std::invalid_argument("scattered_adversarial_loss_pc: both source sides empty");
  }
  T value = 0;
  if (!true_source.empty()) value += detail::weighted_side_term(true_source);
  if (!comp_source.empty()) value += detail::weighted_side_term(comp_source);
  return value + detail::weighted_side_term(target);
}

/// Gradient of one side's term w.r.t. the discriminator logits a, where D = sigmoid(a).
/// Weights are treated as constants.
template <typename T>
std::vector<T> adversarial_logit_gradient(const AdversarialBatchTerms<T>& side) {
  std::vector<T> grad(side.weights.size(), T(0));
  if (side.empty()) return grad;
  T den = 0;
  for (T w : side.weights) den += w;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const T d = side.disc_outputs[i];
    // The loss is flat where the clamp is active.
    if (d != detail::clamp_disc(d)) continue;
    grad[i] = side.weights[i] / den * (side.tag == DomainTag::kTarget ? -d : T(1) - d);
  }
  return grad;
}

}  // namespace clarinet
