#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clarinet/types.hpp"

namespace clarinet {

/// Row indices of a mini-batch grouped by complementary label.
struct ComplementaryPartition {
  std::vector<std::vector<std::size_t>> members;

  int num_classes() const { return static_cast<int>(members.size()); }

  std::size_t batch_size() const {
    std::size_t n = 0;
    for (const auto& m : members) n += m.size();
    return n;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s;
    s.reserve(members.size());
    for (const auto& m : members) s.push_back(m.size());
    return s;
  }

  /// Per-batch complementary class proportions.
  template <typename T = double>
  std::vector<T> proportions() const {
    const auto n = static_cast<T>(batch_size());
    std::vector<T> pi;
    pi.reserve(members.size());
    for (const auto& m : members) pi.push_back(n > T(0) ? static_cast<T>(m.size()) / n : T(0));
    return pi;
  }
};

inline ComplementaryPartition partition_by_complementary_label(std::span<const int> ybar,
                                                               int num_classes) {
  ComplementaryPartition p;
  p.members.resize(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < ybar.size(); ++i) {
    if (ybar[i] < 0 || ybar[i] >= num_classes) {
      throw std::invalid_argument("partition_by_complementary_label: label out of range");
    }
    p.members[static_cast<std::size_t>(ybar[i])].push_back(i);
  }
  return p;
}

/// One value per class of the per-subset complementary loss. Values may be negative.
template <typename T = double>
struct PerClassLossVector {
  std::vector<T> values;
  std::vector<std::size_t> batch_partition_sizes;
};

enum class UpdateMode { kDescendTotal, kAscendNegative };

struct UpdateDirective {
  UpdateMode mode = UpdateMode::kDescendTotal;
  double loss_value = 0.0;
};

namespace detail {

template <typename T>
T clamped_nll(T p) {
  return -std::log(std::max(p, static_cast<T>(kProbabilityFloor)));
}

template <typename T>
void check_partition(const MatrixT<T>& probs, const ComplementaryPartition& partition,
                     std::span<const T> pi_bar) {
  if (partition.num_classes() != probs.cols() ||
      static_cast<Eigen::Index>(pi_bar.size()) != probs.cols()) {
    throw std::invalid_argument("complementary loss: partition/prediction class count mismatch");
  }
  for (const auto& m : partition.members) {
    for (std::size_t i : m) {
      if (static_cast<Eigen::Index>(i) >= probs.rows()) {
        throw std::invalid_argument("complementary loss: partition index beyond batch");
      }
    }
  }
}

}  // namespace detail

/// Complementary loss on the subset labeled k, with cross-entropy as the base loss:
///   -(K-1) pi_k/n_k sum_{i in S_k} l(p_i, k) + sum_j pi_j/n_j sum_{i in S_j} l(p_i, k).
/// Empty subsets contribute zero.
template <typename T>
T per_class_complementary_loss(const MatrixT<T>& probs, const ComplementaryPartition& partition,
                               std::span<const T> pi_bar, int k) {
  detail::check_partition(probs, partition, pi_bar);
  const int num_classes = static_cast<int>(probs.cols());
  if (k < 0 || k >= num_classes) throw std::invalid_argument("per_class_complementary_loss: k");
  T value = 0;
  const auto& own = partition.members[static_cast<std::size_t>(k)];
  if (!own.empty()) {
    T sum = 0;
    for (std::size_t i : own) sum += detail::clamped_nll(probs(static_cast<Eigen::Index>(i), k));
    value -= T(num_classes - 1) * pi_bar[static_cast<std::size_t>(k)] /
             static_cast<T>(own.size()) * sum;
  }
  for (int j = 0; j < num_classes; ++j) {
    const auto& group = partition.members[static_cast<std::size_t>(j)];
    if (group.empty()) continue;
    T sum = 0;
    for (std::size_t i : group) sum += detail::clamped_nll(probs(static_cast<Eigen::Index>(i), k));
    value += pi_bar[static_cast<std::size_t>(j)] / static_cast<T>(group.size()) * sum;
  }
  return value;
}

template <typename T>
PerClassLossVector<T> complementary_losses(const MatrixT<T>& probs,
                                           const ComplementaryPartition& partition,
                                           std::span<const T> pi_bar) {
  PerClassLossVector<T> out;
  out.batch_partition_sizes = partition.sizes();
  for (int k = 0; k < static_cast<int>(probs.cols()); ++k) {
    out.values.push_back(per_class_complementary_loss(probs, partition, pi_bar, k));
  }
  return out;
}

template <typename T>
T total_complementary_loss(const PerClassLossVector<T>& per_class) {
  T total = 0;
  for (T v : per_class.values) total += v;
  return total;
}

/// Descend on the total when every per-class value is non-negative, otherwise
/// ascend on the sum of the negative ones.
template <typename T>
UpdateDirective nonnegative_correction_step(const PerClassLossVector<T>& per_class) {
  T negative = 0;
  bool any_negative = false;
  for (T v : per_class.values) {
    if (v < T(0)) {
      negative += v;
      any_negative = true;
    }
  }
  if (!any_negative) {
    return {UpdateMode::kDescendTotal, static_cast<double>(total_complementary_loss(per_class))};
  }
  return {UpdateMode::kAscendNegative, static_cast<double>(negative)};
}

/// Classes whose per-class loss enters the differentiated objective for a directive.
template <typename T>
std::vector<bool> directive_class_mask(const PerClassLossVector<T>& per_class,
                                       const UpdateDirective& directive) {
  std::vector<bool> mask(per_class.values.size(), true);
  if (directive.mode == UpdateMode::kAscendNegative) {
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = per_class.values[k] < T(0);
  }
  return mask;
}

/// Gradient w.r.t. pre-softmax logits of sum_{k : mask[k]} L_k, where probs = softmax(logits).
///
/// Example i with complementary label j carries weight
///   w_ik = mask_k * pi_j/n_j * (1 - (K-1)[k == j])
/// on l(p_i, k), so d/dz_i = (sum_k w_ik) p_i - w_i.
template <typename T>
MatrixT<T> complementary_loss_logit_gradient(const MatrixT<T>& probs,
                                             const ComplementaryPartition& partition,
                                             std::span<const T> pi_bar,
                                             const std::vector<bool>& mask) {
  detail::check_partition(probs, partition, pi_bar);
  const auto num_classes = probs.cols();
  MatrixT<T> grad = MatrixT<T>::Zero(probs.rows(), num_classes);
  VectorT<T> w(num_classes);
  for (Eigen::Index j = 0; j < num_classes; ++j) {
    const auto& group = partition.members[static_cast<std::size_t>(j)];
    if (group.empty()) continue;
    const T scale = pi_bar[static_cast<std::size_t>(j)] / static_cast<T>(group.size());
    for (Eigen::Index k = 0; k < num_classes; ++k) {
      T wk = mask[static_cast<std::size_t>(k)] ? scale : T(0);
      if (k == j) wk *= T(1) - T(num_classes - 1);
      w[k] = wk;
    }
    const T w_sum = w.sum();
    for (std::size_t i : group) {
      const auto row = static_cast<Eigen::Index>(i);
      grad.row(row) = w_sum * probs.row(row) - w.transpose();
    }
  }
  return grad;
}

/// Mean cross-entropy of probability rows against true labels.
template <typename T>
T true_label_loss(const MatrixT<T>& probs, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("true_label_loss: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw std::invalid_argument("true_label_loss: label count mismatch");
  }
  T sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= probs.cols()) {
      throw std::invalid_argument("true_label_loss: label out of range");
    }
    sum += detail::clamped_nll(probs(static_cast<Eigen::Index>(i), labels[i]));
  }
  return sum / static_cast<T>(labels.size());
}

template <typename T>
MatrixT<T> true_label_logit_gradient(const MatrixT<T>& probs, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("true_label_logit_gradient: empty batch");
  MatrixT<T> grad = probs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    grad(static_cast<Eigen::Index>(i), labels[i]) -= T(1);
  }
  return grad / static_cast<T>(labels.size());
}

inline double combined_classification_loss(double true_loss, double comp_loss, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("combined_classification_loss: alpha must lie in [0,1]");
  }
  return alpha * true_loss + (1.0 - alpha) * comp_loss;
}

}  // namespace clarinet
