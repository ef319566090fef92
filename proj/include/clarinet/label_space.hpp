#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clarinet/random.hpp"
#include "clarinet/types.hpp"

namespace clarinet {

/// The K classes of a task, optionally named.
class LabelSpace {
 public:
  explicit LabelSpace(int num_classes, std::vector<std::string> names = {})
      : num_classes_(num_classes), names_(std::move(names)) {
    if (num_classes_ < 2) {
      throw std::invalid_argument("LabelSpace: need at least 2 classes, got " +
                                  std::to_string(num_classes_));
    }
    if (!names_.empty()) {
      if (static_cast<int>(names_.size()) != num_classes_) {
        throw std::invalid_argument("LabelSpace: names must have one entry per class");
      }
      std::set<std::string> unique(names_.begin(), names_.end());
      if (unique.size() != names_.size()) {
        throw std::invalid_argument("LabelSpace: class names must be distinct");
      }
    }
  }

  int size() const { return num_classes_; }
  const std::vector<std::string>& names() const { return names_; }
  bool contains(int label) const { return label >= 0 && label < num_classes_; }

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

 private:
  int num_classes_;
  std::vector<std::string> names_;
};

/// Q maps the true-label posterior to the complementary-label posterior
/// under uniform complementary annotation; inverse() undoes it.
template <typename T = double>
class TransitionMatrix {
 public:
  int num_classes() const { return static_cast<int>(q_.rows()); }
  const MatrixT<T>& q() const { return q_; }
  const MatrixT<T>& inverse() const { return q_inv_; }

  template <typename U>
  friend TransitionMatrix<U> build_transition_matrix(const LabelSpace& space);

 private:
  MatrixT<T> q_;
  MatrixT<T> q_inv_;
};

template <typename T = double>
TransitionMatrix<T> build_transition_matrix(const LabelSpace& space) {
  const int k = space.size();
  TransitionMatrix<T> tm;
  tm.q_ = MatrixT<T>::Constant(k, k, T(1) / T(k - 1));
  tm.q_.diagonal().setZero();
  // Closed form: diagonal -(K-2), off-diagonal 1.
  tm.q_inv_ = MatrixT<T>::Ones(k, k);
  tm.q_inv_.diagonal().setConstant(-T(k - 2));
  return tm;
}

/// eta = Q^{-1} eta_bar. Entries may be negative for eta_bar not in the range of Q.
template <typename T>
VectorT<T> complementary_to_true_posterior(const VectorT<T>& eta_bar,
                                           const TransitionMatrix<T>& tm,
                                           T tolerance = T(1e-9)) {
  if (eta_bar.size() != tm.num_classes()) {
    throw std::invalid_argument("complementary_to_true_posterior: length mismatch");
  }
  for (Eigen::Index i = 0; i < eta_bar.size(); ++i) {
    if (!(eta_bar[i] >= T(0) && eta_bar[i] <= T(1))) {
      throw std::invalid_argument("complementary_to_true_posterior: entries must lie in [0,1]");
    }
  }
  if (std::abs(eta_bar.sum() - T(1)) > tolerance) {
    throw std::invalid_argument("complementary_to_true_posterior: input is not normalized");
  }
  return tm.inverse() * eta_bar;
}

/// Feature rows with true labels. `shape` is (channels, height, width) for images,
/// empty for flat feature vectors.
struct LabeledDataset {
  Matrix x;
  std::vector<int> y;
  LabelSpace space{2};
  std::vector<int> shape;

  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }
};

inline LabeledDataset select_rows(const LabeledDataset& data,
                                  const std::vector<std::size_t>& rows) {
  LabeledDataset out{Matrix(static_cast<Eigen::Index>(rows.size()), data.x.cols()), {},
                     data.space, data.shape};
  out.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = data.x.row(static_cast<Eigen::Index>(rows[i]));
    out.y.push_back(data.y[rows[i]]);
  }
  return out;
}

struct ComplementaryExample {
  Vector x;
  int ybar = 0;
  std::optional<int> y_true_hidden;
};

/// Features with one complementary label each. True labels, when known, are kept
/// in `y_true_hidden` (-1 = absent) for evaluation only; training never reads them.
class ComplementaryDataset {
 public:
  ComplementaryDataset(Matrix x, std::vector<int> ybar, std::vector<int> y_true_hidden,
                       LabelSpace space, std::vector<int> shape = {})
      : x_(std::move(x)),
        ybar_(std::move(ybar)),
        hidden_(std::move(y_true_hidden)),
        space_(std::move(space)),
        shape_(std::move(shape)) {
    if (hidden_.empty()) hidden_.assign(ybar_.size(), -1);
    if (static_cast<std::size_t>(x_.rows()) != ybar_.size() || hidden_.size() != ybar_.size()) {
      throw std::invalid_argument("ComplementaryDataset: row count mismatch");
    }
    proportions_.assign(static_cast<std::size_t>(space_.size()), 0.0);
    for (std::size_t i = 0; i < ybar_.size(); ++i) {
      if (!space_.contains(ybar_[i])) {
        throw std::invalid_argument("ComplementaryDataset: complementary label out of range");
      }
      if (hidden_[i] != -1 && !space_.contains(hidden_[i])) {
        throw std::invalid_argument("ComplementaryDataset: hidden label out of range");
      }
      if (hidden_[i] == ybar_[i]) {
        throw std::invalid_argument(
            "ComplementaryDataset: complementary label equals the true label at row " +
            std::to_string(i));
      }
      proportions_[static_cast<std::size_t>(ybar_[i])] += 1.0;
    }
    if (!ybar_.empty()) {
      for (double& p : proportions_) p /= static_cast<double>(ybar_.size());
    }
  }

  std::size_t size() const { return ybar_.size(); }
  bool empty() const { return ybar_.empty(); }
  const Matrix& x() const { return x_; }
  const std::vector<int>& ybar() const { return ybar_; }
  const std::vector<int>& y_true_hidden() const { return hidden_; }
  const LabelSpace& label_space() const { return space_; }
  const std::vector<int>& shape() const { return shape_; }
  /// Fraction of examples complementary-labeled k.
  const std::vector<double>& class_proportions() const { return proportions_; }

  bool has_hidden_labels() const {
    return !hidden_.empty() &&
           std::none_of(hidden_.begin(), hidden_.end(), [](int h) { return h < 0; });
  }

  ComplementaryExample example(std::size_t i) const {
    ComplementaryExample e{x_.row(static_cast<Eigen::Index>(i)).transpose(), ybar_[i], {}};
    if (hidden_[i] >= 0) e.y_true_hidden = hidden_[i];
    return e;
  }

  /// Labeled view on the hidden true labels (evaluation only).
  LabeledDataset hidden_view() const {
    if (!has_hidden_labels()) {
      throw std::logic_error("ComplementaryDataset: hidden labels are not available");
    }
    return LabeledDataset{x_, hidden_, space_, shape_};
  }

 private:
  Matrix x_;
  std::vector<int> ybar_;
  std::vector<int> hidden_;
  LabelSpace space_;
  std::vector<int> shape_;
  std::vector<double> proportions_;
};

/// Draws each complementary label uniformly from the K-1 classes other than the true one.
inline ComplementaryDataset generate_complementary_dataset(const LabeledDataset& true_data,
                                                           std::uint64_t rng_seed) {
  const int k = true_data.space.size();
  if (k < 2) throw std::invalid_argument("generate_complementary_dataset: K < 2");
  Rng rng(rng_seed);
  std::vector<int> ybar;
  ybar.reserve(true_data.size());
  for (int y : true_data.y) {
    if (!true_data.space.contains(y)) {
      throw std::invalid_argument("generate_complementary_dataset: true label out of range");
    }
    int draw = static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)));
    if (draw >= y) ++draw;
    ybar.push_back(draw);
  }
  return ComplementaryDataset(true_data.x, std::move(ybar), true_data.y, true_data.space,
                              true_data.shape);
}

struct PcSplit {
  LabeledDataset true_part;
  ComplementaryDataset complementary_part;
  std::vector<std::size_t> true_indices;
  std::vector<std::size_t> complementary_indices;
};

/// Random split into n_true true-labeled examples and a complementary-labeled remainder.
inline PcSplit split_pc_dataset(const LabeledDataset& true_data, std::size_t n_true,
                                std::uint64_t rng_seed) {
  if (n_true > true_data.size()) {
    throw std::invalid_argument("split_pc_dataset: n_true = " + std::to_string(n_true) +
                                " exceeds dataset size " + std::to_string(true_data.size()));
  }
  Rng rng(derive_seed(rng_seed, 0));
  auto perm = rng.permutation(true_data.size());
  std::vector<std::size_t> true_idx(perm.begin(), perm.begin() + static_cast<long>(n_true));
  std::vector<std::size_t> comp_idx(perm.begin() + static_cast<long>(n_true), perm.end());
  std::sort(true_idx.begin(), true_idx.end());
  std::sort(comp_idx.begin(), comp_idx.end());
  LabeledDataset true_part = select_rows(true_data, true_idx);
  ComplementaryDataset comp =
      generate_complementary_dataset(select_rows(true_data, comp_idx), derive_seed(rng_seed, 1));
  return PcSplit{std::move(true_part), std::move(comp), std::move(true_idx), std::move(comp_idx)};
}

// Sidecar CSV: index,ybar,y_true_hidden with -1 for an absent true label.

struct SidecarRow {
  std::size_t index = 0;
  int ybar = 0;
  int y_true_hidden = -1;
};

inline void write_complementary_sidecar(const std::string& path, const ComplementaryDataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open sidecar for writing: " + path);
  out << "index,ybar,y_true_hidden\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << i << ',' << data.ybar()[i] << ',' << data.y_true_hidden()[i] << '\n';
  }
}

inline std::vector<SidecarRow> read_complementary_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sidecar: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("index,ybar,y_true_hidden", 0) != 0) {
    throw std::runtime_error("sidecar " + path + ": missing header row");
  }
  std::vector<SidecarRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream fields(line);
    SidecarRow row;
    char c1 = 0, c2 = 0;
    if (!(fields >> row.index >> c1 >> row.ybar >> c2 >> row.y_true_hidden) || c1 != ',' ||
        c2 != ',') {
      throw std::runtime_error("sidecar " + path + ": malformed line " + std::to_string(line_no));
    }
    rows.push_back(row);
  }
  return rows;
}

/// Rebuilds a complementary dataset from feature rows and its sidecar.
inline ComplementaryDataset attach_sidecar(const Matrix& features,
                                           const std::vector<SidecarRow>& rows,
                                           const LabelSpace& space, std::vector<int> shape = {}) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), features.cols());
  std::vector<int> ybar, hidden;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].index >= static_cast<std::size_t>(features.rows())) {
      throw std::invalid_argument("attach_sidecar: index beyond feature rows");
    }
    x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i].index));
    ybar.push_back(rows[i].ybar);
    hidden.push_back(rows[i].y_true_hidden);
  }
  return ComplementaryDataset(std::move(x), std::move(ybar), std::move(hidden), space,
                              std::move(shape));
}

}  // namespace clarinet
