#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace clarinet {

/// Row-major batches: one example per row.
template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VectorT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Matrix = MatrixT<double>;
using Vector = VectorT<double>;

/// Probabilities are clamped to this floor before any logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

/// Discriminator outputs are clamped to [kDiscriminatorClamp, 1 - kDiscriminatorClamp].
inline constexpr double kDiscriminatorClamp = 1e-7;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace clarinet
