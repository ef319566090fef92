#pragma once

#include <stdexcept>
#include <vector>

#include "clarinet/layers.hpp"

namespace clarinet {

/// SGD with heavy-ball momentum and L2 weight decay:
///   d = grad + wd * theta;  v = mu * v + d;  theta -= lr * v.
/// Buffers are positional, so a given instance must always be stepped with the
/// same parameter list.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Parameter*>& params, double lr) {
    if (velocity_.empty()) {
      for (const Parameter* p : params) velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      started_.assign(params.size(), false);
    }
    if (velocity_.size() != params.size()) {
      throw std::logic_error("SgdMomentum: parameter list changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      Matrix d = p.grad;
      if (weight_decay_ != 0.0) d += weight_decay_ * p.value;
      if (momentum_ != 0.0) {
        if (started_[i]) {
          velocity_[i] = momentum_ * velocity_[i] + d;
        } else {
          velocity_[i] = d;
          started_[i] = true;
        }
        p.value -= lr * velocity_[i];
      } else {
        p.value -= lr * d;
      }
    }
  }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Matrix> velocity_;
  std::vector<bool> started_;
};

}  // namespace clarinet
