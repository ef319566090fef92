#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "clarinet/random.hpp"
#include "clarinet/types.hpp"

namespace clarinet {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// A differentiable stage operating on row batches. forward() caches what
/// backward() needs; backward() accumulates parameter gradients and returns
/// the gradient with respect to the forward input.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Matrix forward(const Matrix& input) = 0;
  virtual Matrix backward(const Matrix& grad_output) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual Eigen::Index input_width() const = 0;
  virtual Eigen::Index output_width() const = 0;
};

class Dense final : public Layer {
 public:
  Dense(Eigen::Index in, Eigen::Index out, Rng& rng, std::string name) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("Dense: widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = {name + ".weight", Matrix(in, out), Matrix::Zero(in, out)};
    bias_ = {name + ".bias", Matrix(1, out), Matrix::Zero(1, out)};
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i) {
      weight_.value.data()[i] = rng.uniform(-bound, bound);
    }
    for (Eigen::Index i = 0; i < out; ++i) bias_.value(0, i) = rng.uniform(-bound, bound);
  }

  Matrix forward(const Matrix& input) override {
    if (input.cols() != input_width()) throw std::invalid_argument("Dense: input width mismatch");
    input_ = input;
    Matrix out = input * weight_.value;
    out.rowwise() += bias_.value.row(0);
    return out;
  }

  Matrix backward(const Matrix& grad_output) override {
    weight_.grad.noalias() += input_.transpose() * grad_output;
    bias_.grad += grad_output.colwise().sum();
    return grad_output * weight_.value.transpose();
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  Eigen::Index input_width() const override { return weight_.value.rows(); }
  Eigen::Index output_width() const override { return weight_.value.cols(); }

 private:
  Parameter weight_;
  Parameter bias_;
  Matrix input_;
};

enum class ActivationKind { kRelu, kLeakyRelu, kTanh };

inline ActivationKind parse_activation(const std::string& name) {
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "leaky_relu") return ActivationKind::kLeakyRelu;
  if (name == "tanh") return ActivationKind::kTanh;
  throw std::invalid_argument("unknown activation: " + name);
}

inline std::string activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kLeakyRelu: return "leaky_relu";
    case ActivationKind::kTanh: return "tanh";
  }
  return "relu";
}

class Activation final : public Layer {
 public:
  Activation(ActivationKind kind, Eigen::Index width) : kind_(kind), width_(width) {}

  Matrix forward(const Matrix& input) override {
    input_ = input;
    switch (kind_) {
      case ActivationKind::kRelu: output_ = input.cwiseMax(0.0); break;
      case ActivationKind::kLeakyRelu:
        output_ = input.unaryExpr([](double v) { return v > 0.0 ? v : 0.01 * v; });
        break;
      case ActivationKind::kTanh: output_ = input.array().tanh().matrix(); break;
    }
    return output_;
  }

  Matrix backward(const Matrix& grad_output) override {
    switch (kind_) {
      case ActivationKind::kRelu:
        return grad_output.cwiseProduct(
            input_.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      case ActivationKind::kLeakyRelu:
        return grad_output.cwiseProduct(
            input_.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.01; }));
      case ActivationKind::kTanh:
        return grad_output.cwiseProduct((1.0 - output_.array().square()).matrix());
    }
    return grad_output;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Activation>(*this); }
  Eigen::Index input_width() const override { return width_; }
  Eigen::Index output_width() const override { return width_; }

 private:
  ActivationKind kind_;
  Eigen::Index width_;
  Matrix input_;
  Matrix output_;
};

/// Valid (no padding), stride-1 convolution on rows laid out as C x H x W.
class Conv2d final : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int height, int width, Rng& rng,
         std::string name)
      : in_c_(in_channels), out_c_(out_channels), k_(kernel), h_(height), w_(width) {
    if (kernel > height || kernel > width || kernel <= 0 || in_channels <= 0 || out_channels <= 0) {
      throw std::invalid_argument("Conv2d: kernel does not fit the input");
    }
    oh_ = h_ - k_ + 1;
    ow_ = w_ - k_ + 1;
    const Eigen::Index patch = static_cast<Eigen::Index>(in_c_) * k_ * k_;
    const double bound = 1.0 / std::sqrt(static_cast<double>(patch));
    weight_ = {name + ".weight", Matrix(out_c_, patch), Matrix::Zero(out_c_, patch)};
    bias_ = {name + ".bias", Matrix(1, out_c_), Matrix::Zero(1, out_c_)};
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i) {
      weight_.value.data()[i] = rng.uniform(-bound, bound);
    }
    for (int i = 0; i < out_c_; ++i) bias_.value(0, i) = rng.uniform(-bound, bound);
  }

  Matrix forward(const Matrix& input) override {
    if (input.cols() != input_width()) throw std::invalid_argument("Conv2d: input width mismatch");
    const Eigen::Index n = input.rows();
    const Eigen::Index spatial = static_cast<Eigen::Index>(oh_) * ow_;
    columns_.resize(static_cast<std::size_t>(n));
    Matrix out(n, out_c_ * spatial);
    for (Eigen::Index b = 0; b < n; ++b) {
      Matrix& col = columns_[static_cast<std::size_t>(b)];
      im2col(input.row(b).data(), col);
      Matrix y = weight_.value * col;
      y.colwise() += bias_.value.row(0).transpose();
      out.row(b) = Eigen::Map<const Eigen::RowVectorXd>(y.data(), y.size());
    }
    return out;
  }

  Matrix backward(const Matrix& grad_output) override {
    const Eigen::Index n = grad_output.rows();
    const Eigen::Index spatial = static_cast<Eigen::Index>(oh_) * ow_;
    Matrix grad_input = Matrix::Zero(n, input_width());
    for (Eigen::Index b = 0; b < n; ++b) {
      Eigen::Map<const Matrix> dy(grad_output.row(b).data(), out_c_, spatial);
      const Matrix& col = columns_[static_cast<std::size_t>(b)];
      weight_.grad.noalias() += dy * col.transpose();
      bias_.grad += dy.rowwise().sum().transpose();
      Matrix dcol = weight_.value.transpose() * dy;
      col2im(dcol, grad_input.row(b).data());
    }
    return grad_input;
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Eigen::Index input_width() const override { return static_cast<Eigen::Index>(in_c_) * h_ * w_; }
  Eigen::Index output_width() const override { return static_cast<Eigen::Index>(out_c_) * oh_ * ow_; }
  int output_height() const { return oh_; }
  int output_width_px() const { return ow_; }

 private:
  void im2col(const double* image, Matrix& col) const {
    col.resize(static_cast<Eigen::Index>(in_c_) * k_ * k_, static_cast<Eigen::Index>(oh_) * ow_);
    Eigen::Index r = 0;
    for (int c = 0; c < in_c_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx, ++r) {
          Eigen::Index j = 0;
          for (int y = 0; y < oh_; ++y) {
            const double* src = image + (static_cast<long>(c) * h_ + y + ky) * w_ + kx;
            for (int x = 0; x < ow_; ++x, ++j) col(r, j) = src[x];
          }
        }
      }
    }
  }

  void col2im(const Matrix& col, double* image) const {
    Eigen::Index r = 0;
    for (int c = 0; c < in_c_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx, ++r) {
          Eigen::Index j = 0;
          for (int y = 0; y < oh_; ++y) {
            double* dst = image + (static_cast<long>(c) * h_ + y + ky) * w_ + kx;
            for (int x = 0; x < ow_; ++x, ++j) dst[x] += col(r, j);
          }
        }
      }
    }
  }

  int in_c_, out_c_, k_, h_, w_, oh_ = 0, ow_ = 0;
  Parameter weight_;
  Parameter bias_;
  std::vector<Matrix> columns_;
};

/// Non-overlapping max pooling on C x H x W rows; trailing rows/cols that do not
/// fill a window are dropped.
class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int channels, int height, int width, int window)
      : c_(channels), h_(height), w_(width), p_(window), oh_(height / window), ow_(width / window) {
    if (window <= 0 || oh_ == 0 || ow_ == 0) throw std::invalid_argument("MaxPool2d: bad window");
  }

  Matrix forward(const Matrix& input) override {
    const Eigen::Index n = input.rows();
    Matrix out(n, output_width());
    argmax_.resize(n, output_width());
    for (Eigen::Index b = 0; b < n; ++b) {
      Eigen::Index o = 0;
      for (int c = 0; c < c_; ++c) {
        for (int y = 0; y < oh_; ++y) {
          for (int x = 0; x < ow_; ++x, ++o) {
            Eigen::Index best = (static_cast<Eigen::Index>(c) * h_ + y * p_) * w_ + x * p_;
            for (int dy = 0; dy < p_; ++dy) {
              for (int dx = 0; dx < p_; ++dx) {
                const Eigen::Index idx = (static_cast<Eigen::Index>(c) * h_ + y * p_ + dy) * w_ + x * p_ + dx;
                if (input(b, idx) > input(b, best)) best = idx;
              }
            }
            argmax_(b, o) = best;
            out(b, o) = input(b, best);
          }
        }
      }
    }
    return out;
  }

  Matrix backward(const Matrix& grad_output) override {
    Matrix grad_input = Matrix::Zero(grad_output.rows(), input_width());
    for (Eigen::Index b = 0; b < grad_output.rows(); ++b) {
      for (Eigen::Index o = 0; o < grad_output.cols(); ++o) grad_input(b, argmax_(b, o)) += grad_output(b, o);
    }
    return grad_input;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  Eigen::Index input_width() const override { return static_cast<Eigen::Index>(c_) * h_ * w_; }
  Eigen::Index output_width() const override { return static_cast<Eigen::Index>(c_) * oh_ * ow_; }
  int output_height() const { return oh_; }
  int output_width_px() const { return ow_; }

 private:
  int c_, h_, w_, p_, oh_, ow_;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_;
};

/// An ordered chain of layers with value semantics.
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other) { *this = other; }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;
  Sequential& operator=(const Sequential& other) {
    if (this == &other) return *this;
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
    return *this;
  }

  void add(std::unique_ptr<Layer> layer) {
    if (!layers_.empty() && layers_.back()->output_width() != layer->input_width()) {
      throw std::invalid_argument("Sequential: layer widths do not chain");
    }
    layers_.push_back(std::move(layer));
  }

  Matrix forward(const Matrix& input) {
    Matrix x = input;
    for (auto& l : layers_) x = l->forward(x);
    return x;
  }

  Matrix backward(const Matrix& grad_output) {
    Matrix g = grad_output;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
      for (Parameter* p : l->parameters()) out.push_back(p);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      for (Parameter* p : l->parameters()) n += static_cast<std::size_t>(p->value.size());
    }
    return n;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->grad.setZero();
  }

  bool empty() const { return layers_.empty(); }
  Eigen::Index input_width() const { return layers_.empty() ? 0 : layers_.front()->input_width(); }
  Eigen::Index output_width() const { return layers_.empty() ? 0 : layers_.back()->output_width(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline Matrix sigmoid(const Matrix& a) {
  return a.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

}  // namespace clarinet
