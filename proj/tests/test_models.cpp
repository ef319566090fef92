#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "clarinet/conditioning.hpp"
#include "clarinet/losses.hpp"
#include "clarinet/models.hpp"
#include "clarinet/optim.hpp"
#include "clarinet/oracle.hpp"

using namespace clarinet;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

ArchitectureConfig small_mlp(int k = 3) {
  ArchitectureConfig cfg;
  cfg.input_shape = {4};
  cfg.feature_widths = {6, 5};
  cfg.classifier_hidden = {4};
  cfg.discriminator_hidden = {4, 3};
  cfg.activation = "tanh";
  cfg.num_classes = k;
  return cfg;
}

ArchitectureConfig digits_cnn() {
  ArchitectureConfig cfg;
  cfg.kind = ArchitectureKind::kSmallCnn;
  cfg.input_shape = {1, 28, 28};
  cfg.num_classes = 10;
  cfg.discriminator_hidden = {32, 32};
  return cfg;
}

/// Gradient check of a single layer on the probe sum(out .* r), over both
/// parameters and input.
void check_layer(Layer& layer, const Matrix& input, double tolerance) {
  Rng rng(99);
  const Matrix r = random_matrix(input.rows(), layer.output_width(), rng);
  auto params = layer.parameters();
  for (Parameter* p : params) p->grad.setZero();
  layer.forward(input);
  const Matrix grad_input = layer.backward(r);

  const auto flat = flatten_values(params);
  if (!flat.empty()) {
    const auto analytic = flatten_gradients(params);
    auto fn = [&](std::span<const double> values) {
      assign_values(params, values);
      return (layer.forward(input).array() * r.array()).sum();
    };
    EXPECT_LT(oracle::finite_difference_gradient_check(fn, flat, analytic, 1e-6, 60, 1), tolerance);
    assign_values(params, flat);
  }
  auto fn_in = [&](std::span<const double> values) {
    const Matrix x = Eigen::Map<const Matrix>(values.data(), input.rows(), input.cols());
    return (layer.forward(x).array() * r.array()).sum();
  };
  EXPECT_LT(oracle::finite_difference_gradient_check(
                fn_in, std::span<const double>(input.data(), static_cast<std::size_t>(input.size())),
                std::span<const double>(grad_input.data(), static_cast<std::size_t>(grad_input.size())), 1e-6, 60,
                2),
            tolerance);
}

}  // namespace

TEST(GradientReversal, ForwardIsIdentity) {
  Matrix x(1, 2);
  x << 1.0, 2.0;
  const GradientReversal grl(0.5);
  EXPECT_EQ(grl.forward(x), x);
}

TEST(GradientReversal, BackwardNegatesAndScales) {
  Rng rng(1);
  const Matrix g = random_matrix(3, 4, rng);
  EXPECT_EQ(GradientReversal(1.0).backward(g), Matrix(-g));
  EXPECT_TRUE(GradientReversal(0.0).backward(g).isZero());
  EXPECT_LT((GradientReversal(0.3).backward(g) + 0.3 * g).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(GradientReversal(-0.1), std::invalid_argument);
}

TEST(GradientReversal, ProbeThroughReversalMatchesPlainProbe) {
  // Gradient of a probe through the reversal equals -lambda times the probe's plain gradient.
  Rng rng(2);
  auto model = build_model_triple(small_mlp(), 5);
  const Matrix x = random_matrix(6, 4, rng);
  const Matrix r = random_matrix(6, model.config.feature_dim(), rng);
  const double lambda = 0.7;

  model.zero_grad();
  model.feature_extractor.forward(x);
  model.feature_extractor.backward(r);
  const auto plain = flatten_gradients(model.feature_extractor.parameters());

  model.zero_grad();
  const GradientReversal grl(lambda);
  grl.forward(model.feature_extractor.forward(x));
  model.feature_extractor.backward(grl.backward(r));
  const auto reversed = flatten_gradients(model.feature_extractor.parameters());

  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_LE(std::abs(reversed[i] + lambda * plain[i]), 1e-12 * std::max(1.0, std::abs(plain[i])));
  }
}

TEST(BuildModel, MlpParameterCount) {
  ArchitectureConfig cfg;
  cfg.input_shape = {2};
  cfg.feature_widths = {64, 64};
  cfg.num_classes = 2;
  auto model = build_model_triple(cfg, 1);
  // 2*64 + 64 + 64*64 + 64
  EXPECT_EQ(model.feature_extractor.parameter_count(), 4352u);
  EXPECT_EQ(model.label_predictor.parameter_count(), 64u * 2 + 2);
  // D sees the 64*2 conditioned feature.
  EXPECT_EQ(model.discriminator.parameter_count(), 128u * 64 + 64 + 64 * 64 + 64 + 64 + 1);
}

TEST(BuildModel, FeaturesOnlyDiscriminatorWidth) {
  auto cfg = small_mlp();
  cfg.discriminator_input = DiscriminatorInput::kFeatures;
  auto model = build_model_triple(cfg, 1);
  EXPECT_EQ(model.discriminator.input_width(), 5);
  cfg.discriminator_input = DiscriminatorInput::kConditioned;
  EXPECT_EQ(build_model_triple(cfg, 1).discriminator.input_width(), 15);
}

TEST(BuildModel, SameSeedSameParameters) {
  auto a = build_model_triple(small_mlp(), 42);
  auto b = build_model_triple(small_mlp(), 42);
  auto c = build_model_triple(small_mlp(), 43);
  EXPECT_EQ(flatten_values(a.all_parameters()), flatten_values(b.all_parameters()));
  EXPECT_NE(flatten_values(a.all_parameters()), flatten_values(c.all_parameters()));
}

TEST(BuildModel, RejectsInvalidConfigs) {
  auto cfg = small_mlp();
  cfg.num_classes = 1;
  EXPECT_THROW(build_model_triple(cfg, 1), std::invalid_argument);
  cfg = small_mlp();
  cfg.feature_widths = {4, 0};
  EXPECT_THROW(build_model_triple(cfg, 1), std::invalid_argument);
  cfg = small_mlp();
  cfg.activation = "sigmoidish";
  EXPECT_THROW(build_model_triple(cfg, 1), std::invalid_argument);
  auto cnn = digits_cnn();
  cnn.input_shape = {1, 6, 6};
  EXPECT_THROW(build_model_triple(cnn, 1), std::invalid_argument);
}

TEST(BuildModel, SmallCnnZeroImageSmokeTest) {
  auto model = build_model_triple(digits_cnn(), 3);
  const Matrix zeros = Matrix::Zero(2, 28 * 28);
  const auto p = predict(model, zeros);
  EXPECT_EQ(p.features.rows(), 2);
  EXPECT_EQ(p.features.cols(), 128);
  EXPECT_EQ(p.probs.cols(), 10);
  EXPECT_TRUE(p.probs.allFinite());
  const Matrix d = sigmoid(model.discriminator.forward(condition_rows(p.features, p.probs)));
  EXPECT_EQ(d.cols(), 1);
  EXPECT_TRUE(((d.array() > 0.0) && (d.array() < 1.0)).all());
}

TEST(Predict, RowsAreDistributions) {
  Rng rng(4);
  auto model = build_model_triple(small_mlp(5), 7);
  const auto p = predict(model, random_matrix(30, 4, rng) * 10.0);
  for (Eigen::Index i = 0; i < 30; ++i) {
    EXPECT_NEAR(p.probs.row(i).sum(), 1.0, 1e-6);
    EXPECT_TRUE((p.probs.row(i).array() >= 0.0).all());
  }
}

TEST(Predict, DuplicatedRowsAndRepeatedCalls) {
  Rng rng(5);
  auto model = build_model_triple(small_mlp(), 8);
  Matrix x = random_matrix(4, 4, rng);
  x.row(3) = x.row(1);
  const auto first = predict(model, x);
  EXPECT_EQ(first.probs.row(1), first.probs.row(3));
  EXPECT_EQ(predict(model, x).probs, first.probs);
}

TEST(Predict, RejectsWrongWidth) {
  auto model = build_model_triple(small_mlp(), 8);
  EXPECT_THROW(predict(model, Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST(Layers, DenseGradient) {
  Rng rng(6);
  Dense layer(5, 3, rng, "fc");
  check_layer(layer, random_matrix(4, 5, rng), 1e-6);
}

TEST(Layers, ActivationGradients) {
  Rng rng(7);
  for (auto kind : {ActivationKind::kTanh, ActivationKind::kRelu, ActivationKind::kLeakyRelu}) {
    Activation layer(kind, 6);
    check_layer(layer, random_matrix(3, 6, rng), 1e-5);
  }
}

TEST(Layers, ConvGradient) {
  Rng rng(8);
  Conv2d layer(2, 3, 3, 6, 5, rng, "conv");
  check_layer(layer, random_matrix(2, 2 * 6 * 5, rng), 1e-5);
}

TEST(Layers, MaxPoolGradient) {
  Rng rng(9);
  MaxPool2d layer(2, 5, 4, 2);
  EXPECT_EQ(layer.output_width(), 2 * 2 * 2);
  check_layer(layer, random_matrix(3, 2 * 5 * 4, rng), 1e-5);
}

TEST(Layers, MaxPoolPicksWindowMaximum) {
  MaxPool2d layer(1, 2, 2, 2);
  Matrix x(1, 4);
  x << 1.0, 5.0, -2.0, 3.0;
  EXPECT_EQ(layer.forward(x)(0, 0), 5.0);
  const Matrix g = layer.backward(Matrix::Constant(1, 1, 2.0));
  EXPECT_EQ(g, (Matrix(1, 4) << 0.0, 2.0, 0.0, 0.0).finished());
}

TEST(EndToEnd, ComplementaryLossGradientThroughFAndG) {
  Rng rng(10);
  auto model = build_model_triple(small_mlp(4), 11);
  const Matrix x = random_matrix(10, 4, rng);
  std::vector<int> ybar(10);
  for (int& y : ybar) y = static_cast<int>(rng.below(4));
  const auto part = partition_by_complementary_label(ybar, 4);
  const auto pi = part.proportions();
  const std::vector<bool> all(4, true);

  model.zero_grad();
  const Matrix h = model.feature_extractor.forward(x);
  const Matrix probs = softmax_rows(model.label_predictor.forward(h));
  const Matrix dz = complementary_loss_logit_gradient(probs, part, std::span<const double>(pi), all);
  model.feature_extractor.backward(model.label_predictor.backward(dz));

  auto params = model.classifier_parameters();
  const auto flat = flatten_values(params);
  const auto analytic = flatten_gradients(params);
  auto fn = [&](std::span<const double> values) {
    assign_values(params, values);
    const auto p = predict(model, x);
    return total_complementary_loss(complementary_losses(p.probs, part, std::span<const double>(pi)));
  };
  EXPECT_LT(oracle::finite_difference_gradient_check(fn, flat, analytic, 1e-6, 80, 3), 1e-4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto model = build_model_triple(digits_cnn(), 21, 0.37);
  const std::string path = ::testing::TempDir() + "model_roundtrip.ckpt";
  save_checkpoint(path, model);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.seed, 21u);
  EXPECT_EQ(loaded.lambda, 0.37);
  EXPECT_EQ(loaded.config.kind, ArchitectureKind::kSmallCnn);
  EXPECT_EQ(loaded.config.input_shape, model.config.input_shape);
  const auto a = flatten_values(model.all_parameters());
  const auto b = flatten_values(loaded.all_parameters());
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
  Rng rng(3);
  const Matrix x = random_matrix(2, 28 * 28, rng);
  EXPECT_EQ(predict(model, x).probs, predict(loaded, x).probs);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const std::string path = ::testing::TempDir() + "not_a_checkpoint.ckpt";
  std::ofstream(path) << "definitely not a checkpoint";
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  auto model = build_model_triple(small_mlp(), 1);
  save_checkpoint(path, model);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}

TEST(Sgd, MomentumAndWeightDecay) {
  Parameter p{"w", Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.5)};
  SgdMomentum opt(0.9, 0.1);
  opt.step({&p}, 0.1);
  // d = 0.5 + 0.1 * 1.0 = 0.6; v = 0.6; theta = 1 - 0.06
  EXPECT_NEAR(p.value(0, 0), 0.94, 1e-15);
  opt.step({&p}, 0.1);
  // d = 0.5 + 0.094 = 0.594; v = 0.54 + 0.594 = 1.134
  EXPECT_NEAR(p.value(0, 0), 0.94 - 0.1134, 1e-14);
  Parameter q{"q", Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  EXPECT_THROW(opt.step({&p, &q}, 0.1), std::logic_error);
}
