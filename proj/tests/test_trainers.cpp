#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "clarinet/datasets.hpp"
#include "clarinet/experiment.hpp"
#include "clarinet/trainers.hpp"

using namespace clarinet;

namespace {

struct SmallTask {
  SyntheticPair pair;
  ComplementaryDataset comp;
};

SmallTask small_moons(std::uint64_t seed, std::size_t n = 200) {
  DomainPairSpec spec;
  spec.source_count = spec.target_count = n;
  auto pair = make_synthetic_pair(spec, seed);
  auto comp = generate_complementary_dataset(pair.source, derive_seed(seed, 7));
  return {std::move(pair), std::move(comp)};
}

ArchitectureConfig small_arch(int k = 2) {
  ArchitectureConfig a;
  a.input_shape = {2};
  a.feature_widths = {16, 16};
  a.discriminator_hidden = {16, 16};
  a.num_classes = k;
  return a;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 6;
  c.adversarial_start_epoch = 2;
  c.batch_size = 64;
  c.classifier_lr = 0.01;
  c.adversarial_lr = 0.01;
  return c;
}

ModelTriple identity_model(int k) {
  // G = tanh(5 x), F = identity: argmax of the output is argmax of the input.
  ArchitectureConfig a;
  a.input_shape = {k};
  a.feature_widths = {k};
  a.activation = "tanh";
  a.num_classes = k;
  a.discriminator_hidden = {2};
  auto m = build_model_triple(a, 1);
  auto g = m.feature_extractor.parameters();
  g[0]->value = 5.0 * Matrix::Identity(k, k);
  g[1]->value.setZero();
  auto f = m.label_predictor.parameters();
  f[0]->value = Matrix::Identity(k, k);
  f[1]->value.setZero();
  return m;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.adversarial_start_epoch = c.epochs + 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.decay_gamma = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.classifier_lr = -1e-3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(DefaultAlpha, EffectiveSampleSize) {
  EXPECT_DOUBLE_EQ(default_alpha(0, 1000, 10), 0.0);
  EXPECT_DOUBLE_EQ(default_alpha(100, 0, 10), 1.0);
  EXPECT_DOUBLE_EQ(default_alpha(100, 900, 10), 0.5);
  EXPECT_DOUBLE_EQ(default_alpha(0, 0, 2), 0.0);
}

TEST(Evaluate, ConstantPredictorOnBalancedTenClasses) {
  auto model = identity_model(10);
  auto f = model.label_predictor.parameters();
  f[0]->value.setZero();
  f[1]->value(0, 3) = 1.0;
  LabeledDataset test{Matrix::Zero(100, 10), {}, LabelSpace(10), {}};
  for (int i = 0; i < 100; ++i) test.y.push_back(i % 10);
  EXPECT_DOUBLE_EQ(evaluate(model, test), 0.1);
}

TEST(Evaluate, GroundTruthPredictorScoresOne) {
  auto model = identity_model(3);
  LabeledDataset test{Matrix::Zero(600, 3), {}, LabelSpace(3), {}};
  for (int i = 0; i < 600; ++i) {
    test.y.push_back(i % 3);
    test.x(i, i % 3) = 1.0;
  }
  EXPECT_DOUBLE_EQ(evaluate(model, test), 1.0);
  LabeledDataset empty{Matrix(0, 3), {}, LabelSpace(3), {}};
  EXPECT_THROW(evaluate(model, empty), std::invalid_argument);
}

TEST(Evaluate, CheckpointReevaluatesIdentically) {
  auto t = small_moons(3);
  auto result = train_gac(build_model_triple(small_arch(), 3), t.comp, quick_config());
  const std::string path = ::testing::TempDir() + "evaluate_ckpt.ckpt";
  save_checkpoint(path, result.model);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(evaluate(result.model, t.pair.target_eval), evaluate(loaded, t.pair.target_eval));
  std::filesystem::remove(path);
}

TEST(Reductions, CcWithoutAdversarialEpochsEqualsGac) {
  auto t = small_moons(4);
  auto cfg = quick_config();
  cfg.adversarial_start_epoch = cfg.epochs;
  const auto model = build_model_triple(small_arch(), 4);
  auto cc = train_cc_uda(model, t.comp, t.pair.target_unlabeled, cfg, &t.pair.target_eval);
  auto gac = train_gac(model, t.comp, cfg, &t.pair.target_eval);
  EXPECT_TRUE(same_trajectory(cc.log, gac.log));
  EXPECT_EQ(flatten_values(cc.model.classifier_parameters()), flatten_values(gac.model.classifier_parameters()));
}

TEST(Reductions, PcWithNoTrueLabelsEqualsCc) {
  auto t = small_moons(5);
  auto cfg = quick_config();
  const auto model = build_model_triple(small_arch(), 5);
  const LabeledDataset no_true{Matrix(0, 2), {}, LabelSpace(2), {}};
  auto pc_cfg = cfg;
  pc_cfg.alpha = 0.0;
  auto pc = train_pc_uda(model, no_true, t.comp, t.pair.target_unlabeled, pc_cfg, &t.pair.target_eval);
  auto cc = train_cc_uda(model, t.comp, t.pair.target_unlabeled, cfg, &t.pair.target_eval);
  EXPECT_TRUE(same_trajectory(pc.log, cc.log));
  EXPECT_EQ(flatten_values(pc.model.all_parameters()), flatten_values(cc.model.all_parameters()));
  // The default alpha is also 0 here.
  auto pc_default = train_pc_uda(model, no_true, t.comp, t.pair.target_unlabeled, cfg, &t.pair.target_eval);
  EXPECT_TRUE(same_trajectory(pc_default.log, cc.log));
}

TEST(Reductions, PcWithOnlyTrueLabelsIsSupervisedAdaptation) {
  auto t = small_moons(6);
  auto cfg = quick_config();
  cfg.alpha = 1.0;
  cfg.epochs = 40;
  const ComplementaryDataset no_comp(Matrix(0, 2), {}, {}, LabelSpace(2));
  auto pc = train_pc_uda(build_model_triple(small_arch(), 6), t.pair.source, no_comp, t.pair.target_unlabeled, cfg,
                         &t.pair.target_eval);
  ASSERT_EQ(pc.log.records.size(), 40u);
  EXPECT_EQ(pc.log.records.back().comp_loss, 0.0);
  EXPECT_NE(pc.log.records.back().adv_loss, 0.0);
  EXPECT_GT(pc.log.records.back().source_acc, 0.8);
}

TEST(Determinism, SameSeedSameLog) {
  auto t = small_moons(7);
  const auto model = build_model_triple(small_arch(), 7);
  auto a = train_cc_uda(model, t.comp, t.pair.target_unlabeled, quick_config(), &t.pair.target_eval);
  auto b = train_cc_uda(model, t.comp, t.pair.target_unlabeled, quick_config(), &t.pair.target_eval);
  EXPECT_TRUE(same_trajectory(a.log, b.log));
  auto other_cfg = quick_config();
  other_cfg.seed = 8;
  auto c = train_cc_uda(model, t.comp, t.pair.target_unlabeled, other_cfg, &t.pair.target_eval);
  EXPECT_FALSE(same_trajectory(a.log, c.log));
}

TEST(MetricsLog, CsvRoundTrip) {
  auto t = small_moons(8);
  auto result = train_cc_uda(build_model_triple(small_arch(), 8), t.comp, t.pair.target_unlabeled, quick_config(),
                             &t.pair.target_eval);
  const std::string path = ::testing::TempDir() + "metrics_roundtrip.csv";
  result.log.write_csv(path);
  const auto back = MetricsLog::read_csv(path);
  EXPECT_TRUE(same_trajectory(result.log, back));
  std::filesystem::remove(path);
}

TEST(Gac, SeparableMoonsSourceAccuracy) {
  const auto& task = experiment::find_task("moons30");
  auto pair = make_synthetic_pair(task.synthetic, 1);
  auto comp = generate_complementary_dataset(pair.source, derive_seed(1, 7));
  auto result = train_gac(build_model_triple(task.architecture, 1), comp, task.train, &pair.target_eval);
  EXPECT_GT(result.log.records.back().source_acc, 0.95);
}

TEST(TwoStep, NoiseIsOneMinusStageOneSourceAccuracy) {
  auto t = small_moons(9);
  auto cfg = quick_config();
  auto result = two_step_pipeline(build_model_triple(small_arch(), 9), t.comp, t.pair.target_unlabeled, cfg,
                                  &t.pair.target_eval);
  ASSERT_EQ(result.log.records.size(), 2u * cfg.epochs);
  ASSERT_TRUE(result.log.pseudo_label_noise.has_value());
  const double stage1_source = result.log.records[static_cast<std::size_t>(cfg.epochs - 1)].source_acc;
  EXPECT_NEAR(*result.log.pseudo_label_noise, 1.0 - stage1_source, 1e-12);
  EXPECT_EQ(result.log.records[static_cast<std::size_t>(cfg.epochs)].epoch, cfg.epochs + 1);
}

TEST(TwoStep, InjectedGroundTruthIsTheSupervisedReference) {
  auto t = small_moons(10);
  auto cfg = quick_config();
  const auto model = build_model_triple(small_arch(), 10);
  auto injected = two_step_pipeline(model, t.comp, t.pair.target_unlabeled, cfg, &t.pair.target_eval, &t.pair.source.y);
  EXPECT_EQ(*injected.log.pseudo_label_noise, 0.0);

  // Stage two with true labels matches supervised adaptation from the same initial weights.
  auto uda = cfg;
  uda.alpha = 1.0;
  uda.temperature = 1.0;
  const ComplementaryDataset no_comp(Matrix(0, 2), {}, {}, LabelSpace(2));
  auto reference = train_pc_uda(model, t.pair.source, no_comp, t.pair.target_unlabeled, uda, &t.pair.target_eval);
  EXPECT_EQ(flatten_values(injected.model.all_parameters()), flatten_values(reference.model.all_parameters()));

  const std::vector<int> wrong_size(3, 0);
  EXPECT_THROW(two_step_pipeline(model, t.comp, t.pair.target_unlabeled, cfg, nullptr, &wrong_size),
               std::invalid_argument);
}

TEST(Correction, AscendStepRaisesTheNegativePart) {
  // Pushing probability far away from each complementary label overfits, so per-class losses go negative.
  Rng rng(11);
  const int k = 4;
  Matrix logits(16, k);
  std::vector<int> ybar(16);
  for (Eigen::Index i = 0; i < 16; ++i) {
    ybar[static_cast<std::size_t>(i)] = static_cast<int>(i % k);
    for (int c = 0; c < k; ++c) logits(i, c) = rng.normal(0.0, 0.3);
    logits(i, ybar[static_cast<std::size_t>(i)]) -= 3.0;
  }
  const auto part = partition_by_complementary_label(ybar, k);
  const auto pi = part.proportions();
  auto negative_part = [&](const Matrix& z) {
    const auto v = complementary_losses(softmax_rows(z), part, std::span<const double>(pi));
    double s = 0.0;
    for (double x : v.values) s += std::min(x, 0.0);
    return s;
  };
  const auto per = complementary_losses(softmax_rows(logits), part, std::span<const double>(pi));
  const auto directive = nonnegative_correction_step(per);
  ASSERT_EQ(directive.mode, UpdateMode::kAscendNegative);
  const Matrix grad = complementary_loss_logit_gradient(softmax_rows(logits), part, std::span<const double>(pi),
                                                        directive_class_mask(per, directive));
  const double before = negative_part(logits);
  EXPECT_NEAR(before, directive.loss_value, 1e-12);
  const Matrix stepped = logits + 1e-3 * grad;
  EXPECT_GT(negative_part(stepped), before);
  EXPECT_LE(negative_part(stepped), 0.0);
}

TEST(Training, AbortsOnNonFiniteLoss) {
  auto t = small_moons(12);
  Matrix x = t.comp.x();
  x(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const ComplementaryDataset poisoned(x, t.comp.ybar(), t.comp.y_true_hidden(), LabelSpace(2));
  auto cfg = quick_config();
  cfg.batch_size = 256;
  EXPECT_THROW(train_gac(build_model_triple(small_arch(), 12), poisoned, cfg), TrainingError);
}

TEST(Training, RejectsMismatchedInputs) {
  auto t = small_moons(13);
  auto cfg = quick_config();
  EXPECT_THROW(train_cc_uda(build_model_triple(small_arch(3), 13), t.comp, t.pair.target_unlabeled, cfg),
               std::invalid_argument);
  const ComplementaryDataset empty(Matrix(0, 2), {}, {}, LabelSpace(2));
  EXPECT_THROW(train_gac(build_model_triple(small_arch(), 13), empty, cfg), std::invalid_argument);
  EXPECT_THROW(train_cc_uda(build_model_triple(small_arch(), 13), t.comp, Matrix(0, 2), cfg), std::invalid_argument);
  cfg.alpha = 2.0;
  EXPECT_THROW(train_pc_uda(build_model_triple(small_arch(), 13), t.pair.source, t.comp, t.pair.target_unlabeled, cfg),
               std::invalid_argument);
}

TEST(Training, CrossEntropyOnComplementaryLabelsLearnsTheComplement) {
  auto t = small_moons(14, 400);
  auto cfg = quick_config();
  cfg.epochs = 30;
  cfg.ablations.insert(Ablation::kCeOnComplementary);
  auto result = train_gac(build_model_triple(small_arch(), 14), t.comp, cfg);
  EXPECT_LT(result.log.records.back().source_acc, 0.5);
}
