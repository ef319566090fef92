#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clarinet/conditioning.hpp"
#include "clarinet/label_space.hpp"
#include "clarinet/losses.hpp"
#include "clarinet/models.hpp"
#include "clarinet/optim.hpp"
#include "clarinet/random.hpp"

namespace clarinet {

enum class Ablation {
  kNoSharpen,         // temperature forced to 1
  kNoCondition,       // discriminator sees features only
  kCeOnComplementary  // cross-entropy on the complementary label as if it were true
};

struct TrainConfig {
  std::size_t batch_size = 128;
  int epochs = 200;
  /// Adversarial updates run in epochs t > adversarial_start_epoch.
  int adversarial_start_epoch = 5;
  /// 0 selects ceil(largest stream / batch_size).
  std::size_t iterations_per_epoch = 0;
  double classifier_lr = 5e-5;
  double adversarial_lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  double lambda = 1.0;
  /// Both learning rates follow lr / (1 + decay_gamma * p)^decay_power with p the
  /// fraction of iterations completed; decay_gamma = 0 keeps them constant.
  double decay_gamma = 0.0;
  double decay_power = 0.75;
  /// Linear ramp of lambda over this many adversarial epochs; 0 keeps it constant.
  int lambda_warmup_epochs = 0;
  double temperature = 0.5;
  /// Weight of the true-label loss (PC only). Unset selects n_s / (n_s + n_comp / (K-1)).
  std::optional<double> alpha;
  std::uint64_t seed = 1;
  std::set<Ablation> ablations;
  /// Treat the sharpened prediction inside the conditioning product as a constant.
  bool detach_condition_predictions = true;
  /// false: D ascends L_adv and F, G descend lambda * L_adv (source scored 1, target 0).
  /// true: D descends and F, G ascend, as the update lines are printed; D then
  /// drives its outputs into the clamp and the adversarial gradient vanishes.
  bool literal_adversarial_sign = false;
  int checkpoint_every = 0;
  std::string checkpoint_prefix;

  bool has(Ablation a) const { return ablations.count(a) != 0; }

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (epochs < 0 || adversarial_start_epoch < 0 || adversarial_start_epoch > epochs) {
      throw std::invalid_argument("TrainConfig: need 0 <= T_s <= T_max");
    }
    if (!(classifier_lr >= 0.0) || !(adversarial_lr >= 0.0)) {
      throw std::invalid_argument("TrainConfig: learning rates must be non-negative");
    }
    if (!(temperature > 0.0)) throw std::invalid_argument("TrainConfig: temperature must be positive");
    if (decay_gamma < 0.0 || decay_power < 0.0) throw std::invalid_argument("TrainConfig: negative decay");
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be non-negative");
    if (alpha && !(*alpha >= 0.0 && *alpha <= 1.0)) {
      throw std::invalid_argument("TrainConfig: alpha must lie in [0,1]");
    }
  }
};

struct EpochRecord {
  int epoch = 0;
  double comp_loss = 0.0;
  double adv_loss = 0.0;
  double ascend_frac = 0.0;
  double target_acc = std::numeric_limits<double>::quiet_NaN();
  double source_acc = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,comp_loss,adv_loss,ascend_frac,target_acc,source_acc,seconds";

struct MetricsLog {
  std::vector<EpochRecord> records;
  /// Two-step only: fraction of source pseudo-labels that disagree with the hidden truth.
  std::optional<double> pseudo_label_noise;

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics: " + path);
    out << kMetricsHeader << '\n' << std::setprecision(17);
    for (const auto& r : records) {
      out << r.epoch << ',' << r.comp_loss << ',' << r.adv_loss << ',' << r.ascend_frac << ','
          << r.target_acc << ',' << r.source_acc << ',' << r.seconds << '\n';
    }
  }

  static MetricsLog read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics: " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) {
      throw std::runtime_error("metrics " + path + ": unexpected header");
    }
    MetricsLog log;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() != 7) throw std::runtime_error("metrics " + path + ": malformed row");
      EpochRecord r;
      r.epoch = std::stoi(cells[0]);
      double* fields[] = {&r.comp_loss, &r.adv_loss, &r.ascend_frac, &r.target_acc, &r.source_acc, &r.seconds};
      for (std::size_t i = 0; i < 6; ++i) {
        *fields[i] = (cells[i + 1] == "nan" || cells[i + 1] == "-nan")
                         ? std::numeric_limits<double>::quiet_NaN()
                         : std::stod(cells[i + 1]);
      }
      log.records.push_back(r);
    }
    return log;
  }
};

/// Bitwise comparison of two logs, ignoring wall time.
inline bool same_trajectory(const MetricsLog& a, const MetricsLog& b) {
  if (a.records.size() != b.records.size()) return false;
  auto same = [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  };
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& r = a.records[i];
    const auto& s = b.records[i];
    if (r.epoch != s.epoch || !same(r.comp_loss, s.comp_loss) || !same(r.adv_loss, s.adv_loss) ||
        !same(r.ascend_frac, s.ascend_frac) || !same(r.target_acc, s.target_acc) ||
        !same(r.source_acc, s.source_acc)) {
      return false;
    }
  }
  return true;
}

struct TrainResult {
  ModelTriple model;
  MetricsLog log;
};

/// Fraction of rows whose argmax prediction equals the label.
inline double evaluate(ModelTriple& model, const LabeledDataset& test) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  constexpr Eigen::Index kChunk = 512;
  std::size_t correct = 0;
  for (Eigen::Index start = 0; start < test.x.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, test.x.rows() - start);
    const Prediction p = predict(model, test.x.middleRows(start, n));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg;
      p.probs.row(i).maxCoeff(&arg);
      if (static_cast<int>(arg) == test.y[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline double default_alpha(std::size_t n_true, std::size_t n_comp, int num_classes) {
  const double denom = static_cast<double>(n_true) + static_cast<double>(n_comp) / (num_classes - 1);
  return denom > 0.0 ? static_cast<double>(n_true) / denom : 0.0;
}

namespace detail {

/// Per-epoch shuffled stream; the cursor wraps, so shorter streams cycle.
class BatchStream {
 public:
  BatchStream(std::size_t size, std::size_t batch, std::uint64_t seed)
      : size_(size), batch_(std::min(batch, size)), rng_(seed) {}

  void shuffle() {
    if (size_ > 0) order_ = rng_.permutation(size_);
  }

  std::vector<std::size_t> fetch(std::size_t iteration) const {
    std::vector<std::size_t> idx(batch_);
    for (std::size_t i = 0; i < batch_; ++i) idx[i] = order_[(iteration * batch_ + i) % size_];
    return idx;
  }

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

 private:
  std::size_t size_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
};

inline Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(y[i]);
  return out;
}

inline void require_finite(double value, const char* what, int epoch, std::size_t iteration) {
  if (!std::isfinite(value)) {
    throw TrainingError(std::string(what) + " is not finite at epoch " + std::to_string(epoch) +
                        ", iteration " + std::to_string(iteration));
  }
}

inline void check_width(const ModelTriple& model, const Matrix& x, const char* what) {
  if (x.cols() != model.feature_extractor.input_width()) {
    throw std::invalid_argument(std::string(what) + " width does not match the model input");
  }
}

}  // namespace detail

struct AdversarialSplit {
  Eigen::Index true_rows = 0;
  Eigen::Index comp_rows = 0;
  Eigen::Index target_rows = 0;
};

struct AdversarialPassOptions {
  double temperature = 0.5;
  bool conditioned = true;
  bool detach_predictions = true;
  double lambda = 1.0;
  /// -1: D ascends the loss. +1: D descends it.
  double direction = -1.0;
};

/// Entropy weights 1 + exp(-H(T(f))) for each row of the sharpened predictions.
inline std::vector<double> entropy_weights(const Matrix& sharp) {
  std::vector<double> w(static_cast<std::size_t>(sharp.rows()));
  for (Eigen::Index i = 0; i < sharp.rows(); ++i) {
    w[static_cast<std::size_t>(i)] = sample_weight(prediction_entropy<double>(
        std::span<const double>(sharp.row(i).data(), static_cast<std::size_t>(sharp.cols()))));
  }
  return w;
}

/// Scattered adversarial loss on a stacked [true; complementary; target] batch.
/// With `backward`, accumulates into the parameter gradients: D receives
/// direction * dL/dtheta_D and the classifier receives the same signal passed
/// back through gradient reversal. `fixed_weights` replaces the entropy weights.
inline double adversarial_pass(ModelTriple& model, const Matrix& x, const AdversarialSplit& split,
                               const AdversarialPassOptions& opt, bool backward = true,
                               const std::vector<double>* fixed_weights = nullptr) {
  if (split.true_rows + split.comp_rows + split.target_rows != x.rows()) {
    throw std::invalid_argument("adversarial_pass: split does not cover the batch");
  }
  const Matrix h = model.feature_extractor.forward(x);
  const Matrix probs = softmax_rows(model.label_predictor.forward(h));
  const Matrix sharp = sharpen_rows<double>(probs, opt.temperature);
  const std::vector<double> weights = fixed_weights != nullptr ? *fixed_weights : entropy_weights(sharp);
  const Matrix g = opt.conditioned ? condition_rows<double>(h, sharp) : h;
  const Matrix d = sigmoid(model.discriminator.forward(g));

  auto side = [&](Eigen::Index begin, Eigen::Index count, DomainTag tag) {
    AdversarialBatchTerms<double> t;
    t.tag = tag;
    for (Eigen::Index i = begin; i < begin + count; ++i) {
      t.weights.push_back(weights[static_cast<std::size_t>(i)]);
      t.disc_outputs.push_back(d(i, 0));
    }
    return t;
  };
  const auto true_side = side(0, split.true_rows, DomainTag::kSourceTrue);
  const auto comp_side = side(split.true_rows, split.comp_rows, DomainTag::kSourceComplementary);
  const auto target_side = side(split.true_rows + split.comp_rows, split.target_rows, DomainTag::kTarget);
  const double loss = scattered_adversarial_loss_pc(true_side, comp_side, target_side);
  if (!backward) return loss;

  Matrix da(x.rows(), 1);
  Eigen::Index row = 0;
  for (const auto* s : {&true_side, &comp_side, &target_side}) {
    for (double v : adversarial_logit_gradient(*s)) da(row++, 0) = opt.direction * v;
  }
  const Matrix reversed = GradientReversal(opt.lambda).backward(model.discriminator.backward(da));
  Matrix dh;
  if (opt.conditioned) {
    Matrix dsharp;
    condition_rows_backward<double>(h, sharp, reversed, dh, dsharp);
    if (!opt.detach_predictions) {
      dh += model.label_predictor.backward(sharpen_logit_backward<double>(sharp, dsharp, opt.temperature));
    }
  } else {
    dh = reversed;
  }
  model.feature_extractor.backward(dh);
  return loss;
}

namespace detail {

struct EngineInputs {
  const LabeledDataset* true_source = nullptr;
  const ComplementaryDataset* comp_source = nullptr;
  const Matrix* target = nullptr;
  const LabeledDataset* target_eval = nullptr;
  bool adversarial = true;
  double alpha = 0.0;
  int epoch_offset = 0;
};

/// One implementation behind every trainer. Per iteration, in order:
///   1. true-label step (rate gamma1 * alpha) when true-labeled data exists;
///   2. complementary step with the non-negative correction (rate gamma1 * (1 - alpha));
///   3. after T_s: discriminator descent on L_adv (rate gamma2), then F and G
///      through gradient reversal (rate gamma2, scaled by -lambda).
/// Every step runs its own forward pass and owns its own momentum buffers.
inline MetricsLog run_engine(ModelTriple& model, const EngineInputs& in, const TrainConfig& cfg) {
  cfg.validate();
  const int num_classes = model.config.num_classes;
  const bool has_true = in.true_source != nullptr && !in.true_source->empty();
  const bool has_comp = in.comp_source != nullptr && !in.comp_source->empty();
  const bool has_target = in.target != nullptr && in.target->rows() > 0;
  if (!has_true && !has_comp) throw std::invalid_argument("trainer: no labeled source data");
  if (has_true) check_width(model, in.true_source->x, "true-labeled source");
  if (has_comp) check_width(model, in.comp_source->x(), "complementary source");
  if (has_target) check_width(model, *in.target, "target");
  if (has_comp && in.comp_source->label_space().size() != num_classes) {
    throw std::invalid_argument("trainer: source label space does not match the model");
  }
  const bool conditioned = !cfg.has(Ablation::kNoCondition);
  const Eigen::Index expected_disc_in = conditioned ? static_cast<Eigen::Index>(model.config.feature_dim()) * num_classes
                                                    : model.config.feature_dim();
  if (in.adversarial && model.discriminator.input_width() != expected_disc_in) {
    throw std::invalid_argument("trainer: discriminator input does not match the conditioning mode");
  }
  if (cfg.batch_size < static_cast<std::size_t>(num_classes)) {
    std::clog << "warning: batch size " << cfg.batch_size << " is below K = " << num_classes << '\n';
  }

  BatchStream true_stream(has_true ? in.true_source->size() : 0, cfg.batch_size, derive_seed(cfg.seed, 1));
  BatchStream comp_stream(has_comp ? in.comp_source->size() : 0, cfg.batch_size, derive_seed(cfg.seed, 2));
  BatchStream target_stream(has_target ? static_cast<std::size_t>(in.target->rows()) : 0, cfg.batch_size,
                            derive_seed(cfg.seed, 3));

  std::size_t iterations = cfg.iterations_per_epoch;
  if (iterations == 0) {
    std::size_t largest = std::max(true_stream.size(), comp_stream.size());
    if (in.adversarial) largest = std::max(largest, target_stream.size());
    iterations = (largest + cfg.batch_size - 1) / cfg.batch_size;
  }

  SgdMomentum true_opt(cfg.momentum, cfg.weight_decay);
  SgdMomentum comp_opt(cfg.momentum, cfg.weight_decay);
  SgdMomentum adv_classifier_opt(cfg.momentum, cfg.weight_decay);
  SgdMomentum adv_disc_opt(cfg.momentum, cfg.weight_decay);
  const double temperature = cfg.has(Ablation::kNoSharpen) ? 1.0 : cfg.temperature;
  auto pass_options = [&](double lambda) {
    return AdversarialPassOptions{temperature, conditioned, cfg.detach_condition_predictions, lambda,
                                  cfg.literal_adversarial_sign ? 1.0 : -1.0};
  };
  const double alpha = in.alpha;

  std::optional<LabeledDataset> source_eval;
  if (has_comp && in.comp_source->has_hidden_labels()) {
    source_eval = in.comp_source->hidden_view();
  } else if (has_true) {
    source_eval = *in.true_source;
  }

  MetricsLog log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    true_stream.shuffle();
    comp_stream.shuffle();
    target_stream.shuffle();
    const bool adversarial_epoch = in.adversarial && has_target && epoch > cfg.adversarial_start_epoch;
    double lambda = cfg.lambda;
    if (cfg.lambda_warmup_epochs > 0) {
      lambda *= std::min(1.0, static_cast<double>(epoch - cfg.adversarial_start_epoch) / cfg.lambda_warmup_epochs);
    }
    model.lambda = lambda;
    double comp_sum = 0.0, adv_sum = 0.0;
    std::size_t comp_steps = 0, ascend_steps = 0, adv_steps = 0;

    for (std::size_t it = 0; it < iterations; ++it) {
      const double progress = static_cast<double>(static_cast<std::size_t>(epoch - 1) * iterations + it) /
                              static_cast<double>(static_cast<std::size_t>(cfg.epochs) * iterations);
      const double lr_scale =
          cfg.decay_gamma > 0.0 ? std::pow(1.0 + cfg.decay_gamma * progress, -cfg.decay_power) : 1.0;
      std::vector<std::size_t> true_idx, comp_idx, target_idx;
      if (has_true) true_idx = true_stream.fetch(it);
      if (has_comp) comp_idx = comp_stream.fetch(it);
      if (adversarial_epoch) target_idx = target_stream.fetch(it);

      if (has_true) {
        const Matrix x = gather_rows(in.true_source->x, true_idx);
        const std::vector<int> y = gather_labels(in.true_source->y, true_idx);
        model.zero_grad();
        const Matrix h = model.feature_extractor.forward(x);
        const Matrix probs = softmax_rows(model.label_predictor.forward(h));
        require_finite(true_label_loss<double>(probs, y), "true-label loss", epoch, it);
        const Matrix dh = model.label_predictor.backward(true_label_logit_gradient<double>(probs, y));
        model.feature_extractor.backward(dh);
        true_opt.step(model.classifier_parameters(), cfg.classifier_lr * lr_scale * alpha);
      }

      if (has_comp) {
        const Matrix x = gather_rows(in.comp_source->x(), comp_idx);
        const std::vector<int> ybar = gather_labels(in.comp_source->ybar(), comp_idx);
        model.zero_grad();
        const Matrix h = model.feature_extractor.forward(x);
        const Matrix probs = softmax_rows(model.label_predictor.forward(h));
        Matrix dz;
        if (cfg.has(Ablation::kCeOnComplementary)) {
          const double ce = true_label_loss<double>(probs, ybar);
          require_finite(ce, "cross-entropy on complementary labels", epoch, it);
          comp_sum += ce;
          dz = true_label_logit_gradient<double>(probs, ybar);
        } else {
          const auto partition = partition_by_complementary_label(ybar, num_classes);
          const auto pi = partition.proportions<double>();
          const auto per_class = complementary_losses<double>(probs, partition, pi);
          const double total = total_complementary_loss(per_class);
          require_finite(total, "complementary loss", epoch, it);
          comp_sum += total;
          const UpdateDirective directive = nonnegative_correction_step(per_class);
          dz = complementary_loss_logit_gradient<double>(probs, partition, pi,
                                                         directive_class_mask(per_class, directive));
          if (directive.mode == UpdateMode::kAscendNegative) {
            dz = -dz;
            ++ascend_steps;
          }
        }
        ++comp_steps;
        const Matrix dh = model.label_predictor.backward(dz);
        model.feature_extractor.backward(dh);
        comp_opt.step(model.classifier_parameters(), cfg.classifier_lr * lr_scale * (1.0 - alpha));
      }

      if (adversarial_epoch) {
        const Eigen::Index n_true = static_cast<Eigen::Index>(true_idx.size());
        const Eigen::Index n_comp = static_cast<Eigen::Index>(comp_idx.size());
        const Eigen::Index n_tgt = static_cast<Eigen::Index>(target_idx.size());
        Matrix x(n_true + n_comp + n_tgt, model.feature_extractor.input_width());
        if (n_true > 0) x.topRows(n_true) = gather_rows(in.true_source->x, true_idx);
        if (n_comp > 0) x.middleRows(n_true, n_comp) = gather_rows(in.comp_source->x(), comp_idx);
        x.bottomRows(n_tgt) = gather_rows(*in.target, target_idx);

        model.zero_grad();
        const double adv = adversarial_pass(model, x, {n_true, n_comp, n_tgt}, pass_options(lambda));
        require_finite(adv, "adversarial loss", epoch, it);
        adv_sum += adv;
        ++adv_steps;
        adv_disc_opt.step(model.discriminator.parameters(), cfg.adversarial_lr * lr_scale);
        adv_classifier_opt.step(model.classifier_parameters(), cfg.adversarial_lr * lr_scale);
      }
    }

    EpochRecord rec;
    rec.epoch = in.epoch_offset + epoch;
    rec.comp_loss = comp_steps > 0 ? comp_sum / static_cast<double>(comp_steps) : 0.0;
    rec.adv_loss = adv_steps > 0 ? adv_sum / static_cast<double>(adv_steps) : 0.0;
    rec.ascend_frac = comp_steps > 0 ? static_cast<double>(ascend_steps) / static_cast<double>(comp_steps) : 0.0;
    if (in.target_eval != nullptr && !in.target_eval->empty()) rec.target_acc = evaluate(model, *in.target_eval);
    if (source_eval) rec.source_acc = evaluate(model, *source_eval);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.records.push_back(rec);

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_prefix.empty() &&
        (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      std::ostringstream name;
      name << cfg.checkpoint_prefix << "_epoch" << std::setw(4) << std::setfill('0') << rec.epoch << ".ckpt";
      save_checkpoint(name.str(), model);
    }
  }
  return log;
}

}  // namespace detail

/// Complementary-label source, unlabeled target. Returns the last-epoch model.
inline TrainResult train_cc_uda(ModelTriple model, const ComplementaryDataset& source,
                                const Matrix& target_unlabeled, const TrainConfig& cfg,
                                const LabeledDataset* target_eval = nullptr) {
  if (source.empty() || target_unlabeled.rows() == 0) {
    throw std::invalid_argument("train_cc_uda: source and target must be nonempty");
  }
  detail::EngineInputs in;
  in.comp_source = &source;
  in.target = &target_unlabeled;
  in.target_eval = target_eval;
  in.alpha = 0.0;
  MetricsLog log = detail::run_engine(model, in, cfg);
  return {std::move(model), std::move(log)};
}

/// A few true labels plus complementary labels in the source.
inline TrainResult train_pc_uda(ModelTriple model, const LabeledDataset& source_true,
                                const ComplementaryDataset& source_comp, const Matrix& target_unlabeled,
                                const TrainConfig& cfg, const LabeledDataset* target_eval = nullptr) {
  if (source_true.empty() && source_comp.empty()) {
    throw std::invalid_argument("train_pc_uda: both source parts are empty");
  }
  if (target_unlabeled.rows() == 0) throw std::invalid_argument("train_pc_uda: empty target");
  const double alpha =
      cfg.alpha.value_or(default_alpha(source_true.size(), source_comp.size(), model.config.num_classes));
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("train_pc_uda: alpha outside [0,1]");
  detail::EngineInputs in;
  in.true_source = &source_true;
  in.comp_source = &source_comp;
  in.target = &target_unlabeled;
  in.target_eval = target_eval;
  in.alpha = alpha;
  MetricsLog log = detail::run_engine(model, in, cfg);
  return {std::move(model), std::move(log)};
}

/// Complementary-label learning only: no target data, no discriminator updates.
inline TrainResult train_gac(ModelTriple model, const ComplementaryDataset& source, const TrainConfig& cfg,
                             const LabeledDataset* target_eval = nullptr) {
  if (source.empty()) throw std::invalid_argument("train_gac: empty source");
  detail::EngineInputs in;
  in.comp_source = &source;
  in.target_eval = target_eval;
  in.adversarial = false;
  MetricsLog log = detail::run_engine(model, in, cfg);
  return {std::move(model), std::move(log)};
}

/// Complementary-label classifier, argmax pseudo-labels on the source, then
/// conditional adversarial adaptation on the pseudo-labeled source with an
/// unsharpened conditioning. The second stage starts from the initial weights.
/// `injected_labels` replaces the pseudo-labels (control arm).
inline TrainResult two_step_pipeline(ModelTriple model, const ComplementaryDataset& source,
                                     const Matrix& target_unlabeled, const TrainConfig& cfg,
                                     const LabeledDataset* target_eval = nullptr,
                                     const std::vector<int>* injected_labels = nullptr) {
  if (source.empty() || target_unlabeled.rows() == 0) {
    throw std::invalid_argument("two_step_pipeline: source and target must be nonempty");
  }
  const ModelTriple initial = model;
  TrainResult stage1 = train_gac(std::move(model), source, cfg, target_eval);

  LabeledDataset pseudo{source.x(), {}, source.label_space(), source.shape()};
  if (injected_labels != nullptr) {
    if (injected_labels->size() != source.size()) {
      throw std::invalid_argument("two_step_pipeline: injected label count mismatch");
    }
    pseudo.y = *injected_labels;
  } else {
    const Prediction p = predict(stage1.model, source.x());
    pseudo.y.reserve(source.size());
    for (Eigen::Index i = 0; i < p.probs.rows(); ++i) {
      Eigen::Index arg;
      p.probs.row(i).maxCoeff(&arg);
      pseudo.y.push_back(static_cast<int>(arg));
    }
  }
  std::optional<double> noise;
  if (source.has_hidden_labels()) {
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < source.size(); ++i) wrong += pseudo.y[i] != source.y_true_hidden()[i];
    noise = static_cast<double>(wrong) / static_cast<double>(source.size());
  }

  TrainConfig uda = cfg;
  uda.alpha = 1.0;
  uda.temperature = 1.0;
  uda.ablations.erase(Ablation::kCeOnComplementary);
  detail::EngineInputs in;
  in.true_source = &pseudo;
  in.target = &target_unlabeled;
  in.target_eval = target_eval;
  in.alpha = 1.0;
  in.epoch_offset = cfg.epochs;
  ModelTriple second = initial;
  MetricsLog log2 = detail::run_engine(second, in, uda);

  MetricsLog log = std::move(stage1.log);
  log.records.insert(log.records.end(), log2.records.begin(), log2.records.end());
  log.pseudo_label_noise = noise;
  return {std::move(second), std::move(log)};
}

}  // namespace clarinet
