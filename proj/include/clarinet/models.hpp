#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clarinet/layers.hpp"
#include "clarinet/random.hpp"
#include "clarinet/types.hpp"

namespace clarinet {

enum class ArchitectureKind { kMlp, kSmallCnn };

/// What the discriminator sees: the feature/prediction outer product, or the
/// bare features (the no-conditioning ablation).
enum class DiscriminatorInput { kConditioned, kFeatures };

struct ArchitectureConfig {
  ArchitectureKind kind = ArchitectureKind::kMlp;
  /// (width) for MLPs, (channels, height, width) for CNNs.
  std::vector<int> input_shape{2};
  /// MLP: hidden widths of G; the last one is the feature dimension.
  std::vector<int> feature_widths{64, 64};
  /// CNN: channels of the two conv blocks, kernel size and final dense feature width.
  std::vector<int> conv_channels{6, 16};
  int kernel = 5;
  int cnn_feature_dim = 128;
  std::vector<int> classifier_hidden{};
  std::vector<int> discriminator_hidden{64, 64};
  std::string activation = "relu";
  int num_classes = 2;
  DiscriminatorInput discriminator_input = DiscriminatorInput::kConditioned;

  int feature_dim() const {
    return kind == ArchitectureKind::kMlp ? feature_widths.back() : cnn_feature_dim;
  }
  int input_width() const {
    int n = 1;
    for (int d : input_shape) n *= d;
    return n;
  }
};

inline void to_json(nlohmann::json& j, const ArchitectureConfig& c) {
  j = nlohmann::json{{"kind", c.kind == ArchitectureKind::kMlp ? "mlp" : "small_cnn"},
                     {"input_shape", c.input_shape},
                     {"feature_widths", c.feature_widths},
                     {"conv_channels", c.conv_channels},
                     {"kernel", c.kernel},
                     {"cnn_feature_dim", c.cnn_feature_dim},
                     {"classifier_hidden", c.classifier_hidden},
                     {"discriminator_hidden", c.discriminator_hidden},
                     {"activation", c.activation},
                     {"num_classes", c.num_classes},
                     {"discriminator_input",
                      c.discriminator_input == DiscriminatorInput::kConditioned ? "conditioned"
                                                                                : "features"}};
}

inline void from_json(const nlohmann::json& j, ArchitectureConfig& c) {
  c.kind = j.at("kind").get<std::string>() == "mlp" ? ArchitectureKind::kMlp
                                                     : ArchitectureKind::kSmallCnn;
  j.at("input_shape").get_to(c.input_shape);
  j.at("feature_widths").get_to(c.feature_widths);
  j.at("conv_channels").get_to(c.conv_channels);
  j.at("kernel").get_to(c.kernel);
  j.at("cnn_feature_dim").get_to(c.cnn_feature_dim);
  j.at("classifier_hidden").get_to(c.classifier_hidden);
  j.at("discriminator_hidden").get_to(c.discriminator_hidden);
  j.at("activation").get_to(c.activation);
  j.at("num_classes").get_to(c.num_classes);
  c.discriminator_input = j.at("discriminator_input").get<std::string>() == "conditioned"
                              ? DiscriminatorInput::kConditioned
                              : DiscriminatorInput::kFeatures;
}

/// Feature extractor G, label predictor F (logits), domain discriminator D (logit),
/// plus the gradient-reversal coefficient.
struct ModelTriple {
  Sequential feature_extractor;
  Sequential label_predictor;
  Sequential discriminator;
  double lambda = 1.0;
  ArchitectureConfig config;
  std::uint64_t seed = 0;

  std::vector<Parameter*> classifier_parameters() {
    auto p = feature_extractor.parameters();
    for (Parameter* q : label_predictor.parameters()) p.push_back(q);
    return p;
  }
  std::vector<Parameter*> all_parameters() {
    auto p = classifier_parameters();
    for (Parameter* q : discriminator.parameters()) p.push_back(q);
    return p;
  }
  void zero_grad() {
    for (Parameter* p : all_parameters()) p->grad.setZero();
  }
};

/// Identity forward; backward scales the upstream gradient by -lambda.
struct GradientReversal {
  double lambda = 1.0;

  explicit GradientReversal(double coefficient) : lambda(coefficient) {
    if (coefficient < 0.0) throw std::invalid_argument("GradientReversal: lambda must be >= 0");
  }
  const Matrix& forward(const Matrix& x) const { return x; }
  Matrix backward(const Matrix& upstream) const { return -lambda * upstream; }
};

namespace detail {

inline void add_mlp(Sequential& net, int in, const std::vector<int>& hidden, int out,
                    ActivationKind act, Rng& rng, const std::string& prefix,
                    bool activate_output) {
  int width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] <= 0) throw std::invalid_argument("layer widths must be positive");
    net.add(std::make_unique<Dense>(width, hidden[i], rng, prefix + std::to_string(i)));
    net.add(std::make_unique<Activation>(act, hidden[i]));
    width = hidden[i];
  }
  if (out > 0) {
    net.add(std::make_unique<Dense>(width, out, rng, prefix + "out"));
    if (activate_output) net.add(std::make_unique<Activation>(act, out));
  }
}

}  // namespace detail

inline ModelTriple build_model_triple(const ArchitectureConfig& cfg, std::uint64_t rng_seed,
                                      double lambda = 1.0) {
  if (cfg.num_classes < 2) throw std::invalid_argument("build_model_triple: need K >= 2");
  const ActivationKind act = parse_activation(cfg.activation);
  ModelTriple m;
  m.config = cfg;
  m.seed = rng_seed;
  m.lambda = lambda;
  Rng g_rng(derive_seed(rng_seed, 100));
  Rng f_rng(derive_seed(rng_seed, 101));
  Rng d_rng(derive_seed(rng_seed, 102));

  if (cfg.kind == ArchitectureKind::kMlp) {
    if (cfg.input_shape.size() != 1 || cfg.feature_widths.empty()) {
      throw std::invalid_argument("build_model_triple: MLP needs a flat input and >= 1 hidden width");
    }
    std::vector<int> hidden(cfg.feature_widths.begin(), cfg.feature_widths.end() - 1);
    detail::add_mlp(m.feature_extractor, cfg.input_shape[0], hidden, cfg.feature_widths.back(), act,
                    g_rng, "G.fc", true);
  } else {
    if (cfg.input_shape.size() != 3 || cfg.conv_channels.size() != 2) {
      throw std::invalid_argument("build_model_triple: CNN needs (C,H,W) input and two conv blocks");
    }
    int c = cfg.input_shape[0], h = cfg.input_shape[1], w = cfg.input_shape[2];
    for (std::size_t b = 0; b < 2; ++b) {
      auto conv = std::make_unique<Conv2d>(c, cfg.conv_channels[b], cfg.kernel, h, w, g_rng,
                                           "G.conv" + std::to_string(b));
      const int oh = conv->output_height(), ow = conv->output_width_px();
      m.feature_extractor.add(std::move(conv));
      m.feature_extractor.add(std::make_unique<Activation>(
          act, static_cast<Eigen::Index>(cfg.conv_channels[b]) * oh * ow));
      m.feature_extractor.add(std::make_unique<MaxPool2d>(cfg.conv_channels[b], oh, ow, 2));
      c = cfg.conv_channels[b];
      h = oh / 2;
      w = ow / 2;
    }
    detail::add_mlp(m.feature_extractor, c * h * w, {}, cfg.cnn_feature_dim, act, g_rng, "G.fc",
                    true);
  }
  if (m.feature_extractor.input_width() != cfg.input_width()) {
    throw std::invalid_argument("build_model_triple: input shape does not match the network");
  }

  const int feature_dim = cfg.feature_dim();
  detail::add_mlp(m.label_predictor, feature_dim, cfg.classifier_hidden, cfg.num_classes, act,
                  f_rng, "F.fc", false);
  const int disc_in = cfg.discriminator_input == DiscriminatorInput::kConditioned
                          ? feature_dim * cfg.num_classes
                          : feature_dim;
  detail::add_mlp(m.discriminator, disc_in, cfg.discriminator_hidden, 1, act, d_rng, "D.fc", false);
  return m;
}

struct Prediction {
  Matrix features;
  Matrix probs;
};

inline Prediction predict(ModelTriple& model, const Matrix& x) {
  if (x.cols() != model.feature_extractor.input_width()) {
    throw std::invalid_argument("predict: input width " + std::to_string(x.cols()) +
                                " does not match model input " +
                                std::to_string(model.feature_extractor.input_width()));
  }
  Prediction p;
  p.features = model.feature_extractor.forward(x);
  p.probs = softmax_rows(model.label_predictor.forward(p.features));
  return p;
}

inline std::vector<double> flatten_values(const std::vector<Parameter*>& params) {
  std::vector<double> out;
  for (const Parameter* p : params) out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
  return out;
}

inline std::vector<double> flatten_gradients(const std::vector<Parameter*>& params) {
  std::vector<double> out;
  for (const Parameter* p : params) out.insert(out.end(), p->grad.data(), p->grad.data() + p->grad.size());
  return out;
}

inline void assign_values(const std::vector<Parameter*>& params, std::span<const double> flat) {
  std::size_t offset = 0;
  for (Parameter* p : params) {
    const auto n = static_cast<std::size_t>(p->value.size());
    if (offset + n > flat.size()) throw std::invalid_argument("assign_values: too few values");
    std::copy(flat.begin() + static_cast<long>(offset), flat.begin() + static_cast<long>(offset + n),
              p->value.data());
    offset += n;
  }
  if (offset != flat.size()) throw std::invalid_argument("assign_values: too many values");
}

// Checkpoint container: "CLRNCKPT", u32 version, u64 header length, JSON header
// (architecture, seed, lambda, array table), then every array as raw
// little-endian doubles in table order.

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'R', 'N', 'C', 'K', 'P', 'T'};

inline void save_checkpoint(const std::string& path, ModelTriple& model) {
  nlohmann::json header;
  header["architecture"] = model.config;
  header["seed"] = model.seed;
  header["lambda_bits"] = std::bit_cast<std::uint64_t>(model.lambda);
  auto params = model.all_parameters();
  for (const Parameter* p : params) {
    header["arrays"].push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = 1;
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : params) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline ModelTriple load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0 || version != 1) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  const auto header = nlohmann::json::parse(text);
  ModelTriple model = build_model_triple(header.at("architecture").get<ArchitectureConfig>(),
                                         header.at("seed").get<std::uint64_t>());
  model.lambda = std::bit_cast<double>(header.at("lambda_bits").get<std::uint64_t>());
  auto params = model.all_parameters();
  const auto& arrays = header.at("arrays");
  if (arrays.size() != params.size()) throw std::runtime_error("checkpoint: array count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter* p = params[i];
    if (arrays[i].at("name") != p->name || arrays[i].at("rows") != p->value.rows() ||
        arrays[i].at("cols") != p->value.cols()) {
      throw std::runtime_error("checkpoint: array " + p->name + " does not match the architecture");
    }
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  }
  if (!in) throw std::runtime_error("checkpoint truncated: " + path);
  return model;
}

}  // namespace clarinet
