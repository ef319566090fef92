#pragma once

// Experiment runner: task registry, per-seed training, artifacts and summaries.
//
// A run directory holds, for each seed, a metrics CSV, a final checkpoint and an
// accuracy-vs-epoch SVG, plus summary.json describing the whole run.

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clarinet/datasets.hpp"
#include "clarinet/label_space.hpp"
#include "clarinet/models.hpp"
#include "clarinet/trainers.hpp"

namespace clarinet::experiment {

namespace fs = std::filesystem;

enum class Method { kClarinetCc, kClarinetPc, kGac, kTwoStep };

inline Method parse_method(const std::string& name) {
  if (name == "clarinet-cc") return Method::kClarinetCc;
  if (name == "clarinet-pc") return Method::kClarinetPc;
  if (name == "gac") return Method::kGac;
  if (name == "two-step") return Method::kTwoStep;
  throw std::invalid_argument("unknown method '" + name + "' (expected clarinet-cc, clarinet-pc, gac, two-step)");
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kClarinetCc: return "clarinet-cc";
    case Method::kClarinetPc: return "clarinet-pc";
    case Method::kGac: return "gac";
    case Method::kTwoStep: return "two-step";
  }
  return "?";
}

/// How PC runs obtain their true-labeled subset. `split` removes the n_true
/// examples from the complementary pool; `augment` keeps the full
/// complementary set and adds true labels for n_true of its examples.
enum class PcSource { kSplit, kAugment };

inline PcSource parse_pc_source(const std::string& name) {
  if (name == "split") return PcSource::kSplit;
  if (name == "augment") return PcSource::kAugment;
  throw std::invalid_argument("unknown pc_source '" + name + "' (expected split or augment)");
}

inline std::string pc_source_name(PcSource s) { return s == PcSource::kSplit ? "split" : "augment"; }

inline Ablation parse_ablation(const std::string& name) {
  if (name == "no-sharpen") return Ablation::kNoSharpen;
  if (name == "no-condition") return Ablation::kNoCondition;
  if (name == "ce-on-complementary") return Ablation::kCeOnComplementary;
  throw std::invalid_argument("unknown ablation '" + name + "'");
}

inline std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kNoSharpen: return "no-sharpen";
    case Ablation::kNoCondition: return "no-condition";
    case Ablation::kCeOnComplementary: return "ce-on-complementary";
  }
  return "?";
}

/// Raised when a task's files are not under the data root.
class DataMissingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct DigitDomain {
  std::string train_images, train_labels, test_images, test_labels;  // relative to the data root
  ImageBatchSpec images;
};

struct TaskDefinition {
  std::string name;
  std::string description;
  bool digits = false;
  DomainPairSpec synthetic;
  DigitDomain source_domain, target_domain;
  /// Digits: random source subsample per seed (0 keeps everything).
  std::size_t source_limit = 0;
  /// Digits: random subsample of the unlabeled target training split (0 keeps everything).
  std::size_t target_limit = 0;
  ArchitectureConfig architecture;
  TrainConfig train;
};

namespace detail {

inline TrainConfig synthetic_train_config() {
  TrainConfig t;
  t.epochs = 200;
  t.batch_size = 128;
  t.adversarial_start_epoch = 5;
  t.classifier_lr = 0.01;
  t.adversarial_lr = 0.01;
  t.lambda = 2.0;
  t.temperature = 0.5;
  return t;
}

inline DigitDomain mnist_domain() {
  DigitDomain d{"mnist/train-images-idx3-ubyte", "mnist/train-labels-idx1-ubyte",
                "mnist/t10k-images-idx3-ubyte", "mnist/t10k-labels-idx1-ubyte", {}};
  d.images.height = d.images.width = 28;
  return d;
}

inline DigitDomain usps_domain() {
  DigitDomain d{"usps/train-images-idx3-ubyte", "usps/train-labels-idx1-ubyte",
                "usps/test-images-idx3-ubyte", "usps/test-labels-idx1-ubyte", {}};
  d.images.height = d.images.width = 16;
  return d;
}

inline TaskDefinition digit_task(std::string name, std::string description, DigitDomain source,
                                 DigitDomain target, std::size_t source_limit, std::size_t target_limit) {
  TaskDefinition t;
  t.name = std::move(name);
  t.description = std::move(description);
  t.digits = true;
  t.source_domain = std::move(source);
  t.target_domain = std::move(target);
  t.source_limit = source_limit;
  t.target_limit = target_limit;
  t.architecture.kind = ArchitectureKind::kSmallCnn;
  t.architecture.input_shape = {1, 28, 28};
  t.architecture.num_classes = 10;
  t.architecture.discriminator_hidden = {256, 256};
  t.train.epochs = 50;
  t.train.batch_size = 128;
  t.train.adversarial_start_epoch = 5;
  t.train.classifier_lr = 0.01;
  t.train.adversarial_lr = 0.01;
  t.train.lambda = 1.0;
  t.train.temperature = 0.5;
  return t;
}

}  // namespace detail

inline const std::vector<TaskDefinition>& task_registry() {
  static const std::vector<TaskDefinition> tasks = [] {
    std::vector<TaskDefinition> v;

    TaskDefinition moons30;
    moons30.name = "moons30";
    moons30.description = "two moons, target rotated 30 degrees (K=2)";
    moons30.synthetic.kind = DomainPairKind::kMoonsRotate;
    moons30.synthetic.rotation_degrees = 30.0;
    moons30.train = detail::synthetic_train_config();
    v.push_back(moons30);

    TaskDefinition moons0 = moons30;
    moons0.name = "moons0";
    moons0.description = "two moons without shift (K=2)";
    moons0.synthetic.rotation_degrees = 0.0;
    v.push_back(moons0);

    TaskDefinition blobs5;
    blobs5.name = "blobs5";
    blobs5.description = "five Gaussian blobs, target rotated 25 degrees (K=5)";
    blobs5.synthetic.kind = DomainPairKind::kBlobsShift;
    blobs5.synthetic.num_classes = 5;
    blobs5.synthetic.noise = 0.5;
    blobs5.synthetic.rotation_degrees = 25.0;
    blobs5.architecture.num_classes = 5;
    blobs5.train = detail::synthetic_train_config();
    v.push_back(blobs5);

    v.push_back(detail::digit_task("mnist2usps", "MNIST (10k subsample) to USPS", detail::mnist_domain(),
                                   detail::usps_domain(), 10000, 0));
    v.push_back(detail::digit_task("usps2mnist", "USPS to MNIST (10k unlabeled target)", detail::usps_domain(),
                                   detail::mnist_domain(), 0, 10000));
    return v;
  }();
  return tasks;
}

inline const TaskDefinition& find_task(const std::string& name) {
  for (const auto& t : task_registry()) {
    if (t.name == name) return t;
  }
  std::string known;
  for (const auto& t : task_registry()) known += (known.empty() ? "" : ", ") + t.name;
  throw std::invalid_argument("unknown task '" + name + "' (known: " + known + ")");
}

struct TaskData {
  LabeledDataset source;
  Matrix target_unlabeled;
  LabeledDataset target_eval;
};

namespace detail {

inline LabeledDataset subsample(const LabeledDataset& data, std::size_t limit, std::uint64_t seed) {
  if (limit == 0 || limit >= data.size()) return data;
  Rng rng(seed);
  auto perm = rng.permutation(data.size());
  perm.resize(limit);
  std::sort(perm.begin(), perm.end());
  return select_rows(data, perm);
}

inline LabeledDataset load_digit_split(const fs::path& root, const std::string& images,
                                       const std::string& labels, const ImageBatchSpec& spec) {
  for (const auto& rel : {images, labels}) {
    if (!fs::exists(root / rel)) throw DataMissingError("missing data file " + (root / rel).string());
  }
  return load_idx_dataset((root / images).string(), (root / labels).string(), spec, 10);
}

}  // namespace detail

/// Materializes the task for one seed. Synthetic tasks draw fresh samples per seed;
/// digit tasks subsample per seed.
inline TaskData load_task_data(const TaskDefinition& task, std::uint64_t seed, const std::string& data_root) {
  TaskData out;
  if (!task.digits) {
    SyntheticPair pair = make_synthetic_pair(task.synthetic, seed);
    out.source = std::move(pair.source);
    out.target_unlabeled = std::move(pair.target_unlabeled);
    out.target_eval = std::move(pair.target_eval);
    return out;
  }
  if (data_root.empty()) {
    throw DataMissingError("task " + task.name + " needs --data-root or CLARINET_DATA_ROOT");
  }
  const fs::path root(data_root);
  const auto& s = task.source_domain;
  const auto& t = task.target_domain;
  out.source = detail::subsample(detail::load_digit_split(root, s.train_images, s.train_labels, s.images),
                                 task.source_limit, derive_seed(seed, 20));
  const LabeledDataset target_train = detail::subsample(
      detail::load_digit_split(root, t.train_images, t.train_labels, t.images), task.target_limit,
      derive_seed(seed, 21));
  out.target_unlabeled = target_train.x;
  out.target_eval = detail::load_digit_split(root, t.test_images, t.test_labels, t.images);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Optional replacements for a task's default training settings.
struct TrainOverrides {
  std::optional<int> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lambda;
  std::optional<double> temperature;
  std::optional<double> alpha;
  std::optional<int> adversarial_start_epoch;
  std::optional<double> classifier_lr;
  std::optional<double> adversarial_lr;
  std::optional<double> decay_gamma;
  std::set<Ablation> ablations;
};

struct ExperimentConfig {
  std::string task = "moons30";
  Method method = Method::kClarinetCc;
  std::optional<std::size_t> n_true;
  PcSource pc_source = PcSource::kSplit;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir = "runs";
  std::string data_root;
  bool deterministic = false;
  bool write_checkpoints = true;
  TrainOverrides overrides;

  void validate() const {
    find_task(task);
    if (seeds.empty()) throw std::invalid_argument("experiment: seed list is empty");
    if (method == Method::kClarinetPc && !n_true) {
      throw std::invalid_argument("experiment: clarinet-pc needs --n-true");
    }
    if (method != Method::kClarinetPc && n_true && *n_true > 0) {
      throw std::invalid_argument("experiment: --n-true applies to clarinet-pc only");
    }
    if (overrides.alpha && method != Method::kClarinetPc) {
      throw std::invalid_argument("experiment: --alpha applies to clarinet-pc only");
    }
    effective_train_config().validate();
  }

  TrainConfig effective_train_config() const {
    TrainConfig t = find_task(task).train;
    const auto& o = overrides;
    if (o.epochs) t.epochs = *o.epochs;
    if (o.batch_size) t.batch_size = *o.batch_size;
    if (o.lambda) t.lambda = *o.lambda;
    if (o.temperature) t.temperature = *o.temperature;
    if (o.alpha) t.alpha = *o.alpha;
    if (o.adversarial_start_epoch) t.adversarial_start_epoch = *o.adversarial_start_epoch;
    if (o.classifier_lr) t.classifier_lr = *o.classifier_lr;
    if (o.adversarial_lr) t.adversarial_lr = *o.adversarial_lr;
    if (o.decay_gamma) t.decay_gamma = *o.decay_gamma;
    t.ablations.insert(o.ablations.begin(), o.ablations.end());
    if (t.adversarial_start_epoch > t.epochs) t.adversarial_start_epoch = t.epochs;
    return t;
  }

  ArchitectureConfig effective_architecture() const {
    ArchitectureConfig a = find_task(task).architecture;
    if (effective_train_config().has(Ablation::kNoCondition)) a.discriminator_input = DiscriminatorInput::kFeatures;
    return a;
  }

  nlohmann::json to_json() const {
    const TrainConfig t = effective_train_config();
    nlohmann::json ablations = nlohmann::json::array();
    for (Ablation a : t.ablations) ablations.push_back(ablation_name(a));
    nlohmann::json j{{"task", task},
                     {"method", method_name(method)},
                     {"seeds", seeds},
                     {"pc_source", pc_source_name(pc_source)},
                     {"deterministic", deterministic},
                     {"data_root", data_root},
                     {"architecture", effective_architecture()},
                     {"train",
                      {{"epochs", t.epochs},
                       {"batch_size", t.batch_size},
                       {"adversarial_start_epoch", t.adversarial_start_epoch},
                       {"classifier_lr", t.classifier_lr},
                       {"adversarial_lr", t.adversarial_lr},
                       {"decay_gamma", t.decay_gamma},
                       {"momentum", t.momentum},
                       {"weight_decay", t.weight_decay},
                       {"lambda", t.lambda},
                       {"temperature", t.temperature},
                       {"ablations", ablations}}}};
    j["n_true"] = n_true ? nlohmann::json(*n_true) : nlohmann::json(nullptr);
    j["train"]["alpha"] = t.alpha ? nlohmann::json(*t.alpha) : nlohmann::json("auto");
    return j;
  }
};

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const auto lo = std::stoull(item.substr(0, dash)), hi = std::stoull(item.substr(dash + 1));
      if (hi < lo) throw std::invalid_argument("bad seed range '" + item + "'");
      for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
      seeds.push_back(std::stoull(item));
    }
  }
  if (seeds.empty()) throw std::invalid_argument("seed list is empty");
  return seeds;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(static_cast<T>(std::stoull(item)));
  }
  return out;
}

/// Reads `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int number = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(number) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

/// Applies config-file entries; unknown keys are errors.
inline void apply_config(const std::map<std::string, std::string>& kv, ExperimentConfig& cfg) {
  auto& o = cfg.overrides;
  for (const auto& [key, value] : kv) {
    auto as_bool = [&] { return value == "1" || value == "true" || value == "yes" || value == "on"; };
    if (key == "task") cfg.task = value;
    else if (key == "method") cfg.method = parse_method(value);
    else if (key == "seeds") cfg.seeds = parse_seed_list(value);
    else if (key == "n_true") cfg.n_true = std::stoull(value);
    else if (key == "pc_source") cfg.pc_source = parse_pc_source(value);
    else if (key == "data_root") cfg.data_root = value;
    else if (key == "out") cfg.output_dir = value;
    else if (key == "deterministic") cfg.deterministic = as_bool();
    else if (key == "checkpoints") cfg.write_checkpoints = as_bool();
    else if (key == "epochs") o.epochs = std::stoi(value);
    else if (key == "batch_size") o.batch_size = std::stoull(value);
    else if (key == "lambda") o.lambda = std::stod(value);
    else if (key == "temperature") o.temperature = std::stod(value);
    else if (key == "alpha") o.alpha = std::stod(value);
    else if (key == "ts") o.adversarial_start_epoch = std::stoi(value);
    else if (key == "classifier_lr") o.classifier_lr = std::stod(value);
    else if (key == "adversarial_lr") o.adversarial_lr = std::stod(value);
    else if (key == "decay_gamma") o.decay_gamma = std::stod(value);
    else if (key == "ablation") {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) o.ablations.insert(parse_ablation(item));
      }
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Records and statistics
// ---------------------------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  double target_acc = 0.0;
  double source_acc = 0.0;
  double seconds = 0.0;
  std::optional<double> pseudo_label_noise;
  std::string metrics_csv;  // file names relative to the run directory
  std::string checkpoint;
  std::string plot;
};

struct Summary {
  double mean = 0.0;
  std::optional<double> stddev;  // sample std, only for >= 2 values
  double median = 0.0;
};

inline Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  Summary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  s.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return s;
}

/// "mean±std" in percent, or "mean±n/a" for a single seed.
inline std::string format_mean_std(const Summary& s) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << 100.0 * s.mean << "±";
  if (s.stddev) out << 100.0 * *s.stddev;
  else out << "n/a";
  return out.str();
}

struct RunRecord {
  nlohmann::json config;
  std::vector<SeedResult> seeds;
  Summary target;
  double wall_seconds = 0.0;
  std::string run_dir;

  std::vector<double> target_accuracies() const {
    std::vector<double> v;
    for (const auto& s : seeds) v.push_back(s.target_acc);
    return v;
  }

  nlohmann::json to_json() const {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& s : seeds) {
      nlohmann::json j{{"seed", s.seed},          {"target_acc", s.target_acc}, {"source_acc", s.source_acc},
                       {"seconds", s.seconds},    {"metrics_csv", s.metrics_csv}, {"checkpoint", s.checkpoint},
                       {"plot", s.plot}};
      j["pseudo_label_noise"] = s.pseudo_label_noise ? nlohmann::json(*s.pseudo_label_noise) : nlohmann::json(nullptr);
      per_seed.push_back(j);
    }
    nlohmann::json j{{"config", config},
                     {"seeds", per_seed},
                     {"target_acc_mean", target.mean},
                     {"target_acc_median", target.median},
                     {"target_acc_display", format_mean_std(target)},
                     {"wall_seconds", wall_seconds}};
    j["target_acc_std"] = target.stddev ? nlohmann::json(*target.stddev) : nlohmann::json("n/a");
    return j;
  }
};

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal static SVG line chart with a fixed [0, 1] y-axis.
inline void write_svg_plot(const std::string& path, const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<PlotSeries>& series) {
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  double xmin = 0, xmax = 1;
  bool first = true;
  for (const auto& s : series) {
    for (double v : s.x) {
      if (first) xmin = xmax = v, first = false;
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1;
  auto px = [&](double v) { return kLeft + (v - xmin) / (xmax - xmin) * (kW - kLeft - kRight); };
  auto py = [&](double v) { return kTop + (1.0 - std::clamp(v, 0.0, 1.0)) * (kH - kTop - kBottom); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plot " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label
      << "</text>\n"
      << "<text x=\"16\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 16 " << kH / 2
      << ")\" text-anchor=\"middle\" font-size=\"12\">" << y_label << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    out << "<line x1=\"" << kLeft << "\" x2=\"" << kW - kRight << "\" y1=\"" << py(v) << "\" y2=\"" << py(v)
        << "\" stroke=\"#ddd\"/>\n"
        << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << v
        << "</text>\n";
  }
  out << "<text x=\"" << kLeft << "\" y=\"" << kH - 32 << "\" font-size=\"10\">" << xmin << "</text>\n"
      << "<text x=\"" << kW - kRight << "\" y=\"" << kH - 32 << "\" text-anchor=\"end\" font-size=\"10\">" << xmax
      << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = colors[i % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (std::isfinite(s.y[k])) out << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
    }
    out << "\"/>\n<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 14 * (i + 1) << "\" fill=\"" << color
        << "\" font-size=\"11\">" << s.label << "</text>\n";
  }
  out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

namespace detail {

inline std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return s.str();
}

/// Creates `parent/stem_<timestamp>`, adding a counter if that name is taken.
inline fs::path fresh_directory(const fs::path& parent, const std::string& stem) {
  fs::create_directories(parent);
  const std::string base = stem + "_" + timestamp();
  fs::path dir = parent / base;
  for (int n = 2; !fs::create_directory(dir); ++n) dir = parent / (base + "-" + std::to_string(n));
  return dir;
}

inline std::string run_stem(const ExperimentConfig& cfg) {
  std::string stem = cfg.task + "_" + method_name(cfg.method);
  if (cfg.method == Method::kClarinetPc) stem += "_n" + std::to_string(*cfg.n_true);
  return stem;
}

}  // namespace detail

/// Trains one seed of `cfg` and returns the finished model and log.
inline TrainResult train_one_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& data_root) {
  const TaskDefinition& task = find_task(cfg.task);
  TrainConfig train = cfg.effective_train_config();
  train.seed = seed;
  const TaskData data = load_task_data(task, seed, data_root);
  ModelTriple model = build_model_triple(cfg.effective_architecture(), seed, train.lambda);

  const std::size_t n_true = cfg.n_true.value_or(0);
  const std::uint64_t label_seed = derive_seed(seed, 7);
  switch (cfg.method) {
    case Method::kClarinetCc: {
      const PcSplit split = split_pc_dataset(data.source, 0, label_seed);
      return train_cc_uda(std::move(model), split.complementary_part, data.target_unlabeled, train, &data.target_eval);
    }
    case Method::kGac: {
      const PcSplit split = split_pc_dataset(data.source, 0, label_seed);
      return train_gac(std::move(model), split.complementary_part, train, &data.target_eval);
    }
    case Method::kTwoStep: {
      const PcSplit split = split_pc_dataset(data.source, 0, label_seed);
      return two_step_pipeline(std::move(model), split.complementary_part, data.target_unlabeled, train,
                               &data.target_eval);
    }
    case Method::kClarinetPc: {
      if (cfg.pc_source == PcSource::kSplit) {
        const PcSplit split = split_pc_dataset(data.source, n_true, label_seed);
        return train_pc_uda(std::move(model), split.true_part, split.complementary_part, data.target_unlabeled,
                            train, &data.target_eval);
      }
      const PcSplit full = split_pc_dataset(data.source, 0, label_seed);
      const PcSplit chosen = split_pc_dataset(data.source, n_true, label_seed);
      if (!train.alpha) {
        train.alpha = default_alpha(n_true, full.complementary_part.size(), task.architecture.num_classes);
      }
      return train_pc_uda(std::move(model), chosen.true_part, full.complementary_part, data.target_unlabeled,
                          train, &data.target_eval);
    }
  }
  throw std::logic_error("unreachable");
}

inline std::string resolve_data_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("CLARINET_DATA_ROOT")) return env;
  return {};
}

/// Runs every seed of `cfg` into a fresh directory under cfg.output_dir.
inline RunRecord run(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  if (cfg.deterministic) Eigen::setNbThreads(1);
  const std::string data_root = resolve_data_root(cfg.data_root);
  const TaskDefinition& task = find_task(cfg.task);
  if (task.digits) load_task_data(task, cfg.seeds.front(), data_root);  // fail before creating directories

  const auto started = std::chrono::steady_clock::now();
  const std::string stem = detail::run_stem(cfg);
  const fs::path dir = detail::fresh_directory(cfg.output_dir, stem);
  RunRecord record;
  record.config = cfg.to_json();
  record.run_dir = dir.string();

  std::vector<PlotSeries> curves;
  for (std::uint64_t seed : cfg.seeds) {
    const auto seed_start = std::chrono::steady_clock::now();
    TrainResult result = train_one_seed(cfg, seed, data_root);
    SeedResult sr;
    sr.seed = seed;
    const std::string prefix = stem + "_seed" + std::to_string(seed);
    sr.metrics_csv = prefix + "_metrics.csv";
    sr.plot = prefix + "_accuracy.svg";
    result.log.write_csv((dir / sr.metrics_csv).string());
    if (cfg.write_checkpoints) {
      sr.checkpoint = prefix + ".ckpt";
      save_checkpoint((dir / sr.checkpoint).string(), result.model);
    }
    PlotSeries target{"target accuracy", {}, {}}, source{"source accuracy (hidden labels)", {}, {}};
    for (const auto& r : result.log.records) {
      target.x.push_back(r.epoch);
      target.y.push_back(r.target_acc);
      source.x.push_back(r.epoch);
      source.y.push_back(r.source_acc);
    }
    write_svg_plot((dir / sr.plot).string(), stem + " seed " + std::to_string(seed), "epoch", "accuracy",
                   {target, source});
    curves.push_back({"seed " + std::to_string(seed), target.x, target.y});
    const auto& last = result.log.records.back();
    sr.target_acc = last.target_acc;
    sr.source_acc = last.source_acc;
    sr.pseudo_label_noise = result.log.pseudo_label_noise;
    sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - seed_start).count();
    if (progress) {
      *progress << stem << " seed " << seed << ": target " << std::fixed << std::setprecision(4) << sr.target_acc
                << " source " << sr.source_acc << " (" << std::setprecision(1) << sr.seconds << "s)\n";
      progress->unsetf(std::ios::fixed);
    }
    record.seeds.push_back(sr);
  }
  write_svg_plot((dir / (stem + "_accuracy.svg")).string(), stem + " target accuracy", "epoch", "accuracy", curves);
  record.target = summarize(record.target_accuracies());
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::ofstream((dir / "summary.json").string()) << record.to_json().dump(2) << '\n';
  if (progress) *progress << stem << ": target accuracy " << format_mean_std(record.target) << " %  -> " << dir.string() << '\n';
  return record;
}

struct ReportResult {
  RunRecord recomputed;
  double max_deviation = 0.0;  // largest |summary - recomputed| over mean, std and per-seed values
  bool consistent() const { return max_deviation <= 1e-12; }
};

/// Recomputes a run's summary from its persisted metrics CSVs.
inline ReportResult report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  std::ifstream in((dir / "summary.json").string());
  if (!in) throw std::runtime_error("no summary.json in " + run_dir);
  const nlohmann::json stored = nlohmann::json::parse(in);
  ReportResult rr;
  rr.recomputed.config = stored.at("config");
  rr.recomputed.run_dir = run_dir;
  rr.recomputed.wall_seconds = stored.at("wall_seconds").get<double>();
  for (const auto& s : stored.at("seeds")) {
    SeedResult sr;
    sr.seed = s.at("seed").get<std::uint64_t>();
    sr.metrics_csv = s.at("metrics_csv").get<std::string>();
    sr.checkpoint = s.at("checkpoint").get<std::string>();
    sr.plot = s.at("plot").get<std::string>();
    const MetricsLog log = MetricsLog::read_csv((dir / sr.metrics_csv).string());
    if (log.records.empty()) throw std::runtime_error(sr.metrics_csv + " has no epochs");
    sr.target_acc = log.records.back().target_acc;
    sr.source_acc = log.records.back().source_acc;
    rr.max_deviation = std::max(rr.max_deviation, std::abs(sr.target_acc - s.at("target_acc").get<double>()));
    rr.recomputed.seeds.push_back(sr);
  }
  rr.recomputed.target = summarize(rr.recomputed.target_accuracies());
  rr.max_deviation = std::max(rr.max_deviation,
                              std::abs(rr.recomputed.target.mean - stored.at("target_acc_mean").get<double>()));
  const auto& stored_std = stored.at("target_acc_std");
  if (rr.recomputed.target.stddev.has_value() != stored_std.is_number()) {
    rr.max_deviation = std::numeric_limits<double>::infinity();
  } else if (stored_std.is_number()) {
    rr.max_deviation = std::max(rr.max_deviation, std::abs(*rr.recomputed.target.stddev - stored_std.get<double>()));
  }
  return rr;
}

struct SweepRow {
  std::size_t n_true = 0;
  RunRecord record;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::string sweep_dir;
  std::vector<std::string> notes;
};

/// One clarinet-pc run per n_true value, plus a combined CSV and plot.
inline SweepResult sweep_true_labels(ExperimentConfig base, std::vector<std::size_t> n_true_values,
                                     std::ostream* progress = nullptr) {
  if (n_true_values.empty()) throw std::invalid_argument("sweep: n_true list is empty");
  SweepResult result;
  std::vector<std::size_t> unique;
  for (std::size_t n : n_true_values) {
    if (std::find(unique.begin(), unique.end(), n) != unique.end()) {
      result.notes.push_back("warning: duplicate n_true " + std::to_string(n) + " ignored");
      continue;
    }
    unique.push_back(n);
  }
  if (progress) {
    for (const auto& note : result.notes) *progress << note << '\n';
  }
  base.method = Method::kClarinetPc;
  base.n_true = unique.front();
  base.validate();
  const fs::path dir = detail::fresh_directory(base.output_dir, base.task + "_sweep");
  result.sweep_dir = dir.string();
  for (std::size_t n : unique) {
    ExperimentConfig cfg = base;
    cfg.n_true = n;
    cfg.output_dir = dir.string();
    result.rows.push_back({n, run(cfg, progress)});
  }

  std::ofstream csv((dir / "sweep.csv").string());
  csv << "n_true,mean,std,median,seeds,run_dir\n" << std::setprecision(17);
  PlotSeries means{"mean target accuracy", {}, {}};
  for (const auto& row : result.rows) {
    const auto& t = row.record.target;
    csv << row.n_true << ',' << t.mean << ',';
    if (t.stddev) csv << *t.stddev;
    else csv << "n/a";
    csv << ',' << t.median << ',' << row.record.seeds.size() << ',' << fs::path(row.record.run_dir).filename().string()
        << '\n';
    means.x.push_back(static_cast<double>(row.n_true));
    means.y.push_back(t.mean);
  }
  write_svg_plot((dir / "sweep_accuracy.svg").string(), base.task + ": accuracy vs true labels", "n_true",
                 "target accuracy", {means});
  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    if (result.rows[i].record.target.mean < result.rows[i - 1].record.target.mean) {
      result.notes.push_back("note: mean accuracy at n_true=" + std::to_string(result.rows[i].n_true) +
                             " is below n_true=" + std::to_string(result.rows[i - 1].n_true) +
                             " (expected trend is non-decreasing)");
    }
  }
  return result;
}

}  // namespace clarinet::experiment
