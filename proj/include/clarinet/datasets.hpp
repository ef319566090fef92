#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "clarinet/label_space.hpp"
#include "clarinet/random.hpp"
#include "clarinet/types.hpp"

namespace clarinet {

// ---------------------------------------------------------------------------
// Synthetic domain pairs
// ---------------------------------------------------------------------------

enum class DomainPairKind { kMoonsRotate, kBlobsShift, kIdxDigits };

struct DomainPairSpec {
  DomainPairKind kind = DomainPairKind::kMoonsRotate;
  int num_classes = 2;
  std::size_t source_count = 1000;
  std::size_t target_count = 1000;
  double rotation_degrees = 30.0;
  std::array<double, 2> translation{0.0, 0.0};
  double noise = 0.1;
  /// Blobs only: radius of the circle the class centres sit on.
  double blob_radius = 2.0;
};

struct SyntheticPair {
  LabeledDataset source;
  /// Target points with labels, for evaluation only.
  LabeledDataset target_eval;
  /// The same target points without labels, for training.
  Matrix target_unlabeled;
};

namespace detail {

/// Two interleaving half circles; class 0 is the upper moon. Classes are balanced
/// exactly (class 0 gets the extra point for odd n) and rows are shuffled.
inline LabeledDataset sample_moons(std::size_t n, double noise, Rng& rng) {
  LabeledDataset d{Matrix(static_cast<Eigen::Index>(n), 2), std::vector<int>(n), LabelSpace(2), {}};
  const std::size_t n0 = (n + 1) / 2;
  const auto order = rng.permutation(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n0 ? 0 : 1;
    const double theta = rng.uniform(0.0, std::numbers::pi);
    double x = label == 0 ? std::cos(theta) : 1.0 - std::cos(theta);
    double y = label == 0 ? std::sin(theta) : 0.5 - std::sin(theta);
    x += rng.normal(0.0, noise);
    y += rng.normal(0.0, noise);
    const auto row = static_cast<Eigen::Index>(order[i]);
    d.x(row, 0) = x;
    d.x(row, 1) = y;
    d.y[order[i]] = label;
  }
  return d;
}

/// K isotropic Gaussian blobs with centres evenly spaced on a circle.
inline LabeledDataset sample_blobs(std::size_t n, int k, double radius, double noise, Rng& rng) {
  LabeledDataset d{Matrix(static_cast<Eigen::Index>(n), 2), std::vector<int>(n), LabelSpace(k), {}};
  const auto order = rng.permutation(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(k));
    const double angle = 2.0 * std::numbers::pi * label / k;
    const auto row = static_cast<Eigen::Index>(order[i]);
    d.x(row, 0) = radius * std::cos(angle) + rng.normal(0.0, noise);
    d.x(row, 1) = radius * std::sin(angle) + rng.normal(0.0, noise);
    d.y[order[i]] = label;
  }
  return d;
}

/// Rotates about `centre` then translates.
inline void shift_domain(Matrix& x, double degrees, const std::array<double, 2>& centre,
                         const std::array<double, 2>& translation) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double dx = x(i, 0) - centre[0], dy = x(i, 1) - centre[1];
    x(i, 0) = centre[0] + c * dx - s * dy + translation[0];
    x(i, 1) = centre[1] + s * dx + c * dy + translation[1];
  }
}

}  // namespace detail

/// Source and shifted target from one generative family. Moons rotate about the
/// centre of the two moons (0.5, 0.25); blobs rotate about the origin.
inline SyntheticPair make_synthetic_pair(const DomainPairSpec& spec, std::uint64_t seed) {
  if (spec.source_count == 0 || spec.target_count == 0) {
    throw std::invalid_argument("make_synthetic_pair: sample counts must be positive");
  }
  Rng source_rng(derive_seed(seed, 10));
  Rng target_rng(derive_seed(seed, 11));
  SyntheticPair pair;
  std::array<double, 2> centre{0.0, 0.0};
  switch (spec.kind) {
    case DomainPairKind::kMoonsRotate:
      if (spec.num_classes != 2) throw std::invalid_argument("make_synthetic_pair: moons have K = 2");
      pair.source = detail::sample_moons(spec.source_count, spec.noise, source_rng);
      pair.target_eval = detail::sample_moons(spec.target_count, spec.noise, target_rng);
      centre = {0.5, 0.25};
      break;
    case DomainPairKind::kBlobsShift:
      pair.source = detail::sample_blobs(spec.source_count, spec.num_classes, spec.blob_radius,
                                         spec.noise, source_rng);
      pair.target_eval = detail::sample_blobs(spec.target_count, spec.num_classes, spec.blob_radius,
                                              spec.noise, target_rng);
      break;
    default:
      throw std::invalid_argument("make_synthetic_pair: kind is not a synthetic generator");
  }
  detail::shift_domain(pair.target_eval.x, spec.rotation_degrees, centre, spec.translation);
  pair.target_unlabeled = pair.target_eval.x;
  return pair;
}

// ---------------------------------------------------------------------------
// IDX files
// ---------------------------------------------------------------------------

enum class IdxErrorKind { kIo, kBadMagic, kTruncated, kDimensionOverflow };

class IdxError : public std::runtime_error {
 public:
  IdxError(IdxErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  IdxErrorKind kind() const { return kind_; }

 private:
  IdxErrorKind kind_;
};

/// Unsigned-byte IDX array (type code 0x08), any rank from 1 to 4.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const { return dims.empty() ? 0 : dims[0]; }
  std::size_t item_size() const {
    std::size_t n = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) n *= dims[i];
    return n;
  }
  friend bool operator==(const IdxArray&, const IdxArray&) = default;
};

inline IdxArray parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 4) throw IdxError(IdxErrorKind::kTruncated, origin + ": truncated IDX header");
  if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] == 0 || bytes[3] > 4) {
    throw IdxError(IdxErrorKind::kBadMagic, origin + ": bad IDX magic (expected 0x000008NN, N in 1..4)");
  }
  const std::size_t rank = bytes[3];
  if (bytes.size() < 4 + 4 * rank) throw IdxError(IdxErrorKind::kTruncated, origin + ": truncated IDX dimensions");
  IdxArray out;
  std::uint64_t total = 1;
  for (std::size_t r = 0; r < rank; ++r) {
    const std::size_t o = 4 + 4 * r;
    const std::uint32_t d = (std::uint32_t{bytes[o]} << 24) | (std::uint32_t{bytes[o + 1]} << 16) |
                            (std::uint32_t{bytes[o + 2]} << 8) | std::uint32_t{bytes[o + 3]};
    out.dims.push_back(d);
    total *= d;
    if (total > (std::uint64_t{1} << 34)) {
      throw IdxError(IdxErrorKind::kDimensionOverflow, origin + ": IDX dimensions overflow");
    }
  }
  const std::size_t offset = 4 + 4 * rank;
  if (bytes.size() - offset < total) {
    throw IdxError(IdxErrorKind::kTruncated, origin + ": IDX payload truncated (" +
                                                 std::to_string(bytes.size() - offset) + " of " +
                                                 std::to_string(total) + " bytes)");
  }
  out.data.assign(bytes.begin() + static_cast<long>(offset),
                  bytes.begin() + static_cast<long>(offset + total));
  return out;
}

inline IdxArray load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::kIo, "cannot open IDX file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_idx(bytes, path);
}

inline void write_idx(const std::string& path, const IdxArray& array) {
  std::uint64_t total = 1;
  for (auto d : array.dims) total *= d;
  if (array.dims.empty() || array.dims.size() > 4 || total != array.data.size()) {
    throw std::invalid_argument("write_idx: dims do not match data");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxError(IdxErrorKind::kIo, "cannot write IDX file: " + path);
  const char magic[4] = {0, 0, 0x08, static_cast<char>(array.dims.size())};
  out.write(magic, 4);
  for (std::uint32_t d : array.dims) {
    const char be[4] = {static_cast<char>(d >> 24), static_cast<char>(d >> 16),
                        static_cast<char>(d >> 8), static_cast<char>(d)};
    out.write(be, 4);
  }
  out.write(reinterpret_cast<const char*>(array.data.data()), static_cast<std::streamsize>(array.data.size()));
}

// ---------------------------------------------------------------------------
// Image preprocessing
// ---------------------------------------------------------------------------

struct ImageBatchSpec {
  int height = 28;
  int width = 28;
  int channels = 1;
  int resize_height = 28;
  int resize_width = 28;
  std::vector<double> mean{0.5};
  std::vector<double> stddev{0.5};
};

/// Images as rows of C x H x W raw intensities.
struct ImageTensor {
  Matrix pixels;
  int channels = 1;
  int height = 0;
  int width = 0;
};

inline ImageTensor images_from_idx(const IdxArray& idx) {
  if (idx.dims.size() != 3) throw std::invalid_argument("images_from_idx: expected a rank-3 IDX array");
  ImageTensor t{Matrix(idx.dims[0], static_cast<Eigen::Index>(idx.item_size())), 1,
                static_cast<int>(idx.dims[1]), static_cast<int>(idx.dims[2])};
  for (std::size_t i = 0; i < idx.data.size(); ++i) t.pixels.data()[i] = idx.data[i];
  return t;
}

namespace detail {

/// Half-pixel-centre bilinear resampling of one channel plane.
inline void resize_bilinear(const double* src, int h, int w, double* dst, int oh, int ow) {
  const double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = src[y0 * w + x0] * (1 - wx) + src[y0 * w + x1] * wx;
      const double bottom = src[y1 * w + x0] * (1 - wx) + src[y1 * w + x1] * wx;
      dst[y * ow + x] = top * (1 - wy) + bottom * wy;
    }
  }
}

}  // namespace detail

/// Resize (bilinear) to the spec's target, scale intensities by 1/255, then
/// normalize each channel with (v - mean) / std.
inline ImageTensor preprocess(const ImageTensor& images, const ImageBatchSpec& spec) {
  if (images.channels != spec.channels || images.height != spec.height || images.width != spec.width) {
    throw std::invalid_argument("preprocess: image shape does not match the batch spec");
  }
  if (spec.resize_height <= 0 || spec.resize_width <= 0 ||
      spec.mean.size() != static_cast<std::size_t>(spec.channels) ||
      spec.stddev.size() != static_cast<std::size_t>(spec.channels)) {
    throw std::invalid_argument("preprocess: invalid batch spec");
  }
  const int oh = spec.resize_height, ow = spec.resize_width;
  const long in_plane = static_cast<long>(images.height) * images.width;
  const long out_plane = static_cast<long>(oh) * ow;
  ImageTensor out{Matrix(images.pixels.rows(), spec.channels * out_plane), spec.channels, oh, ow};
  std::vector<double> plane(static_cast<std::size_t>(out_plane));
  for (Eigen::Index n = 0; n < images.pixels.rows(); ++n) {
    for (int c = 0; c < spec.channels; ++c) {
      const double* src = images.pixels.row(n).data() + c * in_plane;
      if (oh == images.height && ow == images.width) {
        std::copy(src, src + in_plane, plane.begin());
      } else {
        detail::resize_bilinear(src, images.height, images.width, plane.data(), oh, ow);
      }
      for (long p = 0; p < out_plane; ++p) {
        out.pixels(n, c * out_plane + p) =
            (plane[static_cast<std::size_t>(p)] / 255.0 - spec.mean[static_cast<std::size_t>(c)]) /
            spec.stddev[static_cast<std::size_t>(c)];
      }
    }
  }
  return out;
}

/// Reads an image/label IDX pair into a dataset, preprocessed per `spec`.
/// `limit` > 0 keeps only the first `limit` examples.
inline LabeledDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                       const ImageBatchSpec& spec, int num_classes,
                                       std::size_t limit = 0) {
  const IdxArray images = load_idx(images_path);
  const IdxArray labels = load_idx(labels_path);
  if (labels.dims.size() != 1 || labels.dims[0] != images.dims.at(0)) {
    throw std::invalid_argument("load_idx_dataset: label count does not match image count");
  }
  ImageTensor raw = images_from_idx(images);
  std::size_t n = raw.pixels.rows();
  if (limit > 0 && limit < n) {
    raw.pixels.conservativeResize(static_cast<Eigen::Index>(limit), Eigen::NoChange);
    n = limit;
  }
  ImageTensor pre = preprocess(raw, spec);
  LabeledDataset out{std::move(pre.pixels), {}, LabelSpace(num_classes),
                     {pre.channels, pre.height, pre.width}};
  out.y.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels.data[i] >= num_classes) throw std::invalid_argument("load_idx_dataset: label out of range");
    out.y.push_back(labels.data[i]);
  }
  return out;
}

}  // namespace clarinet
