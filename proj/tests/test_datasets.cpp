#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "clarinet/datasets.hpp"

using namespace clarinet;

namespace {

std::string temp_path(const std::string& name) { return ::testing::TempDir() + name; }

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

IdxErrorKind error_kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_idx(bytes);
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "parse_idx accepted malformed input";
  return IdxErrorKind::kIo;
}

Eigen::RowVector2d column_means(const Matrix& x) { return x.colwise().mean(); }

}  // namespace

TEST(SyntheticPair, MoonsAreBalanced) {
  DomainPairSpec spec;
  const auto pair = make_synthetic_pair(spec, 1);
  ASSERT_EQ(pair.source.size(), 1000u);
  ASSERT_EQ(pair.target_eval.size(), 1000u);
  for (const auto* d : {&pair.source, &pair.target_eval}) {
    double ones = 0.0;
    for (int y : d->y) ones += y;
    EXPECT_NEAR(ones / 1000.0, 0.5, 0.02);
  }
  EXPECT_EQ(pair.target_unlabeled, pair.target_eval.x);
}

TEST(SyntheticPair, BlobsAreBalanced) {
  DomainPairSpec spec;
  spec.kind = DomainPairKind::kBlobsShift;
  spec.num_classes = 5;
  const auto pair = make_synthetic_pair(spec, 2);
  std::vector<double> counts(5, 0.0);
  for (int y : pair.source.y) counts[static_cast<std::size_t>(y)] += 1.0;
  for (double c : counts) EXPECT_NEAR(c / 1000.0, 0.2, 0.02);
}

TEST(SyntheticPair, ZeroRotationGivesMatchingDistributions) {
  DomainPairSpec spec;
  spec.rotation_degrees = 0.0;
  spec.source_count = spec.target_count = 20000;
  const auto pair = make_synthetic_pair(spec, 3);
  // Independent draws from one distribution: moments agree to sampling error.
  EXPECT_LT((column_means(pair.source.x) - column_means(pair.target_eval.x)).cwiseAbs().maxCoeff(), 0.03);
  const Matrix cs = pair.source.x.rowwise() - column_means(pair.source.x);
  const Matrix ct = pair.target_eval.x.rowwise() - column_means(pair.target_eval.x);
  const Matrix cov_s = cs.transpose() * cs / 20000.0;
  const Matrix cov_t = ct.transpose() * ct / 20000.0;
  EXPECT_LT((cov_s - cov_t).cwiseAbs().maxCoeff(), 0.03);
}

TEST(SyntheticPair, RotationMovesTheTarget) {
  DomainPairSpec spec;
  spec.source_count = spec.target_count = 20000;
  const auto pair = make_synthetic_pair(spec, 3);
  // Rotating about the moons' centre keeps the mean but turns the principal axis.
  const Matrix cs = pair.source.x.rowwise() - column_means(pair.source.x);
  const Matrix ct = pair.target_eval.x.rowwise() - column_means(pair.target_eval.x);
  const double cross_s = (cs.col(0).array() * cs.col(1).array()).mean();
  const double cross_t = (ct.col(0).array() * ct.col(1).array()).mean();
  EXPECT_GT(std::abs(cross_s - cross_t), 0.1);
}

TEST(SyntheticPair, DeterministicPerSeed) {
  DomainPairSpec spec;
  const auto a = make_synthetic_pair(spec, 9);
  const auto b = make_synthetic_pair(spec, 9);
  const auto c = make_synthetic_pair(spec, 10);
  EXPECT_EQ(a.source.x, b.source.x);
  EXPECT_EQ(a.source.y, b.source.y);
  EXPECT_EQ(a.target_eval.x, b.target_eval.x);
  EXPECT_NE(a.source.x, c.source.x);
}

TEST(SyntheticPair, RejectsBadSpecs) {
  DomainPairSpec spec;
  spec.num_classes = 3;
  EXPECT_THROW(make_synthetic_pair(spec, 1), std::invalid_argument);
  spec = DomainPairSpec{};
  spec.source_count = 0;
  EXPECT_THROW(make_synthetic_pair(spec, 1), std::invalid_argument);
  spec = DomainPairSpec{};
  spec.kind = DomainPairKind::kIdxDigits;
  EXPECT_THROW(make_synthetic_pair(spec, 1), std::invalid_argument);
}

TEST(Idx, RoundTripIsBitwise) {
  IdxArray images{{3, 4, 5}, std::vector<std::uint8_t>(60)};
  for (std::size_t i = 0; i < 60; ++i) images.data[i] = static_cast<std::uint8_t>(i * 7);
  const std::string path = temp_path("roundtrip-images-idx3-ubyte");
  write_idx(path, images);
  EXPECT_EQ(load_idx(path), images);
  const auto bytes = read_bytes(path);
  ASSERT_EQ(bytes.size(), 4u + 12u + 60u);
  EXPECT_EQ(bytes[2], 0x08);
  EXPECT_EQ(bytes[3], 3);
  EXPECT_EQ(bytes[7], 3);  // big-endian first dimension
  std::filesystem::remove(path);
}

TEST(Idx, LabelFileShape) {
  IdxArray labels{{6}, {0, 1, 2, 3, 4, 5}};
  const std::string path = temp_path("labels-idx1-ubyte");
  write_idx(path, labels);
  const auto back = load_idx(path);
  EXPECT_EQ(back.dims, (std::vector<std::uint32_t>{6}));
  EXPECT_EQ(back.item_size(), 1u);
  std::filesystem::remove(path);
}

TEST(Idx, ErrorKinds) {
  EXPECT_EQ(error_kind_of({0, 0, 8}), IdxErrorKind::kTruncated);
  // Only the 4 magic bytes of a rank-3 file survive.
  EXPECT_EQ(error_kind_of({0, 0, 8, 3}), IdxErrorKind::kTruncated);
  EXPECT_EQ(error_kind_of({0, 0, 9, 1, 0, 0, 0, 1, 0}), IdxErrorKind::kBadMagic);
  EXPECT_EQ(error_kind_of({1, 0, 8, 1, 0, 0, 0, 1, 0}), IdxErrorKind::kBadMagic);
  EXPECT_EQ(error_kind_of({0, 0, 8, 1, 0, 0, 0, 5, 1, 2}), IdxErrorKind::kTruncated);
  EXPECT_EQ(error_kind_of({0, 0, 8, 3, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff}),
            IdxErrorKind::kDimensionOverflow);
  try {
    load_idx(temp_path("does-not-exist-idx3-ubyte"));
    ADD_FAILURE() << "missing file accepted";
  } catch (const IdxError& e) {
    EXPECT_EQ(e.kind(), IdxErrorKind::kIo);
  }
}

TEST(Idx, TruncatedFileOnDisk) {
  IdxArray images{{2, 3, 3}, std::vector<std::uint8_t>(18, 9)};
  const std::string path = temp_path("truncated-idx3-ubyte");
  write_idx(path, images);
  auto bytes = read_bytes(path);
  bytes.resize(bytes.size() - 4);
  write_bytes(path, bytes);
  try {
    load_idx(path);
    ADD_FAILURE() << "truncated file accepted";
  } catch (const IdxError& e) {
    EXPECT_EQ(e.kind(), IdxErrorKind::kTruncated);
  }
  std::filesystem::remove(path);
}

TEST(Idx, WriterRejectsInconsistentDims) {
  EXPECT_THROW(write_idx(temp_path("bad-idx"), IdxArray{{2, 2}, {1, 2, 3}}), std::invalid_argument);
}

TEST(Preprocess, BlackAndWhiteMapToMinusOneAndOne) {
  ImageTensor images{Matrix(2, 28 * 28), 1, 28, 28};
  images.pixels.row(0).setZero();
  images.pixels.row(1).setConstant(255.0);
  const auto out = preprocess(images, ImageBatchSpec{});
  EXPECT_TRUE((out.pixels.row(0).array() == -1.0).all());
  EXPECT_TRUE((out.pixels.row(1).array() == 1.0).all());
}

TEST(Preprocess, UspsResizeTo28) {
  ImageTensor usps{Matrix(3, 16 * 16), 1, 16, 16};
  Rng rng(1);
  for (Eigen::Index i = 0; i < usps.pixels.size(); ++i) usps.pixels.data()[i] = std::floor(rng.uniform(0.0, 256.0));
  ImageBatchSpec spec;
  spec.height = spec.width = 16;
  const auto out = preprocess(usps, spec);
  EXPECT_EQ(out.height, 28);
  EXPECT_EQ(out.width, 28);
  EXPECT_EQ(out.pixels.cols(), 28 * 28);
  EXPECT_TRUE(out.pixels.allFinite());
  EXPECT_LE(out.pixels.maxCoeff(), 1.0);
  EXPECT_GE(out.pixels.minCoeff(), -1.0);
}

TEST(Preprocess, ResizingAConstantImageKeepsItConstant) {
  ImageTensor usps{Matrix::Constant(1, 16 * 16, 51.0), 1, 16, 16};
  ImageBatchSpec spec;
  spec.height = spec.width = 16;
  const auto out = preprocess(usps, spec);
  EXPECT_LT((out.pixels.array() - (0.2 - 0.5) / 0.5).abs().maxCoeff(), 1e-12);
}

TEST(Preprocess, ShapeIsIdempotent) {
  ImageTensor usps{Matrix::Constant(2, 16 * 16, 100.0), 1, 16, 16};
  ImageBatchSpec first;
  first.height = first.width = 16;
  const auto once = preprocess(usps, first);
  const auto twice = preprocess(once, ImageBatchSpec{});
  EXPECT_EQ(twice.pixels.rows(), once.pixels.rows());
  EXPECT_EQ(twice.pixels.cols(), once.pixels.cols());
  EXPECT_EQ(twice.height, once.height);
  EXPECT_EQ(twice.width, once.width);
}

TEST(Preprocess, RejectsShapeMismatch) {
  ImageTensor images{Matrix::Zero(1, 16 * 16), 1, 16, 16};
  EXPECT_THROW(preprocess(images, ImageBatchSpec{}), std::invalid_argument);
}

TEST(IdxDataset, LoadsPairAndAppliesLimit) {
  IdxArray images{{4, 28, 28}, std::vector<std::uint8_t>(4 * 784, 0)};
  std::fill(images.data.begin() + 784, images.data.begin() + 2 * 784, 255);
  IdxArray labels{{4}, {3, 7, 1, 0}};
  const std::string ip = temp_path("ds-images-idx3-ubyte"), lp = temp_path("ds-labels-idx1-ubyte");
  write_idx(ip, images);
  write_idx(lp, labels);
  const auto all = load_idx_dataset(ip, lp, ImageBatchSpec{}, 10);
  EXPECT_EQ(all.size(), 4u);
  EXPECT_EQ(all.y, (std::vector<int>{3, 7, 1, 0}));
  EXPECT_EQ(all.shape, (std::vector<int>{1, 28, 28}));
  EXPECT_EQ(all.x(1, 0), 1.0);
  const auto two = load_idx_dataset(ip, lp, ImageBatchSpec{}, 10, 2);
  EXPECT_EQ(two.size(), 2u);
  EXPECT_EQ(two.x.rows(), 2);
  EXPECT_THROW(load_idx_dataset(ip, lp, ImageBatchSpec{}, 5), std::invalid_argument);
  write_idx(lp, IdxArray{{3}, {0, 1, 2}});
  EXPECT_THROW(load_idx_dataset(ip, lp, ImageBatchSpec{}, 10), std::invalid_argument);
  std::filesystem::remove(ip);
  std::filesystem::remove(lp);
}
