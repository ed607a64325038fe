#include "safl/idx.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <vector>

using namespace safl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "safl_idx_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Idx, RoundTripTwoImageFixture) {
  TempDir tmp;
  // Two 2x2 images with hand-picked pixel bytes.
  const std::vector<unsigned char> pixels = {17, 0, 255, 128, 1, 2, 3, 4};
  const std::vector<unsigned char> labels = {7, 3};
  write_idx_images(tmp.path / "img.idx", pixels, 2, 2, 2);
  write_idx_labels(tmp.path / "lab.idx", labels);

  const IdxImages img = read_idx_images(tmp.path / "img.idx");
  EXPECT_EQ(img.count, 2);
  EXPECT_EQ(img.rows, 2);
  EXPECT_EQ(img.cols, 2);
  EXPECT_DOUBLE_EQ(img.pixels[0], 17.0 / 255.0);
  EXPECT_DOUBLE_EQ(img.pixels[1], 0.0);
  EXPECT_DOUBLE_EQ(img.pixels[2], 1.0);
  EXPECT_DOUBLE_EQ(img.pixels[3], 128.0 / 255.0);

  const auto lab = read_idx_labels(tmp.path / "lab.idx");
  EXPECT_EQ(lab, (std::vector<int>{7, 3}));

  const DataMatrix data = load_mnist_idx(tmp.path / "img.idx", tmp.path / "lab.idx");
  EXPECT_EQ(data.count, 2);
  EXPECT_EQ(data.feature_dim, 4);
  EXPECT_EQ(data.classes, 10);
}

TEST(Idx, MagicMismatchNamesOffset) {
  TempDir tmp;
  write_idx_labels(tmp.path / "lab.idx", {1, 2});
  try {
    read_idx_images(tmp.path / "lab.idx");
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("magic mismatch"), std::string::npos);
    EXPECT_NE(msg.find("offset 0"), std::string::npos);
  }
}

TEST(Idx, TruncatedFileNamesByteOffset) {
  TempDir tmp;
  const std::vector<unsigned char> pixels(8, 9);
  write_idx_images(tmp.path / "img.idx", pixels, 2, 2, 2);
  // Chop the last 3 payload bytes.
  fs::resize_file(tmp.path / "img.idx", 16 + 5);
  try {
    read_idx_images(tmp.path / "img.idx");
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("truncated"), std::string::npos);
    EXPECT_NE(msg.find("21"), std::string::npos);  // actual size named
  }
}

TEST(Idx, CountMismatchRejected) {
  TempDir tmp;
  write_idx_images(tmp.path / "img.idx", std::vector<unsigned char>(8, 1), 2, 2, 2);
  write_idx_labels(tmp.path / "lab.idx", {1, 2, 3});
  EXPECT_THROW(load_mnist_idx(tmp.path / "img.idx", tmp.path / "lab.idx"), data_error);
}

TEST(Idx, MissingFileIsDataError) {
  EXPECT_THROW(read_idx_images("/nonexistent/safl.idx"), data_error);
}
