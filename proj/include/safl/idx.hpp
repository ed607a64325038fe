#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "safl/errors.hpp"
#include "safl/objectives.hpp"

namespace safl {

// IDX binary format as used by MNIST: big-endian magic + dimension sizes,
// then raw payload bytes. Magic 0x00000803 for u8 image cubes, 0x00000801
// for u8 label vectors.

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("dataset not found: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw data_error("truncated IDX file " + path + ": expected 4 bytes at offset " +
                     std::to_string(offset));
  }
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

}  // namespace detail

struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> pixels;  // count * rows * cols, scaled to [0, 1]
};

inline IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const std::uint32_t magic = detail::read_be32(bytes, 0, path.string());
  if (magic != 0x00000803u) {
    throw data_error("IDX magic mismatch in " + path.string() + ": got 0x" +
                     [&] { char buf[16]; std::snprintf(buf, sizeof buf, "%08x", magic); return std::string(buf); }() +
                     ", expected 0x00000803 at offset 0");
  }
  IdxImages img;
  img.count = static_cast<int>(detail::read_be32(bytes, 4, path.string()));
  img.rows = static_cast<int>(detail::read_be32(bytes, 8, path.string()));
  img.cols = static_cast<int>(detail::read_be32(bytes, 12, path.string()));
  const std::size_t need = 16 + static_cast<std::size_t>(img.count) * img.rows * img.cols;
  if (bytes.size() < need) {
    throw data_error("truncated IDX file " + path.string() + ": header promises " +
                     std::to_string(need) + " bytes, file has " + std::to_string(bytes.size()) +
                     " (missing from offset " + std::to_string(bytes.size()) + ")");
  }
  img.pixels.resize(static_cast<std::size_t>(img.count) * img.rows * img.cols);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<double>(bytes[16 + i]) / 255.0;
  }
  return img;
}

inline std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const std::uint32_t magic = detail::read_be32(bytes, 0, path.string());
  if (magic != 0x00000801u) {
    throw data_error("IDX magic mismatch in " + path.string() + ": got 0x" +
                     [&] { char buf[16]; std::snprintf(buf, sizeof buf, "%08x", magic); return std::string(buf); }() +
                     ", expected 0x00000801 at offset 0");
  }
  const int count = static_cast<int>(detail::read_be32(bytes, 4, path.string()));
  const std::size_t need = 8 + static_cast<std::size_t>(count);
  if (bytes.size() < need) {
    throw data_error("truncated IDX file " + path.string() + ": header promises " +
                     std::to_string(need) + " bytes, file has " + std::to_string(bytes.size()) +
                     " (missing from offset " + std::to_string(bytes.size()) + ")");
  }
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(bytes[8 + i]);
  return labels;
}

// Images flattened to d = rows * cols, pixels scaled to [0, 1], ten classes.
inline DataMatrix load_mnist_idx(const std::filesystem::path& images_path,
                                 const std::filesystem::path& labels_path) {
  IdxImages img = read_idx_images(images_path);
  std::vector<int> labels = read_idx_labels(labels_path);
  if (static_cast<int>(labels.size()) != img.count) {
    throw data_error("IDX count mismatch: " + images_path.string() + " has " +
                     std::to_string(img.count) + " images, " + labels_path.string() + " has " +
                     std::to_string(labels.size()) + " labels");
  }
  DataMatrix data;
  data.count = img.count;
  data.feature_dim = img.rows * img.cols;
  data.classes = 10;
  data.features = std::move(img.pixels);
  data.labels = std::move(labels);
  data.validate();
  return data;
}

// Fixture writers; handy for tests and for packaging small synthetic sets.
inline void write_idx_images(const std::filesystem::path& path,
                             const std::vector<unsigned char>& pixels, int count, int rows,
                             int cols) {
  if (pixels.size() != static_cast<std::size_t>(count) * rows * cols) {
    throw std::invalid_argument("write_idx_images: payload size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path.string());
  auto be32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(0x00000803u);
  be32(static_cast<std::uint32_t>(count));
  be32(static_cast<std::uint32_t>(rows));
  be32(static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::filesystem::path& path,
                             const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path.string());
  auto be32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(0x00000801u);
  be32(static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

}  // namespace safl
