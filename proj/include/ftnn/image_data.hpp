#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ftnn/error.hpp"
#include "ftnn/rng.hpp"

namespace ftnn {

// Fixed-length feature vectors in [0,1] with class labels. `permutation`
// records the pixel permutation most recently applied (empty = none).
struct ImageDataset {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<double>> examples;
  std::vector<int> labels;
  std::vector<std::size_t> permutation;

  std::size_t size() const { return examples.size(); }
  std::size_t feature_len() const { return rows * cols; }
};

namespace detail {

inline std::uint32_t read_u32be(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  require(f.good(), ErrorKind::Io, "truncated IDX header: " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

inline void write_u32be(std::ofstream& f, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Reads an IDX image file (unsigned byte, 3 dimensions) and its label file
// (unsigned byte, 1 dimension); pixel values are scaled to [0,1].
inline ImageDataset load_image_dataset(const std::string& images_path,
                                       const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  require(fi.good(), ErrorKind::Io, "cannot open: " + images_path);
  require(detail::read_u32be(fi, images_path) == 0x00000803u, ErrorKind::Io,
          "not an IDX image file: " + images_path);
  const std::uint32_t n = detail::read_u32be(fi, images_path);
  const std::uint32_t rows = detail::read_u32be(fi, images_path);
  const std::uint32_t cols = detail::read_u32be(fi, images_path);

  ImageDataset data;
  data.rows = rows;
  data.cols = cols;
  data.examples.resize(n);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (auto& ex : data.examples) {
    fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(fi.good(), ErrorKind::Io, "truncated IDX pixels: " + images_path);
    ex.resize(buf.size());
    for (std::size_t j = 0; j < buf.size(); ++j) ex[j] = static_cast<double>(buf[j]) / 255.0;
  }

  std::ifstream fl(labels_path, std::ios::binary);
  require(fl.good(), ErrorKind::Io, "cannot open: " + labels_path);
  require(detail::read_u32be(fl, labels_path) == 0x00000801u, ErrorKind::Io,
          "not an IDX label file: " + labels_path);
  require(detail::read_u32be(fl, labels_path) == n, ErrorKind::Io,
          "image/label count mismatch: " + labels_path);
  data.labels.resize(n);
  for (auto& lbl : data.labels) {
    char c;
    fl.read(&c, 1);
    require(fl.good(), ErrorKind::Io, "truncated IDX labels: " + labels_path);
    lbl = static_cast<unsigned char>(c);
  }
  return data;
}

// Writes the dataset back out in IDX form, quantizing features to bytes.
inline void save_image_dataset(const ImageDataset& data, const std::string& images_path,
                               const std::string& labels_path) {
  require(data.feature_len() > 0, ErrorKind::Input, "dataset has no pixel grid");
  std::ofstream fi(images_path, std::ios::binary);
  require(fi.good(), ErrorKind::Io, "cannot open for writing: " + images_path);
  detail::write_u32be(fi, 0x00000803u);
  detail::write_u32be(fi, static_cast<std::uint32_t>(data.size()));
  detail::write_u32be(fi, static_cast<std::uint32_t>(data.rows));
  detail::write_u32be(fi, static_cast<std::uint32_t>(data.cols));
  for (const auto& ex : data.examples) {
    require(ex.size() == data.feature_len(), ErrorKind::Input, "ragged example");
    for (double v : ex) {
      const auto q = static_cast<unsigned char>(std::lround(v * 255.0));
      fi.write(reinterpret_cast<const char*>(&q), 1);
    }
  }
  require(fi.good(), ErrorKind::Io, "write failed: " + images_path);

  std::ofstream fl(labels_path, std::ios::binary);
  require(fl.good(), ErrorKind::Io, "cannot open for writing: " + labels_path);
  detail::write_u32be(fl, 0x00000801u);
  detail::write_u32be(fl, static_cast<std::uint32_t>(data.size()));
  for (int lbl : data.labels) {
    require(lbl >= 0 && lbl <= 255, ErrorKind::Input, "label out of byte range");
    const auto b = static_cast<unsigned char>(lbl);
    fl.write(reinterpret_cast<const char*>(&b), 1);
  }
  require(fl.good(), ErrorKind::Io, "write failed: " + labels_path);
}

inline std::vector<std::size_t> make_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  return perm;
}

inline std::vector<std::size_t> invert_permutation(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

// new[j] = old[perm[j]] for every example; labels unchanged.
inline ImageDataset apply_permutation(const ImageDataset& data,
                                      const std::vector<std::size_t>& perm) {
  require(perm.size() == data.feature_len(), ErrorKind::Input,
          "permutation length must match feature length");
  ImageDataset out;
  out.rows = data.rows;
  out.cols = data.cols;
  out.labels = data.labels;
  out.permutation = perm;
  out.examples.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.examples[i].resize(perm.size());
    for (std::size_t j = 0; j < perm.size(); ++j) out.examples[i][j] = data.examples[i][perm[j]];
  }
  return out;
}

// One uniformly drawn pixel permutation, applied identically to every image.
inline ImageDataset permute_pixels(const ImageDataset& data, std::uint64_t seed) {
  return apply_permutation(data, make_permutation(data.feature_len(), seed));
}

}  // namespace ftnn
