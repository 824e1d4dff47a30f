#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "f2l/dataset.hpp"

namespace f2l {

struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4))
    throw format_error("idx: truncated header in " + path);
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char buf[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // 2051
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // 2049

// MNIST-style IDX ingestion: pixels scaled to [0,1] and flattened, labels as
// class indices.
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw format_error("idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw format_error("idx: cannot open " + labels_path);

  if (detail::read_be32(img, images_path) != kIdxImageMagic)
    throw format_error("idx: bad image magic in " + images_path);
  const std::uint32_t n_img = detail::read_be32(img, images_path);
  const std::uint32_t rows = detail::read_be32(img, images_path);
  const std::uint32_t cols = detail::read_be32(img, images_path);

  if (detail::read_be32(lab, labels_path) != kIdxLabelMagic)
    throw format_error("idx: bad label magic in " + labels_path);
  const std::uint32_t n_lab = detail::read_be32(lab, labels_path);
  if (n_img != n_lab)
    throw format_error("idx: image/label count mismatch (" +
                       std::to_string(n_img) + " vs " + std::to_string(n_lab) + ")");

  const std::size_t dim = std::size_t(rows) * cols;
  std::vector<unsigned char> pixels(std::size_t(n_img) * dim);
  if (!img.read(reinterpret_cast<char*>(pixels.data()),
                static_cast<std::streamsize>(pixels.size())))
    throw format_error("idx: truncated image payload in " + images_path);
  std::vector<unsigned char> raw_labels(n_lab);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()),
                static_cast<std::streamsize>(raw_labels.size())))
    throw format_error("idx: truncated label payload in " + labels_path);

  Dataset ds;
  ds.features = Tensor2(n_img, dim);
  ds.labels.resize(n_img);
  int max_label = 0;
  for (std::size_t i = 0; i < n_img; ++i) {
    for (std::size_t j = 0; j < dim; ++j)
      ds.features.at(i, j) = pixels[i * dim + j] / 255.0;
    ds.labels[i] = raw_labels[i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  return ds;
}

inline void write_idx_images(const std::string& path,
                             const std::vector<std::vector<unsigned char>>& images,
                             std::uint32_t rows, std::uint32_t cols) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("idx: cannot write " + path);
  detail::write_be32(out, kIdxImageMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(images.size()));
  detail::write_be32(out, rows);
  detail::write_be32(out, cols);
  for (const auto& im : images)
    out.write(reinterpret_cast<const char*>(im.data()),
              static_cast<std::streamsize>(im.size()));
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("idx: cannot write " + path);
  detail::write_be32(out, kIdxLabelMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

}  // namespace f2l
