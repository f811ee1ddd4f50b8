#include <fstream>
#include <iterator>

#include "fedbalance/data.hpp"

namespace fedbalance {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) {
    throw ParseError(path.string() + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void expect_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    char msg[96];
    std::snprintf(msg, sizeof msg, ": bad magic 0x%08x at offset 0 (expected 0x%08x)", got, want);
    throw ParseError(path.string() + msg);
  }
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
  auto img = read_file(images_path);
  expect_magic(read_be32(img, 0, images_path), kImageMagic, images_path);
  std::uint32_t n_img = read_be32(img, 4, images_path);
  std::uint32_t rows = read_be32(img, 8, images_path);
  std::uint32_t cols = read_be32(img, 12, images_path);
  if (n_img == 0) throw ParseError(images_path.string() + ": zero images declared at offset 4");
  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  if (d == 0) throw ParseError(images_path.string() + ": zero-size images declared at offset 8");
  const std::size_t need = 16 + static_cast<std::size_t>(n_img) * d;
  if (img.size() < need) {
    throw ParseError(images_path.string() + ": truncated pixel data at offset " +
                     std::to_string(img.size()) + " (expected " + std::to_string(need) + " bytes)");
  }

  auto lab = read_file(labels_path);
  expect_magic(read_be32(lab, 0, labels_path), kLabelMagic, labels_path);
  std::uint32_t n_lab = read_be32(lab, 4, labels_path);
  if (n_lab != n_img) {
    throw ParseError(labels_path.string() + ": label count " + std::to_string(n_lab) +
                     " at offset 4 does not match image count " + std::to_string(n_img));
  }
  if (lab.size() < 8 + static_cast<std::size_t>(n_lab)) {
    throw ParseError(labels_path.string() + ": truncated label data at offset " +
                     std::to_string(lab.size()));
  }

  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(d), n_img);
  ds.labels.resize(n_img);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n_img; ++i) {
    const unsigned char* px = img.data() + 16 + static_cast<std::size_t>(i) * d;
    for (std::size_t k = 0; k < d; ++k) ds.features(static_cast<Eigen::Index>(k), i) = px[k] / 255.0;
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  return ds;
}

}  // namespace fedbalance
