#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

#include "trlhpo/core/random.hpp"

namespace trlhpo::evaluator {

/// Failure categories when reading IDX files.
enum class MnistErrorKind { Io, BadMagic, Truncated, CountMismatch, BadLabel };

class MnistError : public std::runtime_error {
 public:
  MnistError(MnistErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  MnistErrorKind kind() const { return kind_; }

 private:
  MnistErrorKind kind_;
};

inline constexpr std::uint32_t kImageMagic = 2051;
inline constexpr std::uint32_t kLabelMagic = 2049;

/// Greyscale images in [0, 1], stored image-major.
struct ImageSet {
  std::size_t rows = 28;
  std::size_t cols = 28;
  std::vector<double> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return rows * cols; }
  const double* image(std::size_t i) const { return pixels.data() + i * image_size(); }

  ImageSet subset(std::span<const std::size_t> indices) const {
    ImageSet out;
    out.rows = rows;
    out.cols = cols;
    out.pixels.reserve(indices.size() * image_size());
    out.labels.reserve(indices.size());
    for (auto i : indices) {
      out.pixels.insert(out.pixels.end(), image(i), image(i) + image_size());
      out.labels.push_back(labels[i]);
    }
    return out;
  }
};

namespace detail {

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MnistError(MnistErrorKind::Io, "mnist: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace detail

/// Parses a big-endian IDX image/label pair.
inline ImageSet load_mnist(const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
  const auto img = detail::read_all(image_path);
  const auto lab = detail::read_all(label_path);
  if (img.size() < 16) throw MnistError(MnistErrorKind::Truncated, "mnist: image header truncated in " + image_path.string());
  if (lab.size() < 8) throw MnistError(MnistErrorKind::Truncated, "mnist: label header truncated in " + label_path.string());
  if (detail::be32(img, 0) != kImageMagic) {
    throw MnistError(MnistErrorKind::BadMagic, "mnist: image magic " + std::to_string(detail::be32(img, 0)) +
                                                   " != 2051 in " + image_path.string());
  }
  if (detail::be32(lab, 0) != kLabelMagic) {
    throw MnistError(MnistErrorKind::BadMagic, "mnist: label magic " + std::to_string(detail::be32(lab, 0)) +
                                                   " != 2049 in " + label_path.string());
  }
  const std::size_t n_img = detail::be32(img, 4);
  const std::size_t rows = detail::be32(img, 8);
  const std::size_t cols = detail::be32(img, 12);
  const std::size_t n_lab = detail::be32(lab, 4);
  if (n_img != n_lab) {
    throw MnistError(MnistErrorKind::CountMismatch, "mnist: " + std::to_string(n_img) + " images but " +
                                                        std::to_string(n_lab) + " labels");
  }
  if (img.size() < 16 + n_img * rows * cols) {
    throw MnistError(MnistErrorKind::Truncated, "mnist: image data truncated in " + image_path.string());
  }
  if (lab.size() < 8 + n_lab) throw MnistError(MnistErrorKind::Truncated, "mnist: label data truncated in " + label_path.string());

  ImageSet set;
  set.rows = rows;
  set.cols = cols;
  set.pixels.resize(n_img * rows * cols);
  for (std::size_t i = 0; i < set.pixels.size(); ++i) set.pixels[i] = static_cast<double>(img[16 + i]) / 255.0;
  set.labels.resize(n_lab);
  for (std::size_t i = 0; i < n_lab; ++i) {
    set.labels[i] = lab[8 + i];
    if (set.labels[i] > 9) throw MnistError(MnistErrorKind::BadLabel, "mnist: label " + std::to_string(set.labels[i]) + " out of range");
  }
  return set;
}

struct DataConfig {
  std::string mnist_dir;  // empty: $MNIST_DIR, then the bundled subset
  std::size_t train_size = 2000;
  std::size_t validation_size = 512;
  std::uint64_t split_seed = 0;
};

/// Train/validation partitions drawn disjointly from one pool, plus the
/// fixed validation order used for the 32-batch profile.
struct Dataset {
  ImageSet train;
  ImageSet validation;
  ImageSet test;
  std::vector<std::size_t> profile_order;
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  core::Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline Dataset split_dataset(const ImageSet& pool, std::size_t train_size, std::size_t validation_size,
                             std::uint64_t seed) {
  if (train_size + validation_size > pool.size()) {
    throw std::invalid_argument("split: requested " + std::to_string(train_size) + "+" +
                                std::to_string(validation_size) + " samples from a pool of " +
                                std::to_string(pool.size()));
  }
  const auto order = shuffled_indices(pool.size(), core::derive_seed({seed, 1}));
  Dataset ds;
  ds.train = pool.subset(std::span(order).subspan(0, train_size));
  ds.validation = pool.subset(std::span(order).subspan(train_size, validation_size));
  ds.profile_order = shuffled_indices(validation_size, core::derive_seed({seed, 2}));
  return ds;
}

inline std::filesystem::path resolve_mnist_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("MNIST_DIR"); env && *env) return env;
#ifdef TRLHPO_DEFAULT_MNIST_DIR
  if (std::filesystem::exists(TRLHPO_DEFAULT_MNIST_DIR)) return TRLHPO_DEFAULT_MNIST_DIR;
#endif
  throw MnistError(MnistErrorKind::Io, "mnist: no dataset directory configured and MNIST_DIR is unset");
}

/// Loads train-{images,labels} from the resolved directory and splits them.
/// A t10k pair, when present, becomes the test partition.
inline Dataset load_dataset(const DataConfig& cfg) {
  const auto dir = resolve_mnist_dir(cfg.mnist_dir);
  const auto pool = load_mnist(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  auto ds = split_dataset(pool, cfg.train_size, cfg.validation_size, cfg.split_seed);
  if (std::filesystem::exists(dir / "t10k-images-idx3-ubyte")) {
    ds.test = load_mnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  }
  return ds;
}

}  // namespace trlhpo::evaluator
