#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradshield/tensor.hpp"

namespace gradshield {

struct Dataset {
  Tensor inputs;  // [N, ...]
  Tensor labels;  // one-hot [N, K]
  std::string name;
  std::string provenance;

  std::size_t size() const { return inputs.rank() ? inputs.dim(0) : 0; }
  std::size_t num_classes() const { return labels.rank() == 2 ? labels.dim(1) : 0; }
  Shape example_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }
  std::vector<std::size_t> label_indices() const { return argmax_rows(labels); }

  Dataset subset(std::span<const std::size_t> idx) const {
    return {inputs.gather(idx), labels.gather(idx), name, provenance};
  }
};

/// Batch of examples; `indices` are positions in the source dataset.
struct Batch {
  Tensor inputs;
  Tensor labels;
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

/// Checks N agreement and one-hot label rows.
inline void validate_dataset(const Dataset& d) {
  if (d.inputs.rank() < 2 || d.labels.rank() != 2 || d.inputs.dim(0) != d.labels.dim(0)) {
    throw ShapeError("dataset " + d.name + ": inputs " + shape_str(d.inputs.shape()) + " and labels " +
                     shape_str(d.labels.shape()) + " disagree");
  }
  std::size_t k = d.labels.dim(1);
  for (std::size_t i = 0; i < d.labels.dim(0); ++i) {
    int ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      double v = d.labels[i * k + j];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw std::invalid_argument("dataset " + d.name + ": label row " + std::to_string(i) + " is not one-hot");
  }
}

// ---------------------------------------------------------------------------
// IDX format: 4-byte big-endian magic, 4-byte big-endian sizes, raw ubytes.

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

class IdxError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Truncated, CountMismatch };
  IdxError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace idx {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& what) {
  if (b.size() < off + 4) throw IdxError(IdxError::Kind::Truncated, what + ": truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

}  // namespace idx

/// Reads an IDX image/label pair. Pixels are scaled by 1/255; labels become one-hot over 10 classes.
inline Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  auto img = idx::read_file(images_path);
  auto lab = idx::read_file(labels_path);
  if (idx::read_be32(img, 0, images_path.string()) != kIdxImagesMagic) {
    throw IdxError(IdxError::Kind::BadMagic, images_path.string() + ": bad magic (expected 0x00000803)");
  }
  if (idx::read_be32(lab, 0, labels_path.string()) != kIdxLabelsMagic) {
    throw IdxError(IdxError::Kind::BadMagic, labels_path.string() + ": bad magic (expected 0x00000801)");
  }
  std::size_t n = idx::read_be32(img, 4, images_path.string());
  std::size_t rows = idx::read_be32(img, 8, images_path.string());
  std::size_t cols = idx::read_be32(img, 12, images_path.string());
  std::size_t nl = idx::read_be32(lab, 4, labels_path.string());
  if (img.size() < 16 + n * rows * cols) {
    throw IdxError(IdxError::Kind::Truncated, images_path.string() + ": truncated pixel data");
  }
  if (lab.size() < 8 + nl) throw IdxError(IdxError::Kind::Truncated, labels_path.string() + ": truncated label data");
  if (n != nl) {
    throw IdxError(IdxError::Kind::CountMismatch,
                   "image count " + std::to_string(n) + " != label count " + std::to_string(nl));
  }
  Tensor x({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) x[i] = img[16 + i] / 255.0;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = lab[8 + i];
  return {std::move(x), one_hot(labels, 10), "mnist", images_path.string()};
}

inline std::vector<std::uint8_t> idx_image_bytes(const Dataset& d) {
  const auto& s = d.inputs.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("idx images need [N,1,H,W], got " + shape_str(s));
  std::vector<std::uint8_t> out;
  idx::put_be32(out, kIdxImagesMagic);
  idx::put_be32(out, static_cast<std::uint32_t>(s[0]));
  idx::put_be32(out, static_cast<std::uint32_t>(s[2]));
  idx::put_be32(out, static_cast<std::uint32_t>(s[3]));
  for (double v : d.inputs.data()) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

inline std::vector<std::uint8_t> idx_label_bytes(const Dataset& d) {
  std::vector<std::uint8_t> out;
  idx::put_be32(out, kIdxLabelsMagic);
  idx::put_be32(out, static_cast<std::uint32_t>(d.size()));
  for (auto l : d.label_indices()) out.push_back(static_cast<std::uint8_t>(l));
  return out;
}

/// First `per_class` examples of each class, in dataset order.
inline Dataset first_per_class(const Dataset& d, std::size_t per_class) {
  std::vector<std::size_t> taken(d.num_classes(), 0), idx;
  auto labels = d.label_indices();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (taken[labels[i]] < per_class) {
      ++taken[labels[i]];
      idx.push_back(i);
    }
  }
  Dataset out = d.subset(idx);
  out.name = d.name + "[" + std::to_string(per_class) + "/class]";
  return out;
}

/// K Gaussian clusters with centers on a circle inside the unit square,
/// clipped to [0,1]², labels i mod K.
inline Dataset synth_blobs(std::uint64_t seed, std::size_t n, std::size_t k, double spread) {
  if (k < 2 || n < k) throw std::invalid_argument("synth_blobs: need K >= 2 and n >= K");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor x({n, 2});
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = i % k;
    double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
    double cx = 0.5 + 0.3 * std::cos(angle), cy = 0.5 + 0.3 * std::sin(angle);
    double ex = noise(rng), ey = noise(rng);
    x[2 * i] = std::clamp(cx + spread * ex, 0.0, 1.0);
    x[2 * i + 1] = std::clamp(cy + spread * ey, 0.0, 1.0);
    labels[i] = c;
  }
  return {std::move(x), one_hot(labels, k), "blobs", "synth_blobs(seed=" + std::to_string(seed) + ")"};
}

struct BatchPlan {
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t epoch = 0;
};

/// Seed-and-epoch-determined permutation of [0, n).
inline std::vector<std::size_t> epoch_permutation(std::size_t n, const BatchPlan& plan) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(plan.shuffle_seed), static_cast<std::uint32_t>(plan.shuffle_seed >> 32),
                    static_cast<std::uint32_t>(plan.epoch), static_cast<std::uint32_t>(plan.epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// Exhaustive shuffled partition of the dataset for one epoch; the last batch may be short.
inline std::vector<Batch> batches(const Dataset& d, const BatchPlan& plan) {
  if (plan.batch_size == 0 || plan.batch_size > d.size()) {
    throw std::invalid_argument("batches: batch size must be in [1, N]");
  }
  auto perm = epoch_permutation(d.size(), plan);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < perm.size(); start += plan.batch_size) {
    std::size_t end = std::min(perm.size(), start + plan.batch_size);
    std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                 perm.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back({d.inputs.gather(idx), d.labels.gather(idx), std::move(idx)});
  }
  return out;
}

inline Batch whole(const Dataset& d) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return {d.inputs, d.labels, std::move(idx)};
}

}  // namespace gradshield
