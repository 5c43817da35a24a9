#include "occam/dataset.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "occam/errors.hpp"
#include "occam/model.hpp"
#include "occam/rng.hpp"

namespace occam {

void Dataset::validate() const {
  if (features.cols() != static_cast<Eigen::Index>(labels.size()))
    throw ShapeMismatch("dataset has " + std::to_string(features.cols()) + " feature columns and " +
                        std::to_string(labels.size()) + " labels");
  if (features.rows() != static_cast<Eigen::Index>(shape.size()))
    throw ShapeMismatch("dataset feature size does not match its shape");
  for (int y : labels)
    if (y < 0 || y >= classes) throw InvalidInput("label out of range");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.shape = shape;
  out.classes = classes;
  out.features.resize(features.rows(), static_cast<Eigen::Index>(indices.size()));
  out.labels.reserve(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    out.features.col(static_cast<Eigen::Index>(j)) = features.col(static_cast<Eigen::Index>(indices[j]));
    out.labels.push_back(labels.at(indices[j]));
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

namespace {

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
  if (b.size() < at + 4) throw FormatError("truncated IDX header", at);
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (be32(img, 0) != 0x00000803) throw FormatError("bad IDX image magic in " + images.string(), 0);
  if (be32(lab, 0) != 0x00000801) throw FormatError("bad IDX label magic in " + labels.string(), 0);
  const std::size_t n = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  if (be32(lab, 4) != n) throw FormatError("image/label count mismatch", 4);
  if (img.size() != 16 + n * rows * cols) throw FormatError("IDX image payload size mismatch", 16);
  if (lab.size() != 8 + n) throw FormatError("IDX label payload size mismatch", 8);

  const std::size_t keep = limit ? std::min(*limit, n) : n;
  Dataset d;
  d.shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
  d.classes = 10;
  d.features.resize(static_cast<Eigen::Index>(rows * cols), static_cast<Eigen::Index>(keep));
  d.labels.resize(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::uint8_t* px = img.data() + 16 + i * rows * cols;
    for (std::size_t j = 0; j < rows * cols; ++j)
      d.features(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = px[j] / 255.0f;
    d.labels[i] = lab[8 + i];
  }
  d.validate();
  return d;
}

Dataset load_mnist(const std::filesystem::path& dir, bool train, std::optional<std::size_t> limit) {
  const std::string prefix = train ? "train" : "t10k";
  return load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"), limit);
}

Dataset make_blobs(std::size_t n, int classes, int dim, double separation, double spread,
                   std::uint64_t seed) {
  if (classes < 2 || dim < 2) throw InvalidInput("blobs need >= 2 classes and >= 2 dims");
  Rng rng(seed);
  Dataset d;
  d.shape = {dim, 1, 1};
  d.classes = classes;
  d.features.resize(dim, static_cast<Eigen::Index>(n));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
    const double angle = 2.0 * std::numbers::pi * y / classes;
    d.labels[i] = y;
    for (int j = 0; j < dim; ++j) {
      double mean = 0.0;
      if (j == 0) mean = separation * std::cos(angle);
      if (j == 1) mean = separation * std::sin(angle);
      d.features(j, static_cast<Eigen::Index>(i)) = static_cast<float>(mean + spread * rng.normal());
    }
  }
  return d;
}

namespace {

// Partial Fisher-Yates: the first m slots are a uniform m-subset.
std::vector<std::size_t> pick_subset(std::size_t n, double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidInput("fraction must be in [0,1]");
  const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(m);
  return idx;
}

}  // namespace

std::vector<std::size_t> randomization_subset(std::size_t n, double fraction, std::uint64_t seed) {
  Rng rng(seed);
  return pick_subset(n, fraction, rng);
}

Dataset randomize_labels(const Dataset& data, double fraction, std::uint64_t seed) {
  Rng rng(seed);
  const auto subset = pick_subset(data.size(), fraction, rng);
  Dataset out = data;
  for (std::size_t i : subset) out.labels[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(data.classes)));
  return out;
}

}  // namespace occam
