#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace occam {

/// Activation shape of one example, channel-major (c, h, w). Flat vectors are
/// (n, 1, 1).
struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool flat() const noexcept { return height == 1 && width == 1; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

enum class StageKind { dense, conv2d, relu, maxpool2d, flatten, softmax_logits };

struct Stage {
  StageKind kind = StageKind::relu;
  int in = 0;   // dense: input features, conv2d: input channels
  int out = 0;  // dense: output features, conv2d: output channels
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int padding = 0;
  int window = 0;  // maxpool2d

  bool has_weights() const noexcept {
    return kind == StageKind::dense || kind == StageKind::conv2d;
  }

  static Stage dense(int in, int out);
  static Stage conv2d(int in, int out, int kh, int kw, int stride = 1, int padding = 0);
  static Stage maxpool2d(int window, int stride);
  static Stage relu();
  static Stage flatten();
  static Stage softmax_logits();

  friend bool operator==(const Stage&, const Stage&) = default;
};

/// Weight tensor of one parametric stage as it appears in a Model.
struct WeightShape {
  std::string name;                // "conv1", "fc2", ...
  std::size_t stage_index = 0;
  std::vector<std::size_t> dims;   // dense: [out, in]; conv: [out, in, kh, kw]
  std::size_t units = 0;           // output channels / neurons
  std::size_t fan_in = 0;
  bool conv = false;

  std::size_t size() const noexcept { return units * fan_in; }
};

/// The fixed hypothesis class: a chain of stages with an input shape and a
/// class count. Part of the prior, so it never costs bits in the bound.
struct ArchSpec {
  Shape3 input;
  int classes = 0;
  std::vector<Stage> stages;

  /// Output shape after every stage. Throws ArchError if the chain does not
  /// type-check.
  std::vector<Shape3> shapes() const;
  void validate() const { (void)shapes(); }

  std::vector<WeightShape> weight_shapes() const;
  std::size_t weight_count() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// One stage per line: `input C H W`, `classes N`, `dense IN OUT`,
/// `conv2d IN OUT KH KW STRIDE PAD`, `relu`, `maxpool2d K STRIDE`, `flatten`,
/// `softmax-logits`. `#` starts a comment.
ArchSpec parse_arch(std::string_view text);
std::string to_text(const ArchSpec& arch);

ArchSpec load_arch(const std::filesystem::path& path);
void save_arch(const ArchSpec& arch, const std::filesystem::path& path);

/// Built-in architectures: "lenet5" (20-50-500 Caffe variant, 431k weights),
/// "lenet5-small" (6-16-120-84), "small-conv" (sweep net), "mlp-2d" (synthetic).
ArchSpec named_arch(std::string_view name);

}  // namespace occam
