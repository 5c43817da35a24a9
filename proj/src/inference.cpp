#include "occam/inference.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

#include "occam/errors.hpp"

namespace occam {

SparseEvaluator::SparseEvaluator(const ArchSpec& arch, const LayerMasks& pattern)
    : arch_(arch), shapes_(arch.shapes()), op_of_stage_(arch.stages.size(), -1) {
  const auto weights = arch.weight_shapes();
  if (pattern.size() != weights.size()) throw ShapeMismatch("pattern layer count mismatch");
  for (std::size_t w = 0; w < weights.size(); ++w) {
    const WeightShape& ws = weights[w];
    if (pattern[w].size() != ws.size()) throw ShapeMismatch("pattern size mismatch for " + ws.name);
    const Stage& s = arch.stages[ws.stage_index];
    const Shape3 in = ws.stage_index == 0 ? arch.input : shapes_[ws.stage_index - 1];
    const Shape3 out = shapes_[ws.stage_index];
    Op op;
    op.stage = static_cast<int>(ws.stage_index);
    op.weight_layer = w;
    op.rows = static_cast<Eigen::Index>(in.size());
    op.cols = static_cast<Eigen::Index>(out.size());
    op.outer.push_back(0);
    const auto& mask = pattern[w];
    if (s.kind == StageKind::dense) {
      for (int j = 0; j < s.out; ++j) {
        for (int i = 0; i < s.in; ++i) {
          const auto flat = static_cast<std::uint32_t>(j * s.in + i);
          if (!mask[flat]) continue;
          op.inner.push_back(i);
          op.source.push_back(flat);
        }
        op.outer.push_back(static_cast<int>(op.inner.size()));
        op.bias_unit.push_back(j);
      }
    } else {
      const int taps = s.kernel_h * s.kernel_w;
      for (int o = 0; o < out.channels; ++o)
        for (int oy = 0; oy < out.height; ++oy)
          for (int ox = 0; ox < out.width; ++ox) {
            // Rows come out increasing because (c, ki, kj) order is row order.
            for (int c = 0; c < in.channels; ++c)
              for (int ki = 0; ki < s.kernel_h; ++ki)
                for (int kj = 0; kj < s.kernel_w; ++kj) {
                  const auto flat = static_cast<std::uint32_t>((o * in.channels + c) * taps + ki * s.kernel_w + kj);
                  if (!mask[flat]) continue;
                  const int iy = oy * s.stride + ki - s.padding;
                  const int ix = ox * s.stride + kj - s.padding;
                  if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
                  op.inner.push_back((c * in.height + iy) * in.width + ix);
                  op.source.push_back(flat);
                }
            op.outer.push_back(static_cast<int>(op.inner.size()));
            op.bias_unit.push_back(o);
          }
    }
    op.values.assign(op.inner.size(), 0.0f);
    op.bias = Vec<float>::Zero(op.cols);
    op_of_stage_[ws.stage_index] = static_cast<int>(ops_.size());
    ops_.push_back(std::move(op));
  }
}

void SparseEvaluator::set_params(const Params<float>& p) {
  for (Op& op : ops_) {
    const auto w = p.weights.at(op.weight_layer).reshaped<Eigen::RowMajor>();
    for (std::size_t i = 0; i < op.source.size(); ++i) op.values[i] = w(op.source[i]);
    const auto& b = p.biases.at(op.weight_layer);
    for (Eigen::Index j = 0; j < op.cols; ++j) op.bias(j) = b(op.bias_unit[static_cast<std::size_t>(j)]);
  }
}

Mat<float> SparseEvaluator::logits(const Mat<float>& x) const {
  Mat<float> cur = x.transpose();
  for (std::size_t i = 0; i < arch_.stages.size(); ++i) {
    const Stage& s = arch_.stages[i];
    switch (s.kind) {
      case StageKind::dense:
      case StageKind::conv2d: {
        const Op& op = ops_[static_cast<std::size_t>(op_of_stage_[i])];
        Eigen::Map<const Eigen::SparseMatrix<float>> t(op.rows, op.cols, static_cast<Eigen::Index>(op.values.size()),
                                                       op.outer.data(), op.inner.data(), op.values.data());
        Mat<float> next = cur * t;
        next.rowwise() += op.bias.transpose();
        cur = std::move(next);
        break;
      }
      case StageKind::relu:
        cur = cur.cwiseMax(0.0f);
        break;
      case StageKind::maxpool2d: {
        const Shape3 in = i == 0 ? arch_.input : shapes_[i - 1];
        const Shape3 out = shapes_[i];
        Mat<float> next(cur.rows(), static_cast<Eigen::Index>(out.size()));
        for (int c = 0; c < out.channels; ++c)
          for (int oy = 0; oy < out.height; ++oy)
            for (int ox = 0; ox < out.width; ++ox) {
              auto dst = next.col((c * out.height + oy) * out.width + ox);
              bool first = true;
              for (int ki = 0; ki < s.window; ++ki)
                for (int kj = 0; kj < s.window; ++kj) {
                  const auto src = cur.col((c * in.height + oy * s.stride + ki) * in.width + ox * s.stride + kj);
                  if (first) dst = src;
                  else dst = dst.cwiseMax(src);
                  first = false;
                }
            }
        cur = std::move(next);
        break;
      }
      case StageKind::flatten:
      case StageKind::softmax_logits:
        break;
    }
  }
  return cur;
}

std::size_t SparseEvaluator::count_errors(const Dataset& data, int threads) const {
  constexpr Eigen::Index kChunk = 256;
  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
  auto work = [&](Eigen::Index first_chunk, Eigen::Index stride) {
    std::size_t wrong = 0;
    for (Eigen::Index c = first_chunk; c < chunks; c += stride) {
      const Eigen::Index begin = c * kChunk;
      const Eigen::Index len = std::min(kChunk, n - begin);
      const Mat<float> z = logits(data.features.middleCols(begin, len));
      const auto pred = argmax_columns(z.transpose());
      for (Eigen::Index j = 0; j < len; ++j)
        if (pred[static_cast<std::size_t>(j)] != data.labels[static_cast<std::size_t>(begin + j)]) ++wrong;
    }
    return wrong;
  };
  if (threads <= 1) return work(0, 1);
  std::vector<std::size_t> partial(static_cast<std::size_t>(threads), 0);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] { partial[static_cast<std::size_t>(t)] = work(t, threads); });
  for (auto& th : pool) th.join();
  return std::accumulate(partial.begin(), partial.end(), std::size_t{0});
}

std::size_t SparseEvaluator::operator_nonzeros() const {
  std::size_t n = 0;
  for (const Op& op : ops_) n += op.values.size();
  return n;
}

LayerMasks nonzero_pattern(const Model& m) {
  LayerMasks out;
  for (std::size_t i = 0; i < m.weight_layer_count(); ++i) {
    std::vector<std::uint8_t> mask;
    mask.reserve(m.weight(i).size());
    for (float v : m.weight(i).values) mask.push_back(v != 0.0f);
    out.push_back(std::move(mask));
  }
  return out;
}

double pattern_density(const LayerMasks& pattern) {
  std::size_t on = 0;
  std::size_t total = 0;
  for (const auto& m : pattern) {
    total += m.size();
    on += static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
  }
  return total == 0 ? 0.0 : static_cast<double>(on) / static_cast<double>(total);
}

}  // namespace occam
