#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "occam/arch.hpp"
#include "occam/errors.hpp"
#include "occam/model.hpp"

namespace occam {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Trainable parameters of every weighted stage, in stage order. Weight rows
/// are output units; a row of a conv weight is one filter laid out (c, kh, kw),
/// which matches the row-major layout of the Model tensors.
template <typename Scalar>
struct Params {
  std::vector<RowMat<Scalar>> weights;
  std::vector<Vec<Scalar>> biases;

  static Params zeros(const ArchSpec& arch) {
    Params p;
    for (const auto& ws : arch.weight_shapes()) {
      p.weights.push_back(RowMat<Scalar>::Zero(static_cast<Eigen::Index>(ws.units),
                                               static_cast<Eigen::Index>(ws.fan_in)));
      p.biases.push_back(Vec<Scalar>::Zero(static_cast<Eigen::Index>(ws.units)));
    }
    return p;
  }

  void set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
  }
};

template <typename Scalar>
Params<Scalar> params_from_model(const Model& m) {
  m.validate();
  Params<Scalar> p = Params<Scalar>::zeros(m.arch);
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    p.weights[i] = Eigen::Map<const RowMat<float>>(m.weight(i).values.data(), p.weights[i].rows(),
                                                   p.weights[i].cols())
                       .template cast<Scalar>();
    p.biases[i] = Eigen::Map<const Vec<float>>(m.bias(i).values.data(), p.biases[i].size())
                      .template cast<Scalar>();
  }
  return p;
}

template <typename Scalar>
void store_params(const Params<Scalar>& p, Model& m) {
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    Eigen::Map<RowMat<float>>(m.weight(i).values.data(), p.weights[i].rows(), p.weights[i].cols()) =
        p.weights[i].template cast<float>();
    Eigen::Map<Vec<float>>(m.bias(i).values.data(), p.biases[i].size()) =
        p.biases[i].template cast<float>();
  }
}

/// Feed-forward evaluation and backpropagation for an ArchSpec chain.
/// Activations are [features x batch], one column per example.
template <typename Scalar>
class Network {
public:
  struct Cache {
    std::vector<Mat<Scalar>> inputs;           // input of every stage
    std::vector<Mat<Scalar>> patches;          // conv2d: im2col rows
    std::vector<std::vector<std::int32_t>> argmax;  // maxpool2d: source index
  };

  explicit Network(ArchSpec arch) : arch_(std::move(arch)), shapes_(arch_.shapes()) {
    for (std::size_t i = 0, w = 0; i < arch_.stages.size(); ++i)
      param_index_.push_back(arch_.stages[i].has_weights() ? static_cast<int>(w++) : -1);
  }

  const ArchSpec& arch() const noexcept { return arch_; }

  Shape3 input_shape(std::size_t stage) const { return stage == 0 ? arch_.input : shapes_[stage - 1]; }

  /// Logits [classes x batch]. Stage inputs are kept in `cache` when given.
  Mat<Scalar> forward(const Params<Scalar>& p, const Mat<Scalar>& x, Cache* cache = nullptr) const {
    const auto batch = x.cols();
    if (x.rows() != static_cast<Eigen::Index>(arch_.input.size()))
      throw ShapeMismatch("input rows do not match the architecture input shape");
    if (cache) {
      cache->inputs.assign(arch_.stages.size(), Mat<Scalar>());
      cache->patches.assign(arch_.stages.size(), Mat<Scalar>());
      cache->argmax.assign(arch_.stages.size(), {});
    }
    Mat<Scalar> cur = x;
    for (std::size_t i = 0; i < arch_.stages.size(); ++i) {
      const Stage& s = arch_.stages[i];
      const Shape3 in = input_shape(i);
      const Shape3 out = shapes_[i];
      Mat<Scalar> next;
      switch (s.kind) {
        case StageKind::dense: {
          const auto& w = p.weights[param_index_[i]];
          next.noalias() = w * cur;
          next.colwise() += p.biases[param_index_[i]];
          break;
        }
        case StageKind::conv2d: {
          Mat<Scalar> patches = im2col(s, in, out, cur);
          const auto& w = p.weights[param_index_[i]];
          const Eigen::Index positions = static_cast<Eigen::Index>(out.height) * out.width;
          Mat<Scalar> y;
          y.noalias() = patches * w.transpose();
          y.rowwise() += p.biases[param_index_[i]].transpose();
          next.resize(static_cast<Eigen::Index>(out.size()), batch);
          for (Eigen::Index b = 0; b < batch; ++b)
            for (Eigen::Index o = 0; o < out.channels; ++o)
              next.col(b).segment(o * positions, positions) = y.col(o).segment(b * positions, positions);
          if (cache) cache->patches[i] = std::move(patches);
          break;
        }
        case StageKind::relu:
          next = cur.cwiseMax(Scalar(0));
          break;
        case StageKind::maxpool2d: {
          std::vector<std::int32_t> arg;
          next = maxpool(s, in, out, cur, cache ? &arg : nullptr);
          if (cache) cache->argmax[i] = std::move(arg);
          break;
        }
        case StageKind::flatten:
        case StageKind::softmax_logits:
          next = cur;
          break;
      }
      if (cache) cache->inputs[i] = std::move(cur);
      cur = std::move(next);
    }
    return cur;
  }

  /// Mean softmax cross-entropy over the batch (accumulated in double);
  /// fills `grad` with its gradient. Non-finite losses are returned as-is.
  double loss_and_grad(const Params<Scalar>& p, const Mat<Scalar>& x, std::span<const int> labels,
                       Params<Scalar>& grad) const {
    Cache cache;
    Mat<Scalar> logits = forward(p, x, &cache);
    const Eigen::Index batch = logits.cols();
    if (static_cast<std::size_t>(batch) != labels.size())
      throw ShapeMismatch("label count does not match the batch");

    double loss = 0.0;
    Mat<Scalar> delta(logits.rows(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Scalar m = logits.col(b).maxCoeff();
      double sum = 0.0;
      for (Eigen::Index c = 0; c < logits.rows(); ++c) sum += std::exp(double(logits(c, b) - m));
      const double lse = double(m) + std::log(sum);
      loss += lse - double(logits(labels[b], b));
      for (Eigen::Index c = 0; c < logits.rows(); ++c)
        delta(c, b) = static_cast<Scalar>(std::exp(double(logits(c, b)) - lse) / double(batch));
      delta(labels[b], b) -= static_cast<Scalar>(1.0 / double(batch));
    }
    backward(p, cache, std::move(delta), grad);
    return loss / double(batch);
  }

  /// Backpropagates d(loss)/d(logits) through the cached forward pass.
  void backward(const Params<Scalar>& p, const Cache& cache, Mat<Scalar> delta,
                Params<Scalar>& grad) const {
    if (grad.weights.size() != p.weights.size()) grad = Params<Scalar>::zeros(arch_);
    for (std::size_t i = arch_.stages.size(); i-- > 0;) {
      const Stage& s = arch_.stages[i];
      const Shape3 in = input_shape(i);
      const Shape3 out = shapes_[i];
      const Mat<Scalar>& x = cache.inputs[i];
      const bool need_input_grad = i > 0;
      switch (s.kind) {
        case StageKind::dense: {
          const int w = param_index_[i];
          grad.weights[w].noalias() = delta * x.transpose();
          grad.biases[w] = delta.rowwise().sum();
          if (need_input_grad) {
            Mat<Scalar> dx;
            dx.noalias() = p.weights[w].transpose() * delta;
            delta = std::move(dx);
          }
          break;
        }
        case StageKind::conv2d: {
          const int w = param_index_[i];
          const Eigen::Index batch = delta.cols();
          const Eigen::Index positions = static_cast<Eigen::Index>(out.height) * out.width;
          Mat<Scalar> dy(batch * positions, out.channels);
          for (Eigen::Index b = 0; b < batch; ++b)
            for (Eigen::Index o = 0; o < out.channels; ++o)
              dy.col(o).segment(b * positions, positions) = delta.col(b).segment(o * positions, positions);
          const Mat<Scalar>& patches = cache.patches[i];
          grad.weights[w].noalias() = dy.transpose() * patches;
          grad.biases[w] = dy.colwise().sum().transpose();
          if (need_input_grad) {
            Mat<Scalar> dpatch;
            dpatch.noalias() = dy * p.weights[w];
            delta = col2im(s, in, out, dpatch, batch);
          }
          break;
        }
        case StageKind::relu:
          delta = (x.array() > Scalar(0)).select(delta, Scalar(0));
          break;
        case StageKind::maxpool2d: {
          Mat<Scalar> dx = Mat<Scalar>::Zero(static_cast<Eigen::Index>(in.size()), delta.cols());
          const auto& arg = cache.argmax[i];
          const Eigen::Index rows = delta.rows();
          for (Eigen::Index b = 0; b < delta.cols(); ++b)
            for (Eigen::Index r = 0; r < rows; ++r) dx(arg[b * rows + r], b) += delta(r, b);
          delta = std::move(dx);
          break;
        }
        case StageKind::flatten:
        case StageKind::softmax_logits:
          break;
      }
    }
  }

private:
  static Mat<Scalar> im2col(const Stage& s, const Shape3& in, const Shape3& out, const Mat<Scalar>& x) {
    const Eigen::Index batch = x.cols();
    const Eigen::Index positions = static_cast<Eigen::Index>(out.height) * out.width;
    const Eigen::Index taps = static_cast<Eigen::Index>(s.kernel_h) * s.kernel_w;
    Mat<Scalar> patches(batch * positions, static_cast<Eigen::Index>(in.channels) * taps);
    for (int c = 0; c < in.channels; ++c)
      for (int ki = 0; ki < s.kernel_h; ++ki)
        for (int kj = 0; kj < s.kernel_w; ++kj) {
          Scalar* col = patches.col(c * taps + ki * s.kernel_w + kj).data();
          for (Eigen::Index b = 0; b < batch; ++b) {
            const Scalar* src = x.col(b).data() + static_cast<Eigen::Index>(c) * in.height * in.width;
            for (int oy = 0; oy < out.height; ++oy) {
              const int iy = oy * s.stride + ki - s.padding;
              for (int ox = 0; ox < out.width; ++ox) {
                const int ix = ox * s.stride + kj - s.padding;
                const bool inside = iy >= 0 && iy < in.height && ix >= 0 && ix < in.width;
                *col++ = inside ? src[iy * in.width + ix] : Scalar(0);
              }
            }
          }
        }
    return patches;
  }

  static Mat<Scalar> col2im(const Stage& s, const Shape3& in, const Shape3& out,
                            const Mat<Scalar>& dpatch, Eigen::Index batch) {
    const Eigen::Index taps = static_cast<Eigen::Index>(s.kernel_h) * s.kernel_w;
    Mat<Scalar> dx = Mat<Scalar>::Zero(static_cast<Eigen::Index>(in.size()), batch);
    for (int c = 0; c < in.channels; ++c)
      for (int ki = 0; ki < s.kernel_h; ++ki)
        for (int kj = 0; kj < s.kernel_w; ++kj) {
          const Scalar* col = dpatch.col(c * taps + ki * s.kernel_w + kj).data();
          for (Eigen::Index b = 0; b < batch; ++b) {
            Scalar* dst = dx.col(b).data() + static_cast<Eigen::Index>(c) * in.height * in.width;
            for (int oy = 0; oy < out.height; ++oy) {
              const int iy = oy * s.stride + ki - s.padding;
              for (int ox = 0; ox < out.width; ++ox) {
                const int ix = ox * s.stride + kj - s.padding;
                const Scalar v = *col++;
                if (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width) dst[iy * in.width + ix] += v;
              }
            }
          }
        }
    return dx;
  }

  static Mat<Scalar> maxpool(const Stage& s, const Shape3& in, const Shape3& out, const Mat<Scalar>& x,
                             std::vector<std::int32_t>* arg) {
    const Eigen::Index batch = x.cols();
    Mat<Scalar> y(static_cast<Eigen::Index>(out.size()), batch);
    if (arg) arg->resize(static_cast<std::size_t>(y.size()));
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Scalar* src = x.col(b).data();
      Scalar* dst = y.col(b).data();
      std::int32_t* a = arg ? arg->data() + b * y.rows() : nullptr;
      for (int c = 0; c < out.channels; ++c)
        for (int oy = 0; oy < out.height; ++oy)
          for (int ox = 0; ox < out.width; ++ox) {
            Scalar best = -std::numeric_limits<Scalar>::infinity();
            std::int32_t where = 0;
            for (int ki = 0; ki < s.window; ++ki)
              for (int kj = 0; kj < s.window; ++kj) {
                const std::int32_t idx =
                    (c * in.height + oy * s.stride + ki) * in.width + ox * s.stride + kj;
                if (src[idx] > best) {
                  best = src[idx];
                  where = idx;
                }
              }
            *dst++ = best;
            if (a) *a++ = where;
          }
    }
    return y;
  }

  ArchSpec arch_;
  std::vector<Shape3> shapes_;
  std::vector<int> param_index_;
};

/// Index of the largest logit per column; ties go to the smallest class.
template <typename Derived>
std::vector<int> argmax_columns(const Eigen::MatrixBase<Derived>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.rows(); ++c)
      if (logits(c, b) > logits(best, b)) best = c;
    out[static_cast<std::size_t>(b)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace occam
