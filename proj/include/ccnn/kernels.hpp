#pragma once

// Raw numeric kernels and their exact backward counterparts. All functions
// are pure: they read their inputs and return fresh tensors.

#include <cstddef>
#include <string>
#include <vector>

#include "ccnn/tensor.hpp"

namespace ccnn {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 1;
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, ConvGeometry geo) {
  if (geo.stride == 0) fail(ErrorKind::Precondition, "convolution stride must be positive");
  if (in + 2 * geo.padding < kernel)
    fail(ErrorKind::Dimension, "convolution kernel larger than padded input");
  return (in + 2 * geo.padding - kernel) / geo.stride + 1;
}

namespace detail {

struct ConvDims {
  std::size_t n, in_c, h, w, out_c, kh, kw, oh, ow;
};

template <typename Scalar>
ConvDims check_conv(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, ConvGeometry geo) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (input.dim(1) != weight.dim(1))
    fail(ErrorKind::Dimension, "conv2d: input " + input.shape().str() + " has " +
                                   std::to_string(input.dim(1)) + " channels, weight " +
                                   weight.shape().str() + " expects " + std::to_string(weight.dim(1)));
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
             weight.dim(3), 0, 0};
  d.oh = conv_output_extent(d.h, d.kh, geo);
  d.ow = conv_output_extent(d.w, d.kw, geo);
  return d;
}

template <typename Scalar>
void check_bias(const Tensor<Scalar>& bias, std::size_t out_c) {
  if (bias.rank() != 1 || bias.dim(0) != out_c)
    fail(ErrorKind::Dimension, "conv2d bias " + bias.shape().str() + " does not match " +
                                   std::to_string(out_c) + " output channels");
}

/// Unfolds one sample [C,H,W] into columns [C*kh*kw, oh*ow].
template <typename Scalar>
void im2col(const Scalar* image, const ConvDims& d, ConvGeometry geo, Scalar* cols) {
  const std::size_t spatial = d.oh * d.ow;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    const Scalar* plane = image + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        Scalar* row = cols + ((c * d.kh + ky) * d.kw + kx) * spatial;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * geo.stride + ky) - std::ptrdiff_t(geo.padding);
          Scalar* dst = row + oy * d.ow;
          if (iy < 0 || iy >= std::ptrdiff_t(d.h)) {
            std::fill(dst, dst + d.ow, Scalar(0));
            continue;
          }
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * geo.stride + kx) - std::ptrdiff_t(geo.padding);
            dst[ox] = (ix < 0 || ix >= std::ptrdiff_t(d.w)) ? Scalar(0) : plane[iy * std::ptrdiff_t(d.w) + ix];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back onto [C,H,W], accumulating.
template <typename Scalar>
void col2im(const Scalar* cols, const ConvDims& d, ConvGeometry geo, Scalar* image) {
  const std::size_t spatial = d.oh * d.ow;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    Scalar* plane = image + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        const Scalar* row = cols + ((c * d.kh + ky) * d.kw + kx) * spatial;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * geo.stride + ky) - std::ptrdiff_t(geo.padding);
          if (iy < 0 || iy >= std::ptrdiff_t(d.h)) continue;
          const Scalar* src = row + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * geo.stride + kx) - std::ptrdiff_t(geo.padding);
            if (ix >= 0 && ix < std::ptrdiff_t(d.w)) plane[iy * std::ptrdiff_t(d.w) + ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding, computed as im2col + GEMM.
/// input [N,I,H,W], weight [O,I,kh,kw], bias [O] -> [N,O,H',W'].
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                              const Tensor<Scalar>& bias, ConvGeometry geo = {}) {
  const auto d = detail::check_conv(input, weight, geo);
  detail::check_bias(bias, d.out_c);
  const std::size_t patch = d.in_c * d.kh * d.kw;
  const std::size_t spatial = d.oh * d.ow;

  Tensor<Scalar> out(Shape{d.n, d.out_c, d.oh, d.ow});
  Tensor<Scalar> cols(Shape{patch, spatial});
  const auto w = weight.matrix(d.out_c, patch);
  const auto b = bias.vector();
  for (std::size_t n = 0; n < d.n; ++n) {
    detail::im2col(input.data() + n * d.in_c * d.h * d.w, d, geo, cols.data());
    typename Tensor<Scalar>::MatrixMap o(out.data() + n * d.out_c * spatial, Eigen::Index(d.out_c),
                                         Eigen::Index(spatial));
    o.noalias() = w * cols.matrix();
    o.colwise() += b;
  }
  require_finite(out, "conv2d_forward");
  return out;
}

/// Straight seven-loop convolution. Slow; kept as the reference the GEMM
/// path is tested against.
template <typename Scalar>
Tensor<Scalar> conv2d_forward_direct(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                     const Tensor<Scalar>& bias, ConvGeometry geo = {}) {
  const auto d = detail::check_conv(input, weight, geo);
  detail::check_bias(bias, d.out_c);
  Tensor<Scalar> out(Shape{d.n, d.out_c, d.oh, d.ow});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.out_c; ++o)
      for (std::size_t oy = 0; oy < d.oh; ++oy)
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          Scalar acc = bias[o];
          for (std::size_t i = 0; i < d.in_c; ++i)
            for (std::size_t ky = 0; ky < d.kh; ++ky)
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * geo.stride + ky) - std::ptrdiff_t(geo.padding);
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * geo.stride + kx) - std::ptrdiff_t(geo.padding);
                if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(d.h) || ix >= std::ptrdiff_t(d.w)) continue;
                acc += input.at(n, i, std::size_t(iy), std::size_t(ix)) * weight.at(o, i, ky, kx);
              }
          out.at(n, o, oy, ox) = acc;
        }
  require_finite(out, "conv2d_forward_direct");
  return out;
}

template <typename Scalar>
struct Conv2dGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                    const Tensor<Scalar>& grad_output, ConvGeometry geo = {}) {
  const auto d = detail::check_conv(input, weight, geo);
  if (grad_output.shape() != Shape{d.n, d.out_c, d.oh, d.ow})
    fail(ErrorKind::Dimension, "conv2d_backward: grad_output " + grad_output.shape().str() +
                                   " does not match forward output");
  const std::size_t patch = d.in_c * d.kh * d.kw;
  const std::size_t spatial = d.oh * d.ow;

  Conv2dGrads<Scalar> g{Tensor<Scalar>(input.shape()), Tensor<Scalar>(weight.shape()),
                        Tensor<Scalar>(Shape{d.out_c})};
  Tensor<Scalar> cols(Shape{patch, spatial});
  const auto w = weight.matrix(d.out_c, patch);
  auto gw = g.weight.matrix(d.out_c, patch);
  auto gb = g.bias.vector();
  for (std::size_t n = 0; n < d.n; ++n) {
    typename Tensor<Scalar>::ConstMatrixMap go(grad_output.data() + n * d.out_c * spatial,
                                               Eigen::Index(d.out_c), Eigen::Index(spatial));
    detail::im2col(input.data() + n * d.in_c * d.h * d.w, d, geo, cols.data());
    gw.noalias() += go * cols.matrix().transpose();
    gb += go.rowwise().sum();
    cols.matrix().noalias() = w.transpose() * go;
    detail::col2im(cols.data(), d, geo, g.input.data() + n * d.in_c * d.h * d.w);
  }
  return g;
}

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward_direct(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                           const Tensor<Scalar>& grad_output, ConvGeometry geo = {}) {
  const auto d = detail::check_conv(input, weight, geo);
  if (grad_output.shape() != Shape{d.n, d.out_c, d.oh, d.ow})
    fail(ErrorKind::Dimension, "conv2d_backward_direct: grad_output shape mismatch");
  Conv2dGrads<Scalar> g{Tensor<Scalar>(input.shape()), Tensor<Scalar>(weight.shape()),
                        Tensor<Scalar>(Shape{d.out_c})};
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.out_c; ++o)
      for (std::size_t oy = 0; oy < d.oh; ++oy)
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          const Scalar go = grad_output.at(n, o, oy, ox);
          g.bias[o] += go;
          for (std::size_t i = 0; i < d.in_c; ++i)
            for (std::size_t ky = 0; ky < d.kh; ++ky)
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * geo.stride + ky) - std::ptrdiff_t(geo.padding);
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * geo.stride + kx) - std::ptrdiff_t(geo.padding);
                if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(d.h) || ix >= std::ptrdiff_t(d.w)) continue;
                g.weight.at(o, i, ky, kx) += go * input.at(n, i, std::size_t(iy), std::size_t(ix));
                g.input.at(n, i, std::size_t(iy), std::size_t(ix)) += go * weight.at(o, i, ky, kx);
              }
        }
  return g;
}

template <typename Scalar>
struct MaxPoolResult {
  Tensor<Scalar> output;
  /// Flat input offset of the winning element, one per output element.
  std::vector<std::size_t> argmax;
};

/// 2x2 max pooling, stride 2. Ties go to the first element in row-major order.
template <typename Scalar>
MaxPoolResult<Scalar> maxpool2d_forward(const Tensor<Scalar>& input) {
  require_rank(input.shape(), 4, "maxpool2d input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2)
    fail(ErrorKind::Precondition, "maxpool2d needs even spatial dims, got " + input.shape().str());
  const std::size_t oh = h / 2, ow = w / 2;
  MaxPoolResult<Scalar> r{Tensor<Scalar>(Shape{n, c, oh, ow}), {}};
  r.argmax.resize(r.output.size());
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++k) {
        std::size_t best = base + 2 * oy * w + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t idx : cand)
          if (input[idx] > input[best]) best = idx;
        r.output[k] = input[best];
        r.argmax[k] = best;
      }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const std::vector<std::size_t>& argmax, const Tensor<Scalar>& grad_output,
                                  const Shape& input_shape) {
  if (argmax.size() != grad_output.size())
    fail(ErrorKind::Internal, "maxpool2d_backward: index count does not match grad_output");
  Tensor<Scalar> grad_input(input_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) {
    if (argmax[k] >= grad_input.size())
      fail(ErrorKind::Internal, "maxpool2d_backward: argmax index outside input");
    grad_input[argmax[k]] += grad_output[k];
  }
  return grad_input;
}

/// [N,C,H,W] -> [N,C], mean over each spatial plane.
template <typename Scalar>
Tensor<Scalar> global_avg_pool_forward(const Tensor<Scalar>& input) {
  require_rank(input.shape(), 4, "global_avg_pool input");
  const std::size_t planes = input.dim(0) * input.dim(1), area = input.dim(2) * input.dim(3);
  Tensor<Scalar> out(Shape{input.dim(0), input.dim(1)});
  out.vector() = input.matrix(planes, area).rowwise().mean();
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Tensor<Scalar>& grad_output, const Shape& input_shape) {
  require_rank(input_shape, 4, "global_avg_pool input");
  if (grad_output.shape() != Shape{input_shape[0], input_shape[1]})
    fail(ErrorKind::Dimension, "global_avg_pool_backward: grad_output shape mismatch");
  const std::size_t planes = input_shape[0] * input_shape[1], area = input_shape[2] * input_shape[3];
  Tensor<Scalar> grad_input(input_shape);
  grad_input.matrix(planes, area).colwise() = grad_output.vector() / Scalar(area);
  return grad_input;
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    fail(ErrorKind::Dimension, "matmul: " + a.shape().str() + " x " + b.shape().str());
  Tensor<Scalar> c(Shape{a.dim(0), b.dim(1)});
  c.matrix().noalias() = a.matrix() * b.matrix();
  return c;
}

template <typename Scalar>
struct MatmulGrads {
  Tensor<Scalar> a;
  Tensor<Scalar> b;
};

template <typename Scalar>
MatmulGrads<Scalar> matmul_backward(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                    const Tensor<Scalar>& grad_c) {
  if (grad_c.shape() != Shape{a.dim(0), b.dim(1)})
    fail(ErrorKind::Dimension, "matmul_backward: grad shape " + grad_c.shape().str());
  MatmulGrads<Scalar> g{Tensor<Scalar>(a.shape()), Tensor<Scalar>(b.shape())};
  g.a.matrix().noalias() = grad_c.matrix() * b.matrix().transpose();
  g.b.matrix().noalias() = a.matrix().transpose() * grad_c.matrix();
  return g;
}

}  // namespace ccnn
