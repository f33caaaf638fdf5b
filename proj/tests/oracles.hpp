#pragma once

// Test-only reference implementations. Everything here is written directly
// from the mathematical definitions with plain nested loops and stays
// independent of the library's kernel / tape machinery.

#include <cmath>
#include <cstdint>
#include <vector>

#include "longscape/tensor.hpp"

namespace oracle {

using longscape::Shape;
using longscape::Tensor;

// Plain cross-correlation, BCHW x OIKhKw.
inline Tensor<double> conv2d_ref(const Tensor<double>& x, const Tensor<double>& w,
                                 const Tensor<double>* bias, int64_t sh, int64_t sw, int64_t ph,
                                 int64_t pw, int64_t dh, int64_t dw) {
  const int64_t B = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t oh = (H + 2 * ph - dh * (kh - 1) - 1) / sh + 1;
  const int64_t ow = (W + 2 * pw - dw * (kw - 1) - 1) / sw + 1;
  Tensor<double> out({B, O, oh, ow}, 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t z = 0; z < ow; ++z) {
          double acc = bias ? bias->data()[o] : 0.0;
          for (int64_t i = 0; i < I; ++i)
            for (int64_t r = 0; r < kh; ++r)
              for (int64_t s = 0; s < kw; ++s) {
                const int64_t ih = y * sh + r * dh - ph;
                const int64_t iw = z * sw + s * dw - pw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x.data()[((b * I + i) * H + ih) * W + iw] *
                       w.data()[((o * I + i) * kh + r) * kw + s];
              }
          out.data()[((b * O + o) * oh + y) * ow + z] = acc;
        }
  return out;
}

// Transposed convolution by direct scatter, BCHW x IOKhKw.
inline Tensor<double> conv_transpose2d_ref(const Tensor<double>& x, const Tensor<double>& w,
                                           const Tensor<double>* bias, int64_t sh, int64_t sw,
                                           int64_t ph, int64_t pw, int64_t dh = 1, int64_t dw = 1) {
  const int64_t B = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int64_t oh = (H - 1) * sh - 2 * ph + dh * (kh - 1) + 1;
  const int64_t ow = (W - 1) * sw - 2 * pw + dw * (kw - 1) + 1;
  Tensor<double> out({B, O, oh, ow}, 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < I; ++i)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t z = 0; z < W; ++z) {
          const double v = x.data()[((b * I + i) * H + y) * W + z];
          for (int64_t o = 0; o < O; ++o)
            for (int64_t r = 0; r < kh; ++r)
              for (int64_t s = 0; s < kw; ++s) {
                const int64_t out_y = y * sh + r * dh - ph;
                const int64_t out_z = z * sw + s * dw - pw;
                if (out_y < 0 || out_y >= oh || out_z < 0 || out_z >= ow) continue;
                out.data()[((b * O + o) * oh + out_y) * ow + out_z] +=
                    v * w.data()[((i * O + o) * kh + r) * kw + s];
              }
        }
  if (bias)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < O; ++o)
        for (int64_t p = 0; p < oh * ow; ++p)
          out.data()[(b * O + o) * oh * ow + p] += bias->data()[o];
  return out;
}

// Weighted mean squared error with an explicit triple loop; mask is per-column.
inline double masked_l2_ref(const Tensor<double>& x, const Tensor<double>& y,
                            const std::vector<double>& col_weights) {
  double acc = 0.0;
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          const double d = x.data()[((b * C + c) * H + h) * W + w] -
                           y.data()[((b * C + c) * H + h) * W + w];
          acc += col_weights[static_cast<size_t>(w)] * d * d;
        }
  return acc / static_cast<double>(B * C * H * W);
}

inline double max_abs(const Tensor<double>& t) {
  double m = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t.data()[i]));
  return m;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace oracle
