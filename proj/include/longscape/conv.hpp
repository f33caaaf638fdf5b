#pragma once

#include <array>
#include <optional>

#include "longscape/ops.hpp"

namespace longscape {

using Pair = std::array<int64_t, 2>;

namespace detail {

struct ConvGeom {
  int64_t batch, in_ch, in_h, in_w;
  int64_t out_ch, kh, kw;
  int64_t sh, sw, ph, pw, dh, dw;
  int64_t out_h, out_w;

  int64_t col_rows() const { return in_ch * kh * kw; }
  int64_t col_cols() const { return out_h * out_w; }
};

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t s, int64_t p, int64_t d) {
  return (in + 2 * p - d * (k - 1) - 1) / s + 1;
}

inline ConvGeom make_conv_geom(const Shape& x, int64_t out_ch, int64_t kh, int64_t kw, Pair stride,
                               Pair pad, Pair dil, const char* who) {
  ConvGeom g{};
  g.batch = x[0];
  g.in_ch = x[1];
  g.in_h = x[2];
  g.in_w = x[3];
  g.out_ch = out_ch;
  g.kh = kh;
  g.kw = kw;
  g.sh = stride[0];
  g.sw = stride[1];
  g.ph = pad[0];
  g.pw = pad[1];
  g.dh = dil[0];
  g.dw = dil[1];
  check(g.sh >= 1 && g.sw >= 1 && g.dh >= 1 && g.dw >= 1 && g.ph >= 0 && g.pw >= 0,
        who, ": invalid stride/padding/dilation");
  g.out_h = conv_out_extent(g.in_h, kh, g.sh, g.ph, g.dh);
  g.out_w = conv_out_extent(g.in_w, kw, g.sw, g.pw, g.dw);
  check(g.out_h >= 1 && g.out_w >= 1, who, ": zero-sized output for input ", g.in_h, "x", g.in_w,
        ", kernel ", kh, "x", kw, ", stride ", g.sh, "x", g.sw, ", pad ", g.ph, "x", g.pw,
        ", dilation ", g.dh, "x", g.dw);
  return g;
}

// col[(ic*kh + r)*kw + s][oh*out_w + ow] = x[ic][ih][iw] (0 outside).
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int64_t ohw = g.out_h * g.out_w;
  for (int64_t ic = 0; ic < g.in_ch; ++ic) {
    const T* xc = x + ic * g.in_h * g.in_w;
    for (int64_t r = 0; r < g.kh; ++r) {
      for (int64_t s = 0; s < g.kw; ++s) {
        T* crow = col + ((ic * g.kh + r) * g.kw + s) * ohw;
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh * g.sh + r * g.dh - g.ph;
          T* cr = crow + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            for (int64_t ow = 0; ow < g.out_w; ++ow) cr[ow] = T(0);
            continue;
          }
          const T* xr = xc + ih * g.in_w;
          for (int64_t ow = 0; ow < g.out_w; ++ow) {
            const int64_t iw = ow * g.sw + s * g.dw - g.pw;
            cr[ow] = (iw >= 0 && iw < g.in_w) ? xr[iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back onto the (zero-initialized) input plane.
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const int64_t ohw = g.out_h * g.out_w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kernel_threads()) if (g.in_ch > 1)
#endif
  for (int64_t ic = 0; ic < g.in_ch; ++ic) {
    T* xc = x + ic * g.in_h * g.in_w;
    for (int64_t r = 0; r < g.kh; ++r) {
      for (int64_t s = 0; s < g.kw; ++s) {
        const T* crow = col + ((ic * g.kh + r) * g.kw + s) * ohw;
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh * g.sh + r * g.dh - g.ph;
          if (ih < 0 || ih >= g.in_h) continue;
          T* xr = xc + ih * g.in_w;
          const T* cr = crow + oh * g.out_w;
          for (int64_t ow = 0; ow < g.out_w; ++ow) {
            const int64_t iw = ow * g.sw + s * g.dw - g.pw;
            if (iw >= 0 && iw < g.in_w) xr[iw] += cr[ow];
          }
        }
      }
    }
  }
}

// out[b] = Wmat(O x IKK) * col_b
template <typename T>
void conv_forward_kernel(const T* x, const T* w, T* out, const ConvGeom& g) {
  const int64_t rows = g.col_rows(), cols = g.col_cols();
  std::vector<T> col(static_cast<size_t>(rows * cols));
  for (int64_t b = 0; b < g.batch; ++b) {
    im2col(x + b * g.in_ch * g.in_h * g.in_w, g, col.data());
    mm_nn(w, col.data(), out + b * g.out_ch * cols, g.out_ch, rows, cols);
  }
}

// dx[b] = col2im(Wmat^T * gy_b)
template <typename T>
void conv_grad_input_kernel(const T* gy, const T* w, T* dx, const ConvGeom& g) {
  const int64_t rows = g.col_rows(), cols = g.col_cols();
  std::vector<T> col(static_cast<size_t>(rows * cols));
  for (int64_t b = 0; b < g.batch; ++b) {
    std::fill(col.begin(), col.end(), T(0));
    mm_tn(w, gy + b * g.out_ch * cols, col.data(), rows, g.out_ch, cols);
    col2im(col.data(), g, dx + b * g.in_ch * g.in_h * g.in_w);
  }
}

template <typename T>
void transpose_blocked(const T* in, T* out, int64_t rows, int64_t cols) {
  constexpr int64_t kb = 32;
  for (int64_t r0 = 0; r0 < rows; r0 += kb)
    for (int64_t c0 = 0; c0 < cols; c0 += kb) {
      const int64_t r1 = r0 + kb < rows ? r0 + kb : rows;
      const int64_t c1 = c0 + kb < cols ? c0 + kb : cols;
      for (int64_t r = r0; r < r1; ++r)
        for (int64_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
    }
}

// dw += sum_b gy_b * col_b^T, with the column matrix transposed up front so
// the accumulation runs on the contiguous kernel.
template <typename T>
void conv_grad_weight_kernel(const T* x, const T* gy, T* dw, const ConvGeom& g) {
  const int64_t rows = g.col_rows(), cols = g.col_cols();
  std::vector<T> col(static_cast<size_t>(rows * cols));
  std::vector<T> col_t(static_cast<size_t>(rows * cols));
  for (int64_t b = 0; b < g.batch; ++b) {
    im2col(x + b * g.in_ch * g.in_h * g.in_w, g, col.data());
    transpose_blocked(col.data(), col_t.data(), rows, cols);
    mm_nn(gy + b * g.out_ch * cols, col_t.data(), dw, g.out_ch, cols, rows);
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv_transpose2d_raw(const Tensor<T>& x, const Tensor<T>& w, Pair stride, Pair pad,
                               Pair dil = {1, 1}, std::optional<Pair> out_hw = std::nullopt);
template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& input, const Tensor<T>& gout, Pair kernel,
                             Pair stride, Pair pad, Pair dil = {1, 1});

// Cross-correlation of BCHW input with OIKhKw weights.
template <typename T>
Tensor<T> conv2d_raw(const Tensor<T>& x, const Tensor<T>& w, Pair stride, Pair pad,
                     Pair dil = {1, 1}) {
  check(x.rank() == 4, "conv2d: BCHW input required, got ", shape_str(x.shape()));
  check(w.rank() == 4, "conv2d: OIKhKw weight required, got ", shape_str(w.shape()));
  check(x.dim(1) == w.dim(1), "conv2d: input has ", x.dim(1), " channels but weight expects ",
        w.dim(1));
  auto g = detail::make_conv_geom(x.shape(), w.dim(0), w.dim(2), w.dim(3), stride, pad, dil,
                                  "conv2d");
  Tensor<T> out({g.batch, g.out_ch, g.out_h, g.out_w}, T(0));
  detail::conv_forward_kernel(x.data(), w.data(), out.data(), g);
  return detail::OpBuilder<T>::finish(std::move(out), {&x, &w},
                                      [x, w, stride, pad, dil](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [x, w, stride, pad, dil](const Tensor<T>& gy, const std::vector<char>& needed) {
      std::vector<Tensor<T>> g(2);
      if (needed[0])
        g[0] = conv_transpose2d_raw(gy, w, stride, pad, dil, Pair{x.dim(2), x.dim(3)});
      if (needed[1])
        g[1] = conv2d_weight_grad(x, gy, Pair{w.dim(2), w.dim(3)}, stride, pad, dil);
      return g;
    };
  });
}

// Adjoint of conv2d. Weight layout is IOKhKw (input channels first); out_hw
// pins the output extent when the stride makes it ambiguous.
template <typename T>
Tensor<T> conv_transpose2d_raw(const Tensor<T>& x, const Tensor<T>& w, Pair stride, Pair pad,
                               Pair dil, std::optional<Pair> out_hw) {
  check(x.rank() == 4, "conv_transpose2d: BCHW input required, got ", shape_str(x.shape()));
  check(w.rank() == 4, "conv_transpose2d: IOKhKw weight required, got ", shape_str(w.shape()));
  check(x.dim(1) == w.dim(0), "conv_transpose2d: input has ", x.dim(1),
        " channels but weight expects ", w.dim(0));
  const int64_t kh = w.dim(2), kw = w.dim(3);
  const int64_t base_h = (x.dim(2) - 1) * stride[0] - 2 * pad[0] + dil[0] * (kh - 1) + 1;
  const int64_t base_w = (x.dim(3) - 1) * stride[1] - 2 * pad[1] + dil[1] * (kw - 1) + 1;
  int64_t oh = base_h, ow = base_w;
  if (out_hw) {
    oh = (*out_hw)[0];
    ow = (*out_hw)[1];
    check(oh >= base_h && oh < base_h + stride[0] && ow >= base_w && ow < base_w + stride[1],
          "conv_transpose2d: requested output ", oh, "x", ow, " incompatible with base ", base_h,
          "x", base_w);
  }
  check(oh >= 1 && ow >= 1, "conv_transpose2d: zero-sized output (", oh, "x", ow, ")");
  // View as the input-gradient of a conv mapping [out] -> [x].
  auto g = detail::make_conv_geom({x.dim(0), w.dim(1), oh, ow}, x.dim(1), kh, kw, stride, pad, dil,
                                  "conv_transpose2d");
  check(g.out_h == x.dim(2) && g.out_w == x.dim(3),
        "conv_transpose2d: geometry mismatch for input ", shape_str(x.shape()));
  Tensor<T> out({x.dim(0), w.dim(1), oh, ow}, T(0));
  detail::conv_grad_input_kernel(x.data(), w.data(), out.data(), g);
  return detail::OpBuilder<T>::finish(std::move(out), {&x, &w},
                                      [x, w, stride, pad, dil](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [x, w, stride, pad, dil](const Tensor<T>& gy, const std::vector<char>& needed) {
      std::vector<Tensor<T>> g(2);
      if (needed[0]) g[0] = conv2d_raw(gy, w, stride, pad, dil);
      if (needed[1])
        g[1] = conv2d_weight_grad(gy, x, Pair{w.dim(2), w.dim(3)}, stride, pad, dil);
      return g;
    };
  });
}

// d(conv2d)/d(weight) as a first-class op: correlation of `input` with `gout`,
// shaped (gout channels, input channels, kh, kw). Differentiable in both
// arguments, which is what makes nested conv differentiation close.
template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& input, const Tensor<T>& gout, Pair kernel,
                             Pair stride, Pair pad, Pair dil) {
  check(input.rank() == 4 && gout.rank() == 4, "conv2d_weight_grad: BCHW tensors required");
  check(input.dim(0) == gout.dim(0), "conv2d_weight_grad: batch mismatch");
  auto g = detail::make_conv_geom(input.shape(), gout.dim(1), kernel[0], kernel[1], stride, pad,
                                  dil, "conv2d_weight_grad");
  check(g.out_h == gout.dim(2) && g.out_w == gout.dim(3),
        "conv2d_weight_grad: gout spatial ", gout.dim(2), "x", gout.dim(3),
        " does not match conv output ", g.out_h, "x", g.out_w);
  Tensor<T> out({gout.dim(1), input.dim(1), kernel[0], kernel[1]}, T(0));
  detail::conv_grad_weight_kernel(input.data(), gout.data(), out.data(), g);
  return detail::OpBuilder<T>::finish(std::move(out), {&input, &gout},
                                      [input, gout, stride, pad, dil](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [input, gout, stride, pad, dil](const Tensor<T>& gy, const std::vector<char>& needed) {
      std::vector<Tensor<T>> g(2);
      if (needed[0])
        g[0] = conv_transpose2d_raw(gout, gy, stride, pad, dil,
                                    Pair{input.dim(2), input.dim(3)});
      if (needed[1]) g[1] = conv2d_raw(input, gy, stride, pad, dil);
      return g;
    };
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Pair stride,
                 Pair pad, Pair dil = {1, 1}) {
  Tensor<T> out = conv2d_raw(x, w, stride, pad, dil);
  if (!bias.defined()) return out;
  check(bias.rank() == 1 && bias.dim(0) == w.dim(0), "conv2d: bias must have shape [", w.dim(0),
        "]");
  return add(out, reshape(bias, {1, w.dim(0), 1, 1}));
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           Pair stride, Pair pad, Pair dil = {1, 1},
                           std::optional<Pair> out_hw = std::nullopt) {
  Tensor<T> out = conv_transpose2d_raw(x, w, stride, pad, dil, out_hw);
  if (!bias.defined()) return out;
  check(bias.rank() == 1 && bias.dim(0) == w.dim(1), "conv_transpose2d: bias must have shape [",
        w.dim(1), "]");
  return add(out, reshape(bias, {1, w.dim(1), 1, 1}));
}

}  // namespace longscape
