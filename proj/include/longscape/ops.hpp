#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "longscape/matmul.hpp"
#include "longscape/tensor.hpp"

namespace longscape {

namespace detail {

inline Shape broadcast_result_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    check(da == db || da == 1 || db == 1, "shapes ", shape_str(a), " and ", shape_str(b),
          " are not broadcast-compatible");
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides in the result space, 0 on broadcast axes.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  size_t r = out.size();
  std::vector<int64_t> strides(r, 0);
  int64_t acc = 1;
  for (size_t i = in.size(); i-- > 0;) {
    size_t oi = i + (r - in.size());
    strides[oi] = (in[i] == 1 && out[oi] != 1) ? 0 : acc;
    acc *= in[i];
  }
  return strides;
}

template <typename T, typename F>
void binary_map(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, F f) {
  const int64_t n = out.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return;
  }
  const Shape& os = out.shape();
  const size_t r = os.size();
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);

  // Grow the largest trailing run over which each operand either advances
  // contiguously or stays pinned; the inner loop then needs no bookkeeping.
  int64_t inner = 1;
  size_t dims = r;
  bool a_fix = true, a_adv = true, b_fix = true, b_adv = true;
  while (dims > 0) {
    const size_t d = dims - 1;
    const bool unit = os[d] == 1;
    const bool na_fix = a_fix && (unit || sa[d] == 0);
    const bool na_adv = a_adv && (unit || sa[d] == inner);
    const bool nb_fix = b_fix && (unit || sb[d] == 0);
    const bool nb_adv = b_adv && (unit || sb[d] == inner);
    if (!((na_fix || na_adv) && (nb_fix || nb_adv))) break;
    a_fix = na_fix;
    a_adv = na_adv;
    b_fix = nb_fix;
    b_adv = nb_adv;
    inner *= os[d];
    --dims;
  }

  const int64_t outer = n / inner;
  const bool a_moves = !a_fix;
  const bool b_moves = !b_fix;
  std::vector<int64_t> idx(dims, 0);
  int64_t offa = 0, offb = 0;
  for (int64_t o = 0; o < outer; ++o) {
    T* dst = po + o * inner;
    const T* ra = pa + offa;
    const T* rb = pb + offb;
    if (a_moves && b_moves) {
      for (int64_t i = 0; i < inner; ++i) dst[i] = f(ra[i], rb[i]);
    } else if (a_moves) {
      const T bv = rb[0];
      for (int64_t i = 0; i < inner; ++i) dst[i] = f(ra[i], bv);
    } else if (b_moves) {
      const T av = ra[0];
      for (int64_t i = 0; i < inner; ++i) dst[i] = f(av, rb[i]);
    } else {
      const T v = f(ra[0], rb[0]);
      for (int64_t i = 0; i < inner; ++i) dst[i] = v;
    }
    for (size_t d = dims; d-- > 0;) {
      ++idx[d];
      offa += sa[d];
      offb += sb[d];
      if (idx[d] < os[d]) break;
      offa -= sa[d] * os[d];
      offb -= sb[d] * os[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename F>
Tensor<T> unary_map(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = f(px[i]);
  return out;
}

}  // namespace detail

// ---- forward declarations -------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> sum_axes(const Tensor<T>& x, std::vector<int64_t> axes);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int64_t axis, int64_t start, int64_t len);
template <typename T>
Tensor<T> slice_pad(const Tensor<T>& x, int64_t axis, int64_t start, int64_t full_len);
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

// Reduces `gy` (a broadcast result) back to `target` shape by summing the
// broadcast axes.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& gy, const Shape& target) {
  if (gy.shape() == target) return gy;
  size_t r = gy.shape().size();
  Shape padded(r, 1);
  std::copy(target.begin(), target.end(), padded.begin() + (r - target.size()));
  std::vector<int64_t> axes;
  for (size_t i = 0; i < r; ++i)
    if (padded[i] == 1 && gy.shape()[i] != 1) axes.push_back(static_cast<int64_t>(i));
  Tensor<T> red = axes.empty() ? gy : sum_axes(gy, axes);
  return red.shape() == target ? red : reshape(red, target);
}

// ---- elementwise binary ----------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(detail::broadcast_result_shape(a.shape(), b.shape()));
  detail::binary_map(a, b, out, [](T x, T y) { return x + y; });
  return detail::OpBuilder<T>::finish(std::move(out), {&a, &b}, [a, b](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [a, b](const Tensor<T>& gy, const std::vector<char>& needed) {
      std::vector<Tensor<T>> g(2);
      if (needed[0]) g[0] = reduce_to_shape(gy, a.shape());
      if (needed[1]) g[1] = reduce_to_shape(gy, b.shape());
      return g;
    };
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(detail::broadcast_result_shape(a.shape(), b.shape()));
  detail::binary_map(a, b, out, [](T x, T y) { return x - y; });
  return detail::OpBuilder<T>::finish(std::move(out), {&a, &b}, [a, b](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [a, b](const Tensor<T>& gy, const std::vector<char>& needed) {
      std::vector<Tensor<T>> g(2);
      if (needed[0]) g[0] = reduce_to_shape(gy, a.shape());
      if (needed[1]) g[1] = reduce_to_shape(mul_scalar(gy, T(-1)), b.shape());
      return g;
    };
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(detail::broadcast_result_shape(a.shape(), b.shape()));
  detail::binary_map(a, b, out, [](T x, T y) { return x * y; });
  return detail::OpBuilder<T>::finish(std::move(out), {&a, &b}, [a, b](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [a, b](const Tensor<T>& gy, const std::vector<char>& needed) {
      std::vector<Tensor<T>> g(2);
      if (needed[0]) g[0] = reduce_to_shape(mul(gy, b), a.shape());
      if (needed[1]) g[1] = reduce_to_shape(mul(gy, a), b.shape());
      return g;
    };
  });
}

// ---- scalar ops -------------------------------------------------------------

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out = detail::unary_map(a, [s](T x) { return x + s; });
  return detail::OpBuilder<T>::finish(std::move(out), {&a}, [](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [](const Tensor<T>& gy, const std::vector<char>&) {
      return std::vector<Tensor<T>>{gy};
    };
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out = detail::unary_map(a, [s](T x) { return x * s; });
  return detail::OpBuilder<T>::finish(std::move(out), {&a}, [s](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [s](const Tensor<T>& gy, const std::vector<char>&) {
      return std::vector<Tensor<T>>{mul_scalar(gy, s)};
    };
  });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return mul(a, a);
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

// ---- activations ------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = detail::unary_map(x, [](T v) { return v > T(0) ? v : T(0); });
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [x](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [x](const Tensor<T>& gy, const std::vector<char>&) {
      Tensor<T> mask = detail::unary_map(x, [](T v) { return v > T(0) ? T(1) : T(0); });
      return std::vector<Tensor<T>>{mul(gy, mask)};
    };
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> out = detail::unary_map(x, [slope](T v) { return v > T(0) ? v : slope * v; });
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [x, slope](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [x, slope](const Tensor<T>& gy, const std::vector<char>&) {
      Tensor<T> mask = detail::unary_map(x, [slope](T v) { return v > T(0) ? T(1) : slope; });
      return std::vector<Tensor<T>>{mul(gy, mask)};
    };
  });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  Tensor<T> out = detail::unary_map(x, [](T v) { return std::tanh(v); });
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [](const Tensor<T>& y) ->
                                      typename Tape<T>::BackwardFn {
    return [y](const Tensor<T>& gy, const std::vector<char>&) {
      Tensor<T> d = detail::unary_map(y.detached(), [](T v) { return T(1) - v * v; });
      return std::vector<Tensor<T>>{mul(gy, d)};
    };
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = detail::unary_map(x, [](T v) {
    return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  });
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [](const Tensor<T>& y) ->
                                      typename Tape<T>::BackwardFn {
    return [y](const Tensor<T>& gy, const std::vector<char>&) {
      Tensor<T> d = detail::unary_map(y.detached(), [](T v) { return v * (T(1) - v); });
      return std::vector<Tensor<T>>{mul(gy, d)};
    };
  });
}

// d(sqrt)/dx uses the constant factor 0.5/y with a 0 -> 0 subgradient, so a
// zero input never poisons the backward pass with inf.
template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& x) {
  Tensor<T> out = detail::unary_map(x, [](T v) { return std::sqrt(v); });
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [](const Tensor<T>& y) ->
                                      typename Tape<T>::BackwardFn {
    return [y](const Tensor<T>& gy, const std::vector<char>&) {
      Tensor<T> d = detail::unary_map(y.detached(),
                                      [](T v) { return v == T(0) ? T(0) : T(0.5) / v; });
      return std::vector<Tensor<T>>{mul(gy, d)};
    };
  });
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  Tensor<T> out = detail::unary_map(x, [](T v) { return T(1) / v; });
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [](const Tensor<T>& y) ->
                                      typename Tape<T>::BackwardFn {
    return [y](const Tensor<T>& gy, const std::vector<char>&) {
      Tensor<T> d = detail::unary_map(y.detached(), [](T v) { return -v * v; });
      return std::vector<Tensor<T>>{mul(gy, d)};
    };
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, reciprocal(b));
}

// ---- reductions -------------------------------------------------------------

template <typename T>
Tensor<T> sum_axes(const Tensor<T>& x, std::vector<int64_t> axes) {
  check(!axes.empty(), "sum_axes: no axes given");
  Shape os = x.shape();
  for (int64_t a : axes) {
    check(a >= 0 && a < x.rank(), "sum_axes: axis ", a, " out of range for ", shape_str(x.shape()));
    os[static_cast<size_t>(a)] = 1;
  }
  Tensor<T> out(os, T(0));
  const Shape& xs = x.shape();
  const size_t r = xs.size();
  const T* px = x.data();
  T* po = out.data();

  // Reduced axes forming a trailing block collapse to outer sums.
  size_t first_kept_after = r;
  while (first_kept_after > 0 && os[first_kept_after - 1] == 1 && xs[first_kept_after - 1] != 1)
    --first_kept_after;
  bool suffix = true;
  for (size_t d = 0; d < first_kept_after; ++d) suffix = suffix && os[d] == xs[d];
  if (suffix) {
    int64_t inner = 1;
    for (size_t d = first_kept_after; d < r; ++d) inner *= xs[d];
    const int64_t outer = x.size() / inner;
    for (int64_t o = 0; o < outer; ++o) {
      T acc = T(0);
      const T* row = px + o * inner;
      for (int64_t i = 0; i < inner; ++i) acc += row[i];
      po[o] = acc;
    }
  } else if (r == 4 && os[0] == 1 && os[1] == xs[1] && os[2] == 1 && os[3] == 1) {
    // per-channel reduction of a BCHW tensor (conv bias gradients)
    const int64_t B = xs[0], C = xs[1], plane = xs[2] * xs[3];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        T acc = T(0);
        const T* row = px + (b * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += row[i];
        po[c] += acc;
      }
  } else {
    auto strides = detail::broadcast_strides(os, xs);
    std::vector<int64_t> idx(r, 0);
    int64_t off = 0;
    for (int64_t lin = 0; lin < x.size(); ++lin) {
      po[off] += px[lin];
      for (size_t d = r; d-- > 0;) {
        ++idx[d];
        off += strides[d];
        if (idx[d] < xs[d]) break;
        off -= strides[d] * xs[d];
        idx[d] = 0;
      }
    }
  }
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [x](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [x](const Tensor<T>& gy, const std::vector<char>&) {
      return std::vector<Tensor<T>>{add(zeros<T>(x.shape()), gy)};
    };
  });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out({1}, T(0));
  const T* px = x.data();
  T acc = T(0);
  for (int64_t i = 0; i < x.size(); ++i) acc += px[i];
  out.data()[0] = acc;
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [x](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [x](const Tensor<T>& gy, const std::vector<char>&) {
      return std::vector<Tensor<T>>{add(zeros<T>(x.shape()), gy)};
    };
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> mean_axes(const Tensor<T>& x, std::vector<int64_t> axes) {
  int64_t n = 1;
  for (int64_t a : axes) n *= x.dim(a);
  return mul_scalar(sum_axes(x, std::move(axes)), T(1) / static_cast<T>(n));
}

// ---- shape ops --------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  validate_shape(shape);
  check(shape_size(shape) == x.size(), "reshape: cannot view ", shape_str(x.shape()), " as ",
        shape_str(shape));
  Tensor<T> out(shape, x.values());
  Shape orig = x.shape();
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [orig](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [orig](const Tensor<T>& gy, const std::vector<char>&) {
      return std::vector<Tensor<T>>{reshape(gy, orig)};
    };
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int64_t axis, int64_t start, int64_t len) {
  check(axis >= 0 && axis < x.rank(), "slice: axis ", axis, " out of range");
  const int64_t extent = x.dim(axis);
  check(start >= 0 && len >= 1 && start + len <= extent, "slice: range [", start, ",", start + len,
        ") out of bounds for extent ", extent);
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = len;
  Tensor<T> out(os);
  int64_t inner = 1;
  for (int64_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  int64_t outer = x.size() / (extent * inner);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(po + o * len * inner, px + (o * extent + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(T));
  return detail::OpBuilder<T>::finish(std::move(out), {&x},
                                      [axis, start, extent](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [axis, start, extent](const Tensor<T>& gy, const std::vector<char>&) {
      return std::vector<Tensor<T>>{slice_pad(gy, axis, start, extent)};
    };
  });
}

// Embeds x into a zero tensor whose `axis` extent is full_len (inverse of slice).
template <typename T>
Tensor<T> slice_pad(const Tensor<T>& x, int64_t axis, int64_t start, int64_t full_len) {
  check(axis >= 0 && axis < x.rank(), "slice_pad: axis out of range");
  const int64_t len = x.dim(axis);
  check(start >= 0 && start + len <= full_len, "slice_pad: range out of bounds");
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = full_len;
  Tensor<T> out(os, T(0));
  int64_t inner = 1;
  for (int64_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  int64_t outer = x.size() / (len * inner);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(po + (o * full_len + start) * inner, px + o * len * inner,
                static_cast<size_t>(len * inner) * sizeof(T));
  return detail::OpBuilder<T>::finish(std::move(out), {&x},
                                      [axis, start, len](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [axis, start, len](const Tensor<T>& gy, const std::vector<char>&) {
      return std::vector<Tensor<T>>{slice(gy, axis, start, len)};
    };
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis) {
  check(!parts.empty(), "concat: no inputs");
  const Tensor<T>& first = parts[0];
  check(axis >= 0 && axis < first.rank(), "concat: axis out of range");
  int64_t total = 0;
  for (const auto& p : parts) {
    check(p.rank() == first.rank(), "concat: rank mismatch");
    for (int64_t d = 0; d < first.rank(); ++d)
      check(d == axis || p.dim(d) == first.dim(d), "concat: extent mismatch on axis ", d, ": ",
            shape_str(p.shape()), " vs ", shape_str(first.shape()));
    total += p.dim(axis);
  }
  Shape os = first.shape();
  os[static_cast<size_t>(axis)] = total;
  Tensor<T> out(os);
  int64_t inner = 1;
  for (int64_t d = axis + 1; d < first.rank(); ++d) inner *= first.dim(d);
  int64_t outer = out.size() / (total * inner);
  T* po = out.data();
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t len = p.dim(axis);
    const T* pp = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(po + (o * total + offset) * inner, pp + o * len * inner,
                  static_cast<size_t>(len * inner) * sizeof(T));
    offset += len;
  }
  Tape<T>* tape = nullptr;
  for (const auto& p : parts) {
    if (!p.tracked()) continue;
    if (!tape)
      tape = p.tape();
    else
      check(tape == p.tape(), "concat: operands on different tapes");
  }
  if (tape == nullptr || !tape->recording()) return out;
  std::vector<int64_t> lens;
  std::vector<int64_t> ids;
  for (const auto& p : parts) {
    lens.push_back(p.dim(axis));
    ids.push_back(p.tracked() ? p.node() : -1);
  }
  return detail::OpBuilder<T>::finish_dynamic(
      std::move(out), tape, std::move(ids),
      [axis, lens](const Tensor<T>&) -> typename Tape<T>::BackwardFn {
        return [axis, lens](const Tensor<T>& gy, const std::vector<char>& needed) {
          std::vector<Tensor<T>> g(lens.size());
          int64_t off = 0;
          for (size_t i = 0; i < lens.size(); ++i) {
            if (needed[i]) g[i] = slice(gy, axis, off, lens[i]);
            off += lens[i];
          }
          return g;
        };
      });
}

template <typename T>
Tensor<T> flip(const Tensor<T>& x, int64_t axis) {
  check(axis >= 0 && axis < x.rank(), "flip: axis out of range");
  const int64_t extent = x.dim(axis);
  Tensor<T> out(x.shape());
  int64_t inner = 1;
  for (int64_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  int64_t outer = x.size() / (extent * inner);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t e = 0; e < extent; ++e)
      std::memcpy(po + (o * extent + e) * inner, px + (o * extent + (extent - 1 - e)) * inner,
                  static_cast<size_t>(inner) * sizeof(T));
  return detail::OpBuilder<T>::finish(std::move(out), {&x}, [axis](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [axis](const Tensor<T>& gy, const std::vector<char>&) {
      return std::vector<Tensor<T>>{flip(gy, axis)};
    };
  });
}

// ---- matmul -----------------------------------------------------------------

namespace detail {
template <typename T>
void matmul_kernel(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool ta,
                   bool tb) {
  if (!ta && !tb)
    mm_nn(a, b, c, m, k, n);
  else if (!ta && tb)
    mm_nt(a, b, c, m, k, n);
  else if (ta && !tb)
    mm_tn(a, b, c, m, k, n);
  else
    mm_tt(a, b, c, m, k, n);
}
}  // namespace detail

// op(a) [m,k] * op(b) [k,n] for rank-2 tensors; op transposes when the flag is set.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required, got ",
        shape_str(a.shape()), " and ", shape_str(b.shape()));
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t k = trans_a ? a.dim(0) : a.dim(1);
  const int64_t k2 = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  check(k == k2, "matmul: inner extents differ: ", shape_str(a.shape()), (trans_a ? "^T" : ""),
        " * ", shape_str(b.shape()), (trans_b ? "^T" : ""));
  Tensor<T> out({m, n}, T(0));
  detail::matmul_kernel(a.data(), b.data(), out.data(), m, k, n, trans_a, trans_b);
  return detail::OpBuilder<T>::finish(std::move(out), {&a, &b},
                                      [a, b, trans_a, trans_b](const Tensor<T>&) ->
                                      typename Tape<T>::BackwardFn {
    return [a, b, trans_a, trans_b](const Tensor<T>& gy, const std::vector<char>& needed) {
      std::vector<Tensor<T>> g(2);
      if (needed[0])
        g[0] = trans_a ? matmul(b, gy, trans_b, true) : matmul(gy, b, false, !trans_b);
      if (needed[1])
        g[1] = trans_b ? matmul(gy, a, true, trans_a) : matmul(a, gy, !trans_a, false);
      return g;
    };
  });
}

// ---- composites -------------------------------------------------------------

// Per-sample, per-channel standardization over the spatial extent, then an
// affine scale/shift. gamma/beta have shape [C].
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                        T eps = T(1e-5)) {
  check(x.rank() == 4, "instance_norm: BCHW input required, got ", shape_str(x.shape()));
  const int64_t c = x.dim(1);
  check(gamma.rank() == 1 && gamma.dim(0) == c, "instance_norm: gamma must have shape [", c, "]");
  check(beta.rank() == 1 && beta.dim(0) == c, "instance_norm: beta must have shape [", c, "]");
  check(eps > T(0), "instance_norm: eps must be positive");
  auto mu = mean_axes(x, {2, 3});
  auto centered = sub(x, mu);
  auto var = mean_axes(square(centered), {2, 3});
  auto inv = reciprocal(sqrt_op(add_scalar(var, eps)));
  auto normalized = mul(centered, inv);
  auto g = reshape(gamma, {1, c, 1, 1});
  auto b = reshape(beta, {1, c, 1, 1});
  return add(mul(normalized, g), b);
}

// Per-sample L2 norm of d(sum fn(x))/dx, built with create_graph so the result
// stays differentiable with respect to anything fn closes over.
template <typename T, typename Fn>
Tensor<T> input_grad_norm(Tape<T>& tape, Fn&& fn, const Tensor<T>& x) {
  const int64_t batch = x.dim(0);
  Tensor<T> xt = tape.watch(x.detached());
  Tensor<T> score = fn(xt);
  check(score.size() == batch, "input_grad_norm: fn must map a batch to per-sample scalars, got ",
        shape_str(score.shape()), " for batch ", batch);
  Tensor<T> g = tape.gradient(sum_all(score), {xt}, /*create_graph=*/true)[0];
  std::vector<int64_t> axes;
  for (int64_t d = 1; d < g.rank(); ++d) axes.push_back(d);
  Tensor<T> sq = axes.empty() ? square(g) : sum_axes(square(g), axes);
  return reshape(sqrt_op(sq), {batch, 1});
}

// ---- operators --------------------------------------------------------------

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  Tensor<To> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = static_cast<To>(x.data()[i]);
  return out;
}

// ---- tape backward ----------------------------------------------------------

template <typename T>
std::vector<Tensor<T>> Tape<T>::gradient(const Tensor<T>& loss, const std::vector<Tensor<T>>& targets,
                                         bool create_graph) {
  check(loss.defined(), "gradient: undefined loss");
  check(loss.tracked() && loss.tape() == this, "gradient: loss is not recorded on this tape");
  check(loss.size() == 1, "gradient: loss must be scalar, got ", shape_str(loss.shape()));
  const int64_t last = loss.node();

  std::vector<char> need(static_cast<size_t>(last) + 1, 0);
  std::vector<char> is_target(static_cast<size_t>(last) + 1, 0);
  for (const auto& t : targets) {
    check(t.defined() && t.tracked() && t.tape() == this,
          "gradient: target is not recorded on this tape");
    if (t.node() <= last) {
      need[static_cast<size_t>(t.node())] = 1;
      is_target[static_cast<size_t>(t.node())] = 1;
    }
  }
  for (int64_t i = 0; i <= last; ++i) {
    if (need[static_cast<size_t>(i)]) continue;
    for (int64_t in : nodes_[static_cast<size_t>(i)].inputs) {
      if (in >= 0 && need[static_cast<size_t>(in)]) {
        need[static_cast<size_t>(i)] = 1;
        break;
      }
    }
  }

  std::vector<Tensor<T>> grads(static_cast<size_t>(last) + 1);
  grads[static_cast<size_t>(last)] = ones<T>({1});

  const bool saved = recording_;
  recording_ = create_graph;
  for (int64_t i = last; i >= 0; --i) {
    auto& slot = grads[static_cast<size_t>(i)];
    if (!slot.defined() || !need[static_cast<size_t>(i)]) continue;
    if (!nodes_[static_cast<size_t>(i)].backward) continue;  // leaf
    // With create_graph the rule records fresh nodes, which may reallocate
    // nodes_; work from copies.
    const std::vector<int64_t> inputs = nodes_[static_cast<size_t>(i)].inputs;
    std::vector<char> needed;
    needed.reserve(inputs.size());
    for (int64_t in : inputs) needed.push_back(in >= 0 && need[static_cast<size_t>(in)] ? 1 : 0);
    std::vector<Tensor<T>> gin = nodes_[static_cast<size_t>(i)].backward(slot, needed);
    check(gin.size() == inputs.size(), "backward rule returned wrong arity");
    for (size_t j = 0; j < gin.size(); ++j) {
      if (!needed[j] || !gin[j].defined()) continue;
      const auto in = static_cast<size_t>(inputs[j]);
      grads[in] = grads[in].defined() ? add(grads[in], gin[j]) : gin[j];
    }
    if (i != last && !is_target[static_cast<size_t>(i)]) slot = Tensor<T>();
  }
  recording_ = saved;

  std::vector<Tensor<T>> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    const auto n = static_cast<size_t>(t.node());
    if (t.node() <= last && grads[n].defined())
      out.push_back(grads[n]);
    else
      out.push_back(zeros<T>(t.shape()));
  }
  return out;
}

}  // namespace longscape
