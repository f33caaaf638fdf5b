#pragma once

#include <string>
#include <vector>

#include "longscape/conv.hpp"
#include "longscape/params.hpp"

namespace longscape {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kNormEps = 1e-5;

namespace init_detail {
// One deterministic stream per (seed, parameter name).
inline Rng stream(uint64_t seed, const std::string& name) {
  return Rng(mix_seed(seed, fnv1a64(name)));
}
}  // namespace init_detail

template <typename T>
struct Conv2dLayer {
  std::string name;
  int64_t in_ch = 0, out_ch = 0, kh = 1, kw = 1;
  Pair stride{1, 1};
  Pair pad{0, 0};
  Pair dil{1, 1};
  bool bias = true;

  void init(ParamStore<T>& s, uint64_t seed) const {
    auto& w = s.declare(name + ".w", {out_ch, in_ch, kh, kw});
    Rng rng = init_detail::stream(seed, name + ".w");
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_ch * kh * kw));
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(rng.normal() * std_dev);
    if (bias) s.declare(name + ".b", {out_ch});
  }

  Tensor<T> operator()(const TapedParams<T>& p, const Tensor<T>& x) const {
    return conv2d(x, p[name + ".w"], bias ? p[name + ".b"] : Tensor<T>(), stride, pad, dil);
  }
};

template <typename T>
struct ConvTranspose2dLayer {
  std::string name;
  int64_t in_ch = 0, out_ch = 0, kh = 4, kw = 4;
  Pair stride{2, 2};
  Pair pad{1, 1};
  bool bias = true;

  void init(ParamStore<T>& s, uint64_t seed) const {
    auto& w = s.declare(name + ".w", {in_ch, out_ch, kh, kw});
    Rng rng = init_detail::stream(seed, name + ".w");
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_ch * kh * kw));
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(rng.normal() * std_dev);
    if (bias) s.declare(name + ".b", {out_ch});
  }

  Tensor<T> operator()(const TapedParams<T>& p, const Tensor<T>& x) const {
    return conv_transpose2d(x, p[name + ".w"], bias ? p[name + ".b"] : Tensor<T>(), stride, pad);
  }
};

template <typename T>
struct InstanceNormLayer {
  std::string name;
  int64_t channels = 0;

  void init(ParamStore<T>& s, uint64_t) const {
    auto& g = s.declare(name + ".gamma", {channels});
    for (int64_t i = 0; i < g.size(); ++i) g.data()[i] = T(1);
    s.declare(name + ".beta", {channels});
  }

  Tensor<T> operator()(const TapedParams<T>& p, const Tensor<T>& x) const {
    return instance_norm(x, p[name + ".gamma"], p[name + ".beta"], T(kNormEps));
  }
};

template <typename T>
struct LinearLayer {
  std::string name;
  int64_t in_features = 0, out_features = 0;

  void init(ParamStore<T>& s, uint64_t seed) const {
    auto& w = s.declare(name + ".w", {out_features, in_features});
    Rng rng = init_detail::stream(seed, name + ".w");
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_features));
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(rng.normal() * std_dev);
    s.declare(name + ".b", {out_features});
  }

  Tensor<T> operator()(const TapedParams<T>& p, const Tensor<T>& x) const {
    return add(matmul(x, p[name + ".w"], false, true),
               reshape(p[name + ".b"], {1, out_features}));
  }
};

template <typename T>
struct LstmState {
  Tensor<T> hidden;
  Tensor<T> cell;
};

template <typename T>
LstmState<T> lstm_zero_state(int64_t batch, int64_t hidden) {
  return {zeros<T>({batch, hidden}), zeros<T>({batch, hidden})};
}

// Gate layout along the 4H axis: input, forget, candidate, output.
template <typename T>
struct LstmLayer {
  std::string name;
  int64_t input = 0, hidden = 0;

  void init(ParamStore<T>& s, uint64_t seed) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    auto& wx = s.declare(name + ".wx", {4 * hidden, input});
    Rng rx = init_detail::stream(seed, name + ".wx");
    for (int64_t i = 0; i < wx.size(); ++i) wx.data()[i] = static_cast<T>(rx.uniform(-bound, bound));
    auto& wh = s.declare(name + ".wh", {4 * hidden, hidden});
    Rng rh = init_detail::stream(seed, name + ".wh");
    for (int64_t i = 0; i < wh.size(); ++i) wh.data()[i] = static_cast<T>(rh.uniform(-bound, bound));
    auto& b = s.declare(name + ".b", {4 * hidden});
    for (int64_t i = hidden; i < 2 * hidden; ++i) b.data()[i] = T(1);  // forget gate
  }

  LstmState<T> step(const TapedParams<T>& p, const Tensor<T>& x, const LstmState<T>& st) const {
    check(x.rank() == 2 && x.dim(1) == input, "lstm ", name, ": input must be [B,", input,
          "], got ", shape_str(x.shape()));
    auto z = add(add(matmul(x, p[name + ".wx"], false, true),
                     matmul(st.hidden, p[name + ".wh"], false, true)),
                 reshape(p[name + ".b"], {1, 4 * hidden}));
    auto gi = sigmoid(slice(z, 1, 0, hidden));
    auto gf = sigmoid(slice(z, 1, hidden, hidden));
    auto gc = tanh_op(slice(z, 1, 2 * hidden, hidden));
    auto go = sigmoid(slice(z, 1, 3 * hidden, hidden));
    auto cell = add(mul(gf, st.cell), mul(gi, gc));
    auto h = mul(go, tanh_op(cell));
    return {h, cell};
  }

  std::pair<std::vector<Tensor<T>>, LstmState<T>> run(const TapedParams<T>& p,
                                                      const std::vector<Tensor<T>>& xs,
                                                      LstmState<T> st) const {
    check(!xs.empty(), "lstm ", name, ": empty sequence");
    std::vector<Tensor<T>> outs;
    outs.reserve(xs.size());
    for (const auto& x : xs) {
      st = step(p, x, st);
      outs.push_back(st.hidden);
    }
    return {std::move(outs), std::move(st)};
  }
};

// Pre-activation bottleneck: norm+leaky -> 1x1 reduce -> norm+leaky -> 3x3
// (stride here) -> norm+leaky -> 1x1 expand, plus an identity or strided 1x1
// projection shortcut.
template <typename T>
struct BottleneckBlock {
  std::string name;
  int64_t in_ch = 0, out_ch = 0, stride = 1;

  int64_t mid() const { return out_ch / 4; }
  bool projects() const { return stride != 1 || in_ch != out_ch; }

  InstanceNormLayer<T> n1() const { return {name + ".n1", in_ch}; }
  Conv2dLayer<T> c1() const { return {name + ".c1", in_ch, mid(), 1, 1, {1, 1}, {0, 0}}; }
  InstanceNormLayer<T> n2() const { return {name + ".n2", mid()}; }
  Conv2dLayer<T> c2() const {
    return {name + ".c2", mid(), mid(), 3, 3, {stride, stride}, {1, 1}};
  }
  InstanceNormLayer<T> n3() const { return {name + ".n3", mid()}; }
  Conv2dLayer<T> c3() const { return {name + ".c3", mid(), out_ch, 1, 1, {1, 1}, {0, 0}}; }
  Conv2dLayer<T> proj() const {
    return {name + ".proj", in_ch, out_ch, 1, 1, {stride, stride}, {0, 0}};
  }

  void init(ParamStore<T>& s, uint64_t seed) const {
    check(out_ch % 4 == 0, "bottleneck ", name, ": out channels must be divisible by 4");
    n1().init(s, seed);
    c1().init(s, seed);
    n2().init(s, seed);
    c2().init(s, seed);
    n3().init(s, seed);
    c3().init(s, seed);
    if (projects()) proj().init(s, seed);
  }

  Tensor<T> operator()(const TapedParams<T>& p, const Tensor<T>& x) const {
    check(x.dim(1) == in_ch, "bottleneck ", name, ": expected ", in_ch, " channels, got ",
          shape_str(x.shape()));
    auto h = leaky_relu(n1()(p, x), T(kLeakySlope));
    h = c1()(p, h);
    h = leaky_relu(n2()(p, h), T(kLeakySlope));
    h = c2()(p, h);
    h = leaky_relu(n3()(p, h), T(kLeakySlope));
    h = c3()(p, h);
    auto shortcut = projects() ? proj()(p, x) : x;
    return add(h, shortcut);
  }
};

}  // namespace longscape
