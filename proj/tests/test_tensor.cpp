#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "longscape/conv.hpp"
#include "longscape/ops.hpp"
#include "oracles.hpp"

using namespace longscape;

namespace {

Tensor<double> rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform_tensor<double>(std::move(shape), rng, lo, hi);
}

// Values bounded away from 0 so relu/leaky kinks stay clear of the FD stencil.
Tensor<double> rand_signed(Shape shape, Rng& rng) {
  Tensor<double> t(shape);
  for (int64_t i = 0; i < t.size(); ++i) {
    double mag = rng.uniform(0.2, 1.2);
    t.data()[i] = rng.coin() ? mag : -mag;
  }
  return t;
}

}  // namespace

TEST_CASE("conv2d forward basics") {
  Tensor<double> x({1, 1, 3, 3}, 1.0);
  Tensor<double> w({1, 1, 3, 3}, 1.0);
  auto y = conv2d_raw(x, w, {1, 1}, {0, 0});
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));

  Rng rng(7);
  auto x2 = rand_t({2, 3, 5, 6}, rng);
  Tensor<double> ident({3, 3, 1, 1}, 0.0);
  for (int64_t c = 0; c < 3; ++c) ident.data()[c * 3 + c] = 1.0;
  auto y2 = conv2d_raw(x2, ident, {1, 1}, {0, 0});
  CHECK(oracle::max_abs_diff(x2, y2) == 0.0);

  auto big = zeros<double>({1, 3, 128, 128});
  Tensor<double> wbig({64, 3, 4, 4}, 0.25);
  auto ybig = conv2d_raw(big, wbig, {2, 2}, {1, 1});
  CHECK(ybig.shape() == Shape{1, 64, 64, 64});
}

TEST_CASE("conv2d matches the nested-loop reference") {
  struct Cfg {
    int64_t in_ch, out_ch, h, w, kh, kw, sh, sw, ph, pw, dh, dw;
  };
  // Every geometry the architecture uses, then random ones.
  std::vector<Cfg> cfgs = {
      {3, 8, 12, 12, 4, 4, 2, 2, 1, 1, 1, 1},   // stem / critic convs
      {8, 4, 9, 9, 1, 1, 1, 1, 0, 0, 1, 1},     // pointwise
      {4, 4, 9, 9, 3, 3, 1, 1, 1, 1, 1, 1},     // bottleneck middle
      {4, 4, 9, 9, 3, 3, 2, 2, 1, 1, 1, 1},     // strided bottleneck middle
      {6, 6, 10, 10, 1, 1, 2, 2, 0, 0, 1, 1},   // projection shortcut
      {4, 4, 6, 14, 1, 7, 1, 1, 0, 3, 1, 1},    // horizontal, rate 1
      {4, 4, 6, 14, 1, 7, 1, 1, 0, 6, 1, 2},    // horizontal, rate 2
      {4, 4, 6, 30, 1, 7, 1, 1, 0, 12, 1, 4},   // horizontal, rate 4
      {4, 4, 6, 14, 3, 1, 1, 1, 1, 0, 1, 1},    // vertical
      {2, 3, 5, 5, 3, 3, 1, 1, 2, 2, 2, 2},     // dilated, padded
  };
  Rng rng(11);
  for (int i = 0; i < 5; ++i) {
    Cfg c;
    c.in_ch = 1 + static_cast<int64_t>(rng.below(4));
    c.out_ch = 1 + static_cast<int64_t>(rng.below(4));
    c.kh = 1 + static_cast<int64_t>(rng.below(4));
    c.kw = 1 + static_cast<int64_t>(rng.below(4));
    c.sh = 1 + static_cast<int64_t>(rng.below(2));
    c.sw = 1 + static_cast<int64_t>(rng.below(2));
    c.ph = static_cast<int64_t>(rng.below(3));
    c.pw = static_cast<int64_t>(rng.below(3));
    c.dh = 1 + static_cast<int64_t>(rng.below(2));
    c.dw = 1 + static_cast<int64_t>(rng.below(2));
    c.h = c.dh * (c.kh - 1) + 1 + static_cast<int64_t>(rng.below(6));
    c.w = c.dw * (c.kw - 1) + 1 + static_cast<int64_t>(rng.below(6));
    cfgs.push_back(c);
  }
  for (const auto& c : cfgs) {
    CAPTURE(c.kh);
    CAPTURE(c.kw);
    CAPTURE(c.sh);
    CAPTURE(c.dh);
    CAPTURE(c.dw);
    auto x = rand_t({2, c.in_ch, c.h, c.w}, rng);
    auto w = rand_t({c.out_ch, c.in_ch, c.kh, c.kw}, rng);
    auto b = rand_t({c.out_ch}, rng);
    auto got = conv2d(x, w, b, {c.sh, c.sw}, {c.ph, c.pw}, {c.dh, c.dw});
    auto want = oracle::conv2d_ref(x, w, &b, c.sh, c.sw, c.ph, c.pw, c.dh, c.dw);
    REQUIRE(got.shape() == want.shape());
    CHECK(oracle::max_abs_diff(got, want) <= 1e-10);
  }
}

TEST_CASE("conv_transpose2d shape contract and reference") {
  Rng rng(3);
  auto x = rand_t({1, 1, 2, 2}, rng);
  auto w = rand_t({1, 1, 4, 4}, rng);
  auto y = conv_transpose2d_raw(x, w, {2, 2}, {1, 1});
  CHECK(y.shape() == Shape{1, 1, 4, 4});

  auto xl = zeros<double>({1, 1024, 4, 8});
  auto wl = zeros<double>({1024, 512, 4, 4});
  auto yl = conv_transpose2d_raw(xl, wl, {2, 2}, {1, 1});
  CHECK(yl.shape() == Shape{1, 512, 8, 16});

  for (int i = 0; i < 4; ++i) {
    auto xi = rand_t({2, 3, 4, 5}, rng);
    auto wi = rand_t({3, 2, 4, 4}, rng);
    auto bi = rand_t({2}, rng);
    auto got = conv_transpose2d(xi, wi, bi, {2, 2}, {1, 1});
    auto want = oracle::conv_transpose2d_ref(xi, wi, &bi, 2, 2, 1, 1);
    REQUIRE(got.shape() == want.shape());
    CHECK(oracle::max_abs_diff(got, want) <= 1e-10);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = rand_t({2, 3, 6, 8}, rng);
    auto w = rand_t({4, 3, 4, 4}, rng);
    auto y = conv2d_raw(x, w, {2, 2}, {1, 1});
    auto z = rand_t(y.shape(), rng);
    // <conv(x), z> == <x, conv^T(z)>
    double lhs = sum_all(mul(y, z)).item();
    auto xt = conv_transpose2d_raw(z, w, {2, 2}, {1, 1}, {1, 1}, Pair{6, 8});
    double rhs = sum_all(mul(x, xt)).item();
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));

    // and the tape's input gradient is that same adjoint map
    Tape<double> tape;
    auto xw = tape.watch(x);
    auto loss = sum_all(mul(conv2d_raw(xw, w, {2, 2}, {1, 1}), z));
    auto g = tape.gradient(loss, {xw})[0];
    CHECK(oracle::max_abs_diff(g, xt) <= 1e-10);
  }
}

TEST_CASE("instance_norm statistics") {
  Rng rng(5);
  Tensor<double> constant({2, 3, 4, 4}, 5.0);
  auto g1 = ones<double>({3});
  auto b0 = zeros<double>({3});
  auto y = instance_norm(constant, g1, b0);
  CHECK(oracle::max_abs(y) <= 1e-2);

  auto x = rand_t({2, 3, 8, 8}, rng);
  auto b7 = full<double>({3}, 7.0);
  auto shifted = instance_norm(x, g1, b7);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (int64_t i = 0; i < 64; ++i) mean += shifted.data()[(b * 3 + c) * 64 + i];
      mean /= 64.0;
      CHECK(mean == doctest::Approx(7.0).epsilon(1e-4));
    }

  auto pre = instance_norm(x, g1, b0);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      for (int64_t i = 0; i < 64; ++i) mean += pre.data()[(b * 3 + c) * 64 + i];
      mean /= 64.0;
      for (int64_t i = 0; i < 64; ++i) {
        double d = pre.data()[(b * 3 + c) * 64 + i] - mean;
        var += d * d;
      }
      var /= 64.0;
      CHECK(std::abs(mean) <= 1e-6);
      CHECK(std::abs(var - 1.0) <= 1e-4);
    }

  CHECK_THROWS(instance_norm(x, g1, b0, 0.0));
}

TEST_CASE("elementwise and shape catalog") {
  CHECK(leaky_relu(Tensor<double>::scalar(-1.0), 0.2).item() == doctest::Approx(-0.2));

  Rng rng(9);
  auto a = rand_t({1, 2, 4, 4}, rng);
  auto b = rand_t({1, 2, 4, 4}, rng);
  auto cat = concat<double>({a, b}, 3);
  CHECK(cat.shape() == Shape{1, 2, 4, 8});

  auto x = rand_t({2, 3, 4, 6}, rng);
  auto left = slice(x, 3, 0, 3);
  auto right = slice(x, 3, 3, 3);
  auto back = concat<double>({left, right}, 3);
  CHECK(oracle::max_abs_diff(x, back) == 0.0);

  auto flipped = flip(flip(x, 3), 3);
  CHECK(oracle::max_abs_diff(x, flipped) == 0.0);

  CHECK_THROWS(slice(x, 4, 0, 1));
  CHECK_THROWS(slice(x, 3, 5, 3));
  CHECK_THROWS(concat<double>({a, rand_t({1, 3, 4, 4}, rng)}, 3));
}

TEST_CASE("backward basics") {
  Rng rng(13);
  auto p = rand_t({3, 4}, rng);

  {
    Tape<double> tape;
    auto pt = tape.watch(p);
    auto g = tape.gradient(sum_all(pt), {pt})[0];
    for (int64_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == 1.0);
  }
  {
    Tape<double> tape;
    auto pt = tape.watch(p);
    auto g = tape.gradient(sum_all(mul(pt, pt)), {pt})[0];
    for (int64_t i = 0; i < g.size(); ++i)
      CHECK(g.data()[i] == doctest::Approx(2.0 * p.data()[i]));
  }
  {
    // unused parameters get zero gradients
    Tape<double> tape;
    auto pt = tape.watch(p);
    auto q = tape.watch(rand_t({2, 2}, rng));
    auto g = tape.gradient(sum_all(pt), {pt, q});
    CHECK(oracle::max_abs(g[1]) == 0.0);
  }
  {
    // error paths: non-scalar and detached losses
    Tape<double> tape;
    auto pt = tape.watch(p);
    CHECK_THROWS(tape.gradient(mul(pt, pt), {pt}));
    CHECK_THROWS(tape.gradient(sum_all(p), {pt}));
  }
}

TEST_CASE("finite differences across the op catalog") {
  const double tol = 1e-5;
  double worst = 0.0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);

    {
      // broadcast arithmetic + activations + reductions
      auto a = rand_signed({2, 3, 4, 5}, rng);
      auto b = rand_signed({1, 3, 1, 1}, rng);
      auto c = rand_signed({2, 3, 4, 5}, rng);
      auto rep = gradcheck::check_gradients(
          [](Tape<double>&, const std::vector<Tensor<double>>& l) {
            auto mixed = mul(add(l[0], l[1]), sub(l[2], l[1]));
            auto acts = add(tanh_op(mixed), mul(sigmoid(mixed), leaky_relu(l[0], 0.2)));
            auto sq = sqrt_op(add_scalar(square(acts), 1.0));
            return mean_all(add(sum_axes(sq, {1, 3}), mean_axes(relu(mixed), {0})));
          },
          {a, b, c}, rng, 4);
      worst = std::max(worst, rep.max_rel_err);
    }
    {
      // shape ops
      auto x = rand_signed({2, 4, 4, 6}, rng);
      auto rep = gradcheck::check_gradients(
          [](Tape<double>&, const std::vector<Tensor<double>>& l) {
            auto left = slice(l[0], 3, 0, 3);
            auto right = flip(slice(l[0], 3, 3, 3), 3);
            auto cat = concat<double>({mul(left, right), left}, 1);
            auto shaped = reshape(cat, {2, 8 * 4 * 3});
            return mean_all(mul(shaped, shaped));
          },
          {x}, rng, 5);
      worst = std::max(worst, rep.max_rel_err);
    }
    {
      // matmul, all transpose variants
      auto a = rand_signed({3, 4}, rng);
      auto b = rand_signed({4, 5}, rng);
      auto rep = gradcheck::check_gradients(
          [](Tape<double>&, const std::vector<Tensor<double>>& l) {
            auto y1 = matmul(l[0], l[1]);              // nn: 3x5
            auto y2 = matmul(l[1], y1, false, true);   // nt: 4x3
            auto y3 = matmul(y2, l[0], true, true);    // tt: 3x3
            auto y4 = matmul(l[0], y1, true, false);   // tn: 4x5
            return add(mean_all(y3), mean_all(y4));
          },
          {a, b}, rng, 4);
      worst = std::max(worst, rep.max_rel_err);
    }
    {
      // conv stack including dilation, stride and transpose
      auto x = rand_signed({2, 2, 6, 8}, rng);
      auto w1 = rand_signed({3, 2, 3, 3}, rng);
      auto b1 = rand_signed({3}, rng);
      auto w2 = rand_signed({3, 2, 4, 4}, rng);
      auto rep = gradcheck::check_gradients(
          [](Tape<double>&, const std::vector<Tensor<double>>& l) {
            auto y = conv2d(l[0], l[1], l[2], {2, 2}, {1, 1});
            auto z = conv_transpose2d(y, l[3], Tensor<double>(), {2, 2}, {1, 1});
            auto d = conv2d_raw(z, l[1], {1, 1}, {2, 2}, {2, 2});
            return mean_all(square(d));
          },
          {x, w1, b1, w2}, rng, 3);
      worst = std::max(worst, rep.max_rel_err);
    }
    {
      // instance norm
      auto x = rand_signed({2, 3, 4, 4}, rng);
      auto g = rand_signed({3}, rng);
      auto b = rand_signed({3}, rng);
      auto rep = gradcheck::check_gradients(
          [](Tape<double>&, const std::vector<Tensor<double>>& l) {
            return mean_all(square(instance_norm(l[0], l[1], l[2])));
          },
          {x, g, b}, rng, 4);
      worst = std::max(worst, rep.max_rel_err);
    }
  }
  CHECK(worst <= tol);
}

TEST_CASE("finite differences in f32 stay within loose tolerance") {
  double worst = 0.0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Tensor<float> x({2, 3, 4, 4});
    for (int64_t i = 0; i < x.size(); ++i) {
      float mag = static_cast<float>(rng.uniform(0.2, 1.2));
      x.data()[i] = rng.coin() ? mag : -mag;
    }
    Tensor<float> w({2, 3, 3, 3});
    for (int64_t i = 0; i < w.size(); ++i)
      w.data()[i] = static_cast<float>(rng.uniform(-0.5, 0.5));

    auto loss_of = [&](const Tensor<float>& xv, const Tensor<float>& wv, Tape<float>* tape,
                       Tensor<float>* xt_out) {
      Tensor<float> xt = tape ? tape->watch(xv) : xv.detached();
      auto y = conv2d_raw(xt, wv, {1, 1}, {1, 1});
      auto loss = mean_all(mul(tanh_op(y), y));
      if (xt_out) *xt_out = xt;
      return loss;
    };

    Tape<float> tape;
    Tensor<float> xt;
    auto loss = loss_of(x, w, &tape, &xt);
    auto g = tape.gradient(loss, {xt})[0];

    for (int c = 0; c < 3; ++c) {
      auto idx = static_cast<int64_t>(rng.below(static_cast<uint64_t>(x.size())));
      const float saved = x.data()[idx];
      const float h = 1e-2f;
      x.data()[idx] = saved + h;
      float up = loss_of(x, w, nullptr, nullptr).item();
      x.data()[idx] = saved - h;
      float down = loss_of(x, w, nullptr, nullptr).item();
      x.data()[idx] = saved;
      double fd = (static_cast<double>(up) - down) / (2.0 * h);
      worst = std::max(worst, gradcheck::rel_err(g.data()[idx], fd));
    }
  }
  CHECK(worst <= 1e-2);
}

TEST_CASE("per-sample input gradient norms") {
  // critic summing 4 elements -> gradient all ones, norm sqrt(4)
  Tape<double> tape;
  Tensor<double> x({3, 4}, 0.5);
  auto norms = input_grad_norm(tape, [](const Tensor<double>& v) { return sum_axes(v, {1}); }, x);
  REQUIRE(norms.shape() == Shape{3, 1});
  for (int64_t i = 0; i < 3; ++i) CHECK(norms.data()[i] == doctest::Approx(2.0));

  // constant critic -> zero norm
  Tape<double> t2;
  auto zn = input_grad_norm(
      t2, [](const Tensor<double>& v) { return mul_scalar(sum_axes(v, {1}), 0.0); }, x);
  for (int64_t i = 0; i < 3; ++i) CHECK(zn.data()[i] == 0.0);

  // linear critic -> norm of the weight vector
  Rng rng(23);
  auto w = rand_t({1, 4}, rng);
  double wn = 0.0;
  for (int64_t i = 0; i < 4; ++i) wn += w.data()[i] * w.data()[i];
  wn = std::sqrt(wn);
  Tape<double> t3;
  auto ln = input_grad_norm(
      t3, [&](const Tensor<double>& v) { return matmul(v, w, false, true); }, x);
  for (int64_t i = 0; i < 3; ++i) CHECK(ln.data()[i] == doctest::Approx(wn).epsilon(1e-9));

  // non-scalar-per-sample critics are rejected
  Tape<double> t4;
  CHECK_THROWS(input_grad_norm(t4, [](const Tensor<double>& v) { return v; }, x));
}

TEST_CASE("nested differentiation through a recorded backward pass") {
  // loss = || d(sum(w * x^2))/dx ||^2 = sum(4 w^2 x^2); d/dw = 8 w x^2
  Rng rng(31);
  auto x = rand_t({4}, rng, 0.3, 1.0);
  auto w = rand_t({4}, rng, 0.3, 1.0);

  Tape<double> tape;
  auto wt = tape.watch(w);
  auto xt = tape.watch(x);
  auto inner = sum_all(mul(wt, mul(xt, xt)));
  auto gx = tape.gradient(inner, {xt}, /*create_graph=*/true)[0];
  auto outer = sum_all(square(gx));
  auto gw = tape.gradient(outer, {wt})[0];
  for (int64_t i = 0; i < 4; ++i) {
    double want = 8.0 * w.data()[i] * x.data()[i] * x.data()[i];
    CHECK(gw.data()[i] == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("tape replay is deterministic") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    auto run = [&] {
      Rng rng(seed);
      auto x = rand_t({2, 3, 6, 6}, rng);
      auto w = rand_t({4, 3, 3, 3}, rng);
      Tape<double> tape;
      auto xw = tape.watch(x);
      auto ww = tape.watch(w);
      auto loss = mean_all(square(tanh_op(conv2d_raw(xw, ww, {1, 1}, {1, 1}))));
      auto g = tape.gradient(loss, {xw, ww});
      return std::make_pair(g[0], g[1]);
    };
    auto [a1, b1] = run();
    auto [a2, b2] = run();
    CHECK(std::memcmp(a1.data(), a2.data(), sizeof(double) * a1.size()) == 0);
    CHECK(std::memcmp(b1.data(), b2.data(), sizeof(double) * b1.size()) == 0);
  }
}

TEST_CASE("conv shape errors are descriptive") {
  Tensor<double> x({1, 3, 8, 8}, 1.0);
  Tensor<double> w({4, 2, 3, 3}, 1.0);
  CHECK_THROWS_WITH_AS(conv2d_raw(x, w, {1, 1}, {1, 1}),
                       doctest::Contains("channels"), std::runtime_error);
  Tensor<double> wbig({4, 3, 11, 11}, 1.0);
  CHECK_THROWS_WITH_AS(conv2d_raw(x, wbig, {1, 1}, {0, 0}),
                       doctest::Contains("zero-sized"), std::runtime_error);
}
