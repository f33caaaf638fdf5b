#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "longscape/layers.hpp"

namespace longscape {

// Strided-conv score networks. The gradient penalty couples samples through
// batch statistics, so the critics carry no normalization.
struct CriticConfig {
  int64_t input_h = 128;
  int64_t input_w = 256;
  std::vector<int64_t> channels{64, 128, 256, 512, 1024};

  static CriticConfig global_at_scale(double s) {
    CriticConfig c;
    c.input_h = static_cast<int64_t>(std::lround(128.0 * s));
    c.input_w = 2 * c.input_h;
    for (auto& ch : c.channels) ch = static_cast<int64_t>(std::lround(ch * s));
    return c;
  }

  static CriticConfig local_at_scale(double s) {
    CriticConfig c = global_at_scale(s);
    c.input_w = c.input_h;
    return c;
  }

  // 4x4 stride-2 convs halve the extent; stop before the feature drops under
  // 2x2 so the linear head always sees a spatial map.
  int64_t conv_layers() const {
    int64_t h = input_h, w = input_w, n = 0;
    while (n < static_cast<int64_t>(channels.size()) && h >= 4 && w >= 4) {
      h /= 2;
      w /= 2;
      ++n;
    }
    check(n >= 1, "critic input ", input_h, "x", input_w, " too small");
    return n;
  }
};

template <typename T>
class CriticNet {
 public:
  explicit CriticNet(CriticConfig cfg, std::string name) : cfg_(cfg), name_(std::move(name)) {
    layers_ = cfg_.conv_layers();
  }

  const CriticConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }

  ParamStore<T> init_store(uint64_t seed) const {
    ParamStore<T> s;
    for (int64_t i = 0; i < layers_; ++i) conv(i).init(s, seed);
    head().init(s, seed);
    return s;
  }

  // Unbounded per-sample realness score, Bx1.
  Tensor<T> forward(const TapedParams<T>& p, const Tensor<T>& image) const {
    check(image.rank() == 4 && image.dim(1) == 3 && image.dim(2) == cfg_.input_h &&
              image.dim(3) == cfg_.input_w,
          name_, " critic expects Bx3x", cfg_.input_h, "x", cfg_.input_w, " input, got ",
          shape_str(image.shape()));
    Tensor<T> x = image;
    for (int64_t i = 0; i < layers_; ++i)
      x = leaky_relu(conv(i)(p, x), T(kLeakySlope));
    auto flat = reshape(x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
    return head()(p, flat);
  }

  int64_t head_features() const {
    int64_t h = cfg_.input_h >> layers_;
    int64_t w = cfg_.input_w >> layers_;
    return channel(layers_ - 1) * h * w;
  }

 private:
  CriticConfig cfg_;
  std::string name_;
  int64_t layers_ = 0;

  int64_t channel(int64_t i) const { return cfg_.channels[static_cast<size_t>(i)]; }

  Conv2dLayer<T> conv(int64_t i) const {
    return {name_ + ".conv" + std::to_string(i + 1), i == 0 ? 3 : channel(i - 1), channel(i), 4, 4,
            {2, 2}, {1, 1}};
  }
  LinearLayer<T> head() const { return {name_ + ".head", head_features(), 1}; }
};

// Per-sample interpolation coefficients of the penalty samples.
template <typename T>
std::vector<T> gp_coefficients(int64_t batch, uint64_t seed) {
  Rng rng(seed);
  std::vector<T> u(static_cast<size_t>(batch));
  for (auto& v : u) v = static_cast<T>(rng.uniform());
  return u;
}

// lambda_gp * E[(||d D(x_hat)/d x_hat||_2 - 1)^2] on per-sample interpolates
// x_hat = u*real + (1-u)*fake. The inner gradient is recorded on `tape`, so
// the result stays differentiable with respect to whatever `critic_fn`
// closes over.
template <typename T, typename Fn>
Tensor<T> gradient_penalty_fn(Tape<T>& tape, Fn&& critic_fn, const Tensor<T>& real,
                              const Tensor<T>& fake, T lambda_gp, const std::vector<T>& u) {
  check(real.shape() == fake.shape(), "gradient_penalty: real ", shape_str(real.shape()),
        " vs fake ", shape_str(fake.shape()));
  check(lambda_gp > T(0), "gradient_penalty: lambda_gp must be positive");
  const int64_t batch = real.dim(0);
  check(static_cast<int64_t>(u.size()) == batch, "gradient_penalty: coefficient count mismatch");

  Tensor<T> xhat(real.shape());
  const int64_t per = real.size() / batch;
  for (int64_t b = 0; b < batch; ++b) {
    const T ub = u[static_cast<size_t>(b)];
    for (int64_t i = 0; i < per; ++i) {
      const int64_t k = b * per + i;
      xhat.data()[k] = ub * real.data()[k] + (T(1) - ub) * fake.data()[k];
    }
  }
  auto norms = input_grad_norm(tape, std::forward<Fn>(critic_fn), xhat);
  return mul_scalar(mean_all(square(add_scalar(norms, T(-1)))), lambda_gp);
}

template <typename T>
Tensor<T> gradient_penalty_with_coeffs(const CriticNet<T>& critic, const TapedParams<T>& p,
                                       const Tensor<T>& real, const Tensor<T>& fake, T lambda_gp,
                                       const std::vector<T>& u) {
  check(p.tape != nullptr, "gradient_penalty: critic params must be taped");
  return gradient_penalty_fn(*p.tape, [&](const Tensor<T>& v) { return critic.forward(p, v); },
                             real, fake, lambda_gp, u);
}

template <typename T>
Tensor<T> gradient_penalty(const CriticNet<T>& critic, const TapedParams<T>& p,
                           const Tensor<T>& real, const Tensor<T>& fake, T lambda_gp,
                           uint64_t seed) {
  return gradient_penalty_with_coeffs(critic, p, real, fake, lambda_gp,
                                      gp_coefficients<T>(real.dim(0), seed));
}

template <typename T>
struct CriticLossParts {
  Tensor<T> total;
  Tensor<T> dis_global;
  Tensor<T> dis_local;
  Tensor<T> gp_global;
  Tensor<T> gp_local;
};

// Per critic: E[D(fake)] - E[D(real)] + gradient penalty; mixed global/local
// with weight beta.
template <typename T>
CriticLossParts<T> critic_losses(const CriticNet<T>& global_net, const TapedParams<T>& gp_,
                                 const CriticNet<T>& local_net, const TapedParams<T>& lp,
                                 const Tensor<T>& real_full, const Tensor<T>& fake_full,
                                 const Tensor<T>& real_right, const Tensor<T>& fake_right,
                                 T beta, T lambda_gp, uint64_t seed) {
  check(real_full.shape() == fake_full.shape() && real_right.shape() == fake_right.shape() &&
            real_full.dim(0) == real_right.dim(0),
        "critic_losses: shape mismatch between real and fake batches");
  check(beta >= T(0) && beta <= T(1), "critic_losses: beta must lie in [0,1]");

  CriticLossParts<T> parts;
  {
    auto diff = sub(mean_all(global_net.forward(gp_, fake_full)),
                    mean_all(global_net.forward(gp_, real_full)));
    parts.gp_global = gradient_penalty(global_net, gp_, real_full, fake_full, lambda_gp,
                                       mix_seed(seed, "gp_global", 0));
    parts.dis_global = add(diff, parts.gp_global);
  }
  {
    auto diff = sub(mean_all(local_net.forward(lp, fake_right)),
                    mean_all(local_net.forward(lp, real_right)));
    parts.gp_local = gradient_penalty(local_net, lp, real_right, fake_right, lambda_gp,
                                      mix_seed(seed, "gp_local", 0));
    parts.dis_local = add(diff, parts.gp_local);
  }
  parts.total = add(mul_scalar(parts.dis_global, beta), mul_scalar(parts.dis_local, T(1) - beta));
  return parts;
}

// beta * (-E[D_g(fake_full)]) + (1-beta) * (-E[D_l(fake_right)]).
template <typename T>
Tensor<T> generator_adv_loss(const CriticNet<T>& global_net, const TapedParams<T>& gp_,
                             const CriticNet<T>& local_net, const TapedParams<T>& lp,
                             const Tensor<T>& fake_full, const Tensor<T>& fake_right, T beta) {
  check(beta >= T(0) && beta <= T(1), "generator_adv_loss: beta must lie in [0,1]");
  auto g = neg(mean_all(global_net.forward(gp_, fake_full)));
  auto l = neg(mean_all(local_net.forward(lp, fake_right)));
  return add(mul_scalar(g, beta), mul_scalar(l, T(1) - beta));
}

}  // namespace longscape
