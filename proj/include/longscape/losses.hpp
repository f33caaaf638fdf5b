#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "longscape/params.hpp"

namespace longscape {

struct LossWeights {
  double lambda_rec = 0.998;
  double lambda_adv = 0.002;
  double lambda_gp = 10.0;
  double beta = 0.9;

  void validate() const {
    check(lambda_rec >= 0 && lambda_adv >= 0 && lambda_gp >= 0, "loss weights must be >= 0");
    check(beta >= 0 && beta <= 1, "beta must lie in [0,1]");
  }
};

struct TrainSchedule {
  double base_lr = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  int64_t batch_size = 32;
  int64_t warmup_iters = 1000;
  int64_t epochs = 1500;
  int64_t lr_drop_epoch = 1000;
  int64_t ncir_high = 30;
  int64_t ncir_low = 5;
  int64_t ncir_cutoff = 30;
  int64_t ncir_period = 500;

  void validate() const {
    check(base_lr > 0 && adam_eps > 0, "learning rate and eps must be positive");
    check(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
          "adam betas must lie in [0,1)");
    check(batch_size >= 1 && epochs >= 1 && warmup_iters >= 0, "schedule counts must be positive");
    check(ncir_high >= 1 && ncir_low >= 1 && ncir_period >= 1, "n_cir parameters must be >= 1");
  }
};

inline double lr_at(int64_t epoch, const TrainSchedule& s) {
  check(epoch >= 0, "lr_at: epoch must be >= 0");
  return epoch < s.lr_drop_epoch ? s.base_lr : s.base_lr / 10.0;
}

// Critic updates per generator update on the post-warmup iteration counter.
inline int64_t n_cir(int64_t iteration, const TrainSchedule& s) {
  check(iteration >= 1, "n_cir: iterations are 1-based");
  if (iteration < s.ncir_cutoff || iteration % s.ncir_period == 0) return s.ncir_high;
  return s.ncir_low;
}

// Per-column reconstruction weight: 1 over the input half, raised-cosine decay
// from 1 to 0 across the predicted half.
template <typename T>
struct CosineMask {
  int64_t pred_width = 0;
  int64_t total_width = 0;
  std::vector<T> weights;
};

template <typename T>
CosineMask<T> cosine_mask(int64_t pred_width, int64_t total_width) {
  check(pred_width >= 1, "cosine_mask: prediction width must be >= 1");
  check(total_width >= pred_width, "cosine_mask: prediction wider than the image");
  CosineMask<T> m{pred_width, total_width, std::vector<T>(static_cast<size_t>(total_width))};
  const int64_t border = total_width - pred_width;
  for (int64_t w = 0; w < total_width; ++w) {
    if (w < border) {
      m.weights[static_cast<size_t>(w)] = T(1);
    } else {
      const double d = static_cast<double>(w - border);
      m.weights[static_cast<size_t>(w)] =
          static_cast<T>((1.0 + std::cos(d * M_PI / static_cast<double>(pred_width))) / 2.0);
    }
  }
  return m;
}

// Mean over every element of the column-weighted squared error.
template <typename T>
Tensor<T> masked_rec_loss(const Tensor<T>& truth, const Tensor<T>& predicted,
                          const CosineMask<T>& mask) {
  check(truth.shape() == predicted.shape(), "masked_rec_loss: shape mismatch: ",
        shape_str(truth.shape()), " vs ", shape_str(predicted.shape()));
  check(truth.rank() == 4 && truth.dim(3) == mask.total_width,
        "masked_rec_loss: mask built for width ", mask.total_width, ", input is ",
        shape_str(truth.shape()));
  Tensor<T> row({1, 1, 1, mask.total_width}, mask.weights);
  return mean_all(mul(square(sub(truth, predicted)), row));
}

// Standard Adam with bias correction; t is the 1-based step count.
template <typename T>
void adam_step(ParamStore<T>& store, const std::map<std::string, Tensor<T>>& grads,
               const TrainSchedule& s, int64_t t, double lr) {
  check(t >= 1, "adam_step: t is 1-based");
  const double c1 = 1.0 - std::pow(s.adam_beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(s.adam_beta2, static_cast<double>(t));
  for (const auto& name : store.names()) {
    auto it = grads.find(name);
    check(it != grads.end(), "adam_step: missing gradient for '", name, "'");
    auto& e = store.entry(name);
    check(it->second.shape() == e.value.shape(), "adam_step: gradient shape mismatch for '", name,
          "'");
    const T* g = it->second.data();
    T* m = e.m.data();
    T* v = e.v.data();
    T* p = e.value.data();
    T* gslot = e.grad.data();
    const T b1 = static_cast<T>(s.adam_beta1);
    const T b2 = static_cast<T>(s.adam_beta2);
    for (int64_t i = 0; i < e.value.size(); ++i) {
      gslot[i] = g[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      p[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + s.adam_eps));
    }
  }
}

}  // namespace longscape
