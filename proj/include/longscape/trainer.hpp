#pragma once

#include <cmath>
#include <cstdio>
#include <string>

#include "longscape/checkpoint.hpp"
#include "longscape/critic.hpp"
#include "longscape/generator.hpp"
#include "longscape/losses.hpp"

namespace longscape {

// lambda_rec * masked reconstruction + lambda_adv * adversarial score. The
// adversarial term is skipped entirely when its weight is zero, so the warmup
// objective is exactly the reconstruction term.
template <typename T>
Tensor<T> generator_objective(const Tensor<T>& truth, const Tensor<T>& fake,
                              const CriticNet<T>& global_net, const TapedParams<T>& gp,
                              const CriticNet<T>& local_net, const TapedParams<T>& lp,
                              const CosineMask<T>& mask, const LossWeights& w) {
  w.validate();
  auto rec = masked_rec_loss(truth, fake, mask);
  if (w.lambda_adv == 0.0) return mul_scalar(rec, static_cast<T>(w.lambda_rec));
  const int64_t half = fake.dim(3) / 2;
  auto fake_right = slice(fake, 3, half, half);
  auto adv = generator_adv_loss(global_net, gp, local_net, lp, fake, fake_right,
                                static_cast<T>(w.beta));
  return add(mul_scalar(rec, static_cast<T>(w.lambda_rec)),
             mul_scalar(adv, static_cast<T>(w.lambda_adv)));
}

struct StepMetrics {
  uint64_t step = 0;
  uint64_t epoch = 0;
  double lr = 0;
  double l_rec = 0;
  double l_adv_g = 0;
  double l_d = 0;
  int64_t n_cir = 0;
  double gen_grad_norm = 0;  // console only, like wall_ms
  double wall_ms = 0;        // console only; excluded from the reproducible log

  std::string log_line() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "step=%llu epoch=%llu lr=%.9e l_rec=%.9e l_adv_g=%.9e l_d=%.9e n_cir=%lld",
                  static_cast<unsigned long long>(step), static_cast<unsigned long long>(epoch),
                  lr, l_rec, l_adv_g, l_d, static_cast<long long>(n_cir));
    return buf;
  }
};

template <typename T>
struct TrainerState {
  GeneratorNet<T> gen;
  CriticNet<T> critic_global;
  CriticNet<T> critic_local;
  ParamStore<T> gen_params;
  ParamStore<T> global_params;
  ParamStore<T> local_params;
  CosineMask<T> mask;
  TrainSchedule sched;
  LossWeights weights;
  uint64_t seed = 1;

  uint64_t gen_iter = 0;      // completed generator updates (warmup included)
  uint64_t critic_steps = 0;  // completed critic optimizer steps
  uint64_t global_step = 0;   // completed train steps
  uint64_t epoch = 0;
  uint64_t step_in_epoch = 0;

  bool in_warmup() const { return gen_iter < static_cast<uint64_t>(sched.warmup_iters); }
};

template <typename T>
TrainerState<T> make_trainer(const GeneratorConfig& gcfg, double scale,
                             const TrainSchedule& sched, const LossWeights& weights,
                             uint64_t seed) {
  sched.validate();
  weights.validate();
  TrainerState<T> st{
      GeneratorNet<T>(gcfg),
      CriticNet<T>(CriticConfig::global_at_scale(scale), "dg"),
      CriticNet<T>(CriticConfig::local_at_scale(scale), "dl"),
      {},
      {},
      {},
      cosine_mask<T>(gcfg.input_size, 2 * gcfg.input_size),
      sched,
      weights,
      seed};
  check(st.critic_global.config().input_h == gcfg.input_size,
        "critic scale does not match generator input size");
  st.gen_params = st.gen.init_store(mix_seed(seed, "init_gen", 0));
  st.global_params = st.critic_global.init_store(mix_seed(seed, "init_dg", 0));
  st.local_params = st.critic_local.init_store(mix_seed(seed, "init_dl", 0));
  return st;
}

// One alternating-training step on a Bx3xSx2S batch whose left half is the
// generator input and whose full extent is the reconstruction target.
// Warmup: a single generator update on the pure reconstruction objective.
// After warmup: n_cir critic updates on fresh interpolates, then one
// generator update on the mixed objective.
template <typename T>
StepMetrics train_step(TrainerState<T>& st, const Tensor<T>& batch) {
  const int64_t size = st.gen.config().input_size;
  check(batch.rank() == 4 && batch.dim(1) == 3 && batch.dim(2) == size &&
            batch.dim(3) == 2 * size,
        "train_step expects Bx3x", size, "x", 2 * size, " batches, got ",
        shape_str(batch.shape()));
  check(batch.dim(0) >= 1, "train_step: empty batch");

  const int64_t half = size;
  auto input = slice(batch, 3, 0, half);
  const bool warmup = st.in_warmup();
  const double lr = lr_at(static_cast<int64_t>(st.epoch), st.sched);

  StepMetrics m;
  m.lr = lr;
  m.epoch = st.epoch;

  if (!warmup) {
    const auto adv_iter =
        static_cast<int64_t>(st.gen_iter) - st.sched.warmup_iters + 1;
    const int64_t n = n_cir(adv_iter, st.sched);
    m.n_cir = n;

    Tensor<T> fake;
    {
      auto fz = frozen_view(st.gen_params);
      fake = st.gen.forward(fz, input);
    }
    auto real_right = slice(batch, 3, half, half);
    auto fake_right = slice(fake, 3, half, half);
    for (int64_t j = 0; j < n; ++j) {
      Tape<T> tape;
      auto gp = make_taped(st.global_params, &tape);
      auto lp = make_taped(st.local_params, &tape);
      auto parts = critic_losses(st.critic_global, gp, st.critic_local, lp, batch, fake,
                                 real_right, fake_right, static_cast<T>(st.weights.beta),
                                 static_cast<T>(st.weights.lambda_gp),
                                 mix_seed(st.seed, "gp", st.critic_steps));
      auto g_global = backward(parts.total, st.global_params, gp);
      auto g_local = backward(parts.total, st.local_params, lp);
      const auto t = static_cast<int64_t>(st.critic_steps) + 1;
      adam_step(st.global_params, g_global, st.sched, t, lr);
      adam_step(st.local_params, g_local, st.sched, t, lr);
      ++st.critic_steps;
      m.l_d = static_cast<double>(parts.total.item());
    }
  }

  {
    Tape<T> tape;
    auto gp = make_taped(st.gen_params, &tape);
    auto fake = st.gen.forward(gp, input);
    auto l_rec = masked_rec_loss(batch, fake, st.mask);
    m.l_rec = static_cast<double>(l_rec.item());
    Tensor<T> loss;
    if (warmup) {
      loss = l_rec;
    } else {
      auto fg = frozen_view(st.global_params);
      auto fl = frozen_view(st.local_params);
      auto fake_right = slice(fake, 3, half, half);
      auto adv = generator_adv_loss(st.critic_global, fg, st.critic_local, fl, fake, fake_right,
                                    static_cast<T>(st.weights.beta));
      m.l_adv_g = static_cast<double>(adv.item());
      loss = add(mul_scalar(l_rec, static_cast<T>(st.weights.lambda_rec)),
                 mul_scalar(adv, static_cast<T>(st.weights.lambda_adv)));
    }
    auto grads = backward(loss, st.gen_params, gp);
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      for (int64_t i = 0; i < g.size(); ++i)
        sq += static_cast<double>(g.data()[i]) * static_cast<double>(g.data()[i]);
    m.gen_grad_norm = std::sqrt(sq);
    adam_step(st.gen_params, grads, st.sched, static_cast<int64_t>(st.gen_iter) + 1, lr);
    ++st.gen_iter;
  }

  check(std::isfinite(m.l_rec) && std::isfinite(m.l_adv_g) && std::isfinite(m.l_d),
        "train_step: non-finite loss at step ", st.global_step + 1);

  ++st.global_step;
  ++st.step_in_epoch;
  m.step = st.global_step;
  return m;
}

template <typename T>
Checkpoint to_checkpoint(const TrainerState<T>& st, uint64_t fingerprint,
                         std::string config_text) {
  Checkpoint c;
  c.fingerprint = fingerprint;
  c.config_text = std::move(config_text);
  c.global_step = st.global_step;
  c.epoch = st.epoch;
  c.step_in_epoch = st.step_in_epoch;
  c.gen_iter = st.gen_iter;
  c.critic_steps = st.critic_steps;
  add_store_entries(c, "gen", st.gen_params);
  add_store_entries(c, "critic_global", st.global_params);
  add_store_entries(c, "critic_local", st.local_params);
  return c;
}

template <typename T>
void restore_trainer(TrainerState<T>& st, const Checkpoint& c, uint64_t expected_fingerprint,
                     bool force = false) {
  if (!force)
    check(c.fingerprint == expected_fingerprint, "checkpoint fingerprint ", c.fingerprint,
          " does not match the configured model (", expected_fingerprint,
          "); pass the matching config or force the load");
  load_store_entries(c, "gen", st.gen_params);
  load_store_entries(c, "critic_global", st.global_params);
  load_store_entries(c, "critic_local", st.local_params);
  st.global_step = c.global_step;
  st.epoch = c.epoch;
  st.step_in_epoch = c.step_in_epoch;
  st.gen_iter = c.gen_iter;
  st.critic_steps = c.critic_steps;
}

}  // namespace longscape
