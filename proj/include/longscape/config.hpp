#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longscape/generator.hpp"
#include "longscape/losses.hpp"

namespace longscape {

// Flat key = value run configuration. Defaults are the published training
// settings of the model this engine implements; unknown keys are rejected.
struct RunConfig {
  double lr = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  double lambda_rec = 0.998;
  double lambda_adv = 0.002;
  double lambda_gp = 10.0;
  double beta = 0.9;
  double scale = 1.0;
  int64_t batch_size = 32;
  int64_t epochs = 1500;
  int64_t lr_drop_epoch = 1000;
  int64_t warmup_iters = 1000;
  int64_t ncir_high = 30;
  int64_t ncir_low = 5;
  int64_t ncir_cutoff = 30;
  int64_t ncir_period = 500;
  int64_t seed = 1;
  int64_t checkpoint_every = 500;
  int64_t max_steps = 0;  // 0 = run the full schedule
  int64_t sample_images = 4;

  void set(const std::string& key, const std::string& value);
  void apply_file(const std::string& path);
  std::string dump() const;          // canonical, also hashed and checkpointed
  static std::string help_table();   // key, default, description

  uint64_t fingerprint() const;
  GeneratorConfig generator_config() const;
  TrainSchedule schedule() const;
  LossWeights weights() const;
  void validate() const;
};

RunConfig parse_config_text(const std::string& text, RunConfig base = {});

}  // namespace longscape
