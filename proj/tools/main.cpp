// longscape: train, run and evaluate the horizontal image-outpainting model.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "longscape/config.hpp"
#include "longscape/data.hpp"
#include "longscape/eval.hpp"
#include "longscape/trainer.hpp"

namespace fs = std::filesystem;
using namespace longscape;

namespace {

volatile std::sig_atomic_t g_interrupted = 0;
void on_sigint(int) { g_interrupted = 1; }

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

struct TrainArgs {
  std::string config_path;
  std::string data_root;
  std::string out_dir;
  std::string resume_path;
  int64_t seed = -1;
  double scale = -1.0;
  int64_t max_steps = -1;
  bool force = false;
};

RunConfig resolve_config(const TrainArgs& a) {
  RunConfig cfg;
  if (!a.config_path.empty()) cfg.apply_file(a.config_path);
  if (a.seed >= 0) cfg.seed = a.seed;
  if (a.scale > 0) cfg.scale = a.scale;
  if (a.max_steps >= 0) cfg.max_steps = a.max_steps;
  cfg.validate();
  return cfg;
}

std::vector<std::string> sample_inputs(const std::string& data_root, int64_t count) {
  std::vector<std::string> files;
  for (const char* split : {"test", "train"}) {
    if (!fs::is_directory(fs::path(data_root) / split)) continue;
    auto idx = DatasetIndex::scan(data_root, split);
    for (const auto& f : idx.files) {
      files.push_back(f);
      if (static_cast<int64_t>(files.size()) >= count) return files;
    }
    if (!files.empty()) return files;
  }
  return files;
}

void render_samples(const TrainerState<float>& st, const std::vector<std::string>& files,
                    const std::string& out_dir, uint64_t epoch) {
  if (files.empty()) return;
  const int64_t size = st.gen.config().input_size;
  std::vector<Tensor<float>> outs;
  auto p = frozen_view(st.gen_params);
  for (const auto& f : files) {
    auto full = augment_test(load_image<float>(f), size, 2 * size);
    auto input = slice(full, 2, 0, size);
    auto out = st.gen.forward(p, reshape(input, {1, 3, size, size}));
    outs.push_back(reshape(out, {3, size, 2 * size}));
  }
  auto grid = outs.size() == 1 ? outs[0] : concat<float>(outs, 1);
  char name[64];
  std::snprintf(name, sizeof(name), "epoch_%05llu.png", static_cast<unsigned long long>(epoch));
  save_image((fs::path(out_dir) / "samples" / name).string(), grid);
}

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = resolve_config(args);
  const bool resuming = !args.resume_path.empty();
  Checkpoint resume_ckpt;
  if (resuming) {
    resume_ckpt = load_checkpoint(args.resume_path);
    // The run seed drives shuffling, augmentation and penalty draws; inherit
    // it from the checkpoint unless the flag overrides it explicitly.
    if (args.seed < 0 && !resume_ckpt.config_text.empty())
      cfg.seed = parse_config_text(resume_ckpt.config_text).seed;
  }
  const auto gcfg = cfg.generator_config();
  auto st = make_trainer<float>(gcfg, cfg.scale, cfg.schedule(), cfg.weights(),
                                static_cast<uint64_t>(cfg.seed));
  if (resuming) {
    restore_trainer(st, resume_ckpt, cfg.fingerprint(), args.force);
    std::printf("resumed from %s at step %llu (epoch %llu)\n", args.resume_path.c_str(),
                static_cast<unsigned long long>(st.global_step),
                static_cast<unsigned long long>(st.epoch));
  }

  fs::create_directories(fs::path(args.out_dir) / "samples");
  const std::string metrics_path = (fs::path(args.out_dir) / "metrics.log").string();
  std::ofstream metrics(metrics_path, resuming ? std::ios::app : std::ios::trunc);
  check(metrics.good(), "cannot open metrics log '", metrics_path, "'");
  {
    std::ofstream cfg_out((fs::path(args.out_dir) / "run_config.txt").string());
    cfg_out << cfg.dump();
  }

  auto index = DatasetIndex::scan(args.data_root, "train");
  check(static_cast<int64_t>(index.files.size()) >= cfg.batch_size,
        "training split holds ", index.files.size(), " images, fewer than one batch of ",
        cfg.batch_size);
  auto samples = sample_inputs(args.data_root, cfg.sample_images);
  const int64_t size = gcfg.input_size;
  const uint64_t seed = static_cast<uint64_t>(cfg.seed);

  auto save_as = [&](const char* name) {
    const std::string path = (fs::path(args.out_dir) / name).string();
    save_checkpoint(to_checkpoint(st, cfg.fingerprint(), cfg.dump()), path);
    std::printf("checkpoint written to %s\n", path.c_str());
  };

  std::signal(SIGINT, on_sigint);
  for (; st.epoch < static_cast<uint64_t>(cfg.epochs); ++st.epoch, st.step_in_epoch = 0) {
    BatchStream<float> stream(index, cfg.batch_size, size, 2 * size,
                              mix_seed(seed, "epoch", st.epoch),
                              mix_seed(seed, "aug", st.epoch), /*train=*/true,
                              static_cast<int64_t>(st.step_in_epoch));
    while (auto batch = stream.next()) {
      const double t0 = now_ms();
      auto m = train_step(st, batch->pixels);
      const double wall = now_ms() - t0;
      metrics << m.log_line() << "\n";
      metrics.flush();
      std::printf("%s grad_norm=%.3e wall_ms=%.1f\n", m.log_line().c_str(), m.gen_grad_norm,
                  wall);
      std::fflush(stdout);

      if (cfg.checkpoint_every > 0 && st.global_step % cfg.checkpoint_every == 0)
        save_as("checkpoint_latest.lsc");
      if (g_interrupted) {
        std::printf("interrupted; saving checkpoint\n");
        save_as("checkpoint_latest.lsc");
        return 0;
      }
      if (cfg.max_steps > 0 && st.global_step >= static_cast<uint64_t>(cfg.max_steps)) {
        save_as("checkpoint_final.lsc");
        return 0;
      }
    }
    render_samples(st, samples, args.out_dir, st.epoch);
  }
  save_as("checkpoint_final.lsc");
  return 0;
}

struct LoadedModel {
  RunConfig cfg;
  TrainerState<float> state;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  auto c = load_checkpoint(checkpoint_path);
  check(!c.config_text.empty(), "checkpoint '", checkpoint_path, "' carries no config");
  RunConfig cfg = parse_config_text(c.config_text);
  cfg.validate();
  auto st = make_trainer<float>(cfg.generator_config(), cfg.scale, cfg.schedule(), cfg.weights(),
                                static_cast<uint64_t>(cfg.seed));
  restore_trainer(st, c, cfg.fingerprint());
  return {cfg, std::move(st)};
}

int cmd_generate(const std::string& checkpoint_path, const std::string& input_path,
                 const std::string& out_path, int64_t steps_right, int64_t steps_left) {
  check(steps_right >= 0 && steps_left >= 0, "step counts must be >= 0");
  auto model = load_model(checkpoint_path);
  const int64_t size = model.state.gen.config().input_size;

  auto input = augment_test(load_image<float>(input_path), size, size);
  auto out = model.state.gen.generate_multistep(model.state.gen_params, input, steps_right,
                                                steps_left);
  save_image(out_path, out);
  std::printf("wrote %s (%lldx%lld)\n", out_path.c_str(),
              static_cast<long long>(out.dim(2)), static_cast<long long>(out.dim(1)));

  // seam report: mean absolute difference across each panel boundary
  const std::string seam_path = out_path + ".seams.txt";
  std::ofstream seams(seam_path);
  const int64_t panels = 1 + steps_right + steps_left;
  for (int64_t i = 1; i < panels; ++i) {
    const int64_t x = i * size;
    double mad = 0.0;
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < size; ++y)
        mad += std::abs(
            static_cast<double>(out.data()[(c * size + y) * out.dim(2) + x - 1]) -
            static_cast<double>(out.data()[(c * size + y) * out.dim(2) + x]));
    mad /= static_cast<double>(3 * size);
    char line[96];
    std::snprintf(line, sizeof(line), "seam %lld x=%lld mad=%.6f",
                  static_cast<long long>(i), static_cast<long long>(x), mad);
    seams << line << "\n";
    std::printf("%s\n", line);
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_root) {
  auto model = load_model(checkpoint_path);
  const int64_t size = model.state.gen.config().input_size;
  auto index = DatasetIndex::scan(data_root, "test");
  auto mask = cosine_mask<float>(size, 2 * size);
  auto p = frozen_view(model.state.gen_params);

  double sum_l2 = 0.0, sum_psnr = 0.0;
  std::vector<std::vector<double>> pred_feats, real_feats;
  std::printf("one-step evaluation over %zu test images\n", index.files.size());
  std::printf("proxy metrics (pixel statistics) -- NOT comparable to Inception-based "
              "IS/FID benchmarks\n");
  for (const auto& f : index.files) {
    auto full = augment_test(load_image<float>(f), size, 2 * size);
    auto input = slice(full, 2, 0, size);
    auto out = reshape(model.state.gen.forward(p, reshape(input, {1, 3, size, size})),
                       {3, size, 2 * size});
    const double l2 = masked_rec_loss(reshape(full, {1, 3, size, 2 * size}),
                                      reshape(out, {1, 3, size, 2 * size}), mask)
                          .item();
    auto pred_right = slice(out, 2, size, size);
    auto real_right = slice(full, 2, size, size);
    const double snr = psnr(pred_right, real_right);
    sum_l2 += l2;
    sum_psnr += snr;
    pred_feats.push_back(pooled_features(pred_right));
    real_feats.push_back(pooled_features(real_right));
    std::printf("  %-40s masked_l2=%.6f psnr_db=%.2f\n",
                fs::path(f).filename().string().c_str(), l2, snr);
  }
  const double n = static_cast<double>(index.files.size());
  const double fd = frechet_distance(fit_gaussian(pred_feats), fit_gaussian(real_feats));
  std::printf("summary: images=%zu mean_masked_l2=%.6f mean_psnr_db=%.2f "
              "pixel_frechet=%.6f (proxy)\n",
              index.files.size(), sum_l2 / n, sum_psnr / n, fd);
  return 0;
}

int cmd_inspect(const std::string& checkpoint_path) {
  auto c = load_checkpoint(checkpoint_path);
  std::printf("checkpoint %s\n", checkpoint_path.c_str());
  std::printf("  version      %u\n", kCheckpointVersion);
  std::printf("  fingerprint  %016llx\n", static_cast<unsigned long long>(c.fingerprint));
  std::printf("  global_step  %llu\n", static_cast<unsigned long long>(c.global_step));
  std::printf("  epoch        %llu (step %llu within epoch)\n",
              static_cast<unsigned long long>(c.epoch),
              static_cast<unsigned long long>(c.step_in_epoch));
  std::printf("  gen_iter     %llu\n", static_cast<unsigned long long>(c.gen_iter));
  std::printf("  critic_steps %llu\n", static_cast<unsigned long long>(c.critic_steps));
  int64_t total = 0;
  for (const auto& e : c.entries) total += shape_size(e.shape);
  std::printf("  entries      %zu (%lld values)\n", c.entries.size(),
              static_cast<long long>(total));
  for (const auto& e : c.entries)
    std::printf("    %-40s f%-3d %s\n", e.name.c_str(), e.dtype_size * 8,
                shape_str(e.shape).c_str());
  std::printf("config:\n%s", c.config_text.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"longscape: recurrent image outpainting engine"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "Train the generator and critics");
  train->add_option("--config", targs.config_path, "key = value config file");
  train->add_option("--data", targs.data_root, "dataset root containing train/ (and test/)")
      ->required();
  train->add_option("--out", targs.out_dir, "output directory for checkpoints, logs and samples")
      ->required();
  train->add_option("--seed", targs.seed, "master seed (overrides config)");
  train->add_option("--scale", targs.scale, "model scale factor (overrides config)");
  train->add_option("--max-steps", targs.max_steps, "stop after N steps (overrides config)");
  train->add_option("--resume", targs.resume_path, "checkpoint to resume from");
  train->add_flag("--force", targs.force, "resume even if the config fingerprint differs");
  train->footer(RunConfig::help_table());

  std::string g_ckpt, g_in, g_out;
  int64_t steps_right = 1, steps_left = 0;
  auto* gen = app.add_subcommand("generate", "Outpaint an image recursively");
  gen->add_option("checkpoint", g_ckpt, "trained checkpoint (.lsc)")->required();
  gen->add_option("input", g_in, "input PNG (resized to the model's square input)")->required();
  gen->add_option("output", g_out, "output PNG path")->required();
  gen->add_option("--steps-right", steps_right, "panels to predict rightward");
  gen->add_option("--steps-left", steps_left, "panels to predict leftward");

  std::string e_ckpt, e_data;
  auto* eval = app.add_subcommand("eval", "Proxy evaluation on the test split");
  eval->add_option("checkpoint", e_ckpt, "trained checkpoint (.lsc)")->required();
  eval->add_option("--data", e_data, "dataset root containing test/")->required();

  std::string i_ckpt;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Describe a checkpoint file");
  inspect->add_option("checkpoint", i_ckpt, "checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(targs);
    if (*gen) return cmd_generate(g_ckpt, g_in, g_out, steps_right, steps_left);
    if (*eval) return cmd_eval(e_ckpt, e_data);
    if (*inspect) return cmd_inspect(i_ckpt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
