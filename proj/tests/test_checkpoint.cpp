#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "longscape/trainer.hpp"

using namespace longscape;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("longscape_ckpt_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainerState<float> tiny_trainer(uint64_t seed) {
  auto gcfg = GeneratorConfig::at_scale(0.25);
  TrainSchedule sched;
  sched.warmup_iters = 2;
  sched.batch_size = 2;
  sched.ncir_cutoff = 1;
  LossWeights w;
  return make_trainer<float>(gcfg, 0.25, sched, w, seed);
}

Tensor<float> step_batch(uint64_t step) {
  Rng rng(mix_seed(4242, "batch", step));
  return uniform_tensor<float>({2, 3, 32, 64}, rng, -0.9, 0.9);
}

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise exact") {
  auto dir = temp_dir("rt");
  auto st = tiny_trainer(5);
  train_step(st, step_batch(1));
  const std::string path = (dir / "model.lsc").string();
  save_checkpoint(to_checkpoint(st, 0xfeedULL, "k = v\n"), path);

  auto st2 = tiny_trainer(6);  // different init, fully overwritten by the load
  auto c = load_checkpoint(path);
  CHECK(c.config_text == "k = v\n");
  restore_trainer(st2, c, 0xfeedULL);
  CHECK(st2.global_step == st.global_step);
  CHECK(st2.gen_iter == st.gen_iter);
  for (const auto& name : st.gen_params.names()) {
    const auto& a = st.gen_params.entry(name);
    const auto& b = st2.gen_params.entry(name);
    REQUIRE(std::memcmp(a.value.data(), b.value.data(), sizeof(float) * a.value.size()) == 0);
    REQUIRE(std::memcmp(a.m.data(), b.m.data(), sizeof(float) * a.m.size()) == 0);
    REQUIRE(std::memcmp(a.v.data(), b.v.data(), sizeof(float) * a.v.size()) == 0);
  }

  // fingerprint guard, with an explicit override
  CHECK_THROWS_WITH_AS(restore_trainer(st2, c, 0xbeefULL), doctest::Contains("fingerprint"),
                       std::runtime_error);
  restore_trainer(st2, c, 0xbeefULL, /*force=*/true);
}

TEST_CASE("resume reproduces an uninterrupted run bitwise") {
  auto run_metrics = [](TrainerState<float>& st, uint64_t from, int n) {
    std::string log;
    for (int i = 0; i < n; ++i) log += train_step(st, step_batch(from + i)).log_line() + "\n";
    return log;
  };

  auto dir = temp_dir("resume");
  const std::string path = (dir / "mid.lsc").string();

  auto st = tiny_trainer(7);
  run_metrics(st, 1, 2);
  save_checkpoint(to_checkpoint(st, 1, ""), path);
  const std::string uninterrupted = run_metrics(st, 3, 3);

  auto st2 = tiny_trainer(7);
  restore_trainer(st2, load_checkpoint(path), 1);
  const std::string resumed = run_metrics(st2, 3, 3);
  CHECK(uninterrupted == resumed);
}

TEST_CASE("malformed checkpoints fail loudly but never crash") {
  auto dir = temp_dir("fuzz");
  auto st = tiny_trainer(9);
  const std::string path = (dir / "model.lsc").string();
  save_checkpoint(to_checkpoint(st, 2, "scale = 0.25\n"), path);
  auto bytes = slurp(path);
  REQUIRE(bytes.size() > 1000);

  // truncation at 50 random offsets
  Rng rng(31);
  const std::string cut = (dir / "cut.lsc").string();
  for (int i = 0; i < 50; ++i) {
    const auto keep = static_cast<size_t>(rng.below(bytes.size()));
    spit(cut, std::vector<uint8_t>(bytes.begin(), bytes.begin() + keep));
    CHECK_THROWS_AS(load_checkpoint(cut), std::runtime_error);
  }

  // empty file -> magic error
  spit(cut, {});
  CHECK_THROWS_WITH_AS(load_checkpoint(cut), doctest::Contains("magic"), std::runtime_error);

  // version bump -> version error
  auto bumped = bytes;
  bumped[8] += 1;
  spit(cut, bumped);
  CHECK_THROWS_WITH_AS(load_checkpoint(cut), doctest::Contains("version"), std::runtime_error);

  // flipped magic byte
  auto bad = bytes;
  bad[0] = 'X';
  spit(cut, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(cut), doctest::Contains("magic"), std::runtime_error);

  // the original still loads
  auto c = load_checkpoint(path);
  CHECK(c.config_text == "scale = 0.25\n");
}

TEST_CASE("atomic save leaves no partial file behind") {
  auto dir = temp_dir("atomic");
  auto st = tiny_trainer(11);
  const std::string path = (dir / "model.lsc").string();
  save_checkpoint(to_checkpoint(st, 3, ""), path);
  auto first = slurp(path);
  train_step(st, step_batch(1));
  save_checkpoint(to_checkpoint(st, 3, ""), path);
  auto second = slurp(path);
  CHECK(first != second);
  CHECK(!fs::exists(path + ".tmp"));
  // the newer file is complete and loadable
  auto c = load_checkpoint(path);
  CHECK(c.global_step == 1);
}
