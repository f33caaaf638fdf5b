#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <png.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "longscape/data.hpp"
#include "oracles.hpp"

using namespace longscape;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("longscape_data_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Grayscale or 16-bit writers for the decode edge cases.
void write_png_custom(const std::string& path, int64_t w, int64_t h, int bit_depth,
                      int color_type, const std::vector<uint8_t>& bytes, int64_t row_bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  REQUIRE(setjmp(png_jmpbuf(png)) == 0);
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(bytes.data() + y * row_bytes);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace

TEST_CASE("image normalization endpoints and round trip") {
  auto dir = temp_dir("io");
  RawImage img;
  img.width = 2;
  img.height = 2;
  img.rgb = {0, 255, 128, 64, 200, 30, 255, 0, 17, 99, 1, 254};
  const std::string path = (dir / "a.png").string();
  write_png(path, img);

  auto t = load_image<float>(path);
  REQUIRE(t.shape() == Shape{3, 2, 2});
  // values follow v/127.5 - 1, planar layout
  for (int64_t y = 0; y < 2; ++y)
    for (int64_t x = 0; x < 2; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const double b = img.rgb[static_cast<size_t>((y * 2 + x) * 3 + c)];
        CHECK(t.data()[c * 4 + y * 2 + x] ==
              doctest::Approx(b / 127.5 - 1.0).epsilon(1e-6));
      }
  CHECK(t.data()[0 * 4 + 0] == doctest::Approx(-1.0));  // byte 0
  CHECK(t.data()[1 * 4 + 0] == doctest::Approx(1.0));   // byte 255

  // 8-bit round trip is exact
  const std::string path2 = (dir / "b.png").string();
  save_image(path2, t);
  auto back = read_png(path2);
  CHECK(back.rgb == img.rgb);

  // ... and a bijection over the whole byte grid
  RawImage grid;
  grid.width = 16;
  grid.height = 16;
  grid.rgb.resize(16 * 16 * 3);
  for (int v = 0; v < 256; ++v)
    for (int c = 0; c < 3; ++c) grid.rgb[static_cast<size_t>(v * 3 + c)] = static_cast<uint8_t>(v);
  auto full = to_image(to_tensor<float>(grid));
  CHECK(full.rgb == grid.rgb);

  // unreadable / non-PNG files fail with a descriptive error
  const std::string junk = (dir / "junk.png").string();
  {
    std::ofstream f(junk);
    f << "not a png";
  }
  CHECK_THROWS_WITH_AS(load_image<float>(junk), doctest::Contains("not a PNG"),
                       std::runtime_error);
}

TEST_CASE("grayscale expands to three channels; 16-bit is rejected") {
  auto dir = temp_dir("gray");
  {
    std::vector<uint8_t> gray = {10, 200, 30, 40};
    const std::string path = (dir / "g.png").string();
    write_png_custom(path, 2, 2, 8, PNG_COLOR_TYPE_GRAY, gray, 2);
    auto t = load_image<float>(path);
    REQUIRE(t.shape() == Shape{3, 2, 2});
    for (int64_t c = 0; c < 3; ++c)
      CHECK(t.data()[c * 4 + 0] == doctest::Approx(10 / 127.5 - 1.0).epsilon(1e-6));
  }
  {
    std::vector<uint8_t> deep(2 * 2 * 2, 0x42);
    const std::string path = (dir / "deep.png").string();
    write_png_custom(path, 2, 2, 16, PNG_COLOR_TYPE_GRAY, deep, 4);
    CHECK_THROWS_WITH_AS(load_image<float>(path), doctest::Contains("bit depth"),
                         std::runtime_error);
  }
  CHECK_THROWS(load_image<float>((dir / "missing.png").string()));
}

TEST_CASE("train augmentation geometry and determinism") {
  Rng rng(1);
  auto img = uniform_tensor<float>({3, 50, 70}, rng, -1.0, 1.0);
  auto a = augment_train(img, 42, 128, 256);
  CHECK(a.shape() == Shape{3, 128, 256});
  auto b = augment_train(img, 42, 128, 256);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
  auto c = augment_train(img, 43, 128, 256);
  CHECK(std::memcmp(a.data(), c.data(), sizeof(float) * a.size()) != 0);

  for (int64_t i = 0; i < a.size(); ++i) {
    REQUIRE(a.data()[i] <= 1.0f);
    REQUIRE(a.data()[i] >= -1.0f);
  }
}

TEST_CASE("augmentation decisions are uniform over their ranges") {
  int64_t flips = 0;
  std::set<int64_t> tops, lefts;
  for (uint64_t seed = 0; seed < 10000; ++seed) {
    auto p = augment_plan(seed, 16, 176);
    flips += p.flip ? 1 : 0;
    tops.insert(p.top);
    lefts.insert(p.left);
    REQUIRE(p.top >= 0);
    REQUIRE(p.top <= 16);
    REQUIRE(p.left >= 0);
    REQUIRE(p.left <= 176);
  }
  const double freq = static_cast<double>(flips) / 10000.0;
  CHECK(freq >= 0.48);
  CHECK(freq <= 0.52);
  CHECK(tops.size() == 17);
  CHECK(lefts.size() == 177);
}

TEST_CASE("test-time resize is deterministic and idempotent") {
  Rng rng(2);
  auto img = uniform_tensor<float>({3, 37, 91}, rng, -1.0, 1.0);
  auto a = augment_test(img, 128, 256);
  CHECK(a.shape() == Shape{3, 128, 256});

  auto already = uniform_tensor<float>({3, 128, 256}, rng, -1.0, 1.0);
  auto same = augment_test(already, 128, 256);
  CHECK(oracle::max_abs(cast<double>(sub(same, already))) <= 1e-6);

  auto twice = augment_test(a, 128, 256);
  CHECK(oracle::max_abs(cast<double>(sub(twice, a))) <= 1e-6);
}

TEST_CASE("batch stream shuffles, drops the short tail, and prefetches") {
  auto dir = temp_dir("stream");
  fs::create_directories(dir / "train");
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", i);
    auto t = uniform_tensor<float>({3, 9, 11}, rng, -1.0, 1.0);
    save_image((dir / "train" / name).string(), t);
  }
  auto index = DatasetIndex::scan(dir.string(), "train");
  REQUIRE(index.files.size() == 100);
  CHECK(std::is_sorted(index.files.begin(), index.files.end()));

  auto collect = [&](uint64_t epoch_seed) {
    BatchStream<float> stream(index, 32, 16, 32, epoch_seed, 7, /*train=*/true);
    std::vector<std::string> paths;
    int64_t batches = 0;
    while (auto b = stream.next()) {
      CHECK(b->pixels.shape() == Shape{32, 3, 16, 32});
      for (const auto& p : b->paths) paths.push_back(p);
      ++batches;
    }
    CHECK(batches == 3);
    return paths;
  };

  auto p1 = collect(11);
  auto p2 = collect(11);
  auto p3 = collect(12);
  CHECK(p1 == p2);
  CHECK(p1 != p3);
  REQUIRE(p1.size() == 96);

  // exactly the first 96 of the epoch's shuffled order, each exactly once
  auto order = epoch_order(100, 11);
  std::vector<std::string> want;
  for (size_t i = 0; i < 96; ++i) want.push_back(index.files[order[i]]);
  CHECK(p1 == want);
  std::set<std::string> unique(p1.begin(), p1.end());
  CHECK(unique.size() == 96);

  CHECK_THROWS(DatasetIndex::scan(dir.string(), "test"));
}
