#pragma once

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "longscape/image_io.hpp"
#include "longscape/ops.hpp"

namespace longscape {

struct DatasetIndex {
  std::string root;
  std::string split;
  std::vector<std::string> files;  // sorted; lexicographic order is canonical

  static DatasetIndex scan(const std::string& root, const std::string& split) {
    namespace fs = std::filesystem;
    DatasetIndex idx{root, split, {}};
    const fs::path dir = fs::path(root) / split;
    check(fs::is_directory(dir), "dataset split directory '", dir.string(), "' does not exist");
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      if (e.path().extension() == ".png") idx.files.push_back(e.path().string());
    }
    std::sort(idx.files.begin(), idx.files.end());
    check(!idx.files.empty(), "no .png files under '", dir.string(), "'");
    return idx;
  }
};

// Bilinear resampling with half-pixel centers; same-size input passes through
// unchanged.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& img, int64_t out_h, int64_t out_w) {
  check(img.rank() == 3, "bilinear_resize: CHW tensor required");
  check(out_h >= 1 && out_w >= 1, "bilinear_resize: bad output size");
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (int64_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const auto y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const auto x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* p = img.data() + ch * h * w;
        const double top = (1.0 - wx) * p[y0 * w + x0] + wx * p[y0 * w + x1];
        const double bot = (1.0 - wx) * p[y1 * w + x0] + wx * p[y1 * w + x1];
        out.data()[ch * out_h * out_w + oy * out_w + ox] =
            static_cast<T>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

struct AugmentPlan {
  int64_t top = 0;
  int64_t left = 0;
  bool flip = false;
};

inline AugmentPlan augment_plan(uint64_t seed, int64_t max_top, int64_t max_left) {
  Rng rng(seed);
  AugmentPlan p;
  p.top = static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_top + 1)));
  p.left = static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_left + 1)));
  p.flip = rng.coin();
  return p;
}

// Training augmentation: resize to 9/8 the target height and 27/16 the target
// width, crop a uniformly random window, flip half the time. Deterministic
// per seed.
template <typename T>
Tensor<T> augment_train(const Tensor<T>& img, uint64_t seed, int64_t out_h, int64_t out_w) {
  const int64_t rh = out_h * 9 / 8;
  const int64_t rw = out_w * 27 / 16;
  auto resized = bilinear_resize(img, rh, rw);
  const AugmentPlan plan = augment_plan(seed, rh - out_h, rw - out_w);
  auto crop = slice(slice(resized, 1, plan.top, out_h), 2, plan.left, out_w);
  return plan.flip ? flip(crop, 2) : crop;
}

template <typename T>
Tensor<T> augment_test(const Tensor<T>& img, int64_t out_h, int64_t out_w) {
  return bilinear_resize(img, out_h, out_w);
}

template <typename T>
struct ImageBatch {
  Tensor<T> pixels;  // Bx3xHxW in [-1,1]
  std::vector<std::string> paths;
  std::vector<uint64_t> seeds;
};

inline std::vector<size_t> epoch_order(size_t n, uint64_t epoch_seed) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(epoch_seed);
  for (size_t i = n; i > 1; --i) {
    const auto j = static_cast<size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

// One epoch of batches: shuffled per epoch_seed, short final batch dropped,
// decoded and augmented ahead of the consumer by a bounded worker.
template <typename T>
class BatchStream {
 public:
  BatchStream(const DatasetIndex& index, int64_t batch_size, int64_t out_h, int64_t out_w,
              uint64_t epoch_seed, uint64_t aug_seed_base, bool train_mode,
              int64_t skip_batches = 0, size_t prefetch = 2)
      : index_(index),
        batch_size_(batch_size),
        out_h_(out_h),
        out_w_(out_w),
        aug_seed_base_(aug_seed_base),
        train_mode_(train_mode),
        prefetch_(std::max<size_t>(1, prefetch)) {
    check(batch_size_ >= 1, "batch_stream: batch size must be >= 1");
    check(!index.files.empty(), "batch_stream: empty dataset");
    order_ = epoch_order(index.files.size(), epoch_seed);
    next_batch_ = skip_batches;
    total_batches_ = static_cast<int64_t>(order_.size()) / batch_size_;
    worker_ = std::thread([this] { run(); });
  }

  ~BatchStream() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  int64_t batches_per_epoch() const { return total_batches_; }

  std::optional<ImageBatch<T>> next() {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [this] { return !queue_.empty() || done_ || error_; });
    if (error_) std::rethrow_exception(error_);
    if (queue_.empty()) return std::nullopt;
    ImageBatch<T> b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  void run() {
    try {
      for (int64_t bi = next_batch_; bi < total_batches_; ++bi) {
        ImageBatch<T> batch;
        batch.pixels = Tensor<T>({batch_size_, 3, out_h_, out_w_});
        const int64_t per = 3 * out_h_ * out_w_;
        for (int64_t k = 0; k < batch_size_; ++k) {
          const size_t slot = static_cast<size_t>(bi * batch_size_ + k);
          const std::string& path = index_.files[order_[slot]];
          const uint64_t seed = mix_seed(aug_seed_base_, "aug", slot);
          auto img = load_image<T>(path);
          auto aug = train_mode_ ? augment_train(img, seed, out_h_, out_w_)
                                 : augment_test(img, out_h_, out_w_);
          std::copy(aug.data(), aug.data() + per, batch.pixels.data() + k * per);
          batch.paths.push_back(path);
          batch.seeds.push_back(seed);
        }
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return queue_.size() < prefetch_ || stop_; });
        if (stop_) return;
        queue_.push_back(std::move(batch));
        cv_.notify_all();
      }
      std::lock_guard<std::mutex> lk(mu_);
      done_ = true;
      cv_.notify_all();
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu_);
      error_ = std::current_exception();
      done_ = true;
      cv_.notify_all();
    }
  }

  DatasetIndex index_;
  int64_t batch_size_;
  int64_t out_h_, out_w_;
  uint64_t aug_seed_base_;
  bool train_mode_;
  size_t prefetch_;
  std::vector<size_t> order_;
  int64_t next_batch_ = 0;
  int64_t total_batches_ = 0;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<ImageBatch<T>> queue_;
  bool stop_ = false;
  bool done_ = false;
  std::exception_ptr error_;
  std::thread worker_;
};

}  // namespace longscape
