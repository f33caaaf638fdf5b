#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "longscape/tensor.hpp"

namespace longscape {

// Interleaved 8-bit RGB rows, top to bottom.
struct RawImage {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> rgb;
};

RawImage read_png(const std::string& path);
void write_png(const std::string& path, const RawImage& img);

// v in [0,255] maps to v/127.5 - 1.
template <typename T>
Tensor<T> to_tensor(const RawImage& img) {
  Tensor<T> t({3, img.height, img.width});
  const int64_t plane = img.height * img.width;
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      for (int64_t c = 0; c < 3; ++c)
        t.data()[c * plane + y * img.width + x] =
            static_cast<T>(img.rgb[static_cast<size_t>((y * img.width + x) * 3 + c)] / T(127.5) -
                           T(1));
  return t;
}

template <typename T>
RawImage to_image(const Tensor<T>& t) {
  check(t.rank() == 3 && t.dim(0) == 3, "to_image: 3xHxW tensor required, got ",
        shape_str(t.shape()));
  RawImage img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.rgb.resize(static_cast<size_t>(3 * img.height * img.width));
  const int64_t plane = img.height * img.width;
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        double v = (static_cast<double>(t.data()[c * plane + y * img.width + x]) + 1.0) * 127.5;
        v = std::min(255.0, std::max(0.0, v));
        img.rgb[static_cast<size_t>((y * img.width + x) * 3 + c)] =
            static_cast<uint8_t>(std::lround(v));
      }
  return img;
}

template <typename T>
Tensor<T> load_image(const std::string& path) {
  return to_tensor<T>(read_png(path));
}

template <typename T>
void save_image(const std::string& path, const Tensor<T>& t) {
  write_png(path, to_image(t));
}

}  // namespace longscape
