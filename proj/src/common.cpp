#include "longscape/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace longscape {

int kernel_threads() {
  static const int cached = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("LONGSCAPE_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) return static_cast<int>(std::min<long>(v, hw));
    }
    return hw;
  }();
  return cached;
}

}  // namespace longscape
