#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace longscape {

namespace detail {
inline void format_parts(std::ostringstream&) {}
template <typename Head, typename... Tail>
void format_parts(std::ostringstream& os, Head&& head, Tail&&... tail) {
  os << head;
  format_parts(os, std::forward<Tail>(tail)...);
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(Parts&&... parts) {
  std::ostringstream os;
  detail::format_parts(os, std::forward<Parts>(parts)...);
  throw std::runtime_error(os.str());
}

template <typename... Parts>
inline void check(bool ok, Parts&&... parts) {
  if (!ok) fail(std::forward<Parts>(parts)...);
}

// splitmix64: deterministic across platforms, one stream per (seed) value.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }

  bool coin() { return (next() & 1ULL) != 0; }

  double normal() {
    // Box-Muller; u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

 private:
  uint64_t state_;
};

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

inline uint64_t mix_seed(uint64_t a, const std::string& tag, uint64_t c) {
  return mix_seed(mix_seed(a, fnv1a64(tag)), c);
}

// Number of threads convolution/matmul kernels may use. Capped by the
// LONGSCAPE_THREADS environment variable; defaults to the hardware count.
int kernel_threads();

}  // namespace longscape
