#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "longscape/ops.hpp"

namespace longscape {

// Peak signal-to-noise ratio on [-1,1] images (peak-to-peak 2), capped at
// 99 dB for perfect predictions.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double cap = 99.0) {
  check(a.shape() == b.shape(), "psnr: shape mismatch");
  double mse = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(4.0 / mse));
}

// grid x grid average-pooled RGB cells, flattened to a 3*grid*grid vector.
template <typename T>
std::vector<double> pooled_features(const Tensor<T>& img, int64_t grid = 8) {
  check(img.rank() == 3 && img.dim(0) == 3, "pooled_features: 3xHxW image required");
  const int64_t h = img.dim(1), w = img.dim(2);
  check(h % grid == 0 && w % grid == 0, "pooled_features: extents must divide by ", grid);
  const int64_t ch = h / grid, cw = w / grid;
  std::vector<double> f(static_cast<size_t>(3 * grid * grid), 0.0);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t gy = 0; gy < grid; ++gy)
      for (int64_t gx = 0; gx < grid; ++gx) {
        double acc = 0.0;
        for (int64_t y = 0; y < ch; ++y)
          for (int64_t x = 0; x < cw; ++x)
            acc += static_cast<double>(img.data()[c * h * w + (gy * ch + y) * w + gx * cw + x]);
        f[static_cast<size_t>((c * grid + gy) * grid + gx)] =
            acc / static_cast<double>(ch * cw);
      }
  return f;
}

struct Gaussian {
  int64_t dim = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim row-major
};

inline Gaussian fit_gaussian(const std::vector<std::vector<double>>& samples) {
  check(!samples.empty(), "fit_gaussian: no samples");
  const auto dim = static_cast<int64_t>(samples[0].size());
  Gaussian g{dim, std::vector<double>(static_cast<size_t>(dim), 0.0),
             std::vector<double>(static_cast<size_t>(dim * dim), 0.0)};
  for (const auto& s : samples)
    for (int64_t i = 0; i < dim; ++i) g.mean[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
  const double n = static_cast<double>(samples.size());
  for (auto& m : g.mean) m /= n;
  if (samples.size() < 2) return g;
  for (const auto& s : samples)
    for (int64_t i = 0; i < dim; ++i) {
      const double di = s[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)];
      for (int64_t j = i; j < dim; ++j) {
        const double dj = s[static_cast<size_t>(j)] - g.mean[static_cast<size_t>(j)];
        g.cov[static_cast<size_t>(i * dim + j)] += di * dj;
      }
    }
  for (int64_t i = 0; i < dim; ++i)
    for (int64_t j = i; j < dim; ++j) {
      const double v = g.cov[static_cast<size_t>(i * dim + j)] / (n - 1.0);
      g.cov[static_cast<size_t>(i * dim + j)] = v;
      g.cov[static_cast<size_t>(j * dim + i)] = v;
    }
  return g;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. `a` is destroyed;
// eigenvectors come back as columns of `vecs`.
inline void jacobi_eigen(std::vector<double> a, int64_t n, std::vector<double>& evals,
                         std::vector<double>& vecs) {
  evals.assign(static_cast<size_t>(n), 0.0);
  vecs.assign(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) vecs[static_cast<size_t>(i * n + i)] = 1.0;
  auto at = [&](int64_t i, int64_t j) -> double& { return a[static_cast<size_t>(i * n + j)]; };
  auto vt = [&](int64_t i, int64_t j) -> double& { return vecs[static_cast<size_t>(i * n + j)]; };

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off <= 1e-22 * static_cast<double>(n * n)) break;
    for (int64_t p = 0; p < n - 1; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int64_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  for (int64_t i = 0; i < n; ++i) evals[static_cast<size_t>(i)] = at(i, i);
}

namespace eval_detail {

inline std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b,
                                     int64_t n) {
  std::vector<double> c(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < n; ++k) {
      const double av = a[static_cast<size_t>(i * n + k)];
      if (av == 0.0) continue;
      for (int64_t j = 0; j < n; ++j)
        c[static_cast<size_t>(i * n + j)] += av * b[static_cast<size_t>(k * n + j)];
    }
  return c;
}

// Symmetric PSD square root via the eigendecomposition.
inline std::vector<double> sqrtm_psd(const std::vector<double>& m, int64_t n) {
  std::vector<double> evals, vecs;
  jacobi_eigen(m, n, evals, vecs);
  std::vector<double> out(static_cast<size_t>(n * n), 0.0);
  for (int64_t k = 0; k < n; ++k) {
    const double lam = std::sqrt(std::max(0.0, evals[static_cast<size_t>(k)]));
    if (lam == 0.0) continue;
    for (int64_t i = 0; i < n; ++i) {
      const double vik = vecs[static_cast<size_t>(i * n + k)] * lam;
      if (vik == 0.0) continue;
      for (int64_t j = 0; j < n; ++j)
        out[static_cast<size_t>(i * n + j)] += vik * vecs[static_cast<size_t>(j * n + k)];
    }
  }
  return out;
}

}  // namespace eval_detail

// Squared Frechet distance between two Gaussians:
//   ||mu1-mu2||^2 + tr(C1 + C2 - 2 (C1^1/2 C2 C1^1/2)^1/2).
inline double frechet_distance(const Gaussian& g1, const Gaussian& g2) {
  check(g1.dim == g2.dim && g1.dim >= 1, "frechet_distance: dimension mismatch");
  const int64_t n = g1.dim;
  double dist = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = g1.mean[static_cast<size_t>(i)] - g2.mean[static_cast<size_t>(i)];
    dist += d * d;
  }
  double tr1 = 0.0, tr2 = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    tr1 += g1.cov[static_cast<size_t>(i * n + i)];
    tr2 += g2.cov[static_cast<size_t>(i * n + i)];
  }
  auto s1 = eval_detail::sqrtm_psd(g1.cov, n);
  auto inner = eval_detail::matmul_sq(eval_detail::matmul_sq(s1, g2.cov, n), s1, n);
  // symmetrize before the final eigensolve
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (inner[static_cast<size_t>(i * n + j)] +
                              inner[static_cast<size_t>(j * n + i)]);
      inner[static_cast<size_t>(i * n + j)] = v;
      inner[static_cast<size_t>(j * n + i)] = v;
    }
  std::vector<double> evals, vecs;
  jacobi_eigen(inner, n, evals, vecs);
  double tr_sqrt = 0.0;
  for (double v : evals) tr_sqrt += std::sqrt(std::max(0.0, v));
  return dist + tr1 + tr2 - 2.0 * tr_sqrt;
}

}  // namespace longscape
