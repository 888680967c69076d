#pragma once

// Test-only reference implementations, written independently of the library
// paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

// Direct sliding-window convolution, quadruple loop, no shared code with the
// library op.
inline std::vector<double> conv2d_reference(
    const std::vector<double>& x, std::size_t n, std::size_t ci, std::size_t h,
    std::size_t w, const std::vector<double>& kern, std::size_t co,
    std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
    std::size_t& ho_out, std::size_t& wo_out) {
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  ho_out = ho;
  wo_out = wo;
  std::vector<double> out(n * co * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < ci; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                const long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(h) || iw >= static_cast<long>(w))
                  continue;
                acc += x[((b * ci + ic) * h + ih) * w + iw] *
                       kern[((oc * ci + ic) * kh + i) * kw + j];
              }
          out[((b * co + oc) * ho + oh) * wo + ow] = acc;
        }
  return out;
}

// Hand-unrolled SGD-with-momentum recurrence on a scalar parameter.
inline double sgd_two_step_reference(double p, const std::vector<double>& grads,
                                     double lr, double momentum, double weight_decay) {
  double v = 0.0;
  for (double g : grads) {
    v = momentum * v + (g + weight_decay * p);
    p = p - lr * v;
  }
  return p;
}

// Population mean/std of a vector.
inline void mean_std_reference(const std::vector<double>& xs, double& mean, double& std) {
  mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  std = std::sqrt(sq / static_cast<double>(xs.size()));
}

// Two-stage (within-layer then across-layer) mean.
inline double layered_mean_reference(const std::vector<std::vector<double>>& layers) {
  double acc = 0.0;
  for (const auto& layer : layers) {
    double m = std::accumulate(layer.begin(), layer.end(), 0.0) /
               static_cast<double>(layer.size());
    acc += m;
  }
  return acc / static_cast<double>(layers.size());
}

// Selectivity of one unit from class-conditional means, straight from the
// definition.
inline double selectivity_reference(const std::vector<double>& class_means, double eps) {
  const double mu_max = *std::max_element(class_means.begin(), class_means.end());
  double rest = 0.0;
  bool skipped_max = false;
  for (double m : class_means) {
    if (!skipped_max && m == mu_max) {
      skipped_max = true;
      continue;
    }
    rest += m;
  }
  const double mu_rest = rest / static_cast<double>(class_means.size() - 1);
  return (mu_max - mu_rest) / (mu_max + mu_rest + eps);
}

// One-sided Jacobi SVD of a column-centered matrix; returns squared singular
// values sorted descending. Used as the independent PCA reference.
inline std::vector<double> centered_svd_sq_reference(std::vector<double> a,
                                                     std::size_t rows, std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < rows; ++i) m += a[i * cols + j];
    m /= static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) a[i * cols + j] -= m;
  }
  // Orthogonalize columns pairwise until convergence.
  bool changed = true;
  int sweeps = 0;
  while (changed && sweeps++ < 100) {
    changed = false;
    for (std::size_t p = 0; p + 1 < cols; ++p)
      for (std::size_t q = p + 1; q < cols; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          const double xp = a[i * cols + p], xq = a[i * cols + q];
          app += xp * xp;
          aqq += xq * xq;
          apq += xp * xq;
        }
        if (std::abs(apq) <= 1e-14 * std::sqrt(app * aqq) || apq == 0.0) continue;
        changed = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double xp = a[i * cols + p], xq = a[i * cols + q];
          a[i * cols + p] = c * xp - s * xq;
          a[i * cols + q] = s * xp + c * xq;
        }
      }
  }
  std::vector<double> sq(cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t i = 0; i < rows; ++i) sq[j] += a[i * cols + j] * a[i * cols + j];
  std::sort(sq.begin(), sq.end(), std::greater<>());
  return sq;
}

// PCA component count from an eigen/singular spectrum.
inline std::size_t count_for_threshold(const std::vector<double>& spectrum_desc,
                                       double threshold) {
  double total = std::accumulate(spectrum_desc.begin(), spectrum_desc.end(), 0.0);
  if (total <= 0.0) return 0;
  double cum = 0.0;
  for (std::size_t k = 0; k < spectrum_desc.size(); ++k) {
    cum += spectrum_desc[k];
    if (cum / total >= threshold) return k + 1;
  }
  return spectrum_desc.size();
}

}  // namespace oracle
