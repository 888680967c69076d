#pragma once

#include <cstddef>
#include <vector>

#include "cslab/error.hpp"

namespace cslab {

// Plain row-major matrix for the non-differentiated analysis paths.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> data)
      : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != r * c) throw ShapeError("Mat: buffer size does not match dims");
  }

  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  const double* row(std::size_t r) const { return &v[r * cols]; }
  double* row(std::size_t r) { return &v[r * cols]; }
  bool empty() const { return rows == 0 || cols == 0; }
};

}  // namespace cslab
