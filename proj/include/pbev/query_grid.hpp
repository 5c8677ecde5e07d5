#pragma once

// Regular lattice of query vectors with bilinear lookup. Nodes sit on cell
// corners spanning [0, 1]^2 inclusive: node (row i, col j) is at
// (x, y) = (j / (cols - 1), i / (rows - 1)). Points outside the square are
// clamped to the border.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "pbev/common.hpp"

namespace pbev {

// Four lattice nodes and their bilinear weights (partition of unity).
struct BilinearStencil {
  std::array<std::size_t, 4> node{};  // flat row-major node indices
  std::array<double, 4> weight{};
};

inline BilinearStencil bilinear_stencil(std::size_t rows, std::size_t cols, Vec2 p) {
  if (!is_finite(p)) throw DomainError("bilinear lookup at a non-finite point");
  if (rows < 2 || cols < 2) throw ShapeError("bilinear lattice needs at least 2x2 nodes");
  const double gx = std::clamp(p.x, 0.0, 1.0) * static_cast<double>(cols - 1);
  const double gy = std::clamp(p.y, 0.0, 1.0) * static_cast<double>(rows - 1);
  const std::size_t j0 = std::min(static_cast<std::size_t>(gx), cols - 2);
  const std::size_t i0 = std::min(static_cast<std::size_t>(gy), rows - 2);
  const double fx = gx - static_cast<double>(j0);
  const double fy = gy - static_cast<double>(i0);
  BilinearStencil s;
  s.node = {i0 * cols + j0, i0 * cols + j0 + 1, (i0 + 1) * cols + j0, (i0 + 1) * cols + j0 + 1};
  s.weight = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
  return s;
}

class QueryGrid {
 public:
  QueryGrid(std::size_t rows, std::size_t cols, std::size_t channels)
      : rows_(rows), cols_(cols), channels_(channels), values_(rows * cols * channels, 0.0) {
    if (rows < 2 || cols < 2) throw ShapeError("query grid needs at least 2x2 nodes");
    if (channels < 1) throw ShapeError("query grid needs at least one channel");
  }

  QueryGrid(std::size_t rows, std::size_t cols, std::size_t channels, std::vector<double> values)
      : QueryGrid(rows, cols, channels) {
    if (values.size() != values_.size()) throw ShapeError("query grid value count mismatch");
    for (double v : values) {
      if (!std::isfinite(v)) throw DomainError("query grid values must be finite");
    }
    values_ = std::move(values);
  }

  // i.i.d. normal(0, stddev) initialization.
  static QueryGrid random_normal(std::size_t rows, std::size_t cols, std::size_t channels, Rng& rng,
                                 double stddev = 0.02) {
    QueryGrid g(rows, cols, channels);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : g.values_) v = dist(rng);
    return g;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t channels() const { return channels_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  std::span<const double> node(std::size_t flat) const { return {values_.data() + flat * channels_, channels_}; }
  std::span<const double> node(std::size_t row, std::size_t col) const { return node(row * cols_ + col); }
  std::span<double> node(std::size_t row, std::size_t col) {
    return {values_.data() + (row * cols_ + col) * channels_, channels_};
  }

  // Spacing between adjacent nodes in normalized units.
  double spacing_x() const { return 1.0 / static_cast<double>(cols_ - 1); }
  double spacing_y() const { return 1.0 / static_cast<double>(rows_ - 1); }

 private:
  std::size_t rows_, cols_, channels_;
  std::vector<double> values_;
};

inline BilinearStencil interpolation_jacobian(const QueryGrid& grid, Vec2 p) {
  return bilinear_stencil(grid.rows(), grid.cols(), p);
}

// One C-vector per point, row-major (points.size() x channels).
inline std::vector<double> interpolate(const QueryGrid& grid, std::span<const Vec2> points) {
  const std::size_t c = grid.channels();
  std::vector<double> out(points.size() * c, 0.0);
  for (std::size_t n = 0; n < points.size(); ++n) {
    const BilinearStencil s = interpolation_jacobian(grid, points[n]);
    double* dst = out.data() + n * c;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto src = grid.node(s.node[k]);
      const double w = s.weight[k];
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
    }
  }
  return out;
}

}  // namespace pbev
