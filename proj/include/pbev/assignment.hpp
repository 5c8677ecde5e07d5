#pragma once

// Matching costs and prediction -> target assignment strategies.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pbev/common.hpp"
#include "pbev/geometry.hpp"

namespace pbev {

// Dense row-major matrix with finite entries (predictions x targets).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("matrix data size mismatch");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

 private:
  std::size_t rows_{0}, cols_{0};
  std::vector<double> data_;
};

using CostMatrix = Matrix;

struct CostWeights {
  double lambda_cls{2.0};
  double lambda_reg{0.25};
  double focal_alpha{0.25};
  double focal_gamma{2.0};
};

inline void validate(const CostWeights& w) {
  if (!(w.lambda_cls >= 0 && w.lambda_reg >= 0 && w.focal_alpha >= 0 && w.focal_gamma >= 0))
    throw DomainError("cost weights must be nonnegative");
}

struct AssignmentResult {
  std::vector<std::optional<std::size_t>> pred_to_target;
  std::vector<std::vector<std::size_t>> target_to_preds;

  AssignmentResult() = default;
  AssignmentResult(std::size_t preds, std::size_t targets) : pred_to_target(preds), target_to_preds(targets) {}

  void assign(std::size_t pred, std::size_t target) {
    pred_to_target[pred] = target;
    target_to_preds[target].push_back(pred);
  }

  // (pred, target) pairs ordered by prediction index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < pred_to_target.size(); ++i)
      if (pred_to_target[i]) out.emplace_back(i, *pred_to_target[i]);
    return out;
  }

  std::size_t matched_count() const {
    return static_cast<std::size_t>(std::count_if(pred_to_target.begin(), pred_to_target.end(),
                                                  [](const auto& t) { return t.has_value(); }));
  }

  double total_cost(const CostMatrix& cost) const {
    double acc = 0.0;
    for (const auto& [i, j] : pairs()) acc += cost(i, j);
    return acc;
  }

  // Each target matched at most once as well as each prediction.
  bool is_one_to_one() const {
    return std::all_of(target_to_preds.begin(), target_to_preds.end(), [](const auto& v) { return v.size() <= 1; });
  }
};

// Losses ---------------------------------------------------------------------

inline double focal_loss(double pred_prob, int target, double alpha, double gamma) {
  const double p = std::clamp(pred_prob, 1e-7, 1.0 - 1e-7);
  const double pt = target == 1 ? p : 1.0 - p;
  return -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
}

// Mean absolute difference over the 10 box parameters.
inline double l1_box_loss(const BevBox& pred, const BevBox& gt) {
  const BoxParams a = pred.params(), b = gt.params();
  double acc = 0.0;
  for (std::size_t k = 0; k < kBoxParams; ++k) acc += std::abs(a[k] - b[k]);
  return acc / static_cast<double>(kBoxParams);
}

// Probability the prediction assigns to class `cls`: its confidence when the
// predicted class matches, otherwise zero.
inline double class_probability(const BevBox& pred, int cls) { return pred.class_id == cls ? pred.confidence : 0.0; }

inline CostMatrix build_cost_matrix(std::span<const BevBox> preds, std::span<const BevBox> gts,
                                    const CostWeights& w = {}) {
  if (preds.empty() || gts.empty()) throw ShapeError("cost matrix needs nonempty predictions and targets");
  validate(w);
  CostMatrix c(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double cls = focal_loss(class_probability(preds[i], gts[j].class_id), 1, w.focal_alpha, w.focal_gamma);
      c(i, j) = w.lambda_cls * cls + w.lambda_reg * l1_box_loss(preds[i], gts[j]);
    }
  }
  return c;
}

// Hungarian ------------------------------------------------------------------

namespace detail {

// Shortest augmenting path Hungarian method for rows <= cols. Returns the
// column assigned to each row.
inline std::vector<std::size_t> hungarian_rows(const CostMatrix& a) {
  const std::size_t n = a.rows(), m = a.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

// Minimum-cost one-to-one assignment of min(P, G) pairs.
inline AssignmentResult hungarian(const CostMatrix& cost) {
  AssignmentResult out(cost.rows(), cost.cols());
  if (cost.empty()) return out;
  if (!cost.all_finite()) throw DomainError("hungarian: cost matrix has non-finite entries");
  if (cost.rows() <= cost.cols()) {
    const auto r2c = detail::hungarian_rows(cost);
    for (std::size_t i = 0; i < r2c.size(); ++i) out.assign(i, r2c[i]);
  } else {
    const auto t2p = detail::hungarian_rows(cost.transposed());
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t j = 0; j < t2p.size(); ++j) pairs.emplace_back(t2p[j], j);
    std::sort(pairs.begin(), pairs.end());
    for (const auto& [i, j] : pairs) out.assign(i, j);
  }
  return out;
}

// Simple many-to-one --------------------------------------------------------

// Repeats every target column `repeat_k` times, solves the one-to-one problem
// on the widened matrix and collapses the copies back onto their target.
inline AssignmentResult simple_many_to_one(const CostMatrix& cost, std::size_t repeat_k) {
  if (repeat_k < 1) throw DomainError("simple_many_to_one: repeat_k must be at least 1");
  const std::size_t p = cost.rows(), g = cost.cols();
  AssignmentResult out(p, g);
  if (p == 0 || g == 0) return out;
  CostMatrix wide(p, g * repeat_k);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t r = 0; r < repeat_k; ++r)
      for (std::size_t j = 0; j < g; ++j) wide(i, r * g + j) = cost(i, j);
  const AssignmentResult one = hungarian(wide);
  for (const auto& [i, col] : one.pairs()) out.assign(i, col % g);
  return out;
}

inline AssignmentResult simple_many_to_one(std::span<const BevBox> preds, std::span<const BevBox> gts,
                                           std::size_t repeat_k = 6, const CostWeights& w = {}) {
  if (repeat_k < 1) throw DomainError("simple_many_to_one: repeat_k must be at least 1");
  if (gts.empty() || preds.empty()) return AssignmentResult(preds.size(), gts.size());
  return simple_many_to_one(build_cost_matrix(preds, gts, w), repeat_k);
}

// simOTA ---------------------------------------------------------------------

// exp(-center distance) for every (pred, target) pair.
inline Matrix center_affinity(std::span<const BevBox> preds, std::span<const BevBox> gts) {
  Matrix a(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j) a(i, j) = std::exp(-center_distance_2d(preds[i], gts[j]));
  return a;
}

// Per-target capacity: round(sum of the top_q largest affinities), clamped to [1, P].
inline std::vector<std::size_t> simota_dynamic_k(const Matrix& affinity, std::size_t top_q) {
  const std::size_t p = affinity.rows();
  std::vector<std::size_t> ks(affinity.cols());
  std::vector<double> col(p);
  for (std::size_t j = 0; j < affinity.cols(); ++j) {
    for (std::size_t i = 0; i < p; ++i) col[i] = affinity(i, j);
    const std::size_t q = std::min(top_q, p);
    std::partial_sort(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(q), col.end(), std::greater<>());
    const double s = std::accumulate(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(q), 0.0);
    const auto k = static_cast<long long>(std::llround(s));
    ks[j] = static_cast<std::size_t>(std::clamp<long long>(k, 1, static_cast<long long>(p)));
  }
  return ks;
}

// Lowest-cost candidates per target (ties by prediction index).
inline std::vector<std::vector<std::size_t>> simota_candidates(const CostMatrix& cost,
                                                               std::span<const std::size_t> dynamic_k) {
  std::vector<std::vector<std::size_t>> cand(cost.cols());
  std::vector<std::size_t> order(cost.rows());
  for (std::size_t j = 0; j < cost.cols(); ++j) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cost(a, j) < cost(b, j); });
    cand[j].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(dynamic_k[j]));
  }
  return cand;
}

// simOTA on the raw cost matrix (no center-prior masking): every prediction
// is a candidate for every target. A prediction claimed by several targets
// goes to the one with the lowest cost.
inline AssignmentResult simota(const CostMatrix& cost, const Matrix& affinity, std::size_t top_q = 10) {
  if (cost.empty()) throw ShapeError("simota: empty cost matrix");
  if (top_q < 1) throw DomainError("simota: top_q must be at least 1");
  if (affinity.rows() != cost.rows() || affinity.cols() != cost.cols()) throw ShapeError("simota: affinity shape");
  if (!cost.all_finite() || !affinity.all_finite()) throw DomainError("simota: non-finite input");

  const auto ks = simota_dynamic_k(affinity, top_q);
  const auto cand = simota_candidates(cost, ks);

  std::vector<std::optional<std::size_t>> best(cost.rows());
  for (std::size_t j = 0; j < cost.cols(); ++j) {
    for (std::size_t i : cand[j]) {
      if (!best[i] || cost(i, j) < cost(i, *best[i])) best[i] = j;
    }
  }
  AssignmentResult out(cost.rows(), cost.cols());
  for (std::size_t i = 0; i < best.size(); ++i)
    if (best[i]) out.assign(i, *best[i]);
  return out;
}

}  // namespace pbev
