#pragma once

// Minimal reverse-mode differentiation over dense double tensors. Each op
// records its parents and a closure that pushes the output gradient back.
// Only the handful of ops the toy network needs are provided.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pbev/common.hpp"
#include "pbev/query_grid.hpp"

namespace pbev::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad{false};
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values) { return make(std::move(shape), std::move(values), false); }
  static Tensor parameter(Shape shape, std::vector<double> values) { return make(std::move(shape), std::move(values), true); }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on a non-scalar tensor");
    return node_->value[0];
  }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  // Output of an op: gradient flows if any parent needs it.
  static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                        std::function<void(Node&)> backward_fn) {
    const bool rg = std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
    Tensor t = make(std::move(shape), std::move(values), rg);
    if (rg) {
      for (auto& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

 private:
  static Tensor make(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size()) throw ShapeError("tensor value count does not match shape");
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->grad.assign(values.size(), 0.0);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<Node> node_;
};

// Reverse sweep from a scalar. Gradients accumulate into every leaf that
// requires them; interior gradients are reset first.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward() requires a scalar loss");
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : topo)
    if (n->backward_fn) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  loss.node().grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// Ops -------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  std::vector<double> v(x.value().begin(), x.value().end());
  for (double& e : v) e = std::max(0.0, e);
  auto xp = x.ptr();
  return Tensor::from_op(x.shape(), std::move(v), {x}, [xp](Node& out) {
    if (!xp->requires_grad) return;
    for (std::size_t i = 0; i < out.grad.size(); ++i)
      if (xp->value[i] > 0.0) xp->grad[i] += out.grad[i];
  });
}

// 3x3 convolution, stride 1, zero padding 1. input [C, H, W], weight
// [O, C, 3, 3], bias [O] -> [O, H, W].
inline Tensor conv3x3_same(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.shape().size() != 3 || weight.shape().size() != 4 || bias.shape().size() != 1)
    throw ShapeError("conv3x3_same: bad ranks");
  const std::size_t C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const std::size_t O = weight.shape()[0];
  if (weight.shape()[1] != C || weight.shape()[2] != 3 || weight.shape()[3] != 3 || bias.shape()[0] != O)
    throw ShapeError("conv3x3_same: weight/bias shape mismatch");

  const auto in = input.value();
  const auto wt = weight.value();
  const auto bs = bias.value();
  std::vector<double> out(O * H * W);
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = bs[o];
        for (std::size_t c = 0; c < C; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            const long iy = static_cast<long>(y) + ky - 1;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const long ix = static_cast<long>(x) + kx - 1;
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              acc += wt[((o * C + c) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] *
                     in[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
            }
          }
        }
        out[(o * H + y) * W + x] = acc;
      }
    }
  }
  auto ip = input.ptr(), wp = weight.ptr(), bp = bias.ptr();
  return Tensor::from_op({O, H, W}, std::move(out), {input, weight, bias}, [ip, wp, bp, C, H, W, O](Node& res) {
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const double g = res.grad[(o * H + y) * W + x];
          if (g == 0.0) continue;
          if (bp->requires_grad) bp->grad[o] += g;
          for (std::size_t c = 0; c < C; ++c) {
            for (int ky = 0; ky < 3; ++ky) {
              const long iy = static_cast<long>(y) + ky - 1;
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const long ix = static_cast<long>(x) + kx - 1;
                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                const std::size_t wi =
                    ((o * C + c) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx);
                const std::size_t ii = (c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix);
                if (wp->requires_grad) wp->grad[wi] += g * ip->value[ii];
                if (ip->requires_grad) ip->grad[ii] += g * wp->value[wi];
              }
            }
          }
        }
      }
    }
  });
}

// Bilinear lookup of a [C, H, W] feature map at normalized points (x along
// W, y along H, corners aligned, border clamped) -> [N, C].
inline Tensor bilinear_gather(const Tensor& features, std::span<const Vec2> points) {
  if (features.shape().size() != 3) throw ShapeError("bilinear_gather: features must be [C, H, W]");
  const std::size_t C = features.shape()[0], H = features.shape()[1], W = features.shape()[2];
  const std::size_t N = points.size();
  std::vector<BilinearStencil> stencils;
  stencils.reserve(N);
  for (Vec2 p : points) stencils.push_back(bilinear_stencil(H, W, p));
  const auto fv = features.value();
  std::vector<double> out(N * C, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < 4; ++k)
        out[n * C + c] += stencils[n].weight[k] * fv[c * H * W + stencils[n].node[k]];
  auto fp = features.ptr();
  return Tensor::from_op({N, C}, std::move(out), {features}, [fp, stencils = std::move(stencils), C, H, W](Node& res) {
    if (!fp->requires_grad) return;
    for (std::size_t n = 0; n < stencils.size(); ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < 4; ++k)
          fp->grad[c * H * W + stencils[n].node[k]] += stencils[n].weight[k] * res.grad[n * C + c];
  });
}

// x [N, I], weight [O, I], bias [O] -> [N, O].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2 || bias.shape().size() != 1)
    throw ShapeError("linear: bad ranks");
  const std::size_t N = x.shape()[0], I = x.shape()[1], O = weight.shape()[0];
  if (weight.shape()[1] != I || bias.shape()[0] != O) throw ShapeError("linear: shape mismatch");
  const auto xv = x.value(), wv = weight.value(), bv = bias.value();
  std::vector<double> out(N * O);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) {
      double acc = bv[o];
      for (std::size_t i = 0; i < I; ++i) acc += wv[o * I + i] * xv[n * I + i];
      out[n * O + o] = acc;
    }
  auto xp = x.ptr(), wp = weight.ptr(), bp = bias.ptr();
  return Tensor::from_op({N, O}, std::move(out), {x, weight, bias}, [xp, wp, bp, N, I, O](Node& res) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) {
        const double g = res.grad[n * O + o];
        if (g == 0.0) continue;
        if (bp->requires_grad) bp->grad[o] += g;
        for (std::size_t i = 0; i < I; ++i) {
          if (wp->requires_grad) wp->grad[o * I + i] += g * xp->value[n * I + i];
          if (xp->requires_grad) xp->grad[n * I + i] += g * wp->value[o * I + i];
        }
      }
  });
}

// Mean absolute error over the selected rows of pred [N, D] against target
// rows [M, D]: mean over pairs and coordinates of |pred[i] - target[j]|.
// An empty pair list yields a zero loss.
inline Tensor l1_rows(const Tensor& pred, std::span<const double> targets, std::size_t target_rows,
                      std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  if (pred.shape().size() != 2) throw ShapeError("l1_rows: pred must be [N, D]");
  const std::size_t D = pred.shape()[1];
  if (targets.size() != target_rows * D) throw ShapeError("l1_rows: target shape mismatch");
  const auto pv = pred.value();
  double acc = 0.0;
  for (const auto& [i, j] : pairs) {
    if (i >= pred.shape()[0] || j >= target_rows) throw ShapeError("l1_rows: pair index out of range");
    for (std::size_t d = 0; d < D; ++d) acc += std::abs(pv[i * D + d] - targets[j * D + d]);
  }
  const double denom = pairs.empty() ? 1.0 : static_cast<double>(pairs.size() * D);
  auto pp = pred.ptr();
  std::vector<std::pair<std::size_t, std::size_t>> pr(pairs.begin(), pairs.end());
  std::vector<double> tg(targets.begin(), targets.end());
  return Tensor::from_op({1}, {acc / denom}, {pred}, [pp, pr = std::move(pr), tg = std::move(tg), D, denom](Node& res) {
    if (!pp->requires_grad) return;
    const double g = res.grad[0] / denom;
    for (const auto& [i, j] : pr)
      for (std::size_t d = 0; d < D; ++d) {
        const double r = pp->value[i * D + d] - tg[j * D + d];
        pp->grad[i * D + d] += g * (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0));
      }
  });
}

// Adam --------------------------------------------------------------------------

struct AdamConfig {
  double lr{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto val = params_[k].mutable_value();
      const auto g = params_[k].grad();
      for (std::size_t i = 0; i < val.size(); ++i) {
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mh = m_[k][i] / bc1, vh = v_[k][i] / bc2;
        val[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_{0};
};

}  // namespace pbev::ad
