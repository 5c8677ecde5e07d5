#pragma once

// Label-ambiguity toy experiment. A fixed random image is passed through two
// 3x3 convolutions, features are interpolated at reference points and two
// linear layers regress a 2D location per reference. Training uses an l1
// loss against fixed targets, matched either by index or by a minimum total
// distance assignment.

#include <cmath>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "pbev/assignment.hpp"
#include "pbev/autograd.hpp"
#include "pbev/common.hpp"

namespace pbev::toy {

enum class RefMode { Fixed, Random };
enum class MatchMode { ByIndex, ByDistance };

inline const char* to_string(RefMode m) { return m == RefMode::Fixed ? "fixed" : "random"; }
inline const char* to_string(MatchMode m) { return m == MatchMode::ByIndex ? "index" : "distance"; }

struct ToyConfig {
  std::size_t image_channels{2}, image_h{8}, image_w{8};
  double image_blur{1.5};  // Gaussian blur sigma (pixels) applied to the noise image, 0 disables
  std::size_t conv_channels{8};
  std::size_t hidden{128};
  std::size_t n_targets{10};
  std::size_t n_refs{10};
  RefMode ref_mode{RefMode::Fixed};
  MatchMode match_mode{MatchMode::ByDistance};
  ad::AdamConfig adam{};
  double lr_final{1e-6};  // cosine decay from adam.lr to lr_final
  std::size_t iterations{50000};
  std::size_t smoothing_window{100};
  double tolerance{1e-3};
  std::uint64_t seed{0};
};

inline void validate(const ToyConfig& c) {
  if (c.image_channels < 1 || c.image_h < 2 || c.image_w < 2 || c.conv_channels < 1 || c.hidden < 1)
    throw DomainError("toy: network dimensions must be positive (image at least 2x2)");
  if (c.n_targets < 1 || c.n_refs < 1 || c.iterations < 1 || c.smoothing_window < 1)
    throw DomainError("toy: counts must be at least 1");
  if (c.match_mode == MatchMode::ByIndex && c.n_refs != c.n_targets)
    throw DomainError("toy: matching by index needs as many references as targets");
}

struct ToyParams {
  ad::Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  ad::Tensor fc1_w, fc1_b, fc2_w, fc2_b;

  std::vector<ad::Tensor> all() const { return {conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b}; }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline ToyParams init_params(const ToyConfig& cfg, Rng& rng) {
  const auto uniform = [&](std::size_t n, std::size_t fan_in) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> d(-k, k);
    std::vector<double> v(n);
    for (auto& e : v) e = d(rng);
    return v;
  };
  const std::size_t C = cfg.image_channels, K = cfg.conv_channels, Hd = cfg.hidden;
  ToyParams p;
  p.conv1_w = ad::Tensor::parameter({K, C, 3, 3}, uniform(K * C * 9, C * 9));
  p.conv1_b = ad::Tensor::parameter({K}, std::vector<double>(K, 0.0));
  p.conv2_w = ad::Tensor::parameter({K, K, 3, 3}, uniform(K * K * 9, K * 9));
  p.conv2_b = ad::Tensor::parameter({K}, std::vector<double>(K, 0.0));
  p.fc1_w = ad::Tensor::parameter({Hd, K}, uniform(Hd * K, K));
  p.fc1_b = ad::Tensor::parameter({Hd}, std::vector<double>(Hd, 0.0));
  p.fc2_w = ad::Tensor::parameter({2, Hd}, uniform(2 * Hd, Hd));
  p.fc2_b = ad::Tensor::parameter({2}, std::vector<double>(2, 0.0));
  return p;
}

// image [C, H, W], refs in [0, 1]^2 -> predictions [N, 2].
inline ad::Tensor toy_forward(const ad::Tensor& image, std::span<const Vec2> refs, const ToyParams& p) {
  ad::Tensor f = ad::relu(ad::conv3x3_same(image, p.conv1_w, p.conv1_b));
  f = ad::conv3x3_same(f, p.conv2_w, p.conv2_b);
  ad::Tensor q = ad::bilinear_gather(f, refs);
  q = ad::relu(ad::linear(q, p.fc1_w, p.fc1_b));
  return ad::linear(q, p.fc2_w, p.fc2_b);
}

struct ToyLoss {
  ad::Tensor loss;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, target)
};

// targets are [M, 2] row-major.
inline ToyLoss toy_loss(const ad::Tensor& preds, std::span<const double> targets, MatchMode mode) {
  if (preds.shape().size() != 2 || preds.shape()[1] != 2) throw ShapeError("toy_loss: predictions must be [N, 2]");
  if (targets.size() % 2 != 0) throw ShapeError("toy_loss: targets must be [M, 2]");
  const std::size_t N = preds.shape()[0], M = targets.size() / 2;
  ToyLoss out;
  if (mode == MatchMode::ByIndex) {
    if (N != M) throw ShapeError("toy_loss: matching by index needs N == M");
    for (std::size_t i = 0; i < N; ++i) out.pairs.emplace_back(i, i);
  } else if (N > 0 && M > 0) {
    const auto pv = preds.value();
    CostMatrix cost(N, M);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j)
        cost(i, j) = std::abs(pv[2 * i] - targets[2 * j]) + std::abs(pv[2 * i + 1] - targets[2 * j + 1]);
    out.pairs = hungarian(cost).pairs();
  }
  out.loss = ad::l1_rows(preds, targets, M, out.pairs);
  return out;
}

// Experiment --------------------------------------------------------------------

struct ToyRun {
  std::vector<double> loss_curve;
  double final_smoothed_loss{0.0};
  bool converged{false};      // final smoothed loss < tolerance
  bool not_converged{false};  // final smoothed loss > 10 x tolerance
};

struct ToyProblem {
  ad::Tensor image;
  std::vector<double> targets;  // [M, 2]
  std::vector<Vec2> fixed_refs;
};

inline std::vector<Vec2> uniform_points(std::size_t n, Rng& rng) {
  std::vector<Vec2> pts(n);
  for (auto& p : pts) {
    p.x = uniform01(rng);
    p.y = uniform01(rng);
  }
  return pts;
}

// Separable Gaussian blur (clamped borders), then zero mean / unit variance
// per channel.
inline void blur_and_standardize(std::vector<double>& img, std::size_t C, std::size_t H, std::size_t W, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    ksum += kernel[static_cast<std::size_t>(k + radius)];
  }
  for (double& k : kernel) k /= ksum;
  const auto clampi = [](long v, long hi) { return std::clamp<long>(v, 0, hi - 1); };
  std::vector<double> tmp(img.size());
  for (std::size_t c = 0; c < C; ++c) {
    double* src = img.data() + c * H * W;
    double* dst = tmp.data() + c * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 src[y * W + static_cast<std::size_t>(clampi(static_cast<long>(x) + k, static_cast<long>(W)))];
        dst[y * W + x] = acc;
      }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 dst[static_cast<std::size_t>(clampi(static_cast<long>(y) + k, static_cast<long>(H))) * W + x];
        src[y * W + x] = acc;
      }
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < H * W; ++i) mean += src[i];
    mean /= static_cast<double>(H * W);
    for (std::size_t i = 0; i < H * W; ++i) var += (src[i] - mean) * (src[i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(H * W));
    for (std::size_t i = 0; i < H * W; ++i) src[i] = sd > 0.0 ? (src[i] - mean) / sd : 0.0;
  }
}

inline ToyProblem make_problem(const ToyConfig& cfg, Rng& rng) {
  ToyProblem pb;
  std::vector<double> img(cfg.image_channels * cfg.image_h * cfg.image_w);
  for (double& v : img) v = standard_normal(rng);
  if (cfg.image_blur > 0.0) blur_and_standardize(img, cfg.image_channels, cfg.image_h, cfg.image_w, cfg.image_blur);
  pb.image = ad::Tensor::constant({cfg.image_channels, cfg.image_h, cfg.image_w}, std::move(img));
  for (Vec2 t : uniform_points(cfg.n_targets, rng)) {
    pb.targets.push_back(t.x);
    pb.targets.push_back(t.y);
  }
  pb.fixed_refs = uniform_points(cfg.n_refs, rng);
  return pb;
}

inline double moving_average_tail(const std::vector<double>& xs, std::size_t window) {
  if (xs.empty()) return 0.0;
  const std::size_t n = std::min(window, xs.size());
  double acc = 0.0;
  for (std::size_t i = xs.size() - n; i < xs.size(); ++i) acc += xs[i];
  return acc / static_cast<double>(n);
}

inline ToyRun run_ambiguity_experiment(const ToyConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const ToyProblem pb = make_problem(cfg, rng);
  ToyParams params = init_params(cfg, rng);
  ad::Adam opt(params.all(), cfg.adam);

  ToyRun run;
  run.loss_curve.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const std::vector<Vec2> refs = cfg.ref_mode == RefMode::Fixed ? pb.fixed_refs : uniform_points(cfg.n_refs, rng);
    const ad::Tensor preds = toy_forward(pb.image, refs, params);
    const ToyLoss l = toy_loss(preds, pb.targets, cfg.match_mode);
    run.loss_curve.push_back(l.loss.item());
    opt.zero_grad();
    ad::backward(l.loss);
    const double frac = cfg.iterations > 1 ? static_cast<double>(it) / static_cast<double>(cfg.iterations - 1) : 1.0;
    opt.set_lr(cfg.lr_final + 0.5 * (cfg.adam.lr - cfg.lr_final) * (1.0 + std::cos(kPi * frac)));
    opt.step();
  }
  run.final_smoothed_loss = moving_average_tail(run.loss_curve, cfg.smoothing_window);
  run.converged = run.final_smoothed_loss < cfg.tolerance;
  run.not_converged = run.final_smoothed_loss > 10.0 * cfg.tolerance;
  return run;
}

}  // namespace pbev::toy
