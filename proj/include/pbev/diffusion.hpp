#pragma once

// Diffusion schedule, forward noising of reference points, deterministic DDIM
// steps and reference renewal. Reference points live in "scaled" space:
// unit-square coordinates mapped affinely to [-scale, scale].

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "pbev/common.hpp"

namespace pbev {

class DiffusionSchedule {
 public:
  // Builds the alpha tables from a beta table. beta[0] may be 0 (then
  // alpha_cumprod[0] == 1); every later beta must be in (0, 1).
  static DiffusionSchedule from_betas(std::vector<double> betas) {
    if (betas.size() < 2) throw DomainError("schedule needs at least two steps");
    DiffusionSchedule s;
    s.beta_ = std::move(betas);
    s.alpha_.resize(s.beta_.size());
    s.alpha_cumprod_.resize(s.beta_.size());
    double acc = 1.0;
    for (std::size_t t = 0; t < s.beta_.size(); ++t) {
      const double b = s.beta_[t];
      const bool ok = t == 0 ? (b >= 0.0 && b < 1.0) : (b > 0.0 && b < 1.0);
      if (!ok || !std::isfinite(b)) throw DomainError("beta outside the admissible range");
      s.alpha_[t] = 1.0 - b;
      acc *= s.alpha_[t];
      s.alpha_cumprod_[t] = acc;
    }
    if (s.alpha_cumprod_[0] < 0.99) throw DomainError("alpha_cumprod[0] must be at least 0.99");
    return s;
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  const std::vector<double>& beta() const { return beta_; }
  const std::vector<double>& alpha() const { return alpha_; }
  const std::vector<double>& alpha_cumprod() const { return alpha_cumprod_; }

  // alpha_cumprod at t, with the convention alpha_cumprod(-1) == 1.
  double alpha_bar(int t) const {
    if (t == -1) return 1.0;
    if (t < 0 || t >= steps()) throw DomainError("diffusion time out of range");
    return alpha_cumprod_[static_cast<std::size_t>(t)];
  }

 private:
  std::vector<double> beta_, alpha_, alpha_cumprod_;
};

inline constexpr int kDefaultDiffusionSteps = 1000;

// Cosine alpha-bar schedule, offset s = 0.008, betas capped at 0.999.
inline DiffusionSchedule make_cosine_schedule(int steps = kDefaultDiffusionSteps) {
  if (steps < 2) throw DomainError("cosine schedule needs T >= 2");
  constexpr double s = 0.008;
  const auto f = [&](double t) {
    const double v = std::cos((t / steps + s) / (1.0 + s) * kPi / 2.0);
    return v * v;
  };
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    betas[static_cast<std::size_t>(t)] = std::min(1.0 - f(t + 1) / f(t), 0.999);
  }
  return DiffusionSchedule::from_betas(std::move(betas));
}

// Signal-to-noise scale ------------------------------------------------------

class SnrScale {
 public:
  explicit SnrScale(double scale = 2.0) : scale_(scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw DomainError("signal-to-noise scale must be positive");
  }
  double value() const { return scale_; }

 private:
  double scale_;
};

inline double clamp_scaled(double v, SnrScale snr) { return std::clamp(v, -snr.value(), snr.value()); }
inline Vec2 clamp_scaled(Vec2 p, SnrScale snr) { return {clamp_scaled(p.x, snr), clamp_scaled(p.y, snr)}; }

inline Vec2 scale_ref(Vec2 unit, SnrScale snr) {
  return {(2.0 * unit.x - 1.0) * snr.value(), (2.0 * unit.y - 1.0) * snr.value()};
}

inline Vec2 unscale_ref(Vec2 scaled, SnrScale snr) {
  const double k = snr.value();
  return {std::clamp((scaled.x / k + 1.0) / 2.0, 0.0, 1.0), std::clamp((scaled.y / k + 1.0) / 2.0, 0.0, 1.0)};
}

inline std::vector<Vec2> scale_refs(std::span<const Vec2> unit, SnrScale snr) {
  std::vector<Vec2> out;
  out.reserve(unit.size());
  for (Vec2 p : unit) out.push_back(scale_ref(p, snr));
  return out;
}

inline std::vector<Vec2> unscale_refs(std::span<const Vec2> scaled, SnrScale snr) {
  std::vector<Vec2> out;
  out.reserve(scaled.size());
  for (Vec2 p : scaled) out.push_back(unscale_ref(p, snr));
  return out;
}

// Forward process ------------------------------------------------------------

// z_t = sqrt(abar) z0 + sqrt(1 - abar) eps, clamped to [-scale, scale].
inline std::vector<Vec2> q_sample(std::span<const Vec2> z0, int t, std::span<const Vec2> eps,
                                  const DiffusionSchedule& sched, SnrScale snr) {
  if (t < 0 || t >= sched.steps()) throw DomainError("q_sample: diffusion time out of range");
  if (z0.size() != eps.size()) throw ShapeError("q_sample: z0 and eps sizes differ");
  const double abar = sched.alpha_bar(t);
  const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
  std::vector<Vec2> out(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) {
    out[i] = clamp_scaled(Vec2{a * z0[i].x + b * eps[i].x, a * z0[i].y + b * eps[i].y}, snr);
  }
  return out;
}

inline std::vector<Vec2> standard_normal_points(std::size_t n, Rng& rng) {
  std::vector<Vec2> out(n);
  for (auto& p : out) {
    p.x = standard_normal(rng);
    p.y = standard_normal(rng);
  }
  return out;
}

// Deterministic DDIM (eta = 0) update from t_now to t_next. t_next == -1
// lands on the predicted clean sample.
inline std::vector<Vec2> ddim_step(std::span<const Vec2> z_t, std::span<const Vec2> z0_hat, int t_now, int t_next,
                                   const DiffusionSchedule& sched) {
  if (z_t.size() != z0_hat.size()) throw ShapeError("ddim_step: size mismatch");
  if (t_next < -1 || t_now < t_next || t_now >= sched.steps()) throw DomainError("ddim_step: invalid time pair");
  std::vector<Vec2> out(z_t.begin(), z_t.end());
  if (t_now == t_next) return out;

  const double ab_now = sched.alpha_bar(t_now);
  const double ab_next = sched.alpha_bar(t_next);
  const double sa_now = std::sqrt(ab_now), sn_now = std::sqrt(1.0 - ab_now);
  const double sa_next = std::sqrt(ab_next), sn_next = std::sqrt(1.0 - ab_next);

  for (std::size_t i = 0; i < z_t.size(); ++i) {
    if (t_next == -1) {
      out[i] = z0_hat[i];
      continue;
    }
    Vec2 eps{0.0, 0.0};
    if (sn_now == 0.0) {
      if (!(z_t[i] == z0_hat[i])) throw DomainError("ddim_step: alpha_bar(t_now) == 1 with z_t != z0_hat");
    } else {
      eps = {(z_t[i].x - sa_now * z0_hat[i].x) / sn_now, (z_t[i].y - sa_now * z0_hat[i].y) / sn_now};
    }
    out[i] = {sa_next * z0_hat[i].x + sn_next * eps.x, sa_next * z0_hat[i].y + sn_next * eps.y};
  }
  return out;
}

using TimePair = std::pair<int, int>;

// linspace(-1, T - 1, steps + 1), truncated to integers, reversed and zipped
// into consecutive (t_now, t_next) pairs.
inline std::vector<TimePair> time_pairs(int total_steps, int sampling_steps) {
  if (sampling_steps < 1) throw DomainError("time_pairs: at least one sampling step is required");
  if (total_steps < 1 || sampling_steps > total_steps)
    throw DomainError("time_pairs: sampling steps must not exceed the schedule length");
  const int n = sampling_steps + 1;
  std::vector<int> times(static_cast<std::size_t>(n));
  const double lo = -1.0, hi = total_steps - 1.0;
  for (int i = 0; i < n; ++i) {
    const double v = i == n - 1 ? hi : lo + (hi - lo) * i / (n - 1);
    times[static_cast<std::size_t>(i)] = static_cast<int>(v);
  }
  std::reverse(times.begin(), times.end());
  std::vector<TimePair> pairs;
  pairs.reserve(static_cast<std::size_t>(sampling_steps));
  for (std::size_t i = 0; i + 1 < times.size(); ++i) pairs.emplace_back(times[i], times[i + 1]);
  return pairs;
}

// Replaces references whose confidence is below `threshold` with fresh
// standard-normal draws clamped to the scaled square.
inline std::vector<Vec2> renew_references(std::span<const Vec2> positions, std::span<const double> confidences,
                                          double threshold, SnrScale snr, Rng& rng) {
  if (positions.size() != confidences.size()) throw ShapeError("renew_references: size mismatch");
  std::vector<Vec2> out(positions.begin(), positions.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (confidences[i] >= threshold) continue;
    const double x = standard_normal(rng);
    const double y = standard_normal(rng);
    out[i] = clamp_scaled(Vec2{x, y}, snr);
  }
  return out;
}

// Pads normalized GT centers with uniform draws up to n_total, or keeps a
// uniformly random subset of size n_total when there are too many.
inline std::vector<Vec2> pad_references(std::span<const Vec2> gt_centers, std::size_t n_total, Rng& rng) {
  if (n_total < 1) throw DomainError("pad_references: n_total must be at least 1");
  std::vector<Vec2> out;
  out.reserve(n_total);
  if (gt_centers.size() <= n_total) {
    out.assign(gt_centers.begin(), gt_centers.end());
    while (out.size() < n_total) {
      const double x = uniform01(rng);
      const double y = uniform01(rng);
      out.push_back({x, y});
    }
    return out;
  }
  std::vector<std::size_t> idx(gt_centers.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n_total);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i : idx) out.push_back(gt_centers[i]);
  return out;
}

}  // namespace pbev
