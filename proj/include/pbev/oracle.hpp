#pragma once

// Oracle denoiser: a stand-in for a trained decoder. Each particle that falls
// inside the basin of a ground-truth center snaps to that box (with optional
// center jitter); everything else stays put with a background confidence.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "pbev/common.hpp"
#include "pbev/diffusion.hpp"
#include "pbev/geometry.hpp"
#include "pbev/scene.hpp"

namespace pbev {

struct OracleDenoiserConfig {
  double basin_radius{4.0};            // meters
  double sigma{0.1};                   // center jitter per axis, meters
  double confidence_high{0.9};         // confidence on top of a GT center
  double confidence_softness{0.5};     // logistic scale in meters
  double confidence_background{0.01};  // outside every basin
  double miss_probability{0.1};        // chance a particle ignores its basin
};

inline void validate(const OracleDenoiserConfig& c) {
  if (!(c.basin_radius >= 0.0) || !(c.sigma >= 0.0)) throw DomainError("oracle: radius and sigma must be >= 0");
  if (!(c.confidence_softness > 0.0)) throw DomainError("oracle: softness must be > 0");
  const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(c.confidence_high) || !prob(c.confidence_background) || !prob(c.miss_probability))
    throw DomainError("oracle: probabilities must lie in [0, 1]");
}

// Logistic in the distance to the nearest GT center.
inline double oracle_confidence(double distance, const OracleDenoiserConfig& c) {
  return c.confidence_high / (1.0 + std::exp((distance - c.basin_radius) / c.confidence_softness));
}

// One predicted box per particle. Particles are in scaled space.
inline std::vector<BevBox> oracle_denoise(std::span<const Vec2> particles, const SceneRecord& scene,
                                          const OracleDenoiserConfig& cfg, SnrScale snr, Rng& rng) {
  validate(cfg);
  std::vector<BevBox> out;
  out.reserve(particles.size());
  for (Vec2 z : particles) {
    const Vec2 p = denormalize_center(unscale_ref(z, snr), scene.extent);
    const BevBox* nearest = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : scene.gt_boxes) {
      const double d = norm(g.center() - p);
      if (d < best) {
        best = d;
        nearest = &g;
      }
    }
    const bool missed = cfg.miss_probability > 0.0 && uniform01(rng) < cfg.miss_probability;
    if (nearest && best <= cfg.basin_radius && !missed) {
      BevBox b = *nearest;
      if (cfg.sigma > 0.0) {
        b.cx += cfg.sigma * standard_normal(rng);
        b.cy += cfg.sigma * standard_normal(rng);
      }
      b.confidence = oracle_confidence(best, cfg);
      out.push_back(std::move(b));
    } else {
      BevBox b = make_box(p.x, p.y, 1.0, 1.0, 0.0, nearest ? nearest->class_id : 0, cfg.confidence_background);
      out.push_back(std::move(b));
    }
  }
  return out;
}

}  // namespace pbev
