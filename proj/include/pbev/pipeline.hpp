#pragma once

// Training-time reference preparation and the iterative inference loop around
// a pluggable denoiser.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbev/common.hpp"
#include "pbev/diffusion.hpp"
#include "pbev/geometry.hpp"
#include "pbev/oracle.hpp"
#include "pbev/query_grid.hpp"
#include "pbev/scene.hpp"
#include "pbev/suppression.hpp"

namespace pbev {

// Maps scaled particles at diffusion time t_now to one predicted box each.
using Denoiser = std::function<std::vector<BevBox>(std::span<const Vec2> particles, int t_now, Rng& rng)>;

inline Denoiser make_oracle_denoiser(const SceneRecord& scene, OracleDenoiserConfig cfg, SnrScale snr) {
  validate(cfg);
  return [&scene, cfg, snr](std::span<const Vec2> particles, int, Rng& rng) {
    return oracle_denoise(particles, scene, cfg, snr, rng);
  };
}

// How references move between denoising steps.
enum class RefStrategy {
  StandardNormal,   // DDIM step, low-confidence references redrawn from N(0, I)
  NearPredictions,  // DDIM step, low-confidence references redrawn around confident predictions
  DdimOnly,         // DDIM step, no renewal
  ResampleOnly,     // no DDIM step, standard-normal renewal
  Frozen,           // references never move
};

inline const char* to_string(RefStrategy r) {
  switch (r) {
    case RefStrategy::StandardNormal: return "standard_normal";
    case RefStrategy::NearPredictions: return "near_predictions";
    case RefStrategy::DdimOnly: return "ddim_only";
    case RefStrategy::ResampleOnly: return "resample_only";
    case RefStrategy::Frozen: return "frozen";
  }
  return "?";
}

inline RefStrategy ref_strategy_from_string(const std::string& s) {
  for (RefStrategy r : {RefStrategy::StandardNormal, RefStrategy::NearPredictions, RefStrategy::DdimOnly,
                        RefStrategy::ResampleOnly, RefStrategy::Frozen})
    if (s == to_string(r)) return r;
  throw DomainError("unknown reference strategy '" + s + "'");
}

inline bool applies_ddim(RefStrategy r) { return r != RefStrategy::ResampleOnly && r != RefStrategy::Frozen; }

// Low-confidence references jump to a random confident prediction plus
// N(0, spread^2) in scaled units; falls back to N(0, I) when none is confident.
inline std::vector<Vec2> renew_near_predictions(std::span<const Vec2> positions, std::span<const Vec2> z0_hat,
                                                std::span<const double> confidences, double threshold, double spread,
                                                SnrScale snr, Rng& rng) {
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < confidences.size(); ++i)
    if (confidences[i] >= threshold) good.push_back(i);
  if (good.empty()) return renew_references(positions, confidences, threshold, snr, rng);
  std::vector<Vec2> out(positions.begin(), positions.end());
  std::uniform_int_distribution<std::size_t> pick(0, good.size() - 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (confidences[i] >= threshold) continue;
    const Vec2 c = z0_hat[good[pick(rng)]];
    const double dx = spread * standard_normal(rng);
    const double dy = spread * standard_normal(rng);
    out[i] = clamp_scaled(Vec2{c.x + dx, c.y + dy}, snr);
  }
  return out;
}

struct InferenceConfig {
  std::size_t n_particles{900};
  int ddim_steps{3};
  SuppressionConfig suppression{};
  RefStrategy strategy{RefStrategy::StandardNormal};
  double renewal_threshold{0.5};
  double renewal_spread{0.05};  // NearPredictions only, scaled units
  SnrScale snr{};
};

struct InferenceTrace {
  std::vector<Vec2> initial_refs;                   // scaled
  std::vector<double> queries;                      // [n_particles, C] when a grid is given
  std::vector<TimePair> pairs;
  std::vector<std::vector<Vec2>> refs_per_step;     // scaled, after each update
  std::vector<std::vector<BevBox>> preds_per_step;  // the all_preds list
  std::vector<BevBox> final_predictions;
};

inline Vec2 box_to_scaled(const BevBox& b, const BevExtent& extent, SnrScale snr) {
  return scale_ref(normalize_center(b.center(), extent).uv, snr);
}

inline InferenceTrace run_inference(const SceneRecord& scene, const InferenceConfig& cfg,
                                    const DiffusionSchedule& sched, const Denoiser& denoiser, Rng& rng,
                                    const QueryGrid* grid = nullptr) {
  if (cfg.n_particles < 1) throw DomainError("run_inference: need at least one particle");
  validate(cfg.suppression);
  InferenceTrace tr;
  tr.pairs = time_pairs(sched.steps(), cfg.ddim_steps);

  // random references
  std::vector<Vec2> refs = standard_normal_points(cfg.n_particles, rng);
  for (auto& r : refs) r = clamp_scaled(r, cfg.snr);
  tr.initial_refs = refs;

  if (grid) {
    const auto unit = unscale_refs(refs, cfg.snr);
    tr.queries = interpolate(*grid, unit);
  }

  std::vector<Vec2> z0_hat(refs.size());
  std::vector<double> conf(refs.size());
  for (const auto& [t_now, t_next] : tr.pairs) {
    std::vector<BevBox> preds = denoiser(refs, t_now, rng);
    if (preds.size() != refs.size()) throw ShapeError("denoiser must return one box per particle");
    for (std::size_t i = 0; i < preds.size(); ++i) {
      z0_hat[i] = box_to_scaled(preds[i], scene.extent, cfg.snr);
      conf[i] = preds[i].confidence;
    }
    tr.preds_per_step.push_back(std::move(preds));
    if (applies_ddim(cfg.strategy)) refs = ddim_step(refs, z0_hat, t_now, t_next, sched);
    switch (cfg.strategy) {
      case RefStrategy::StandardNormal:
      case RefStrategy::ResampleOnly:
        refs = renew_references(refs, conf, cfg.renewal_threshold, cfg.snr, rng);
        break;
      case RefStrategy::NearPredictions:
        refs = renew_near_predictions(refs, z0_hat, conf, cfg.renewal_threshold, cfg.renewal_spread, cfg.snr, rng);
        break;
      default:
        break;
    }
    tr.refs_per_step.push_back(refs);
  }

  std::vector<BevBox> all;
  for (const auto& p : tr.preds_per_step) all.insert(all.end(), p.begin(), p.end());
  tr.final_predictions = filter_pipeline(all, cfg.suppression);
  return tr;
}

struct TrainingPrep {
  std::vector<Vec2> gt_centers;   // normalized
  std::vector<Vec2> padded;       // normalized, n_total
  std::vector<Vec2> scaled;       // in [-scale, scale]
  int diffusion_time{0};
  std::vector<Vec2> eps;
  std::vector<Vec2> noisy;        // clamped
  std::vector<double> queries;    // [n_total, C] when a grid is given
};

inline TrainingPrep run_training_prep(const SceneRecord& scene, std::size_t n_total, const DiffusionSchedule& sched,
                                      SnrScale snr, Rng& rng, const QueryGrid* grid = nullptr,
                                      std::optional<int> diffusion_time = std::nullopt) {
  TrainingPrep p;
  for (const auto& b : scene.gt_boxes) p.gt_centers.push_back(normalize_center(b.center(), scene.extent).uv);
  p.padded = pad_references(p.gt_centers, n_total, rng);
  p.scaled = scale_refs(p.padded, snr);
  if (diffusion_time) {
    p.diffusion_time = *diffusion_time;
  } else {
    std::uniform_int_distribution<int> td(0, sched.steps() - 1);
    p.diffusion_time = td(rng);
  }
  p.eps = standard_normal_points(n_total, rng);
  p.noisy = q_sample(p.scaled, p.diffusion_time, p.eps, sched, snr);
  if (grid) p.queries = interpolate(*grid, unscale_refs(p.noisy, snr));
  return p;
}

}  // namespace pbev
