#pragma once

// Test-time filtering of stacked predictions: confidence threshold, rotated
// NMS and radial suppression.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "pbev/geometry.hpp"

namespace pbev {

struct SuppressionConfig {
  double nms_iou_threshold{0.1};
  double min_confidence{0.02};
  double radial_radius{0.5};  // meters
  bool enable_confidence{true};
  bool enable_nms{true};
  bool enable_radial{true};
  bool class_agnostic_nms{false};
};

inline void validate(const SuppressionConfig& c) {
  if (!(c.nms_iou_threshold >= 0.0 && c.nms_iou_threshold <= 1.0)) throw DomainError("NMS threshold outside [0, 1]");
  if (!(c.min_confidence >= 0.0 && c.min_confidence <= 1.0)) throw DomainError("min confidence outside [0, 1]");
  if (!(c.radial_radius >= 0.0) || !std::isfinite(c.radial_radius)) throw DomainError("radial radius must be >= 0");
}

inline std::vector<BevBox> confidence_filter(std::span<const BevBox> preds, double min_conf) {
  std::vector<BevBox> out;
  for (const auto& b : preds)
    if (b.confidence >= min_conf) out.push_back(b);
  return out;
}

namespace detail {
// Indices by descending confidence; equal confidences keep input order.
inline std::vector<std::size_t> by_confidence(std::span<const BevBox> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
  return order;
}
}  // namespace detail

// Greedy NMS. Survivors are returned in descending confidence order.
inline std::vector<BevBox> rotated_nms(std::span<const BevBox> preds, double iou_threshold,
                                       bool class_agnostic = false) {
  std::vector<BevBox> kept;
  for (std::size_t i : detail::by_confidence(preds)) {
    const BevBox& cand = preds[i];
    const bool keep = std::none_of(kept.begin(), kept.end(), [&](const BevBox& k) {
      return (class_agnostic || k.class_id == cand.class_id) && rotated_iou(k, cand) >= iou_threshold;
    });
    if (keep) kept.push_back(cand);
  }
  return kept;
}

// Confidence-weighted mean of `members` over the 10 box parameters with the
// yaw pair renormalized. Class, confidence and attribute come from `rep`.
inline BevBox weighted_merge(const BevBox& rep, std::span<const BevBox* const> members) {
  BoxParams acc{};
  double mass = 0.0;
  for (const BevBox* m : members) {
    const BoxParams p = m->params();
    for (std::size_t k = 0; k < kBoxParams; ++k) acc[k] += m->confidence * p[k];
    mass += m->confidence;
  }
  if (!(mass > 0.0)) return rep;
  for (double& v : acc) v /= mass;
  BevBox out = rep;
  out.set_params(acc);
  const double n = std::hypot(out.sin_yaw, out.cos_yaw);
  if (n > 1e-12) {
    out.sin_yaw /= n;
    out.cos_yaw /= n;
  } else {
    out.sin_yaw = rep.sin_yaw;
    out.cos_yaw = rep.cos_yaw;
  }
  return out;
}

struct RadialResult {
  std::vector<BevBox> boxes;
  // For each output box, the input indices merged into it.
  std::vector<std::vector<std::size_t>> contributors;
};

// Walks boxes in descending confidence. Each box not yet consumed is replaced
// by the weighted average of itself and every unconsumed same-class box whose
// center lies strictly within `radius`; all of them are consumed. Outputs keep
// the input order of their representative box.
inline RadialResult radial_suppression_traced(std::span<const BevBox> preds, double radius) {
  if (!(radius >= 0.0)) throw DomainError("radial radius must be >= 0");
  RadialResult out;
  std::vector<char> consumed(preds.size(), 0);
  const auto order = detail::by_confidence(preds);
  std::vector<const BevBox*> members;
  std::vector<std::size_t> reps;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (consumed[i]) continue;
    members.clear();
    std::vector<std::size_t> ids;
    for (std::size_t oj = oi; oj < order.size(); ++oj) {
      const std::size_t k = order[oj];
      if (consumed[k] || preds[k].class_id != preds[i].class_id) continue;
      if (k == i || center_distance_2d(preds[i], preds[k]) < radius) {
        consumed[k] = 1;
        members.push_back(&preds[k]);
        ids.push_back(k);
      }
    }
    reps.push_back(i);
    out.boxes.push_back(members.size() == 1 ? preds[i] : weighted_merge(preds[i], members));
    out.contributors.push_back(std::move(ids));
  }
  // Emit in the input order of each output's representative.
  std::vector<std::size_t> perm(reps.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return reps[a] < reps[b]; });
  RadialResult sorted;
  for (std::size_t k : perm) {
    sorted.boxes.push_back(std::move(out.boxes[k]));
    sorted.contributors.push_back(std::move(out.contributors[k]));
  }
  return sorted;
}

inline std::vector<BevBox> radial_suppression(std::span<const BevBox> preds, double radius) {
  return radial_suppression_traced(preds, radius).boxes;
}

inline std::vector<BevBox> filter_pipeline(std::span<const BevBox> preds, const SuppressionConfig& cfg) {
  validate(cfg);
  std::vector<BevBox> cur(preds.begin(), preds.end());
  if (cfg.enable_confidence) cur = confidence_filter(cur, cfg.min_confidence);
  if (cfg.enable_nms) cur = rotated_nms(cur, cfg.nms_iou_threshold, cfg.class_agnostic_nms);
  if (cfg.enable_radial) cur = radial_suppression(cur, cfg.radial_radius);
  return cur;
}

}  // namespace pbev
