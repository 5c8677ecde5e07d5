#pragma once

// NuScenes-style detection evaluation: greedy center-distance matching, AP at
// several distance thresholds, true-positive errors, the NDS composite, and
// confidence-weighted KDE heatmaps.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pbev/geometry.hpp"

namespace pbev {

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names{"car",        "truck",      "bus",     "trailer",
                                              "construction_vehicle",   "pedestrian", "motorcycle",
                                              "bicycle",    "traffic_cone", "barrier"};
  return names;
}

struct EvalConfig {
  std::vector<double> dist_thresholds{0.5, 1.0, 2.0, 4.0};
  int recall_samples{101};
  double tp_match_threshold{2.0};
  double min_recall{0.1};
  double min_precision{0.1};
  std::vector<std::string> class_names{default_class_names()};
  // Classes whose orientation error is taken modulo pi.
  std::set<std::string> orientation_symmetric{"barrier"};
  std::set<std::string> exclude_aoe{"traffic_cone"};
  std::set<std::string> exclude_ave{"traffic_cone", "barrier"};
  std::set<std::string> exclude_aae{"traffic_cone", "barrier"};

  int class_count() const { return static_cast<int>(class_names.size()); }
  std::string class_name(int id) const {
    return id >= 0 && id < class_count() ? class_names[static_cast<std::size_t>(id)] : std::to_string(id);
  }
  std::optional<int> class_id(const std::string& name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i)
      if (class_names[i] == name) return static_cast<int>(i);
    return std::nullopt;
  }
};

inline void validate(const EvalConfig& c) {
  if (c.dist_thresholds.empty()) throw DomainError("eval: no distance thresholds");
  for (std::size_t i = 0; i < c.dist_thresholds.size(); ++i) {
    if (!(c.dist_thresholds[i] > 0.0)) throw DomainError("eval: thresholds must be positive");
    if (i > 0 && !(c.dist_thresholds[i] > c.dist_thresholds[i - 1]))
      throw DomainError("eval: thresholds must be ascending");
  }
  if (c.recall_samples < 2) throw DomainError("eval: recall_samples must be >= 2");
}

// Greedy matching ------------------------------------------------------------

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt) in processing order
  std::vector<std::size_t> unmatched_preds;
  std::vector<std::size_t> unmatched_gts;
};

// Predictions in descending confidence each take the nearest unmatched GT
// with center distance < threshold. Boxes of different classes never match.
inline MatchResult greedy_match(std::span<const BevBox> preds, std::span<const BevBox> gts, double threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
  std::vector<char> taken(gts.size(), 0);
  MatchResult out;
  for (std::size_t i : order) {
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> best_j;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (taken[j] || gts[j].class_id != preds[i].class_id) continue;
      const double d = center_distance_2d(preds[i], gts[j]);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    if (best_j && best < threshold) {
      taken[*best_j] = 1;
      out.pairs.emplace_back(i, *best_j);
    } else {
      out.unmatched_preds.push_back(i);
    }
  }
  for (std::size_t j = 0; j < gts.size(); ++j)
    if (!taken[j]) out.unmatched_gts.push_back(j);
  return out;
}

// One evaluation unit (a frame/sample). Matching never crosses frames.
struct EvalFrame {
  std::vector<BevBox> gts;
  std::vector<BevBox> preds;
};

struct MatchedPair {
  std::size_t frame{0}, pred{0}, gt{0};
};

// Corpus-level sweep for one class at one threshold: predictions of all
// frames in descending confidence, each matched greedily within its frame.
struct ClassSweep {
  std::vector<char> is_tp;  // per prediction, in confidence order
  std::vector<double> confidence;
  std::vector<MatchedPair> matches;
  std::size_t n_gt{0};
};

inline ClassSweep sweep_class(std::span<const EvalFrame> frames, int class_id, double threshold) {
  struct Ref {
    std::size_t frame, pred;
    double conf;
  };
  std::vector<Ref> refs;
  std::vector<std::vector<char>> taken(frames.size());
  ClassSweep out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    taken[f].assign(frames[f].gts.size(), 0);
    for (const auto& g : frames[f].gts) out.n_gt += g.class_id == class_id;
    for (std::size_t i = 0; i < frames[f].preds.size(); ++i)
      if (frames[f].preds[i].class_id == class_id) refs.push_back({f, i, frames[f].preds[i].confidence});
  }
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.conf > b.conf; });
  for (const Ref& r : refs) {
    const auto& frame = frames[r.frame];
    const BevBox& p = frame.preds[r.pred];
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> best_j;
    for (std::size_t j = 0; j < frame.gts.size(); ++j) {
      if (taken[r.frame][j] || frame.gts[j].class_id != class_id) continue;
      const double d = center_distance_2d(p, frame.gts[j]);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    const bool tp = best_j && best < threshold;
    if (tp) {
      taken[r.frame][*best_j] = 1;
      out.matches.push_back({r.frame, r.pred, *best_j});
    }
    out.is_tp.push_back(tp ? 1 : 0);
    out.confidence.push_back(r.conf);
  }
  return out;
}

// Average precision -----------------------------------------------------------

// Precision sampled at `recall_samples` evenly spaced recalls in [0, 1] using
// the monotone envelope (best precision at any recall >= r, 0 if r is never
// reached). Samples with recall <= min_recall are dropped, precision is
// shifted by min_precision and clipped at 0, and the mean is renormalized by
// 1 - min_precision. Returns nullopt when there are no ground truths.
inline std::optional<double> average_precision(std::span<const char> is_tp_sorted, std::size_t n_gt,
                                               const EvalConfig& cfg = {}) {
  if (n_gt == 0) return std::nullopt;
  const std::size_t n = is_tp_sorted.size();
  std::vector<double> rec(n), prec(n);
  double tp = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += is_tp_sorted[k] ? 1.0 : 0.0;
    rec[k] = tp / static_cast<double>(n_gt);
    prec[k] = tp / static_cast<double>(k + 1);
  }
  // envelope[k] = max precision over positions >= k
  std::vector<double> envelope(prec);
  for (std::size_t k = n; k-- > 1;) envelope[k - 1] = std::max(envelope[k - 1], envelope[k]);

  const int samples = cfg.recall_samples;
  const auto first = static_cast<int>(std::lround((samples - 1) * cfg.min_recall)) + 1;
  double acc = 0.0;
  int count = 0;
  for (int s = first; s < samples; ++s) {
    const double r = static_cast<double>(s) / (samples - 1);
    const auto it = std::lower_bound(rec.begin(), rec.end(), r - 1e-12);
    const double p = it == rec.end() ? 0.0 : envelope[static_cast<std::size_t>(it - rec.begin())];
    acc += std::max(0.0, p - cfg.min_precision);
    ++count;
  }
  if (count == 0) return 0.0;
  return acc / count / (1.0 - cfg.min_precision);
}

// True-positive errors --------------------------------------------------------

struct TPErrors {
  std::optional<double> ate, ase, aoe, ave, aae;

  std::array<std::optional<double>, 5> as_array() const { return {ate, ase, aoe, ave, aae}; }
};

inline const std::array<const char*, 5>& tp_error_names() {
  static const std::array<const char*, 5> names{"mATE", "mASE", "mAOE", "mAVE", "mAAE"};
  return names;
}

inline double yaw_difference(double a, double b, double period) {
  double d = std::fmod(std::abs(a - b), period);
  if (d > period / 2.0) d = period - d;
  return d;
}

// 1 - IoU of the two boxes after aligning centers and yaw.
inline double scale_error(const BevBox& pred, const BevBox& gt) {
  const double inter = std::min(pred.w, gt.w) * std::min(pred.h, gt.h) * std::min(pred.l, gt.l);
  const double uni = pred.w * pred.h * pred.l + gt.w * gt.h * gt.l - inter;
  return 1.0 - inter / uni;
}

struct PairErrors {
  double ate, ase, aoe, ave;
  std::optional<double> aae;  // only when the GT carries an attribute
};

inline PairErrors pair_errors(const BevBox& pred, const BevBox& gt, bool symmetric_orientation) {
  PairErrors e{};
  e.ate = center_distance_2d(pred, gt);
  e.ase = scale_error(pred, gt);
  e.aoe = yaw_difference(pred.yaw(), gt.yaw(), symmetric_orientation ? kPi : 2.0 * kPi);
  e.ave = norm(pred.velocity() - gt.velocity());
  if (!gt.attribute.empty()) e.aae = pred.attribute == gt.attribute ? 0.0 : 1.0;
  return e;
}

struct ClassTPErrors {
  TPErrors errors;
  std::size_t matches{0};
};

// Means over matched pairs of one class; components excluded for the class
// or without any sample stay empty.
inline ClassTPErrors tp_errors(std::span<const EvalFrame> frames, std::span<const MatchedPair> matches,
                               const std::string& class_name, const EvalConfig& cfg = {}) {
  ClassTPErrors out;
  out.matches = matches.size();
  if (matches.empty()) return out;
  const bool sym = cfg.orientation_symmetric.count(class_name) > 0;
  double ate = 0, ase = 0, aoe = 0, ave = 0, aae = 0;
  std::size_t n_attr = 0;
  for (const auto& m : matches) {
    const PairErrors e = pair_errors(frames[m.frame].preds[m.pred], frames[m.frame].gts[m.gt], sym);
    ate += e.ate;
    ase += e.ase;
    aoe += e.aoe;
    ave += e.ave;
    if (e.aae) {
      aae += *e.aae;
      ++n_attr;
    }
  }
  const double n = static_cast<double>(matches.size());
  out.errors.ate = ate / n;
  out.errors.ase = ase / n;
  if (!cfg.exclude_aoe.count(class_name)) out.errors.aoe = aoe / n;
  if (!cfg.exclude_ave.count(class_name)) out.errors.ave = ave / n;
  if (!cfg.exclude_aae.count(class_name) && n_attr > 0) out.errors.aae = aae / static_cast<double>(n_attr);
  return out;
}

// NDS = (5 mAP + sum over the five TP errors of (1 - min(1, err))) / 10.
// A missing error contributes as the worst value (1).
inline double nds(double map_value, const TPErrors& errs) {
  double acc = 5.0 * map_value;
  for (const auto& e : errs.as_array()) acc += 1.0 - std::min(1.0, e.value_or(1.0));
  return acc / 10.0;
}

// Report ----------------------------------------------------------------------

struct ClassReport {
  std::string name;
  std::size_t n_gt{0};
  std::vector<std::optional<double>> ap;  // per distance threshold
  ClassTPErrors tp;
};

struct EvalReport {
  std::vector<double> dist_thresholds;
  std::vector<ClassReport> classes;
  double map{0.0};
  TPErrors errors;
  double nds{0.0};
};

inline EvalReport evaluate(std::span<const EvalFrame> frames, const EvalConfig& cfg = {}) {
  validate(cfg);
  EvalReport rep;
  rep.dist_thresholds = cfg.dist_thresholds;
  double ap_sum = 0.0;
  std::size_t ap_classes = 0;
  std::array<double, 5> err_sum{};
  std::array<std::size_t, 5> err_n{};
  for (int c = 0; c < cfg.class_count(); ++c) {
    ClassReport cr;
    cr.name = cfg.class_name(c);
    for (double th : cfg.dist_thresholds) {
      const ClassSweep sw = sweep_class(frames, c, th);
      cr.n_gt = sw.n_gt;
      cr.ap.push_back(average_precision(sw.is_tp, sw.n_gt, cfg));
      if (th == cfg.tp_match_threshold) cr.tp = tp_errors(frames, sw.matches, cr.name, cfg);
    }
    if (std::find(cfg.dist_thresholds.begin(), cfg.dist_thresholds.end(), cfg.tp_match_threshold) ==
        cfg.dist_thresholds.end()) {
      const ClassSweep sw = sweep_class(frames, c, cfg.tp_match_threshold);
      cr.tp = tp_errors(frames, sw.matches, cr.name, cfg);
    }
    if (cr.n_gt > 0) {
      double s = 0.0;
      for (const auto& a : cr.ap) s += a.value_or(0.0);
      ap_sum += s / static_cast<double>(cr.ap.size());
      ++ap_classes;
      const auto errs = cr.tp.errors.as_array();
      for (std::size_t k = 0; k < 5; ++k) {
        if (errs[k]) {
          err_sum[k] += *errs[k];
          ++err_n[k];
        }
      }
    }
    rep.classes.push_back(std::move(cr));
  }
  rep.map = ap_classes ? ap_sum / static_cast<double>(ap_classes) : 0.0;
  std::array<std::optional<double>, 5> means;
  for (std::size_t k = 0; k < 5; ++k)
    if (err_n[k]) means[k] = err_sum[k] / static_cast<double>(err_n[k]);
  rep.errors = {means[0], means[1], means[2], means[3], means[4]};
  rep.nds = nds(rep.map, rep.errors);
  return rep;
}

// KDE heatmap -----------------------------------------------------------------

struct Heatmap {
  BevExtent extent;
  std::size_t rows{0}, cols{0};
  std::vector<double> values;  // row-major, row 0 at y_min

  double cell_area() const {
    return (extent.width() / static_cast<double>(cols)) * (extent.height() / static_cast<double>(rows));
  }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  Vec2 cell_center(std::size_t r, std::size_t c) const {
    return {extent.x_min + (static_cast<double>(c) + 0.5) * extent.width() / static_cast<double>(cols),
            extent.y_min + (static_cast<double>(r) + 0.5) * extent.height() / static_cast<double>(rows)};
  }
  double integral() const { return std::accumulate(values.begin(), values.end(), 0.0) * cell_area(); }
};

// Isotropic Gaussian KDE. With empty `weights` every center has weight 1.
// Values are densities per square meter, so the cell-area-weighted sum
// approximates the total weight.
inline Heatmap kde_heatmap(std::span<const Vec2> centers, std::span<const double> weights, double bandwidth,
                           const BevExtent& extent, std::size_t rows, std::size_t cols) {
  if (!(bandwidth > 0.0)) throw DomainError("kde bandwidth must be positive");
  if (!weights.empty() && weights.size() != centers.size()) throw ShapeError("kde weights size mismatch");
  if (rows == 0 || cols == 0) throw ShapeError("kde grid must be nonempty");
  validate(extent);
  Heatmap hm{extent, rows, cols, std::vector<double>(rows * cols, 0.0)};
  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  const double norm_c = 1.0 / (2.0 * kPi * bandwidth * bandwidth);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Vec2 p = hm.cell_center(r, c);
      double acc = 0.0;
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const Vec2 d = p - centers[k];
        const double w = weights.empty() ? 1.0 : weights[k];
        acc += w * std::exp(-(d.x * d.x + d.y * d.y) * inv2h2);
      }
      hm.values[r * cols + c] = acc * norm_c;
    }
  }
  return hm;
}

}  // namespace pbev
