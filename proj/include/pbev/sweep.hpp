#pragma once

// Grid sweeps over inference settings with the oracle denoiser, one metric
// row per (cell, seed) and one aggregate row per cell.

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "pbev/eval.hpp"
#include "pbev/oracle.hpp"
#include "pbev/pipeline.hpp"
#include "pbev/scene.hpp"

namespace pbev {

struct SweepSpec {
  std::vector<int> ddim_steps{3};
  std::vector<std::size_t> particle_counts{900};
  std::vector<SuppressionConfig> suppression{SuppressionConfig{}};
  std::vector<RefStrategy> strategies{RefStrategy::StandardNormal};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  OracleDenoiserConfig oracle{};
  double renewal_threshold{0.5};
  SnrScale snr{};
};

inline void validate(const SweepSpec& s) {
  if (s.ddim_steps.empty() || s.particle_counts.empty() || s.suppression.empty() || s.strategies.empty() ||
      s.seeds.empty())
    throw DomainError("sweep: every axis needs at least one value");
  for (const auto& c : s.suppression) validate(c);
  validate(s.oracle);
}

struct SweepCell {
  int ddim_steps{3};
  std::size_t n_particles{900};
  SuppressionConfig suppression{};
  RefStrategy strategy{RefStrategy::StandardNormal};
};

struct SweepRow {
  SweepCell cell;
  bool aggregate{false};
  std::uint64_t seed{0};  // unused on aggregate rows
  double map{0.0}, nds{0.0};
  TPErrors errors;
  double map_std{0.0}, nds_std{0.0};  // aggregate rows only
};

struct SweepRun {
  SweepCell cell;
  std::uint64_t seed{0};
  std::vector<std::vector<BevBox>> predictions;  // per scene, corpus order
  EvalReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepRun> runs;
};

inline std::uint64_t scene_seed(std::uint64_t seed, const std::string& scene_id) {
  return derive_seed(seed, hash_string(scene_id));
}

inline std::vector<std::vector<BevBox>> infer_corpus(const std::vector<SceneRecord>& corpus,
                                                     const InferenceConfig& icfg, const OracleDenoiserConfig& ocfg,
                                                     const DiffusionSchedule& sched, std::uint64_t seed,
                                                     const QueryGrid* grid = nullptr) {
  std::vector<std::vector<BevBox>> out;
  out.reserve(corpus.size());
  for (const auto& scene : corpus) {
    Rng rng(scene_seed(seed, scene.scene_id));
    const Denoiser den = make_oracle_denoiser(scene, ocfg, icfg.snr);
    out.push_back(run_inference(scene, icfg, sched, den, rng, grid).final_predictions);
  }
  return out;
}

inline std::vector<EvalFrame> frames_with(const std::vector<SceneRecord>& corpus,
                                          const std::vector<std::vector<BevBox>>& preds) {
  std::vector<EvalFrame> frames;
  frames.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) frames.push_back({corpus[i].gt_boxes, preds[i]});
  return frames;
}

inline SweepResult run_sweep(const std::vector<SceneRecord>& corpus, const SweepSpec& spec,
                             const EvalConfig& ecfg = {},
                             const DiffusionSchedule& sched = make_cosine_schedule()) {
  validate(spec);
  if (corpus.empty()) throw DomainError("sweep: corpus is empty");
  SweepResult res;
  for (int steps : spec.ddim_steps)
    for (std::size_t n : spec.particle_counts)
      for (const auto& sup : spec.suppression)
        for (RefStrategy ren : spec.strategies) {
          const SweepCell cell{steps, n, sup, ren};
          InferenceConfig icfg;
          icfg.n_particles = n;
          icfg.ddim_steps = steps;
          icfg.suppression = sup;
          icfg.strategy = ren;
          icfg.renewal_threshold = spec.renewal_threshold;
          icfg.snr = spec.snr;

          std::vector<double> maps, ndss;
          std::vector<std::array<std::optional<double>, 5>> errs;
          for (std::uint64_t seed : spec.seeds) {
            SweepRun run{cell, seed, infer_corpus(corpus, icfg, spec.oracle, sched, seed), {}};
            run.report = evaluate(frames_with(corpus, run.predictions), ecfg);
            SweepRow row{cell, false, seed, run.report.map, run.report.nds, run.report.errors};
            maps.push_back(row.map);
            ndss.push_back(row.nds);
            errs.push_back(row.errors.as_array());
            res.rows.push_back(row);
            res.runs.push_back(std::move(run));
          }

          const auto mean_std = [](const std::vector<double>& v) {
            double m = 0.0, s = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            for (double x : v) s += (x - m) * (x - m);
            return std::pair{m, std::sqrt(s / static_cast<double>(v.size()))};
          };
          SweepRow agg;
          agg.cell = cell;
          agg.aggregate = true;
          std::tie(agg.map, agg.map_std) = mean_std(maps);
          std::tie(agg.nds, agg.nds_std) = mean_std(ndss);
          std::array<std::optional<double>, 5> e;
          for (std::size_t k = 0; k < 5; ++k) {
            double acc = 0.0;
            bool all = true;
            for (const auto& r : errs) {
              if (!r[k]) all = false;
              else acc += *r[k];
            }
            if (all) e[k] = acc / static_cast<double>(errs.size());
          }
          agg.errors = {e[0], e[1], e[2], e[3], e[4]};
          res.rows.push_back(agg);
        }
  return res;
}

// CSV ---------------------------------------------------------------------------

inline const char* sweep_csv_header() {
  return "row_type,ddim_steps,n_particles,min_conf_enabled,min_conf,nms_enabled,nms_iou,radial_enabled,"
         "radial_radius,ref_strategy,seed,mAP,NDS,mATE,mASE,mAOE,mAVE,mAAE,mAP_std,NDS_std";
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  const auto num = [](double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
  };
  os << sweep_csv_header() << '\n';
  for (const auto& r : rows) {
    const auto& s = r.cell.suppression;
    os << (r.aggregate ? "mean" : "run") << ',' << r.cell.ddim_steps << ',' << r.cell.n_particles << ','
       << s.enable_confidence << ',' << num(s.min_confidence) << ',' << s.enable_nms << ','
       << num(s.nms_iou_threshold) << ',' << s.enable_radial << ',' << num(s.radial_radius) << ','
       << to_string(r.cell.strategy) << ',';
    if (!r.aggregate) os << r.seed;
    os << ',' << num(r.map) << ',' << num(r.nds);
    for (const auto& e : r.errors.as_array()) os << ',' << (e ? num(*e) : "");
    os << ',';
    if (r.aggregate) os << num(r.map_std);
    os << ',';
    if (r.aggregate) os << num(r.nds_std);
    os << '\n';
  }
}

}  // namespace pbev
