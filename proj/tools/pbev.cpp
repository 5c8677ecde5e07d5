// pbev command line: corpus generation, reference preparation, inference with
// the oracle denoiser, evaluation, sweeps, heatmaps and the toy experiment.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pbev/eval.hpp"
#include "pbev/pipeline.hpp"
#include "pbev/plot.hpp"
#include "pbev/scene.hpp"
#include "pbev/sweep.hpp"
#include "pbev/toy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pbev;

namespace {

constexpr const char* kVersion = "0.1.0";

fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  const char* dir = std::getenv("PBEV_OUTPUT_DIR");
  return dir && *dir ? fs::path(dir) / path : path;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
  if (!os) throw Error("cannot open " + p.string() + " for writing");
  return os;
}

std::vector<SceneRecord> load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open corpus " + path);
  return read_corpus(is);
}

void write_manifest(const fs::path& primary, const std::string& command, std::uint64_t seed, const json& config,
                    const std::vector<fs::path>& outputs) {
  json m;
  m["tool"] = "pbev";
  m["version"] = kVersion;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = config;
  m["outputs"] = json::array();
  for (const auto& o : outputs) m["outputs"].push_back(o.string());
#ifdef __VERSION__
  m["compiler"] = __VERSION__;
#endif
  m["cxx_standard"] = static_cast<long>(__cplusplus);
  fs::path mp = primary;
  mp += ".manifest.json";
  open_out(mp) << m.dump(2) << '\n';
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json report_to_json(const EvalReport& r) {
  json j;
  j["mAP"] = r.map;
  j["NDS"] = r.nds;
  const auto errs = r.errors.as_array();
  for (std::size_t k = 0; k < 5; ++k) j[tp_error_names()[k]] = optional_json(errs[k]);
  j["dist_thresholds"] = r.dist_thresholds;
  j["classes"] = json::array();
  for (const auto& c : r.classes) {
    json cj{{"name", c.name}, {"n_gt", c.n_gt}};
    cj["ap"] = json::array();
    for (const auto& a : c.ap) cj["ap"].push_back(optional_json(a));
    const auto ce = c.tp.errors.as_array();
    for (std::size_t k = 0; k < 5; ++k) cj[tp_error_names()[k]] = optional_json(ce[k]);
    j["classes"].push_back(cj);
  }
  return j;
}

json suppression_json(const SuppressionConfig& s) {
  return {{"min_confidence", s.min_confidence}, {"enable_confidence", s.enable_confidence},
          {"nms_iou_threshold", s.nms_iou_threshold}, {"enable_nms", s.enable_nms},
          {"radial_radius", s.radial_radius}, {"enable_radial", s.enable_radial},
          {"class_agnostic_nms", s.class_agnostic_nms}};
}

json oracle_json(const OracleDenoiserConfig& o) {
  return {{"basin_radius", o.basin_radius}, {"sigma", o.sigma}, {"confidence_high", o.confidence_high},
          {"confidence_softness", o.confidence_softness}, {"confidence_background", o.confidence_background},
          {"miss_probability", o.miss_probability}};
}

const SceneRecord& find_scene(const std::vector<SceneRecord>& corpus, const std::string& id) {
  if (corpus.empty()) throw Error("corpus is empty");
  if (id.empty()) return corpus.front();
  for (const auto& s : corpus)
    if (s.scene_id == id) return s;
  throw Error("scene '" + id + "' not found");
}

json points_json(const std::vector<Vec2>& pts) {
  json a = json::array();
  for (Vec2 p : pts) a.push_back({p.x, p.y});
  return a;
}

void add_suppression_flags(CLI::App* c, SuppressionConfig& s) {
  c->add_option("--min-conf", s.min_confidence, "minimum confidence")->capture_default_str();
  c->add_option("--nms-iou", s.nms_iou_threshold, "NMS IoU discard threshold")->capture_default_str();
  c->add_option("--radius", s.radial_radius, "radial suppression radius (m)")->capture_default_str();
  c->add_flag("!--no-min-conf", s.enable_confidence, "disable the confidence filter");
  c->add_flag("!--no-nms", s.enable_nms, "disable NMS");
  c->add_flag("!--no-radial", s.enable_radial, "disable radial suppression");
  c->add_flag("--class-agnostic-nms", s.class_agnostic_nms, "suppress across classes");
}

void add_oracle_flags(CLI::App* c, OracleDenoiserConfig& o) {
  c->add_option("--basin", o.basin_radius, "oracle basin radius (m)")->capture_default_str();
  c->add_option("--sigma", o.sigma, "oracle center jitter (m)")->capture_default_str();
  c->add_option("--miss", o.miss_probability, "oracle miss probability")->capture_default_str();
  c->add_option("--conf-high", o.confidence_high, "oracle peak confidence")->capture_default_str();
  c->add_option("--conf-softness", o.confidence_softness, "oracle logistic scale (m)")->capture_default_str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pbev: particle-based BEV detection toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic scene corpus");
  WorldParams wp;
  std::string gen_out = "corpus.jsonl";
  gen->add_option("--scenes", wp.n_scenes, "number of scenes")->capture_default_str();
  gen->add_option("--min-objects", wp.min_objects)->capture_default_str();
  gen->add_option("--max-objects", wp.max_objects)->capture_default_str();
  gen->add_option("--min-separation", wp.min_separation, "meters")->capture_default_str();
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("-o,--out", gen_out)->capture_default_str();

  // prep
  auto* prep = app.add_subcommand("prep", "training-time reference preparation for one scene");
  std::string corpus_path, scene_id, prep_out = "prep.json";
  std::size_t n_total = 900;
  std::optional<int> prep_t;
  std::size_t grid_rows = 30, grid_cols = 30, grid_channels = 0;
  double snr_value = 2.0;
  prep->add_option("-c,--corpus", corpus_path)->required();
  prep->add_option("--scene", scene_id, "scene id (default: first)");
  prep->add_option("--n-total", n_total)->capture_default_str();
  prep->add_option("--t", prep_t, "diffusion time (default: uniform)");
  prep->add_option("--snr", snr_value)->capture_default_str();
  prep->add_option("--grid-rows", grid_rows)->capture_default_str();
  prep->add_option("--grid-cols", grid_cols)->capture_default_str();
  prep->add_option("--grid-channels", grid_channels, "0 skips query interpolation")->capture_default_str();
  prep->add_option("--seed", seed)->capture_default_str();
  prep->add_option("-o,--out", prep_out)->capture_default_str();

  // infer
  auto* infer = app.add_subcommand("infer", "iterative inference with the oracle denoiser");
  InferenceConfig icfg;
  OracleDenoiserConfig ocfg;
  std::string strategy = "standard_normal", infer_out = "predictions.jsonl";
  infer->add_option("-c,--corpus", corpus_path)->required();
  infer->add_option("--particles", icfg.n_particles)->capture_default_str();
  infer->add_option("--steps", icfg.ddim_steps, "DDIM steps")->capture_default_str();
  infer->add_option("--strategy", strategy, "standard_normal|near_predictions|ddim_only|resample_only|frozen")
      ->capture_default_str();
  infer->add_option("--renewal-threshold", icfg.renewal_threshold)->capture_default_str();
  infer->add_option("--snr", snr_value)->capture_default_str();
  add_suppression_flags(infer, icfg.suppression);
  add_oracle_flags(infer, ocfg);
  infer->add_option("--seed", seed)->capture_default_str();
  infer->add_option("-o,--out", infer_out)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a corpus carrying pred_boxes");
  std::string eval_out = "report.json";
  ev->add_option("-c,--corpus", corpus_path)->required();
  ev->add_option("--seed", seed)->capture_default_str();
  ev->add_option("-o,--out", eval_out)->capture_default_str();

  // sweep
  auto* sw = app.add_subcommand("sweep", "grid sweep over inference settings");
  std::string sw_steps = "3", sw_particles = "900", sw_strategies = "standard_normal", sw_radii = "0.5",
              sw_nms = "0.1", sw_out = "sweep.csv", sw_pred_dir;
  std::size_t sw_seeds = 5;
  SuppressionConfig sw_base;
  sw->add_option("-c,--corpus", corpus_path)->required();
  sw->add_option("--steps", sw_steps, "comma separated DDIM steps")->capture_default_str();
  sw->add_option("--particles", sw_particles, "comma separated particle counts")->capture_default_str();
  sw->add_option("--strategies", sw_strategies, "comma separated reference strategies")->capture_default_str();
  sw->add_option("--radii", sw_radii, "comma separated radial radii")->capture_default_str();
  sw->add_option("--nms-ious", sw_nms, "comma separated NMS thresholds")->capture_default_str();
  sw->add_option("--min-conf", sw_base.min_confidence)->capture_default_str();
  sw->add_option("--seeds", sw_seeds, "seeds per cell, starting at --seed")->capture_default_str();
  sw->add_option("--predictions-dir", sw_pred_dir, "store per-run predictions here");
  add_oracle_flags(sw, ocfg);
  sw->add_option("--seed", seed)->capture_default_str();
  sw->add_option("-o,--out", sw_out)->capture_default_str();

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "KDE heatmap of predicted centers for one scene");
  double bandwidth = 1.0;
  std::size_t hm_rows = 200, hm_cols = 200;
  std::string hm_out = "heatmap";
  hm->add_option("-c,--corpus", corpus_path)->required();
  hm->add_option("--scene", scene_id, "scene id (default: first)");
  hm->add_option("--particles", icfg.n_particles)->capture_default_str();
  hm->add_option("--steps", icfg.ddim_steps)->capture_default_str();
  hm->add_option("--bandwidth", bandwidth, "meters")->capture_default_str();
  hm->add_option("--rows", hm_rows)->capture_default_str();
  hm->add_option("--cols", hm_cols)->capture_default_str();
  add_oracle_flags(hm, ocfg);
  hm->add_option("--seed", seed)->capture_default_str();
  hm->add_option("-o,--out", hm_out, "output stem (.pgm and .svg)")->capture_default_str();

  // toy
  auto* toy_cmd = app.add_subcommand("toy", "label-ambiguity toy experiment");
  toy::ToyConfig tcfg;
  std::string ref_mode = "random", match_mode = "distance", toy_out = "toy_loss.csv";
  toy_cmd->add_option("--refs", tcfg.n_refs)->capture_default_str();
  toy_cmd->add_option("--targets", tcfg.n_targets)->capture_default_str();
  toy_cmd->add_option("--ref-mode", ref_mode, "fixed|random")->capture_default_str();
  toy_cmd->add_option("--match", match_mode, "index|distance")->capture_default_str();
  toy_cmd->add_option("--iterations", tcfg.iterations)->capture_default_str();
  toy_cmd->add_option("--lr", tcfg.adam.lr)->capture_default_str();
  toy_cmd->add_option("--lr-final", tcfg.lr_final)->capture_default_str();
  toy_cmd->add_option("--hidden", tcfg.hidden)->capture_default_str();
  toy_cmd->add_option("--tolerance", tcfg.tolerance)->capture_default_str();
  toy_cmd->add_option("--seed", seed)->capture_default_str();
  toy_cmd->add_option("-o,--out", toy_out)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto corpus = generate_scenes(wp, seed);
      const fs::path out = output_path(gen_out);
      auto os = open_out(out);
      write_corpus(os, corpus);
      write_manifest(out, "gen", seed,
                     {{"scenes", wp.n_scenes}, {"min_objects", wp.min_objects}, {"max_objects", wp.max_objects},
                      {"min_separation", wp.min_separation}},
                     {out});
      std::cout << "wrote " << corpus.size() << " scenes to " << out.string() << '\n';
    } else if (*prep) {
      const auto corpus = load_corpus(corpus_path);
      const SceneRecord& scene = find_scene(corpus, scene_id);
      const auto sched = make_cosine_schedule();
      const SnrScale snr(snr_value);
      Rng rng(scene_seed(seed, scene.scene_id));
      std::optional<QueryGrid> grid;
      if (grid_channels > 0) grid = QueryGrid::random_normal(grid_rows, grid_cols, grid_channels, rng);
      const TrainingPrep p = run_training_prep(scene, n_total, sched, snr, rng, grid ? &*grid : nullptr, prep_t);
      json j{{"scene_id", scene.scene_id},     {"diffusion_time", p.diffusion_time},
             {"alpha_bar", sched.alpha_bar(p.diffusion_time)},
             {"gt_centers", points_json(p.gt_centers)}, {"padded", points_json(p.padded)},
             {"scaled", points_json(p.scaled)}, {"eps", points_json(p.eps)},
             {"noisy", points_json(p.noisy)}, {"queries", p.queries}};
      const fs::path out = output_path(prep_out);
      open_out(out) << j.dump() << '\n';
      write_manifest(out, "prep", seed,
                     {{"corpus", corpus_path}, {"scene", scene.scene_id}, {"n_total", n_total}, {"snr", snr_value},
                      {"grid", {grid_rows, grid_cols, grid_channels}}},
                     {out});
      std::cout << "prepared " << p.noisy.size() << " references at t=" << p.diffusion_time << '\n';
    } else if (*infer) {
      auto corpus = load_corpus(corpus_path);
      icfg.strategy = ref_strategy_from_string(strategy);
      icfg.snr = SnrScale(snr_value);
      const auto preds = infer_corpus(corpus, icfg, ocfg, make_cosine_schedule(), seed);
      std::size_t total = 0;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        corpus[i].pred_boxes = preds[i];
        total += preds[i].size();
      }
      const fs::path out = output_path(infer_out);
      auto os = open_out(out);
      write_corpus(os, corpus);
      write_manifest(out, "infer", seed,
                     {{"corpus", corpus_path}, {"particles", icfg.n_particles}, {"ddim_steps", icfg.ddim_steps},
                      {"strategy", strategy}, {"renewal_threshold", icfg.renewal_threshold}, {"snr", snr_value},
                      {"suppression", suppression_json(icfg.suppression)}, {"oracle", oracle_json(ocfg)}},
                     {out});
      std::cout << "wrote " << total << " predictions over " << corpus.size() << " scenes to " << out.string() << '\n';
    } else if (*ev) {
      const auto corpus = load_corpus(corpus_path);
      const EvalReport r = evaluate(to_eval_frames(corpus));
      const fs::path out = output_path(eval_out);
      open_out(out) << report_to_json(r).dump(2) << '\n';
      write_manifest(out, "eval", seed, {{"corpus", corpus_path}}, {out});
      std::cout << "mAP " << r.map << "  NDS " << r.nds << '\n';
      const auto errs = r.errors.as_array();
      for (std::size_t k = 0; k < 5; ++k)
        std::cout << tp_error_names()[k] << ' ' << (errs[k] ? std::to_string(*errs[k]) : "n/a") << '\n';
    } else if (*sw) {
      const auto corpus = load_corpus(corpus_path);
      SweepSpec spec;
      spec.oracle = ocfg;
      spec.ddim_steps.clear();
      for (const auto& s : split(sw_steps, ',')) spec.ddim_steps.push_back(std::stoi(s));
      spec.particle_counts.clear();
      for (const auto& s : split(sw_particles, ',')) spec.particle_counts.push_back(std::stoul(s));
      spec.strategies.clear();
      for (const auto& s : split(sw_strategies, ',')) spec.strategies.push_back(ref_strategy_from_string(s));
      spec.suppression.clear();
      for (const auto& n : split(sw_nms, ','))
        for (const auto& r : split(sw_radii, ',')) {
          SuppressionConfig c = sw_base;
          c.nms_iou_threshold = std::stod(n);
          c.radial_radius = std::stod(r);
          spec.suppression.push_back(c);
        }
      spec.seeds.clear();
      for (std::size_t k = 0; k < sw_seeds; ++k) spec.seeds.push_back(seed + k);
      const SweepResult res = run_sweep(corpus, spec);
      const fs::path out = output_path(sw_out);
      auto os = open_out(out);
      write_sweep_csv(os, res.rows);
      std::vector<fs::path> outputs{out};
      if (!sw_pred_dir.empty()) {
        const fs::path dir = output_path(sw_pred_dir);
        for (std::size_t k = 0; k < res.runs.size(); ++k) {
          auto c = corpus;
          for (std::size_t i = 0; i < c.size(); ++i) c[i].pred_boxes = res.runs[k].predictions[i];
          const fs::path p = dir / ("run_" + std::to_string(k) + ".jsonl");
          auto ps = open_out(p);
          write_corpus(ps, c);
          outputs.push_back(p);
        }
      }
      write_manifest(out, "sweep", seed,
                     {{"corpus", corpus_path}, {"steps", sw_steps}, {"particles", sw_particles},
                      {"strategies", sw_strategies}, {"radii", sw_radii}, {"nms_ious", sw_nms},
                      {"min_conf", sw_base.min_confidence}, {"seeds", spec.seeds}, {"oracle", oracle_json(ocfg)}},
                     outputs);
      std::cout << "wrote " << res.rows.size() << " rows to " << out.string() << '\n';
    } else if (*hm) {
      const auto corpus = load_corpus(corpus_path);
      const SceneRecord& scene = find_scene(corpus, scene_id);
      Rng rng(scene_seed(seed, scene.scene_id));
      const auto sched = make_cosine_schedule();
      const InferenceTrace tr = run_inference(scene, icfg, sched, make_oracle_denoiser(scene, ocfg, icfg.snr), rng);
      std::vector<Vec2> centers;
      std::vector<double> weights;
      for (const auto& step : tr.preds_per_step)
        for (const auto& b : step) {
          centers.push_back(b.center());
          weights.push_back(b.confidence);
        }
      const Heatmap h = kde_heatmap(centers, weights, bandwidth, scene.extent, hm_rows, hm_cols);
      std::vector<Vec2> gts;
      for (const auto& b : scene.gt_boxes) gts.push_back(b.center());
      const fs::path stem = output_path(hm_out);
      fs::path pgm = stem, svg = stem;
      pgm += ".pgm";
      svg += ".svg";
      auto ps = open_out(pgm, true);
      write_pgm(ps, h);
      auto ss = open_out(svg);
      write_heatmap_svg(ss, h, gts);
      write_manifest(stem, "heatmap", seed,
                     {{"corpus", corpus_path}, {"scene", scene.scene_id}, {"particles", icfg.n_particles},
                      {"ddim_steps", icfg.ddim_steps}, {"bandwidth", bandwidth}, {"rows", hm_rows},
                      {"cols", hm_cols}, {"oracle", oracle_json(ocfg)}},
                     {pgm, svg});
      std::cout << "heatmap mass " << h.integral() << " over " << centers.size() << " predictions\n";
    } else if (*toy_cmd) {
      if (ref_mode != "fixed" && ref_mode != "random") throw DomainError("--ref-mode must be fixed or random");
      if (match_mode != "index" && match_mode != "distance") throw DomainError("--match must be index or distance");
      tcfg.ref_mode = ref_mode == "fixed" ? toy::RefMode::Fixed : toy::RefMode::Random;
      tcfg.match_mode = match_mode == "index" ? toy::MatchMode::ByIndex : toy::MatchMode::ByDistance;
      tcfg.seed = seed;
      const toy::ToyRun run = toy::run_ambiguity_experiment(tcfg);
      const fs::path out = output_path(toy_out);
      {
        auto os = open_out(out);
        os << "iteration,loss,n_refs,mode,seed\n";
        os.precision(10);
        const std::string mode = ref_mode + "/" + match_mode;
        for (std::size_t i = 0; i < run.loss_curve.size(); ++i)
          os << i << ',' << run.loss_curve[i] << ',' << tcfg.n_refs << ',' << mode << ',' << seed << '\n';
      }
      fs::path svg = out;
      svg.replace_extension(".svg");
      Series s{"loss", {}, run.loss_curve};
      for (std::size_t i = 0; i < run.loss_curve.size(); ++i) s.x.push_back(static_cast<double>(i));
      auto ss = open_out(svg);
      write_line_plot_svg(ss, {s}, {"toy loss", "iteration", "l1 loss", true});
      write_manifest(out, "toy", seed,
                     {{"refs", tcfg.n_refs}, {"targets", tcfg.n_targets}, {"ref_mode", ref_mode},
                      {"match", match_mode}, {"iterations", tcfg.iterations}, {"lr", tcfg.adam.lr},
                      {"lr_final", tcfg.lr_final}, {"hidden", tcfg.hidden}, {"tolerance", tcfg.tolerance},
                      {"final_smoothed_loss", run.final_smoothed_loss}, {"converged", run.converged}},
                     {out, svg});
      std::cout << "final smoothed loss " << run.final_smoothed_loss << (run.converged ? " (converged)" : "") << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
