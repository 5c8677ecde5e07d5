#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "pbev/pipeline.hpp"
#include "pbev/plot.hpp"
#include "pbev/sweep.hpp"

using namespace pbev;

namespace {

WorldParams sparse_world(std::size_t n_scenes) {
  WorldParams wp;
  wp.n_scenes = n_scenes;
  wp.min_objects = 3;
  wp.max_objects = 6;
  wp.min_separation = 15.0;
  return wp;
}

std::string corpus_text(const std::vector<SceneRecord>& c) {
  std::ostringstream os;
  write_corpus(os, c);
  return os.str();
}

}  // namespace

TEST(World, EmptyScenes) {
  WorldParams wp;
  wp.n_scenes = 3;
  wp.min_objects = wp.max_objects = 0;
  const auto c = generate_scenes(wp, 1);
  ASSERT_EQ(c.size(), 3u);
  for (const auto& s : c) EXPECT_TRUE(s.gt_boxes.empty());
}

TEST(World, SeparationAndBounds) {
  WorldParams wp;
  wp.n_scenes = 20;
  wp.min_separation = 5.0;
  for (const auto& s : generate_scenes(wp, 2)) {
    EXPECT_GE(s.gt_boxes.size(), wp.min_objects);
    EXPECT_LE(s.gt_boxes.size(), wp.max_objects);
    for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
      const auto& b = s.gt_boxes[i];
      EXPECT_GE(b.cx, s.extent.x_min + wp.margin);
      EXPECT_LE(b.cx, s.extent.x_max - wp.margin);
      EXPECT_NO_THROW(validate(b));
      for (std::size_t j = i + 1; j < s.gt_boxes.size(); ++j)
        EXPECT_GE(center_distance_2d(b, s.gt_boxes[j]), wp.min_separation);
    }
  }
}

TEST(World, ByteIdenticalAcrossRuns) {
  WorldParams wp;
  wp.n_scenes = 10;
  EXPECT_EQ(corpus_text(generate_scenes(wp, 5)), corpus_text(generate_scenes(wp, 5)));
  EXPECT_NE(corpus_text(generate_scenes(wp, 5)), corpus_text(generate_scenes(wp, 6)));
}

TEST(World, InfeasibleSeparation) {
  WorldParams wp;
  wp.n_scenes = 1;
  wp.min_objects = wp.max_objects = 50;
  wp.min_separation = 60.0;
  wp.max_attempts = 200;
  EXPECT_THROW(generate_scenes(wp, 0), DomainError);
}

TEST(SceneIo, RoundTrip) {
  WorldParams wp;
  wp.n_scenes = 4;
  auto c = generate_scenes(wp, 3);
  c[1].pred_boxes = c[1].gt_boxes;
  (*c[1].pred_boxes)[0].confidence = 0.25;
  const std::string text = corpus_text(c);
  std::istringstream is("\n" + text + "\n\n");
  const auto back = read_corpus(is);
  ASSERT_EQ(back.size(), c.size());
  EXPECT_EQ(corpus_text(back), text);
  ASSERT_TRUE(back[1].pred_boxes.has_value());
  EXPECT_EQ((*back[1].pred_boxes)[0].confidence, 0.25);
  EXPECT_FALSE(back[0].pred_boxes.has_value());
}

TEST(SceneIo, Errors) {
  const std::string good = R"({"scene_id":"a","gt_boxes":[{"class":"car","cx":1,"cy":2,"w":4,"h":2,"l":1.5,"yaw":0.5}]})";
  std::istringstream one(good);
  const auto c = read_corpus(one);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c[0].gt_boxes[0].yaw(), 0.5, 1e-15);

  std::istringstream dup(good + "\n" + good + "\n");
  EXPECT_THROW(read_corpus(dup), FormatError);
  std::istringstream bad_class(R"({"scene_id":"a","gt_boxes":[{"class":"tank","cx":1,"cy":2,"w":4,"h":2,"l":1,"yaw":0}]})");
  EXPECT_THROW(read_corpus(bad_class), FormatError);
  std::istringstream bad_json("{\"scene_id\":");
  EXPECT_THROW(read_corpus(bad_json), FormatError);
  std::istringstream missing(R"({"scene_id":"a"})");
  EXPECT_THROW(read_corpus(missing), FormatError);
}

TEST(Oracle, OnCenterReturnsGt) {
  WorldParams wp = sparse_world(1);
  const SceneRecord s = generate_scenes(wp, 4)[0];
  OracleDenoiserConfig cfg;
  cfg.sigma = 0.0;
  cfg.miss_probability = 0.0;
  const SnrScale snr;
  std::vector<Vec2> particles;
  for (const auto& g : s.gt_boxes) particles.push_back(box_to_scaled(g, s.extent, snr));
  Rng rng(0);
  const auto out = oracle_denoise(particles, s, cfg, snr, rng);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].params(), s.gt_boxes[i].params());
    EXPECT_EQ(out[i].class_id, s.gt_boxes[i].class_id);
    EXPECT_GT(out[i].confidence, 0.89);
  }
}

TEST(Oracle, EmptySpaceIsBackground) {
  SceneRecord s;
  s.scene_id = "x";
  s.gt_boxes.push_back(make_box(40, 40, 4, 2, 0));
  const SnrScale snr;
  Rng rng(0);
  const std::vector<Vec2> p{box_to_scaled(make_box(-40, -40, 1, 1, 0), s.extent, snr)};
  const auto out = oracle_denoise(p, s, OracleDenoiserConfig{}, snr, rng);
  EXPECT_LT(out[0].confidence, 0.5);
  EXPECT_NEAR(out[0].cx, -40, 1e-9);
}

TEST(Oracle, JitterRms) {
  SceneRecord s;
  s.scene_id = "x";
  s.gt_boxes.push_back(make_box(3, -7, 4, 2, 0.3));
  OracleDenoiserConfig cfg;
  cfg.miss_probability = 0.0;
  const SnrScale snr;
  const std::vector<Vec2> p(10000, box_to_scaled(s.gt_boxes[0], s.extent, snr));
  Rng rng(11);
  const auto out = oracle_denoise(p, s, cfg, snr, rng);
  double acc = 0.0;
  for (const auto& b : out) acc += (b.cx - 3) * (b.cx - 3) + (b.cy + 7) * (b.cy + 7);
  EXPECT_NEAR(std::sqrt(acc / (2.0 * 10000)), cfg.sigma, 0.05 * cfg.sigma);
}

TEST(Oracle, MissRate) {
  SceneRecord s;
  s.scene_id = "x";
  s.gt_boxes.push_back(make_box(0, 0, 4, 2, 0));
  const SnrScale snr;
  const std::vector<Vec2> p(20000, box_to_scaled(s.gt_boxes[0], s.extent, snr));
  Rng rng(12);
  const auto out = oracle_denoise(p, s, OracleDenoiserConfig{}, snr, rng);
  const auto missed = std::count_if(out.begin(), out.end(), [](const BevBox& b) { return b.confidence < 0.5; });
  EXPECT_NEAR(static_cast<double>(missed) / 20000.0, 0.1, 0.01);
}

TEST(Inference, Errors) {
  const SceneRecord s = generate_scenes(sparse_world(1), 0)[0];
  const auto sched = make_cosine_schedule();
  const Denoiser den = make_oracle_denoiser(s, {}, SnrScale{});
  Rng rng(0);
  InferenceConfig cfg;
  cfg.ddim_steps = 0;
  EXPECT_THROW(run_inference(s, cfg, sched, den, rng), DomainError);
  cfg = {};
  cfg.n_particles = 0;
  EXPECT_THROW(run_inference(s, cfg, sched, den, rng), DomainError);
  const Denoiser short_den = [](std::span<const Vec2>, int, Rng&) { return std::vector<BevBox>{}; };
  EXPECT_THROW(run_inference(s, InferenceConfig{}, sched, short_den, rng), ShapeError);
  EXPECT_THROW(ref_strategy_from_string("sometimes"), DomainError);
}

TEST(Inference, Deterministic) {
  const SceneRecord s = generate_scenes(sparse_world(1), 1)[0];
  const auto sched = make_cosine_schedule();
  const Denoiser den = make_oracle_denoiser(s, {}, SnrScale{});
  InferenceConfig cfg;
  cfg.n_particles = 300;
  Rng a(7), b(7);
  EXPECT_TRUE(oracle::same_boxes(run_inference(s, cfg, sched, den, a).final_predictions,
                                 run_inference(s, cfg, sched, den, b).final_predictions));
}

TEST(Inference, TraceShape) {
  const SceneRecord s = generate_scenes(sparse_world(1), 2)[0];
  const auto sched = make_cosine_schedule();
  const Denoiser den = make_oracle_denoiser(s, {}, SnrScale{});
  Rng rng(1), grid_rng(2);
  const QueryGrid grid = QueryGrid::random_normal(10, 10, 4, grid_rng);
  InferenceConfig cfg;
  cfg.n_particles = 50;
  cfg.ddim_steps = 4;
  const auto tr = run_inference(s, cfg, sched, den, rng, &grid);
  EXPECT_EQ(tr.pairs.size(), 4u);
  EXPECT_EQ(tr.preds_per_step.size(), 4u);
  EXPECT_EQ(tr.refs_per_step.size(), 4u);
  EXPECT_EQ(tr.queries.size(), 50u * 4u);
  for (const auto& step : tr.refs_per_step)
    for (Vec2 r : step) EXPECT_LE(std::max(std::abs(r.x), std::abs(r.y)), 2.0);

  cfg.strategy = RefStrategy::Frozen;
  Rng rng2(1);
  const auto frozen = run_inference(s, cfg, sched, den, rng2);
  for (const auto& step : frozen.refs_per_step) EXPECT_EQ(step, frozen.initial_refs);
}

TEST(Inference, PerfectOracleRecoversEveryObject) {
  WorldParams wp = sparse_world(10);
  const auto corpus = generate_scenes(wp, 9);
  OracleDenoiserConfig ocfg;
  ocfg.sigma = 0.0;
  ocfg.miss_probability = 0.0;
  ocfg.basin_radius = 1000.0;
  const auto sched = make_cosine_schedule();
  InferenceConfig cfg;
  cfg.ddim_steps = 1;
  for (const auto& s : corpus) {
    Rng rng(scene_seed(0, s.scene_id));
    const auto out = run_inference(s, cfg, sched, make_oracle_denoiser(s, ocfg, cfg.snr), rng).final_predictions;
    EXPECT_EQ(out.size(), s.gt_boxes.size());
    for (const auto& g : s.gt_boxes) {
      const bool found = std::any_of(out.begin(), out.end(), [&](const BevBox& p) {
        const auto a = p.params(), b = g.params();
        for (std::size_t k = 0; k < kBoxParams; ++k)
          if (std::abs(a[k] - b[k]) > 1e-6) return false;
        return p.class_id == g.class_id;
      });
      EXPECT_TRUE(found) << s.scene_id;
    }
  }
}

TEST(TrainingPrep, Examples) {
  const SceneRecord s = generate_scenes(sparse_world(1), 3)[0];
  std::vector<double> betas(1000, 0.01);
  betas[0] = 0.0;
  const auto sched = DiffusionSchedule::from_betas(betas);
  const SnrScale snr;
  Rng rng(4);
  const std::size_t n_gt = s.gt_boxes.size();
  const auto exact = run_training_prep(s, n_gt, sched, snr, rng, nullptr, 0);
  ASSERT_EQ(exact.noisy.size(), n_gt);
  for (std::size_t i = 0; i < n_gt; ++i) {
    const Vec2 want = box_to_scaled(s.gt_boxes[i], s.extent, snr);
    EXPECT_EQ(exact.noisy[i].x, want.x);
    EXPECT_EQ(exact.noisy[i].y, want.y);
  }

  Rng grid_rng(5);
  const QueryGrid grid = QueryGrid::random_normal(8, 8, 3, grid_rng);
  const auto padded = run_training_prep(s, 40, make_cosine_schedule(), snr, rng, &grid);
  EXPECT_EQ(padded.padded.size(), 40u);
  EXPECT_EQ(padded.noisy.size(), 40u);
  EXPECT_EQ(padded.queries.size(), 40u * 3u);
  EXPECT_GE(padded.diffusion_time, 0);
  EXPECT_LT(padded.diffusion_time, 1000);
  for (Vec2 z : padded.noisy) EXPECT_LE(std::max(std::abs(z.x), std::abs(z.y)), snr.value());
  for (std::size_t i = 0; i < n_gt; ++i) EXPECT_EQ(padded.padded[i].x, padded.gt_centers[i].x);
}

TEST(Sweep, RowsAndRecompute) {
  WorldParams wp;
  wp.n_scenes = 4;
  const auto corpus = generate_scenes(wp, 10);
  SweepSpec spec;
  spec.particle_counts = {100};
  spec.seeds = {0, 1, 2};
  const auto res = run_sweep(corpus, spec);
  ASSERT_EQ(res.rows.size(), 4u);
  ASSERT_EQ(res.runs.size(), 3u);
  EXPECT_TRUE(res.rows.back().aggregate);
  double mean = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_FALSE(res.rows[k].aggregate);
    EXPECT_EQ(res.rows[k].seed, spec.seeds[k]);
    mean += res.rows[k].nds / 3.0;
    // persist predictions, reload, re-evaluate
    auto stored = corpus;
    for (std::size_t i = 0; i < stored.size(); ++i) stored[i].pred_boxes = res.runs[k].predictions[i];
    std::istringstream is(corpus_text(stored));
    const auto rep = evaluate(to_eval_frames(read_corpus(is)));
    EXPECT_NEAR(rep.map, res.rows[k].map, 1e-12);
    EXPECT_NEAR(rep.nds, res.rows[k].nds, 1e-12);
  }
  EXPECT_NEAR(res.rows.back().nds, mean, 1e-12);

  std::ostringstream a, b;
  write_sweep_csv(a, res.rows);
  write_sweep_csv(b, run_sweep(corpus, spec).rows);
  const std::string csv = a.str();
  EXPECT_EQ(csv, b.str());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);

  spec.seeds.clear();
  EXPECT_THROW(run_sweep(corpus, spec), DomainError);
}

TEST(Plot, Outputs) {
  EXPECT_EQ(xml_escape("<a & \"b\">"), "&lt;a &amp; &quot;b&quot;&gt;");
  std::ostringstream svg;
  write_line_plot_svg(svg, {{"loss", {0, 1, 2}, {1.0, 0.1, 0.01}}}, {"t", "x", "y", true});
  EXPECT_NE(svg.str().find("<svg"), std::string::npos);
  EXPECT_NE(svg.str().find("</svg>"), std::string::npos);
  EXPECT_NE(svg.str().find("loss"), std::string::npos);

  const BevExtent ext{-5, 5, -5, 5};
  const std::vector<Vec2> pts{{1, 1}};
  const Heatmap hm = kde_heatmap(pts, {}, 1.0, ext, 6, 7);
  std::ostringstream pgm;
  write_pgm(pgm, hm);
  const std::string head = "P5\n7 6\n255\n";
  EXPECT_EQ(pgm.str().substr(0, head.size()), head);
  EXPECT_EQ(pgm.str().size(), head.size() + 42);
  std::ostringstream hs;
  write_heatmap_svg(hs, hm, pts);
  EXPECT_NE(hs.str().find("<circle"), std::string::npos);
}
