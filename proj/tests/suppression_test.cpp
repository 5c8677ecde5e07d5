#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "pbev/suppression.hpp"

using namespace pbev;

namespace {

std::vector<BevBox> clutter(Rng& rng, std::size_t n, int n_classes) {
  std::vector<BevBox> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(oracle::random_box(rng, 6.0, 0.5, 3.0, n_classes));
  return v;
}

}  // namespace

TEST(ConfidenceFilter, Basics) {
  Rng rng(1);
  const auto boxes = clutter(rng, 40, 2);
  EXPECT_TRUE(oracle::same_boxes(confidence_filter(boxes, 0.0), boxes));
  const auto kept = confidence_filter(boxes, 0.4);
  std::vector<BevBox> want;
  for (const auto& b : boxes)
    if (b.confidence >= 0.4) want.push_back(b);
  EXPECT_TRUE(oracle::same_boxes(kept, want));
  EXPECT_TRUE(oracle::same_boxes(confidence_filter(kept, 0.4), kept));
}

TEST(Nms, MatchesBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const auto boxes = clutter(rng, 5 + rng() % 40, 1 + trial % 3);
    const double thr = oracle::uniform(rng, 0.0, 0.7);
    const auto got = rotated_nms(boxes, thr);
    const auto idx = oracle::brute_force_nms(boxes, thr, [](const BevBox& a, const BevBox& b) { return rotated_iou(a, b); });
    std::vector<BevBox> want;
    for (std::size_t i : idx) want.push_back(boxes[i]);
    EXPECT_TRUE(oracle::same_boxes(got, want));
    EXPECT_TRUE(oracle::same_boxes(rotated_nms(got, thr), got));
    EXPECT_LE(got.size(), boxes.size());
  }
}

TEST(Nms, PerClassAndAgnostic) {
  const BevBox a = make_box(0, 0, 2, 2, 0, 0, 0.9);
  const BevBox b = make_box(0.1, 0, 2, 2, 0, 1, 0.8);
  const std::vector<BevBox> v{a, b};
  EXPECT_EQ(rotated_nms(v, 0.1).size(), 2u);
  EXPECT_EQ(rotated_nms(v, 0.1, true).size(), 1u);
  EXPECT_EQ(rotated_nms(std::vector<BevBox>{}, 0.1).size(), 0u);
}

TEST(Radial, TwoBoxMergeExample) {
  const BevBox a = make_box(0.0, 0.0, 2, 1, 0.0, 0, 0.6);
  const BevBox b = make_box(0.3, 0.0, 2, 1, 0.0, 0, 0.4);
  const auto out = radial_suppression(std::vector<BevBox>{a, b}, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].cx, 0.12, 1e-12);
  EXPECT_NEAR(out[0].cy, 0.0, 1e-12);
  EXPECT_EQ(out[0].confidence, 0.6);
}

TEST(Radial, IdentityCases) {
  Rng rng(4);
  const auto boxes = clutter(rng, 30, 3);
  EXPECT_TRUE(oracle::same_boxes(radial_suppression(boxes, 0.0), boxes));
  std::vector<BevBox> grid;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) grid.push_back(make_box(i * 1.0, j * 1.0, 0.5, 0.5, 0.0, 0, 0.1 + 0.03 * (i * 5 + j)));
  EXPECT_TRUE(oracle::same_boxes(radial_suppression(grid, 0.99), grid));
}

TEST(Radial, YawAveragedOnCircle) {
  const BevBox a = make_box(0, 0, 1, 1, kPi - 0.1, 0, 0.5);
  const BevBox b = make_box(0.1, 0, 1, 1, -kPi + 0.1, 0, 0.5);
  const auto out = radial_suppression(std::vector<BevBox>{a, b}, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(std::abs(out[0].yaw()), kPi, 1e-12);
  EXPECT_NEAR(std::hypot(out[0].sin_yaw, out[0].cos_yaw), 1.0, 1e-12);
}

TEST(Radial, ContributorAccounting) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto boxes = clutter(rng, 60, 3);
    const double r = oracle::uniform(rng, 0.2, 2.0);
    const auto res = radial_suppression_traced(boxes, r);
    ASSERT_EQ(res.boxes.size(), res.contributors.size());
    std::vector<int> seen(boxes.size(), 0);
    for (std::size_t k = 0; k < res.boxes.size(); ++k) {
      const auto& ids = res.contributors[k];
      ASSERT_FALSE(ids.empty());
      const BevBox& rep = boxes[ids.front()];
      EXPECT_EQ(res.boxes[k].confidence, rep.confidence);
      EXPECT_EQ(res.boxes[k].class_id, rep.class_id);
      for (std::size_t i : ids) {
        ++seen[i];
        EXPECT_EQ(boxes[i].class_id, rep.class_id);
        EXPECT_LE(boxes[i].confidence, rep.confidence);
        if (i != ids.front()) { EXPECT_LT(center_distance_2d(boxes[i], rep), r); }
      }
      if (k > 0) { EXPECT_LT(res.contributors[k - 1].front(), ids.front()); }
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Radial, NotIdempotentInGeneral) {
  const BevBox a = make_box(0.0, 0, 1, 1, 0, 0, 0.6);
  const BevBox b = make_box(0.49, 0, 1, 1, 0, 0, 0.55);
  const BevBox c = make_box(0.6, 0, 1, 1, 0, 0, 0.5);
  const auto once = radial_suppression(std::vector<BevBox>{a, b, c}, 0.5);
  ASSERT_EQ(once.size(), 2u);
  EXPECT_NEAR(once[0].cx, 0.55 * 0.49 / 1.15, 1e-12);
  EXPECT_EQ(radial_suppression(once, 0.5).size(), 1u);
}

TEST(Radial, IdempotentOnStackedScenes) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const double r = 0.5;
    const auto boxes = oracle::stacked_scene(rng, 8, 6, 0.45 * r, 2.5 * r);
    const auto once = radial_suppression(boxes, r);
    EXPECT_EQ(once.size(), 8u);
    EXPECT_TRUE(oracle::same_boxes(radial_suppression(once, r), once));
  }
}

TEST(Pipeline, AllDisabledIsIdentity) {
  Rng rng(7);
  const auto boxes = clutter(rng, 30, 3);
  SuppressionConfig cfg;
  cfg.enable_confidence = cfg.enable_nms = cfg.enable_radial = false;
  EXPECT_TRUE(oracle::same_boxes(filter_pipeline(boxes, cfg), boxes));
}

TEST(Pipeline, StageOrderMatters) {
  const BevBox a = make_box(0.0, 0, 2, 2, 0, 0, 0.9);
  const BevBox b = make_box(0.3, 0, 2, 2, 0, 0, 0.8);
  const BevBox c = make_box(5.0, 0, 2, 2, 0, 0, 0.7);
  const std::vector<BevBox> v{a, b, c};
  const auto nms_first = radial_suppression(rotated_nms(v, 0.1), 0.5);
  const auto radial_first = rotated_nms(radial_suppression(v, 0.5), 0.1);
  ASSERT_EQ(nms_first.size(), 2u);
  ASSERT_EQ(radial_first.size(), 2u);
  EXPECT_EQ(nms_first[0].cx, 0.0);
  EXPECT_NEAR(radial_first[0].cx, 0.8 * 0.3 / 1.7, 1e-12);
  SuppressionConfig cfg;
  EXPECT_TRUE(oracle::same_boxes(filter_pipeline(v, cfg), nms_first));
}

TEST(Pipeline, OneBoxPerStack) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto boxes = oracle::stacked_scene(rng, 10, 8, 0.2, 10.0);
    const auto out = filter_pipeline(boxes, SuppressionConfig{});
    EXPECT_EQ(out.size(), 10u);
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = i + 1; j < out.size(); ++j) EXPECT_GT(center_distance_2d(out[i], out[j]), 5.0);
  }
}

TEST(Pipeline, NeverGrows) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const auto boxes = clutter(rng, 50, 2);
    EXPECT_LE(filter_pipeline(boxes, SuppressionConfig{}).size(), boxes.size());
  }
  SuppressionConfig bad;
  bad.radial_radius = -1;
  EXPECT_THROW(filter_pipeline(std::vector<BevBox>{}, bad), DomainError);
  bad = {};
  bad.nms_iou_threshold = 1.5;
  EXPECT_THROW(validate(bad), DomainError);
}
