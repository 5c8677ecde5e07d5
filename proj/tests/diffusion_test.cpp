#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pbev/diffusion.hpp"

using namespace pbev;

TEST(Schedule, CosineTables) {
  const auto s = make_cosine_schedule(1000);
  ASSERT_EQ(s.steps(), 1000);
  EXPECT_GE(s.alpha_cumprod()[0], 0.99);
  double prod = 1.0;
  for (int t = 0; t < s.steps(); ++t) {
    prod *= 1.0 - s.beta()[static_cast<std::size_t>(t)];
    EXPECT_NEAR(s.alpha_cumprod()[static_cast<std::size_t>(t)], prod, 1e-12);
    if (t > 0) {
      EXPECT_LT(s.alpha_cumprod()[static_cast<std::size_t>(t)], s.alpha_cumprod()[static_cast<std::size_t>(t - 1)]);
      EXPECT_NEAR(s.alpha_cumprod()[static_cast<std::size_t>(t)],
                  s.alpha_cumprod()[static_cast<std::size_t>(t - 1)] * s.alpha()[static_cast<std::size_t>(t)], 1e-12);
    }
    EXPECT_GT(s.alpha_cumprod()[static_cast<std::size_t>(t)], 0.0);
  }
  EXPECT_EQ(s.alpha_bar(-1), 1.0);
  EXPECT_THROW(make_cosine_schedule(1), DomainError);
  EXPECT_THROW(s.alpha_bar(1000), DomainError);
}

TEST(Schedule, FromBetasValidation) {
  EXPECT_THROW(DiffusionSchedule::from_betas({0.1}), DomainError);
  EXPECT_THROW(DiffusionSchedule::from_betas({0.5, 0.1}), DomainError);
  EXPECT_THROW(DiffusionSchedule::from_betas({0.0, 0.0}), DomainError);
  EXPECT_EQ(DiffusionSchedule::from_betas({0.0, 0.2}).alpha_bar(0), 1.0);
}

TEST(Scaling, HandValuesAndRoundTrip) {
  const SnrScale snr(2.0);
  EXPECT_EQ(scale_ref({0.5, 1.0}, snr), (Vec2{0.0, 2.0}));
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 p{uniform01(rng), uniform01(rng)};
    const Vec2 q = unscale_ref(scale_ref(p, snr), snr);
    EXPECT_NEAR(q.x, p.x, 1e-12);
    EXPECT_NEAR(q.y, p.y, 1e-12);
  }
  EXPECT_EQ(unscale_ref({5.0, -5.0}, snr), (Vec2{1.0, 0.0}));
  EXPECT_THROW(SnrScale(0.0), DomainError);
}

TEST(QSample, DegenerateCases) {
  const auto s = DiffusionSchedule::from_betas({0.0, 0.1, 0.2});
  const SnrScale snr(2.0);
  const std::vector<Vec2> z0{{0.3, -1.2}, {1.9, 0.0}}, eps{{0.7, 0.1}, {-2.0, 3.0}}, zero(2);
  const auto a = q_sample(z0, 0, eps, s, snr);
  EXPECT_EQ(a, z0);
  const auto b = q_sample(z0, 2, zero, s, snr);
  const double k = std::sqrt(s.alpha_bar(2));
  EXPECT_NEAR(b[0].x, k * 0.3, 1e-15);
  EXPECT_NEAR(b[0].y, k * -1.2, 1e-15);
  EXPECT_THROW(q_sample(z0, 3, eps, s, snr), DomainError);
  EXPECT_THROW(q_sample(z0, -1, eps, s, snr), DomainError);
}

TEST(QSample, OutputIsClamped) {
  const auto s = make_cosine_schedule();
  const SnrScale snr(2.0);
  Rng rng(4);
  const auto z0 = scale_refs(std::vector<Vec2>(500, Vec2{0.9, 0.1}), snr);
  const auto out = q_sample(z0, 900, standard_normal_points(500, rng), s, snr);
  for (Vec2 p : out) {
    EXPECT_LE(std::abs(p.x), 2.0);
    EXPECT_LE(std::abs(p.y), 2.0);
  }
}

TEST(QSample, MomentsWithinThreeSigma) {
  const auto s = make_cosine_schedule();
  const SnrScale wide(100.0);  // clamp never active
  Rng rng(8);
  const std::size_t n = 100'000;
  for (int t : {50, 400, 900}) {
    const std::vector<Vec2> z0(n, Vec2{0.8, -0.4});
    const auto z = q_sample(z0, t, standard_normal_points(n, rng), s, wide);
    double m = 0, m2 = 0;
    for (Vec2 p : z) m += p.x;
    m /= n;
    for (Vec2 p : z) m2 += (p.x - m) * (p.x - m);
    const double var = m2 / (n - 1);
    const double ab = s.alpha_bar(t), want_var = 1.0 - ab;
    EXPECT_NEAR(m, std::sqrt(ab) * 0.8, 3.0 * std::sqrt(want_var / n));
    EXPECT_NEAR(var, want_var, 3.0 * want_var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST(Ddim, EndpointAndIdentity) {
  const auto s = make_cosine_schedule();
  const std::vector<Vec2> z{{0.4, 1.1}}, z0{{-0.3, 0.2}};
  EXPECT_EQ(ddim_step(z, z0, 332, -1, s), z0);
  EXPECT_EQ(ddim_step(z, z0, 500, 500, s), z);
  EXPECT_THROW(ddim_step(z, z0, 10, 20, s), DomainError);
}

TEST(Ddim, UnitAlphaBarStep) {
  // only alpha_bar[0] may be 1; stepping from it lands on z0_hat
  const auto s = DiffusionSchedule::from_betas({0.0, 0.1, 0.2});
  const std::vector<Vec2> z{{0.4, 1.1}}, z0{{-0.3, 0.2}};
  EXPECT_EQ(ddim_step(z, z0, 0, -1, s), z0);
  EXPECT_EQ(ddim_step(z, z0, 0, 0, s), z);
}

TEST(Ddim, ExactEpsilonInversion) {
  const auto s = make_cosine_schedule();
  const SnrScale wide(100.0);
  Rng rng(12);
  for (const auto& [tn, tx] : std::vector<TimePair>{{999, 665}, {665, 332}, {500, 10}, {120, 0}}) {
    const auto z0 = standard_normal_points(50, rng);
    const auto eps = standard_normal_points(50, rng);
    const auto zt = q_sample(z0, tn, eps, s, wide);
    const auto got = ddim_step(zt, z0, tn, tx, s);
    const auto want = q_sample(z0, tx, eps, s, wide);
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i].x, want[i].x, 1e-10);
      EXPECT_NEAR(got[i].y, want[i].y, 1e-10);
    }
  }
}

TEST(TimePairs, HandTrace) {
  EXPECT_EQ(time_pairs(1000, 1), (std::vector<TimePair>{{999, -1}}));
  EXPECT_EQ(time_pairs(1000, 3), (std::vector<TimePair>{{999, 665}, {665, 332}, {332, -1}}));
  EXPECT_THROW(time_pairs(1000, 0), DomainError);
  EXPECT_THROW(time_pairs(10, 11), DomainError);
  for (int k = 1; k <= 10; ++k) {
    const auto p = time_pairs(1000, k);
    ASSERT_EQ(p.size(), static_cast<std::size_t>(k));
    EXPECT_EQ(p.front().first, 999);
    EXPECT_EQ(p.back().second, -1);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GT(p[i].first, p[i].second);
      if (i + 1 < p.size()) { EXPECT_EQ(p[i].second, p[i + 1].first); }
    }
  }
}

TEST(Renewal, KeepsConfidentAndRedrawsTheRest) {
  const SnrScale snr(2.0);
  Rng rng(3);
  const std::vector<Vec2> pos{{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}, {0.4, 0.4}};
  EXPECT_EQ(renew_references(pos, std::vector<double>{0.9, 0.8, 0.7, 0.6}, 0.5, snr, rng), pos);
  const auto mixed = renew_references(pos, std::vector<double>{0.9, 0.1, 0.7, 0.2}, 0.5, snr, rng);
  EXPECT_EQ(mixed[0], pos[0]);
  EXPECT_EQ(mixed[2], pos[2]);
  EXPECT_NE(mixed[1], pos[1]);
  EXPECT_NE(mixed[3], pos[3]);
  EXPECT_THROW(renew_references(pos, std::vector<double>{0.1}, 0.5, snr, rng), ShapeError);
}

TEST(Renewal, RedrawsAreStandardNormal) {
  const SnrScale snr(2.0);
  Rng rng(21);
  const std::size_t n = 100'000;
  const auto out = renew_references(std::vector<Vec2>(n), std::vector<double>(n, 0.0), 0.5, snr, rng);
  std::vector<double> interior;
  for (Vec2 p : out) {
    EXPECT_LE(std::abs(p.x), 2.0);
    if (std::abs(p.x) < 2.0) interior.push_back(p.x);
  }
  const double lo = oracle::normal_cdf(-2.0), hi = oracle::normal_cdf(2.0);
  const double d =
      oracle::ks_statistic(interior, [&](double x) { return (oracle::normal_cdf(x) - lo) / (hi - lo); });
  EXPECT_LT(d, 1.95 / std::sqrt(static_cast<double>(interior.size())));  // alpha = 0.001
}

TEST(Padding, Branches) {
  Rng rng(1);
  const auto five = pad_references({}, 5, rng);
  ASSERT_EQ(five.size(), 5u);
  for (Vec2 p : five) {
    EXPECT_GE(p.x, 0.0);
    EXPECT_LT(p.x, 1.0);
  }
  const std::vector<Vec2> three{{0.1, 0.2}, {0.3, 0.4}, {0.5, 0.6}};
  EXPECT_EQ(pad_references(three, 3, rng), three);
  std::vector<Vec2> ten;
  for (int i = 0; i < 10; ++i) ten.push_back({0.05 * i, 0.5});
  const auto four = pad_references(ten, 4, rng);
  ASSERT_EQ(four.size(), 4u);
  for (std::size_t i = 0; i < four.size(); ++i) {
    EXPECT_NE(std::find(ten.begin(), ten.end(), four[i]), ten.end());
    for (std::size_t j = 0; j < i; ++j) EXPECT_NE(four[i], four[j]);
  }
  EXPECT_THROW(pad_references(three, 0, rng), DomainError);
}

TEST(Determinism, SameSeedSameDraws) {
  Rng a(77), b(77);
  EXPECT_EQ(standard_normal_points(64, a), standard_normal_points(64, b));
}
