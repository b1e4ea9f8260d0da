#include <chrono>
#include <cmath>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "pdhlock/pdhlock.hpp"

using namespace pdhlock;

TEST(Bessel, MatchesStandardLibrary) {
  for (int n = 0; n <= 3; ++n) {
    for (double x = 0.0; x <= 5.0; x += 0.01) EXPECT_NEAR(bessel_j(n, x), std::cyl_bessel_j(n, x), 1e-10) << n << " " << x;
  }
  EXPECT_NEAR(bessel_j(1, 15.0), std::cyl_bessel_j(1, 15.0), 1e-9);
  EXPECT_THROW(bessel_j(0, 25.0), DomainError);
  EXPECT_THROW(bessel_j(-1, 1.0), DomainError);
}

TEST(Modulation, OptimalBeta) {
  const auto t0 = std::chrono::steady_clock::now();
  const double b = optimal_beta();
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
  EXPECT_NEAR(b, 1.082, 0.001);
  auto q = [](double x) { return bessel_j(0, x) * bessel_j(1, x); };
  EXPECT_GT(q(b), q(b - 0.05));
  EXPECT_GT(q(b), q(b + 0.05));
  double best = 0.0, arg = 0.0;
  for (double x = 1e-5; x < 2.0; x += 1e-5) {
    const double v = std::cyl_bessel_j(0, x) * std::cyl_bessel_j(1, x);
    if (v > best) {
      best = v;
      arg = x;
    }
  }
  EXPECT_NEAR(b, arg, 1e-4);
}

TEST(Modulation, SidebandRatio) {
  const auto r = sideband_ratio(1.082);
  const double j0 = std::cyl_bessel_j(0, 1.082), j1 = std::cyl_bessel_j(1, 1.082), j2 = std::cyl_bessel_j(2, 1.082);
  EXPECT_NEAR(r.q, 4 * j0 * j1, 1e-12);
  EXPECT_NEAR(r.p, 2 * j1 * j1 + 4 * j0 * j2, 1e-12);
  EXPECT_NEAR(r.q, 1.3559, 1e-4);
  EXPECT_NEAR(r.p, 0.8197, 1e-4);
  EXPECT_NEAR(r.attenuation_db, -55.0, 1.0);
  // Small-argument limit: q ~ 2 beta, p ~ beta^2, so q/p ~ 2/beta.
  const auto s = sideband_ratio(1e-3);
  EXPECT_NEAR(s.q / s.p * 1e-3, 2.0, 1e-5);
  for (double b = 0.05; b < 2.4; b += 0.05) {
    const auto x = sideband_ratio(b);
    EXPECT_GT(x.q, 0.0);
    EXPECT_GT(x.p, 0.0);
  }
  EXPECT_THROW(sideband_ratio(0.0), DomainError);
}

TEST(Modulation, DemodFilterRequirement) {
  EXPECT_NEAR(demod_filter_corner(20e6, -55.0, 8), 9e6, 0.1e6);
  EXPECT_NEAR(demod_filter_corner(20e6, -55.0, 4), 20e6 * std::pow(10.0, -55.0 / 80.0), 1.0);
  EXPECT_NEAR(demod_filter_corner(20e6, -55.0, 4), 4.1e6, 0.05e6);
  EXPECT_NEAR(demod_filter_corner(20e6, -55.0, 100000), 20e6, 2e3);
  EXPECT_NEAR(demod_filter_requirement(20e6, 1e3, 8), 9e6, 0.1e6);
  EXPECT_THROW(demod_filter_corner(20e6, -55.0, 0), DomainError);
}

TEST(Discriminator, Slope) {
  DiscriminatorConfig c;
  const double j0 = std::cyl_bessel_j(0, 1.082), j1 = std::cyl_bessel_j(1, 1.082);
  const double expect = 8.0 * j0 * j1 * 650e-6 * 1.0 * 5e3 / 45.7e3;
  EXPECT_NEAR(ke_slope(c), expect, 1e-12 * expect);
  EXPECT_NEAR(ke_slope(c) * 1e3, 0.192855, 1e-5);   // V/kHz
  DiscriminatorConfig d = c;
  d.delta_nu_c *= 2.0;
  EXPECT_NEAR(ke_slope(d), ke_slope(c) / 2.0, 1e-15);
  d = c;
  d.p_pd *= 3.0;
  EXPECT_NEAR(ke_slope(d), 3.0 * ke_slope(c), 1e-12);
  d = c;
  d.detector.transimpedance *= 0.5;
  EXPECT_NEAR(ke_slope(d), 0.5 * ke_slope(c), 1e-12);
}

TEST(Discriminator, ErrorSignalShape) {
  DiscriminatorConfig c;
  EXPECT_NEAR(error_signal(c, 0.0), 0.0, 1e-15);
  const double h = 1.0;
  const double slope = (error_signal(c, h) - error_signal(c, -h)) / (2 * h);
  EXPECT_NEAR(slope / ke_slope(c), 1.0, 0.01);
  for (double d : {1e3, 2e4, 3e5, 1e7, 2.5e7}) EXPECT_NEAR(error_signal(c, -d), -error_signal(c, d), 1e-12);
  // Shape against the reflection coefficient written out directly.
  auto F = [&](double x) { const oracle::C ix(0.0, 2.0 * x / c.delta_nu_c); return ix / (1.0 + ix); };
  auto oracle_err = [&](double d) {
    return std::imag(F(d) * std::conj(F(d + 20e6)) - std::conj(F(d)) * F(d - 20e6));
  };
  for (double d : {1e3, 3e4, 1e6, 19e6, 20e6, 21e6, 4e7}) {
    EXPECT_NEAR(error_signal(c, d) / error_signal(c, 1e4), oracle_err(d) / oracle_err(1e4), 1e-9) << d;
  }
  c.offset_v = 0.01;
  EXPECT_NEAR(error_signal(c, 0.0), 0.01, 1e-15);
}

TEST(NoiseBudget, ReferenceOperatingPoint) {
  DetectorConfig d;   // NEP 10 pW/rtHz, R = 1 A/W
  const auto nb = pd_noise_budget(d, 1.082, 650e-6, 9e6);
  const double j1 = std::cyl_bessel_j(1, 1.082);
  const double e = 1.602176634e-19;
  EXPECT_NEAR(nb.p_eq_w, 1e-22 / (4 * e * j1 * j1), 1e-12 * nb.p_eq_w);
  EXPECT_NEAR(nb.p_eq_w, 720e-6, 0.05 * 720e-6);
  EXPECT_NEAR(nb.snr_at_p_eq, 8480.0, 0.03 * 8480.0);
  EXPECT_NEAR(nb.bandwidth_hz, 18e6, 1e-6);
  EXPECT_FALSE(nb.shot_limited);
  // SNR at P_eq equals the general detection SNR at that power.
  EXPECT_NEAR(detection_snr(d, 1.082, nb.p_eq_w, nb.bandwidth_hz), nb.snr_at_p_eq, 1e-9 * nb.snr_at_p_eq);
}

TEST(NoiseBudget, Limits) {
  DetectorConfig d;
  d.nep = 0.0;
  const auto nb = pd_noise_budget(d, 1.082, 1e-6, 9e6);
  EXPECT_EQ(nb.p_eq_w, 0.0);
  EXPECT_TRUE(nb.shot_limited);
  DetectorConfig a, b;
  b.nep = 2 * a.nep;
  EXPECT_LT(pd_noise_budget(b, 1.082, 650e-6, 9e6).snr_at_p_pd, pd_noise_budget(a, 1.082, 650e-6, 9e6).snr_at_p_pd);
  EXPECT_LT(pd_noise_budget(a, 1.082, 650e-6, 12e6).snr_at_p_pd, pd_noise_budget(a, 1.082, 650e-6, 9e6).snr_at_p_pd);
}

TEST(NoiseBudget, SecondConfiguration) {
  DetectorConfig d;
  d.nep = 6.3e-12;
  const auto nb = pd_noise_budget(d, 1.082, 430e-6, 9e6);
  EXPECT_NEAR(nb.snr_at_p_pd, 6800.0, 680.0);
  EXPECT_TRUE(nb.shot_limited);
}
