#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "pdhlock/pdhlock.hpp"

using namespace pdhlock;

namespace {

double rel(Response a, Response b) { return std::abs(a - b) / std::abs(b); }

std::vector<double> random_freqs(int n, unsigned seed, double lo = 1.0, double hi = 1e8) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  std::vector<double> f(n);
  for (auto& x : f) x = std::exp(u(g));
  return f;
}

}  // namespace

TEST(Pid, ReferenceValues) {
  EXPECT_NEAR(std::abs(eval_pid(2.0, 100.0, 1e6, 1e3) - Response(2.0, 2.0 * (-0.1 + 1e-3))), 0.0, 1e-15);
  // f_D disabled removes the lead term.
  EXPECT_EQ(eval_pid(1.0, 0.0, std::nullopt, 5e6), Response(1.0, 0.0));
  EXPECT_THROW(eval_pid(1.0, 1.0, 1.0, 0.0), DomainError);
  EXPECT_THROW(TransferModel::pid(0.0, 1.0, std::nullopt), DomainError);
}

TEST(Butterworth, MatchesSecondOrderSections) {
  for (int n : {1, 2, 3, 4, 5, 8}) {
    for (double f : random_freqs(200, 7 + n)) {
      EXPECT_LT(rel(eval_lowpass_butterworth(n, 1e6, f), oracle::butterworth(n, 1e6, f)), 1e-12) << n << " " << f;
    }
  }
}

TEST(Butterworth, FirstOrderIsSinglePole) {
  for (double f : random_freqs(1000, 3)) {
    const Response expect = 1.0 / Response(1.0, f / 2.5e5);
    EXPECT_LT(rel(eval_lowpass_butterworth(1, 2.5e5, f), expect), 1e-14);
  }
}

TEST(Butterworth, MinusThreeDbAtCorner) {
  for (int n = 1; n <= 10; ++n) EXPECT_NEAR(gain_db(eval_lowpass_butterworth(n, 3e6, 3e6)), -3.0103, 1e-4);
}

TEST(Butterworth, DemodFilterReferenceValues) {
  const auto m = TransferModel::butterworth(8, 9e6);
  EXPECT_LE(gain_db(m(20e6)), -55.0);
  EXPECT_NEAR(rad2deg(m.phase_rad(1e6)), -33.0, 1.0);
  // The arctan helper underestimates the lag of the exact filter here.
  EXPECT_NEAR(butterworth_phase_approx_deg(8, 9e6, 1e6), -50.7, 0.1);
}

TEST(Butterworth, InvalidParameters) {
  EXPECT_THROW(TransferModel::butterworth(0, 1e6), DomainError);
  EXPECT_THROW(TransferModel::butterworth(2, -1.0), DomainError);
}

TEST(Delay, UnitMagnitudeAndLinearPhase) {
  for (double f : random_freqs(200, 11)) EXPECT_NEAR(std::abs(eval_delay(3.7e-7, f)), 1.0, 1e-15);
  EXPECT_NEAR(rad2deg(TransferModel::delay(1e-6).phase_rad(10e6)), -3600.0, 1e-9);
}

TEST(Delay, PathLengths) {
  // 10 m of coax at 1 MHz.
  EXPECT_NEAR(-360.0 * 1e6 * propagation_delay({0.0, 0.0, 10.0}), -18.0, 0.5);
  EXPECT_NEAR(-360.0 * 1.06e6 * propagation_delay({2.1, 4.9, 1.7}), -15.0, 0.5);
  EXPECT_THROW(TransferModel::delay(-1e-9), DomainError);
}

TEST(Cavity, PhaseAtUnityGainFrequency) {
  EXPECT_NEAR(rad2deg(TransferModel::cavity(45.7e3).phase_rad(1.06e6)), -89.0, 0.3);
  EXPECT_NEAR(gain_db(eval_cavity(45.7e3, 45.7e3 / 2.0)), -3.0103, 1e-4);
  EXPECT_THROW(TransferModel::cavity(0.0), DomainError);
}

TEST(PdLockin, ReferencePhases) {
  EXPECT_NEAR(rad2deg(lockin_phase_rad(3, 200e6, 20e6, 1e6)), -0.9, 0.1);
  EXPECT_NEAR(rad2deg(lockin_phase_rad(3, 5e6, 5e6, 1e6)), -17.0, 0.5);
}

TEST(PdLockin, OddInFrequencyAndVanishingAtDc) {
  for (double f : {1e3, 1e5, 3e6, 1.5e7}) {
    EXPECT_NEAR(lockin_phase_rad(3, 150e6, 20e6, -f), -lockin_phase_rad(3, 150e6, 20e6, f), 1e-15);
  }
  EXPECT_NEAR(lockin_phase_rad(4, 50e6, 20e6, 1e-3), 0.0, 1e-9);
  EXPECT_THROW(lockin_phase_rad(3, 150e6, 20e6, 20e6), DomainError);
  EXPECT_NEAR(std::abs(eval_pd_lockin(3, 150e6, 20e6, 1e6)), 1.0, 1e-15);
}

TEST(Compose, ProductOfGains) {
  const auto m = compose({TransferModel::gain(2.0), TransferModel::gain(3.0)});
  EXPECT_EQ(m(123.0), Response(6.0, 0.0));
  EXPECT_THROW(compose({}), DomainError);
}

TEST(Compose, PhaseAdditivityAndMagnitudeProduct) {
  const std::vector<TransferModel> parts = {
      TransferModel::cavity(45.7e3), TransferModel::delay(50e-9), TransferModel::butterworth(8, 14e6),
      TransferModel::pid(3.0, 1e4, 2e6), TransferModel::pd_lockin(3, 150e6, 20e6), TransferModel::highpass(100.0)};
  const auto m = compose(parts);
  for (double f : random_freqs(500, 5, 10.0, 1.5e7)) {
    double ph = 0.0, mag = 1.0;
    for (const auto& p : parts) {
      ph += p.phase_rad(f);
      mag *= std::abs(p(f));
    }
    EXPECT_NEAR(m.phase_rad(f), ph, 1e-12);
    EXPECT_NEAR(std::abs(m(f)) / mag, 1.0, 1e-12);
    const double wrapped = std::remainder(std::arg(m(f)) - ph, 2.0 * kPi);
    EXPECT_NEAR(wrapped, 0.0, 1e-9);
  }
}

TEST(Compose, DiscriminatorChainElementwise) {
  const auto d = TransferModel::butterworth(8, 9e6);
  const auto p = TransferModel::pd_lockin(3, 200e6, 20e6);
  const auto k = TransferModel::gain(2.69e-6);
  const auto c = TransferModel::cavity(45.7e3);
  const auto h = compose({d, p, k, c});
  const auto f = log_grid(10.0, 10e6, 100);
  ASSERT_EQ(f.size(), 601u);
  const auto grid = log_grid(1e3, 1e7, 50);
  ASSERT_EQ(grid.size(), 201u);
  for (double x : grid) {
    const Response expect = oracle::butterworth(8, 9e6, x) * oracle::lockin(3, 200e6, 20e6, x) * 2.69e-6 *
                            oracle::cavity(45.7e3, x);
    EXPECT_LT(rel(h(x), expect), 1e-12);
  }
}

TEST(Sum, PointwiseAddition) {
  const auto a = TransferModel::integrator(1e3);
  const auto b = compose({TransferModel::gain(0.3), TransferModel::delay(1e-7)});
  const auto s = sum({a, b});
  for (double f : log_grid(1e3, 1e7, 50)) EXPECT_LT(rel(s(f), a(f) + b(f)), 1e-14);
  EXPECT_THROW(sum({}), DomainError);
}

TEST(BodeGrid, DelayUnwrapsWithoutJumps) {
  const auto t = bode_grid(TransferModel::delay(1e-6), 10e3, 10e6, 100);
  EXPECT_NEAR(t.phase_deg.back(), -3600.0, 1e-6);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LT(t.phase_deg[i], t.phase_deg[i - 1]);
}

TEST(BodeGrid, IdentityIsFlat) {
  const auto t = bode_grid(TransferModel::identity());
  EXPECT_EQ(t.size(), 601u);
  EXPECT_DOUBLE_EQ(t.freq_hz.front(), 10.0);
  EXPECT_DOUBLE_EQ(t.freq_hz.back(), 10e6);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t.gain_db[i], 0.0);
    EXPECT_EQ(t.phase_deg[i], 0.0);
  }
  EXPECT_THROW(bode_grid(TransferModel::identity(), 10.0, 10.0), DomainError);
  EXPECT_THROW(bode_grid(TransferModel::identity(), -1.0, 10.0), DomainError);
}

TEST(BodeGrid, LoopFilterShape) {
  // K_P = 1, f_I = 100 Hz, f_D = 1 MHz with a 20 MHz roll-off and 10 ns delay.
  const auto m = compose({TransferModel::pid(1.0, 100.0, 1e6), TransferModel::butterworth(1, 20e6),
                          TransferModel::delay(10e-9)});
  const auto t = bode_grid(m, 10.0, 100e6, 100);
  std::size_t imin = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.gain_db[i] < t.gain_db[imin]) imin = i;
  }
  EXPECT_GT(t.freq_hz[imin], 3e3);
  EXPECT_LT(t.freq_hz[imin], 30e3);
  EXPECT_NEAR(rad2deg(m.phase_rad(1e3)), -5.7, 0.1);
  EXPECT_GT(rad2deg(m.phase_rad(3e6)), 45.0);
}

TEST(Tabulated, RoundTripOnGrid) {
  const auto m = compose({TransferModel::butterworth(3, 2e5), TransferModel::delay(2e-7), TransferModel::gain(4.0)});
  const auto t = bode_grid(m, 100.0, 1e6, 40);
  const auto tab = TransferModel::tabulated(t);
  for (double f : t.freq_hz) {
    EXPECT_LT(rel(tab(f), m(f)), 1e-9);
    EXPECT_NEAR(tab.phase_rad(f), m.phase_rad(f), 1e-9);
  }
}

TEST(Tabulated, RefusesToExtrapolate) {
  const auto tab = TransferModel::tabulated(bode_grid(TransferModel::identity(), 100.0, 1e4, 10));
  EXPECT_NO_THROW(tab(100.0));
  EXPECT_NO_THROW(tab(1e4));
  EXPECT_THROW(tab(99.0), DomainError);
  EXPECT_THROW(tab(1.01e4), DomainError);
}

TEST(Models, RejectNonPositiveFrequency) {
  EXPECT_THROW(TransferModel::identity()(0.0), DomainError);
  EXPECT_THROW(TransferModel::cavity(1e3)(-5.0), DomainError);
}

TEST(Models, ConcurrentEvaluationIsConsistent) {
  const auto m = compose({TransferModel::butterworth(8, 9e6), TransferModel::cavity(45.7e3), TransferModel::delay(5e-8)});
  const auto f = log_grid(10.0, 1e7, 200);
  const auto ref = sample(m, f);
  std::vector<std::thread> th;
  std::vector<int> ok(8, 0);
  for (int k = 0; k < 8; ++k) {
    th.emplace_back([&, k] {
      const auto t = sample(m, f);
      ok[k] = t.gain_db == ref.gain_db && t.phase_deg == ref.phase_deg;
    });
  }
  for (auto& x : th) x.join();
  for (int v : ok) EXPECT_TRUE(v);
}
