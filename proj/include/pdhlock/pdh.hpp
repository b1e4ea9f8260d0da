#pragma once

#include <cmath>
#include <complex>

#include "pdhlock/bessel.hpp"
#include "pdhlock/errors.hpp"
#include "pdhlock/tfcore.hpp"

namespace pdhlock {

inline constexpr double kElementaryCharge = 1.602176634e-19;  // C

struct ModulationConfig {
  double beta = 1.082;             // rad
  double omega_over_2pi = 20e6;    // Hz
};

struct DetectorConfig {
  double responsivity = 1.0;       // A/W
  double transimpedance = 5e3;     // V/A
  double nep = 10e-12;             // W/sqrt(Hz)
  double f_pd = 200e6;             // Hz
  int order = 3;
};

struct DiscriminatorConfig {
  ModulationConfig modulation;
  DetectorConfig detector;
  double delta_nu_c = 45.7e3;      // Hz
  double p_pd = 650e-6;            // W
  double f_m = 9e6;                // Hz, post-mixer low-pass corner
  int lp_order = 8;
  double offset_v = 0.0;           // additive error-signal offset
};

/// Modulation depth maximizing J0(beta) J1(beta), by golden-section search.
inline double optimal_beta() {
  auto neg = [](double b) { return -bessel_j(0, b) * bessel_j(1, b); };
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.5, b = 1.8;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = neg(c), fd = neg(d);
  while (b - a > 1e-10) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = neg(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = neg(d);
    }
  }
  return 0.5 * (a + b);
}

struct SidebandRatio {
  double q;                 // 4 J0 J1, signal at the modulation frequency
  double p;                 // 2 J1^2 + 4 J0 J2, signal at twice the modulation frequency
  double attenuation_db;    // filter attenuation needed at the modulation frequency
};

/// Sideband weights for modulation depth `beta` and the low-pass attenuation at
/// the modulation frequency that leaves a ripple `snr_target` times below the signal.
inline SidebandRatio sideband_ratio(double beta, double snr_target = 1e3) {
  if (!(beta > 0.0)) throw DomainError("sideband_ratio: beta must be > 0");
  if (!(snr_target > 0.0)) throw DomainError("sideband_ratio: SNR target must be > 0");
  const double j0 = bessel_j(0, beta), j1 = bessel_j(1, beta), j2 = bessel_j(2, beta);
  SidebandRatio r{};
  r.q = 4.0 * j0 * j1;
  r.p = 2.0 * j1 * j1 + 4.0 * j0 * j2;
  r.attenuation_db = -20.0 * std::log10(snr_target / (r.q / r.p));
  return r;
}

/// Corner of an n-th order low-pass whose asymptotic roll-off reaches
/// `attenuation_db` (negative) at the modulation frequency.
inline double demod_filter_corner(double omega_over_2pi, double attenuation_db, int n) {
  if (n < 1) throw DomainError("demod_filter_corner: order must be >= 1");
  if (!(omega_over_2pi > 0.0)) throw DomainError("demod_filter_corner: modulation frequency must be > 0");
  return omega_over_2pi * std::pow(10.0, attenuation_db / (20.0 * n));
}

inline double demod_filter_requirement(double omega_over_2pi, double snr_target, int n,
                                       double beta = 1.082) {
  return demod_filter_corner(omega_over_2pi, sideband_ratio(beta, snr_target).attenuation_db, n);
}

/// Error-signal slope at the lock point, V/Hz.
inline double ke_slope(const DiscriminatorConfig& c) {
  const double b = c.modulation.beta;
  return 8.0 * bessel_j(0, b) * bessel_j(1, b) * c.p_pd * c.detector.responsivity *
         c.detector.transimpedance / c.delta_nu_c;
}

/// Cavity reflection coefficient near a high-finesse resonance, detuning in Hz.
inline std::complex<double> cavity_reflection(double detuning, double delta_nu_c) {
  const std::complex<double> ix{0.0, 2.0 * detuning / delta_nu_c};
  return ix / (1.0 + ix);
}

/// Demodulated error signal in volts, carrier and first-order sidebands only.
inline double error_signal(const DiscriminatorConfig& c, double detuning) {
  const double b = c.modulation.beta;
  const double w = c.modulation.omega_over_2pi;
  const auto f0 = cavity_reflection(detuning, c.delta_nu_c);
  const auto fp = cavity_reflection(detuning + w, c.delta_nu_c);
  const auto fm = cavity_reflection(detuning - w, c.delta_nu_c);
  const double im = std::imag(f0 * std::conj(fp) - std::conj(f0) * fm);
  return 2.0 * bessel_j(0, b) * bessel_j(1, b) * c.p_pd * c.detector.responsivity *
             c.detector.transimpedance * im +
         c.offset_v;
}

struct NoiseBudget {
  double bandwidth_hz;      // 2 f_M
  double p_eq_w;            // electronic / shot-noise crossover
  double snr_at_p_eq;
  double snr_at_p_pd;
  bool shot_limited;
};

/// Detection SNR at optical power `p_w` in the band of width `bandwidth_hz`.
inline double detection_snr(const DetectorConfig& d, double beta, double p_w, double bandwidth_hz) {
  const double j1 = bessel_j(1, beta);
  const double sd = std::sqrt(bandwidth_hz);
  const double electronic = d.nep * d.responsivity * sd;
  const double shot = std::sqrt(4.0 * kElementaryCharge * d.responsivity * j1 * j1 * p_w) * sd;
  return p_w * d.responsivity / (electronic + shot);
}

inline NoiseBudget pd_noise_budget(const DetectorConfig& d, double beta, double p_pd, double f_m) {
  if (!(f_m > 0.0)) throw DomainError("pd_noise_budget: f_M must be > 0");
  if (!(d.responsivity > 0.0) || !(d.nep >= 0.0)) {
    throw DomainError("pd_noise_budget: responsivity must be > 0 and NEP >= 0");
  }
  const double j1 = bessel_j(1, beta);
  NoiseBudget nb{};
  nb.bandwidth_hz = 2.0 * f_m;
  nb.p_eq_w = d.nep * d.nep * d.responsivity / (4.0 * kElementaryCharge * j1 * j1);
  nb.snr_at_p_eq = d.nep * d.responsivity / (8.0 * kElementaryCharge * j1 * j1 * std::sqrt(nb.bandwidth_hz));
  nb.snr_at_p_pd = detection_snr(d, beta, p_pd, nb.bandwidth_hz);
  nb.shot_limited = p_pd > nb.p_eq_w;
  return nb;
}

}  // namespace pdhlock
