#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pdhlock/errors.hpp"
#include "pdhlock/psd.hpp"
#include "pdhlock/tfcore.hpp"

namespace pdhlock {

/// Free-running laser frequency noise S(f) = h_-1/f + h_0.
struct NoiseModel {
  double h_minus1 = 0.0;   // Hz^2
  double h0 = 0.0;         // Hz^2/Hz
  double f_low = 10.0;     // Hz, observation lower cutoff
};

inline double noise_model_psd(const NoiseModel& m, double f) {
  if (!(f > 0.0)) throw DomainError("noise_model_psd: frequency must be > 0");
  return m.h_minus1 / f + m.h0;
}

/// Slope of the beta-separation line 8 ln2 f / pi^2.
inline const double kBetaLineSlope = 8.0 * std::log(2.0) / (kPi * kPi);

inline double beta_separation_line(double f) { return kBetaLineSlope * f; }

struct LinewidthResult {
  double fwhm_hz = 0.0;
  double area_hz2 = 0.0;          // integral of S over the region above the line
  bool empty_region = false;      // S never exceeds the line in the band
  double f_low = 0.0;
  double f_high = 0.0;
};

namespace detail {

/// Integral of the part of a piecewise-linear S above the line, with the
/// crossing inside each straddling interval located by linear interpolation.
inline double area_above_line(const std::vector<double>& f, const std::vector<double>& s, bool& any) {
  double area = 0.0;
  any = false;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    const double d0 = s[i] - beta_separation_line(f[i]);
    const double d1 = s[i + 1] - beta_separation_line(f[i + 1]);
    if (d0 <= 0.0 && d1 <= 0.0) continue;
    any = true;
    if (d0 > 0.0 && d1 > 0.0) {
      area += 0.5 * (s[i] + s[i + 1]) * (f[i + 1] - f[i]);
      continue;
    }
    const double t = d0 / (d0 - d1);
    const double fc = f[i] + t * (f[i + 1] - f[i]);
    const double sc = s[i] + t * (s[i + 1] - s[i]);
    if (d0 > 0.0) {
      area += 0.5 * (s[i] + sc) * (fc - f[i]);
    } else {
      area += 0.5 * (sc + s[i + 1]) * (f[i + 1] - fc);
    }
  }
  return area;
}

}  // namespace detail

/// Highest frequency where the model meets the beta-separation line.
inline double beta_line_crossing(const NoiseModel& m) {
  const double a = kBetaLineSlope;
  return (m.h0 + std::sqrt(m.h0 * m.h0 + 4.0 * a * m.h_minus1)) / (2.0 * a);
}

/// Beta-separation FWHM of a noise model, integrated on a 1000 point/decade grid.
/// An empty region yields the white-noise Lorentzian width pi h_0 and sets the flag.
inline LinewidthResult beta_separation_linewidth(const NoiseModel& m, std::optional<double> f_low = {},
                                                 std::optional<double> f_high = {}) {
  if (!(m.h_minus1 >= 0.0) || !(m.h0 >= 0.0)) throw DomainError("NoiseModel: intercepts must be >= 0");
  LinewidthResult r;
  r.f_low = f_low.value_or(m.f_low);
  r.f_high = f_high.value_or(std::max(10.0 * beta_line_crossing(m), 100.0 * r.f_low));
  if (!(r.f_low > 0.0) || !(r.f_low < r.f_high)) throw DomainError("beta_separation_linewidth: require 0 < f_low < f_high");
  const auto f = log_grid(r.f_low, r.f_high, 1000);
  std::vector<double> s(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) s[i] = noise_model_psd(m, f[i]);
  bool any = false;
  r.area_hz2 = detail::area_above_line(f, s, any);
  if (!any) {
    r.empty_region = true;
    r.fwhm_hz = kPi * m.h0;
    return r;
  }
  r.fwhm_hz = std::sqrt(8.0 * std::log(2.0) * r.area_hz2);
  return r;
}

/// Beta-separation FWHM of a measured PSD over [f_low, f_high] clipped to the trace.
/// An empty region yields 0 and sets the flag.
inline LinewidthResult beta_separation_linewidth(const PsdTrace& p, double f_low, double f_high) {
  p.validate();
  if (!(f_low > 0.0) || !(f_low < f_high)) throw DomainError("beta_separation_linewidth: require 0 < f_low < f_high");
  LinewidthResult r;
  r.f_low = std::max(f_low, p.freq_hz.front());
  r.f_high = std::min(f_high, p.freq_hz.back());
  std::vector<double> f, s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.freq_hz[i] >= r.f_low && p.freq_hz[i] <= r.f_high) {
      f.push_back(p.freq_hz[i]);
      s.push_back(p.values[i]);
    }
  }
  bool any = false;
  r.area_hz2 = f.size() >= 2 ? detail::area_above_line(f, s, any) : 0.0;
  r.empty_region = !any;
  r.fwhm_hz = any ? std::sqrt(8.0 * std::log(2.0) * r.area_hz2) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Error-signal spectrum to frequency-noise spectrum

struct Sy1Result {
  PsdTrace s_y1;
  std::size_t clamped = 0;   // bins where the baseline exceeded the measurement
  std::size_t dropped = 0;   // upper-sideband bins without a lower-sideband mirror
};

namespace detail {
inline double interp_linear(const std::vector<double>& x, const std::vector<double>& y, double xq) {
  auto it = std::upper_bound(x.begin(), x.end(), xq);
  if (it == x.begin()) return y.front();
  if (it == x.end()) return y.back();
  const auto i = static_cast<std::size_t>(it - x.begin()) - 1;
  const double t = (xq - x[i]) / (x[i + 1] - x[i]);
  return y[i] + t * (y[i + 1] - y[i]);
}
}  // namespace detail

/// Convert the error-signal spectrum around the modulation frequency into the
/// laser frequency-noise PSD: subtract the PD baseline, shift by -omega, fold the
/// two sidebands, and divide by |P k_e C|^2 at each offset.
inline Sy1Result sy4_to_sy1(const PsdTrace& s_y4, double omega_over_2pi, double k_e,
                            const TransferModel& pd, const TransferModel& cavity,
                            const PsdTrace& pd_baseline) {
  s_y4.validate();
  pd_baseline.validate();
  if (pd_baseline.size() != s_y4.size()) throw DomainError("sy4_to_sy1: baseline grid differs from S_y4");
  for (std::size_t i = 0; i < s_y4.size(); ++i) {
    if (std::abs(pd_baseline.freq_hz[i] - s_y4.freq_hz[i]) > 1e-9 * s_y4.freq_hz[i]) {
      throw DomainError("sy4_to_sy1: baseline grid differs from S_y4");
    }
  }
  if (!(k_e != 0.0)) throw DomainError("sy4_to_sy1: k_e must be non-zero");
  Sy1Result r;
  std::vector<double> v(s_y4.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = s_y4.values[i] - pd_baseline.values[i];
    if (v[i] < 0.0) {
      v[i] = 0.0;
      ++r.clamped;
    }
  }
  const double lo = s_y4.freq_hz.front();
  r.s_y1.label = "S_y1";
  r.s_y1.resolution_bandwidth = s_y4.resolution_bandwidth;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double u = s_y4.freq_hz[i] - omega_over_2pi;
    if (!(u > 0.0)) continue;
    const double mirror = omega_over_2pi - u;
    if (!(u < omega_over_2pi) || mirror < lo * (1.0 - 1e-12)) {
      ++r.dropped;
      continue;
    }
    const double folded = v[i] + detail::interp_linear(s_y4.freq_hz, v, mirror);
    const double h = std::norm(pd(u) * k_e * cavity(u));
    r.s_y1.freq_hz.push_back(u);
    r.s_y1.values.push_back(folded / h);
  }
  return r;
}

/// Forward model of sy4_to_sy1: each sideband carries half of |P k_e C|^2 S_y1.
inline PsdTrace sy1_to_sy4(const PsdFunction& s_y1, const std::vector<double>& freqs,
                           double omega_over_2pi, double k_e, const TransferModel& pd,
                           const TransferModel& cavity, const PsdTrace& pd_baseline) {
  if (pd_baseline.size() != freqs.size()) throw DomainError("sy1_to_sy4: baseline grid differs");
  PsdTrace out;
  out.label = "S_y4";
  out.freq_hz = freqs;
  out.resolution_bandwidth = pd_baseline.resolution_bandwidth;
  out.values.resize(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const double u = std::abs(freqs[i] - omega_over_2pi);
    double side = 0.0;
    if (u > 0.0 && u < omega_over_2pi) {
      side = 0.5 * std::norm(pd(u) * k_e * cavity(u)) * s_y1(u);
    }
    out.values[i] = side + pd_baseline.values[i];
  }
  return out;
}

}  // namespace pdhlock
