#pragma once

#include <algorithm>
#include <limits>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pdhlock/errors.hpp"
#include "pdhlock/psd.hpp"
#include "pdhlock/tfcore.hpp"

namespace pdhlock {

struct PidParams {
  double k_p = 1.0;
  double f_i = 0.0;                 // Hz
  std::optional<double> f_d;        // Hz; empty disables the derivative term
};

/// Two-branch PDH loop. The discriminator chain is H = D P k_e C.
struct LoopConfig {
  double k_e = 2.69e-6;             // V/Hz
  double delta_nu_c = 45.7e3;       // Hz
  PidParams k_fast;
  std::optional<double> loop_filter_f0 = 20e6;  // parasitic first-order roll-off of the fast filter
  double f_i_slow = 0.0;            // Hz; 0 disables the slow branch
  TransferModel g_fast;
  TransferModel g_slow;
  TransferModel demod;
  TransferModel pd;
  double tau_l = 0.0;               // s, total propagation delay
};

enum class Branch { fast, slow, both };

inline TransferModel discriminator_chain(const LoopConfig& c) {
  return compose({c.demod, c.pd, TransferModel::gain(c.k_e, "k_e"),
                  TransferModel::cavity(c.delta_nu_c, "cavity")},
                 "discriminator");
}

inline TransferModel fast_filter(const LoopConfig& c) {
  auto k = TransferModel::pid(c.k_fast.k_p, c.k_fast.f_i, c.k_fast.f_d, "K_fast");
  if (!c.loop_filter_f0) return k;
  return compose({k, TransferModel::butterworth(1, *c.loop_filter_f0, "loop filter roll-off")}, "K_fast");
}

inline TransferModel slow_filter(const LoopConfig& c) {
  if (c.f_i_slow > 0.0) return TransferModel::integrator(c.f_i_slow, "K_slow");
  return TransferModel::gain(0.0, "K_slow");
}

inline TransferModel assemble_open_loop(const LoopConfig& c, Branch branch = Branch::both) {
  const auto h = discriminator_chain(c);
  const auto t = TransferModel::delay(c.tau_l, "delay");
  auto fast = compose({h, fast_filter(c), c.g_fast, t}, "alpha_fast");
  if (branch == Branch::fast || (branch == Branch::both && !(c.f_i_slow > 0.0))) {
    return branch == Branch::both ? fast.relabeled("alpha") : fast;
  }
  auto slow = compose({h, slow_filter(c), c.g_slow, t}, "alpha_slow");
  if (branch == Branch::slow) return slow;
  return sum({fast, slow}, "alpha");
}

inline constexpr double kSingularityThreshold = 1e-12;

/// Closed-loop ratio y5/m6 = alpha/(1+alpha).
inline Response closed_loop_from_open(Response alpha) {
  const Response d = 1.0 + alpha;
  if (std::abs(d) < kSingularityThreshold) throw SingularityError("1 + alpha vanishes");
  return alpha / d;
}

/// Inverse of closed_loop_from_open: alpha = t/(1-t).
inline Response closed_to_open(Response t) {
  const Response d = 1.0 - t;
  if (std::abs(d) < kSingularityThreshold) throw SingularityError("1 - t vanishes");
  return t / d;
}

/// Apply closed_to_open pointwise to a measured y5/m6 trace.
inline BodeTrace closed_to_open(const BodeTrace& closed) {
  closed.validate();
  BodeTrace out;
  out.label = "alpha";
  out.freq_hz = closed.freq_hz;
  out.gain_db.resize(closed.size());
  out.phase_deg.resize(closed.size());
  for (std::size_t i = 0; i < closed.size(); ++i) {
    const Response a = closed_to_open(closed.response(i));
    out.gain_db[i] = gain_db(a);
    // Keep the measured phase's branch: arg(a) differs from arg(t) by arg(1/(1-t)),
    // which is small where the data is trustworthy.
    const double ref = closed.phase_deg[i];
    const double ph = phase_deg(a);
    out.phase_deg[i] = ph + 360.0 * std::round((ref - ph) / 360.0);
  }
  out.phase_deg = unwrap_deg(std::move(out.phase_deg));
  return out;
}

/// y5/m6 trace from an open-loop trace, keeping the open-loop phase branch.
inline BodeTrace closed_loop_trace(const BodeTrace& alpha) {
  alpha.validate();
  BodeTrace out;
  out.label = "y5/m6";
  out.freq_hz = alpha.freq_hz;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const Response a = alpha.response(i);
    const Response t = closed_loop_from_open(a);
    out.gain_db.push_back(gain_db(t));
    out.phase_deg.push_back(alpha.phase_deg[i] - phase_deg(1.0 + a));
  }
  out.phase_deg = unwrap_deg(std::move(out.phase_deg));
  return out;
}

// ---------------------------------------------------------------------------
// Stimulus/response matrix

enum class Stimulus { m2, m6, m8 };
enum class Observable { y5, y6, y8 };

/// `consistent` follows from the block diagram; `printed` uses the alternative
/// (y8, m2) entry -H K_fast T/(1+alpha).
enum class MatrixForm { consistent, printed };

inline Response loop_matrix_response(const LoopConfig& c, Stimulus stim, Observable obs, double f,
                                     MatrixForm form = MatrixForm::consistent) {
  const Response h = discriminator_chain(c)(f);
  const Response kf = fast_filter(c)(f);
  const Response ks = slow_filter(c)(f);
  const Response gf = c.g_fast(f);
  const Response gs = c.g_slow(f);
  const Response t = eval_delay(c.tau_l, f);
  const Response a_f = h * kf * gf * t;
  const Response a_s = h * ks * gs * t;
  const Response d = 1.0 + a_f + a_s;
  if (std::abs(d) < kSingularityThreshold) throw SingularityError("1 + alpha vanishes");
  Response num{};
  switch (obs) {
    case Observable::y5:
      num = stim == Stimulus::m2 ? h : stim == Stimulus::m6 ? a_f + a_s : h * gf * t;
      break;
    case Observable::y6:
      num = stim == Stimulus::m2 ? -h : stim == Stimulus::m6 ? Response{1.0} : -h * gf * t;
      break;
    case Observable::y8:
      if (stim == Stimulus::m2) {
        num = form == MatrixForm::printed ? -h * kf * t : -h * kf;
      } else {
        num = stim == Stimulus::m6 ? kf : 1.0 + a_s;
      }
      break;
  }
  return num / d;
}

// ---------------------------------------------------------------------------
// Margins

struct GoalFlags {
  bool unity_gain_found = false;     // a unity-gain crossing exists; maximizing it is advisory
  bool phase_margin_in_band = false; // 30 < phi_m < 60
  bool low_freq_phase = false;       // phase > -120 deg for f <= f_UG/sqrt(10)
  bool all() const { return unity_gain_found && phase_margin_in_band && low_freq_phase; }
};

struct MarginsReport {
  std::optional<double> f_ug;        // Hz
  std::optional<double> phi_m;       // deg
  std::optional<double> f_180;       // Hz
  std::optional<double> g_m;         // linear
  std::optional<double> f_bump;      // Hz
  std::optional<double> bump_db;     // peak of 1/|1+alpha|^2, dB
  GoalFlags goals;
  std::vector<std::string> warnings;
};

namespace detail {
inline double log_interp_freq(double f0, double f1, double t) {
  return std::exp(std::log(f0) + t * std::log(f1 / f0));
}
}  // namespace detail

/// Margins of an open-loop trace; absent crossings are reported as empty fields.
inline MarginsReport margins(const BodeTrace& a) {
  a.validate();
  MarginsReport r;
  const auto& f = a.freq_hz;
  const auto& g = a.gain_db;
  const auto& ph = a.phase_deg;
  const std::size_t n = a.size();
  if (n < 2) throw DomainError("margins: trace needs at least two points");

  std::vector<std::size_t> down;
  std::size_t up = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (g[i] > 0.0 && g[i + 1] <= 0.0) down.push_back(i);
    if (g[i] <= 0.0 && g[i + 1] > 0.0) ++up;
  }
  if (!down.empty()) {
    const std::size_t i = down.back();
    const double t = g[i] / (g[i] - g[i + 1]);
    r.f_ug = detail::log_interp_freq(f[i], f[i + 1], t);
    r.phi_m = 180.0 + ph[i] + t * (ph[i + 1] - ph[i]);
    if (down.size() > 1 || up > 0) {
      r.warnings.push_back("multiple unity-gain crossings; reporting the highest");
    }
    const bool rising_before = i > 0 && g[i - 1] < g[i];
    const bool rising_after = i + 2 < n && g[i + 2] > g[i + 1];
    if (rising_before || rising_after) {
      r.warnings.push_back("gain is not monotone around the unity-gain crossing");
    }
  }

  std::vector<std::size_t> cross180;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    if (ph[j] > -180.0 && ph[j + 1] <= -180.0) cross180.push_back(j);
  }
  if (!cross180.empty()) {
    std::size_t j = cross180.front();
    bool found = !r.f_ug;
    if (r.f_ug) {
      for (std::size_t k : cross180) {
        if (f[k + 1] >= *r.f_ug) {
          j = k;
          found = true;
          break;
        }
      }
      if (!found) r.warnings.push_back("phase crosses -180 deg only below f_UG");
    }
    const double t = (ph[j] + 180.0) / (ph[j] - ph[j + 1]);
    r.f_180 = detail::log_interp_freq(f[j], f[j + 1], t);
    r.g_m = std::pow(10.0, -(g[j] + t * (g[j + 1] - g[j])) / 20.0);
  }

  // Servo bump: minimum of |1 + alpha|^2, refined by a parabola in log f.
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = std::norm(1.0 + a.response(i));
  const auto k = static_cast<std::size_t>(std::min_element(s.begin(), s.end()) - s.begin());
  double fb = f[k];
  double sb = s[k];
  if (k > 0 && k + 1 < n) {
    const double x0 = std::log(f[k - 1]), x1 = std::log(f[k]), x2 = std::log(f[k + 1]);
    const double d1 = (s[k] - s[k - 1]) / (x1 - x0);
    const double d2 = (s[k + 1] - s[k]) / (x2 - x1);
    const double curv = (d2 - d1) / (x2 - x0);
    if (curv > 0.0) {
      // Vertex of the parabola through the three points.
      const double xm = std::clamp(0.5 * (x0 + x1) - d1 / (2.0 * curv), x0, x2);
      fb = std::exp(xm);
      const double sv = s[k - 1] + d1 * (xm - x0) + curv * (xm - x0) * (xm - x1);
      sb = std::max(0.0, std::min(sv, s[k]));
    }
  }
  r.f_bump = fb;
  r.bump_db = sb > 0.0 ? -10.0 * std::log10(sb) : std::numeric_limits<double>::infinity();

  r.goals.unity_gain_found = r.f_ug.has_value();
  if (r.f_ug) {
    r.goals.phase_margin_in_band = *r.phi_m > 30.0 && *r.phi_m < 60.0;
    const double limit = *r.f_ug / std::sqrt(10.0);
    bool ok = true;
    for (std::size_t i = 0; i < n && f[i] <= limit; ++i) {
      if (!(ph[i] > -120.0)) ok = false;
    }
    r.goals.low_freq_phase = ok;
  }
  return r;
}

inline MarginsReport margins(const TransferModel& alpha, double f_min = 10.0, double f_max = 10e6,
                             int points_per_decade = 100) {
  return margins(bode_grid(alpha, f_min, f_max, points_per_decade));
}

// ---------------------------------------------------------------------------
// Noise propagation

/// S_y1 = S_n1/|1+alpha|^2 + |alpha|^2/|1+alpha|^2 * S_n5/|H|^2 for a generic sensor H.
inline PsdTrace closed_loop_psd(const BodeTrace& alpha, const PsdFunction& s_n1,
                                const PsdFunction& s_n5, const TransferModel& sensor) {
  alpha.validate();
  PsdTrace out;
  out.label = "S_y1";
  out.freq_hz = alpha.freq_hz;
  out.values.resize(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const double f = alpha.freq_hz[i];
    const Response a = alpha.response(i);
    const double d = std::norm(1.0 + a);
    if (d < kSingularityThreshold * kSingularityThreshold) throw SingularityError("1 + alpha vanishes");
    const double sensor_term = s_n5 ? s_n5(f) : 0.0;
    out.values[i] = s_n1(f) / d + (sensor_term > 0.0 ? std::norm(a) / d * sensor_term / std::norm(sensor(f)) : 0.0);
  }
  return out;
}

/// PDH form: discriminator noise S_n4 (V^2/Hz) referred to frequency through k_e C.
inline PsdTrace closed_loop_psd(const BodeTrace& alpha, const PsdFunction& s_n1,
                                const PsdFunction& s_n4, double k_e, const TransferModel& cavity) {
  return closed_loop_psd(alpha, s_n1, s_n4, compose({TransferModel::gain(k_e), cavity}));
}

/// Trace form; both PSDs must sit on the alpha grid.
inline PsdTrace closed_loop_psd(const BodeTrace& alpha, const PsdTrace& s_n1, const PsdTrace& s_n4,
                                double k_e, const TransferModel& cavity) {
  auto same_grid = [&](const PsdTrace& p) {
    if (p.freq_hz.size() != alpha.freq_hz.size()) return false;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (std::abs(p.freq_hz[i] - alpha.freq_hz[i]) > 1e-9 * alpha.freq_hz[i]) return false;
    }
    return true;
  };
  if (!same_grid(s_n1) || !same_grid(s_n4)) throw DomainError("closed_loop_psd: PSD grids differ from the loop trace");
  auto lookup = [&](const PsdTrace& p) {
    return [&p, &alpha](double f) {
      auto it = std::lower_bound(alpha.freq_hz.begin(), alpha.freq_hz.end(), f * (1.0 - 1e-12));
      return p.values[static_cast<std::size_t>(it - alpha.freq_hz.begin())];
    };
  };
  return closed_loop_psd(alpha, PsdFunction(lookup(s_n1)), PsdFunction(lookup(s_n4)), k_e, cavity);
}

}  // namespace pdhlock
