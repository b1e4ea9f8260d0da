#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pdhlock/errors.hpp"

namespace pdhlock {

using Response = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSpeedOfLight = 299792458.0;   // m/s
inline constexpr double kCoaxVelocityFactor = 0.66;
inline constexpr double kFiberGroupIndex = 1.468;

inline double rad2deg(double r) { return r * 180.0 / kPi; }
inline double deg2rad(double d) { return d * kPi / 180.0; }

inline double gain_db(Response r) { return 20.0 * std::log10(std::abs(r)); }
inline double phase_deg(Response r) { return rad2deg(std::arg(r)); }

inline Response from_db_deg(double g_db, double ph_deg) {
  return std::polar(std::pow(10.0, g_db / 20.0), deg2rad(ph_deg));
}

/// Physical lengths of the signal path, converted to a single propagation delay.
struct PathLengths {
  double free_space_m = 0.0;
  double fiber_m = 0.0;
  double coax_m = 0.0;
};

inline double propagation_delay(const PathLengths& p) {
  return p.free_space_m / kSpeedOfLight + p.fiber_m * kFiberGroupIndex / kSpeedOfLight +
         p.coax_m / (kCoaxVelocityFactor * kSpeedOfLight);
}

namespace detail {

inline void require_positive_frequency(double f, const char* who) {
  if (!(f > 0.0) || !std::isfinite(f)) {
    throw DomainError(std::string(who) + ": frequency must be > 0");
  }
}

inline Response butterworth_pole(int n, int k) {
  return std::polar(1.0, kPi * (2.0 * k + n - 1.0) / (2.0 * n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive responses

/// PID filter K_P (1 - j f_I/f + j f/f_D). An empty f_D disables the derivative term.
inline Response eval_pid(double k_p, double f_i, std::optional<double> f_d, double f) {
  detail::require_positive_frequency(f, "eval_pid");
  Response r{1.0, -f_i / f};
  if (f_d) {
    r += Response{0.0, f / *f_d};
  }
  return k_p * r;
}

/// Exact n-th order Butterworth low-pass from its n left-half-plane poles on the
/// unit circle, scaled by f0.
inline Response eval_lowpass_butterworth(int n, double f0, double f) {
  if (n < 1) {
    throw DomainError("eval_lowpass_butterworth: order must be >= 1");
  }
  if (!(f0 > 0.0)) {
    throw DomainError("eval_lowpass_butterworth: f0 must be > 0");
  }
  const Response s{0.0, f / f0};
  Response den{1.0, 0.0};
  for (int k = 1; k <= n; ++k) {
    den *= s - detail::butterworth_pole(n, k);
  }
  return 1.0 / den;
}

/// The -n*atan(f/f0) phase approximation, in degrees. Underestimates the true
/// Butterworth lag near the corner for n > 1 and overestimates it well below.
inline double butterworth_phase_approx_deg(int n, double f0, double f) {
  return -n * rad2deg(std::atan(f / f0));
}

/// First-order high-pass (j f/f_hp) / (1 + j f/f_hp).
inline Response eval_highpass(double f_hp, double f) {
  const Response x{0.0, f / f_hp};
  return x / (1.0 + x);
}

/// Pure integrator -j f_I/f.
inline Response eval_integrator(double f_i, double f) {
  detail::require_positive_frequency(f, "eval_integrator");
  return Response{0.0, -f_i / f};
}

inline Response eval_delay(double tau_s, double f) {
  return std::polar(1.0, -2.0 * kPi * f * tau_s);
}

/// Cavity response 1/(1 + j 2f/delta_nu_c); the pole sits at half the linewidth.
inline Response eval_cavity(double delta_nu_c, double f) {
  return 1.0 / Response{1.0, 2.0 * f / delta_nu_c};
}

/// Phase of the demodulated photodetector response, radians. Valid for |f| < omega.
inline double lockin_phase_rad(int n, double f_pd, double omega_over_2pi, double f) {
  if (!(std::abs(f) < omega_over_2pi)) {
    throw DomainError("eval_pd_lockin: |f| must be below the modulation frequency");
  }
  auto phi = [&](double x) { return -n * std::atan(x / f_pd); };
  return 0.5 * (phi(omega_over_2pi + f) - phi(omega_over_2pi - f));
}

/// Photodetector seen through the mixer: unit magnitude, phase from the two
/// sidebands straddling the modulation frequency.
inline Response eval_pd_lockin(int n, double f_pd, double omega_over_2pi, double f) {
  detail::require_positive_frequency(f, "eval_pd_lockin");
  return std::polar(1.0, lockin_phase_rad(n, f_pd, omega_over_2pi, f));
}

// ---------------------------------------------------------------------------
// Traces and grids

/// Sampled frequency response. Phase is stored unwrapped, in degrees.
struct BodeTrace {
  std::string label;
  std::vector<double> freq_hz;
  std::vector<double> gain_db;
  std::vector<double> phase_deg;

  std::size_t size() const { return freq_hz.size(); }
  Response response(std::size_t i) const { return from_db_deg(gain_db[i], phase_deg[i]); }
  std::vector<Response> responses() const {
    std::vector<Response> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = response(i);
    return out;
  }

  /// Throws DomainError when lengths differ or frequencies are not strictly increasing.
  void validate() const {
    if (gain_db.size() != freq_hz.size() || phase_deg.size() != freq_hz.size()) {
      throw DomainError("BodeTrace: column lengths differ");
    }
    for (std::size_t i = 0; i < freq_hz.size(); ++i) {
      if (!(freq_hz[i] > 0.0)) throw DomainError("BodeTrace: frequencies must be > 0");
      if (i && !(freq_hz[i] > freq_hz[i - 1])) {
        throw DomainError("BodeTrace: frequencies must be strictly increasing");
      }
    }
  }
};

/// Log-spaced grid from f_min to f_max inclusive, `points_per_decade` intervals per decade.
inline std::vector<double> log_grid(double f_min, double f_max, int points_per_decade = 100) {
  if (!(f_min > 0.0) || !(f_max > f_min) || !std::isfinite(f_max)) {
    throw DomainError("log_grid: require 0 < f_min < f_max");
  }
  if (points_per_decade < 1) {
    throw DomainError("log_grid: points_per_decade must be >= 1");
  }
  const double decades = std::log10(f_max / f_min);
  const auto intervals =
      std::max<long>(1, std::lround(std::ceil(decades * points_per_decade - 1e-9)));
  std::vector<double> f(static_cast<std::size_t>(intervals) + 1);
  const double l0 = std::log10(f_min);
  for (long i = 0; i <= intervals; ++i) {
    f[static_cast<std::size_t>(i)] = std::pow(10.0, l0 + decades * static_cast<double>(i) / intervals);
  }
  f.front() = f_min;
  f.back() = f_max;
  return f;
}

/// Continue each phase to the multiple-of-360 shift nearest its predecessor.
inline std::vector<double> unwrap_deg(std::vector<double> ph) {
  for (std::size_t i = 1; i < ph.size(); ++i) {
    const double d = ph[i] - ph[i - 1];
    ph[i] -= 360.0 * std::round(d / 360.0);
  }
  return ph;
}

// ---------------------------------------------------------------------------
// Composable models

class TransferModel;

namespace model {
struct Gain { double k; };
struct Pid { double k_p; double f_i; std::optional<double> f_d; };
struct Butterworth { int order; double f0; };
struct HighPass { double f_hp; };
struct Integrator { double f_i; };
struct Delay { double tau_s; };
struct Cavity { double delta_nu_c; };
struct PdLockin { int order; double f_pd; double omega_over_2pi; };
struct Product { std::vector<TransferModel> factors; };
struct Sum { std::vector<TransferModel> terms; };
struct Tabulated {
  BodeTrace trace;
  std::vector<double> log_f;
  std::vector<double> phase_rad;
};
}  // namespace model

/// Immutable frequency-response node. Copies share the underlying node.
class TransferModel {
 public:
  using Variant = std::variant<model::Gain, model::Pid, model::Butterworth, model::HighPass,
                               model::Integrator, model::Delay, model::Cavity, model::PdLockin,
                               model::Product, model::Sum, model::Tabulated>;

  TransferModel() : TransferModel(model::Gain{1.0}, "identity") {}

  static TransferModel identity() { return {}; }
  static TransferModel gain(double k, std::string label = "gain");
  static TransferModel pid(double k_p, double f_i, std::optional<double> f_d,
                           std::string label = "pid");
  static TransferModel butterworth(int order, double f0, std::string label = "lowpass");
  static TransferModel highpass(double f_hp, std::string label = "highpass");
  static TransferModel integrator(double f_i, std::string label = "integrator");
  static TransferModel delay(double tau_s, std::string label = "delay");
  static TransferModel cavity(double delta_nu_c, std::string label = "cavity");
  static TransferModel pd_lockin(int order, double f_pd, double omega_over_2pi,
                                 std::string label = "pd");
  static TransferModel tabulated(BodeTrace trace, std::string label = {});

  const std::string& label() const { return node_->label; }
  const Variant& node() const { return node_->value; }
  TransferModel relabeled(std::string label) const { return TransferModel(node_->value, std::move(label)); }

  Response operator()(double f) const;
  /// Phase in radians, continuous in f: products add child phases rather than
  /// wrapping to (-pi, pi].
  double phase_rad(double f) const;

 private:
  struct Node {
    Variant value;
    std::string label;
  };
  TransferModel(Variant v, std::string label)
      : node_(std::make_shared<const Node>(Node{std::move(v), std::move(label)})) {}

  friend TransferModel compose(const std::vector<TransferModel>&, std::string);
  friend TransferModel sum(const std::vector<TransferModel>&, std::string);

  std::shared_ptr<const Node> node_;
};

namespace detail {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline double tabulated_interp(const std::vector<double>& x, const std::vector<double>& y,
                               double xq) {
  auto it = std::upper_bound(x.begin(), x.end(), xq);
  std::size_t i = it == x.begin() ? 0 : static_cast<std::size_t>(it - x.begin()) - 1;
  if (i + 1 >= x.size()) return y.back();
  const double t = (xq - x[i]) / (x[i + 1] - x[i]);
  return y[i] + t * (y[i + 1] - y[i]);
}

inline void tabulated_range_check(const model::Tabulated& t, double f) {
  const double lo = t.trace.freq_hz.front();
  const double hi = t.trace.freq_hz.back();
  if (f < lo * (1.0 - 1e-12) || f > hi * (1.0 + 1e-12)) {
    throw DomainError("tabulated model '" + t.trace.label + "': frequency " + std::to_string(f) +
                      " Hz is outside the measured range");
  }
}
}  // namespace detail

inline TransferModel TransferModel::gain(double k, std::string label) {
  if (!std::isfinite(k)) throw DomainError("gain: value must be finite");
  return TransferModel(model::Gain{k}, std::move(label));
}

inline TransferModel TransferModel::pid(double k_p, double f_i, std::optional<double> f_d,
                                        std::string label) {
  if (!(k_p > 0.0)) throw DomainError("pid: K_P must be > 0");
  if (!(f_i >= 0.0)) throw DomainError("pid: f_I must be >= 0");
  if (f_d && !(*f_d > 0.0)) throw DomainError("pid: f_D must be > 0 when enabled");
  return TransferModel(model::Pid{k_p, f_i, f_d}, std::move(label));
}

inline TransferModel TransferModel::butterworth(int order, double f0, std::string label) {
  if (order < 1) throw DomainError("butterworth: order must be >= 1");
  if (!(f0 > 0.0)) throw DomainError("butterworth: f0 must be > 0");
  return TransferModel(model::Butterworth{order, f0}, std::move(label));
}

inline TransferModel TransferModel::highpass(double f_hp, std::string label) {
  if (!(f_hp > 0.0)) throw DomainError("highpass: corner must be > 0");
  return TransferModel(model::HighPass{f_hp}, std::move(label));
}

inline TransferModel TransferModel::integrator(double f_i, std::string label) {
  if (!(f_i > 0.0)) throw DomainError("integrator: f_I must be > 0");
  return TransferModel(model::Integrator{f_i}, std::move(label));
}

inline TransferModel TransferModel::delay(double tau_s, std::string label) {
  if (!(tau_s >= 0.0)) throw DomainError("delay: tau must be >= 0");
  return TransferModel(model::Delay{tau_s}, std::move(label));
}

inline TransferModel TransferModel::cavity(double delta_nu_c, std::string label) {
  if (!(delta_nu_c > 0.0)) throw DomainError("cavity: linewidth must be > 0");
  return TransferModel(model::Cavity{delta_nu_c}, std::move(label));
}

inline TransferModel TransferModel::pd_lockin(int order, double f_pd, double omega_over_2pi,
                                              std::string label) {
  if (order < 1) throw DomainError("pd_lockin: order must be >= 1");
  if (!(f_pd > 0.0)) throw DomainError("pd_lockin: f_PD must be > 0");
  if (!(omega_over_2pi > 0.0)) throw DomainError("pd_lockin: modulation frequency must be > 0");
  return TransferModel(model::PdLockin{order, f_pd, omega_over_2pi}, std::move(label));
}

inline TransferModel TransferModel::tabulated(BodeTrace trace, std::string label) {
  trace.validate();
  if (trace.size() < 2) throw DomainError("tabulated: need at least two points");
  model::Tabulated t;
  t.log_f.reserve(trace.size());
  t.phase_rad.reserve(trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    t.log_f.push_back(std::log(trace.freq_hz[i]));
    t.phase_rad.push_back(deg2rad(trace.phase_deg[i]));
  }
  if (label.empty()) label = trace.label.empty() ? "tabulated" : trace.label;
  t.trace = std::move(trace);
  return TransferModel(std::move(t), std::move(label));
}

inline Response TransferModel::operator()(double f) const {
  detail::require_positive_frequency(f, "TransferModel");
  return std::visit(
      detail::overloaded{
          [](const model::Gain& g) { return Response{g.k, 0.0}; },
          [f](const model::Pid& p) { return eval_pid(p.k_p, p.f_i, p.f_d, f); },
          [f](const model::Butterworth& b) { return eval_lowpass_butterworth(b.order, b.f0, f); },
          [f](const model::HighPass& h) { return eval_highpass(h.f_hp, f); },
          [f](const model::Integrator& i) { return eval_integrator(i.f_i, f); },
          [f](const model::Delay& d) { return eval_delay(d.tau_s, f); },
          [f](const model::Cavity& c) { return eval_cavity(c.delta_nu_c, f); },
          [f](const model::PdLockin& p) {
            return eval_pd_lockin(p.order, p.f_pd, p.omega_over_2pi, f);
          },
          [f](const model::Product& p) {
            Response r{1.0, 0.0};
            for (const auto& m : p.factors) r *= m(f);
            return r;
          },
          [f](const model::Sum& s) {
            Response r{0.0, 0.0};
            for (const auto& m : s.terms) r += m(f);
            return r;
          },
          [f](const model::Tabulated& t) {
            detail::tabulated_range_check(t, f);
            const double lf = std::log(f);
            const double g = detail::tabulated_interp(t.log_f, t.trace.gain_db, lf);
            const double ph = detail::tabulated_interp(t.log_f, t.phase_rad, lf);
            return std::polar(std::pow(10.0, g / 20.0), ph);
          },
      },
      node_->value);
}

inline double TransferModel::phase_rad(double f) const {
  detail::require_positive_frequency(f, "TransferModel");
  return std::visit(
      detail::overloaded{
          [](const model::Gain& g) { return g.k < 0.0 ? kPi : 0.0; },
          [f](const model::Pid& p) { return std::arg(eval_pid(p.k_p, p.f_i, p.f_d, f)); },
          [f](const model::Butterworth& b) {
            const Response s{0.0, f / b.f0};
            double ph = 0.0;
            for (int k = 1; k <= b.order; ++k) ph -= std::arg(s - detail::butterworth_pole(b.order, k));
            return ph;
          },
          [f](const model::HighPass& h) { return 0.5 * kPi - std::atan(f / h.f_hp); },
          [](const model::Integrator&) { return -0.5 * kPi; },
          [f](const model::Delay& d) { return -2.0 * kPi * f * d.tau_s; },
          [f](const model::Cavity& c) { return -std::atan(2.0 * f / c.delta_nu_c); },
          [f](const model::PdLockin& p) {
            return lockin_phase_rad(p.order, p.f_pd, p.omega_over_2pi, f);
          },
          [f](const model::Product& p) {
            double ph = 0.0;
            for (const auto& m : p.factors) ph += m.phase_rad(f);
            return ph;
          },
          [f](const model::Sum& s) {
            // Continue the wrapped sum toward the phase of the largest term.
            Response total{0.0, 0.0};
            double ref = 0.0;
            double biggest = -1.0;
            for (const auto& m : s.terms) {
              const Response r = m(f);
              total += r;
              if (std::abs(r) > biggest) {
                biggest = std::abs(r);
                ref = m.phase_rad(f);
              }
            }
            const double a = std::arg(total);
            return a + 2.0 * kPi * std::round((ref - a) / (2.0 * kPi));
          },
          [f](const model::Tabulated& t) {
            detail::tabulated_range_check(t, f);
            return detail::tabulated_interp(t.log_f, t.phase_rad, std::log(f));
          },
      },
      node_->value);
}

/// Product node of the given factors.
inline TransferModel compose(const std::vector<TransferModel>& factors, std::string label = "product") {
  if (factors.empty()) throw DomainError("compose: empty factor list");
  return TransferModel(model::Product{factors}, std::move(label));
}

/// Pointwise sum of responses, e.g. the fast and slow branches of a two-branch loop.
inline TransferModel sum(const std::vector<TransferModel>& terms, std::string label = "sum") {
  if (terms.empty()) throw DomainError("sum: empty term list");
  return TransferModel(model::Sum{terms}, std::move(label));
}

/// Sample a model on an explicit grid. Phase starts from the model's natural
/// phase at the first point and is unwrapped from there.
inline BodeTrace sample(const TransferModel& m, const std::vector<double>& freqs,
                        std::string label = {}) {
  BodeTrace t;
  t.label = label.empty() ? m.label() : std::move(label);
  t.freq_hz = freqs;
  t.gain_db.resize(freqs.size());
  t.phase_deg.resize(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    t.gain_db[i] = gain_db(m(freqs[i]));
    t.phase_deg[i] = rad2deg(m.phase_rad(freqs[i]));
  }
  t.phase_deg = unwrap_deg(std::move(t.phase_deg));
  t.validate();
  return t;
}

inline BodeTrace bode_grid(const TransferModel& m, double f_min = 10.0, double f_max = 10e6,
                           int points_per_decade = 100) {
  return sample(m, log_grid(f_min, f_max, points_per_decade));
}

}  // namespace pdhlock
