#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdhlock/errors.hpp"
#include "pdhlock/psd.hpp"
#include "pdhlock/tfcore.hpp"

namespace pdhlock {

// ---------------------------------------------------------------------------
// CSV

/// Rows of a strict numeric CSV plus `# key=value` metadata from comment lines.
struct CsvTable {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> line_numbers;
  std::map<std::string, std::string> meta;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& cell, const std::string& source, std::size_t line) {
  const std::string t = trim(cell);
  if (t.empty()) throw ParseError(source, line, "empty field");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ParseError(source, line, "not a finite number: '" + t + "'");
  }
  return v;
}

}  // namespace detail

/// Parse CSV text whose header must equal one of `headers` exactly. Comment lines
/// start with '#'; blank lines are skipped; LF and CRLF endings are accepted.
inline CsvTable parse_csv(const std::string& text, const std::vector<std::string>& headers,
                          const std::string& source) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  bool have_header = false;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (n == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    const std::string s = detail::trim(line);
    if (s.empty()) continue;
    if (s[0] == '#') {
      const auto eq = s.find('=');
      if (eq != std::string::npos) {
        t.meta[detail::trim(s.substr(1, eq - 1))] = detail::trim(s.substr(eq + 1));
      }
      continue;
    }
    if (!have_header) {
      if (std::find(headers.begin(), headers.end(), s) == headers.end()) {
        throw ParseError(source, n, "expected header '" + headers.front() + "', got '" + s + "'");
      }
      columns = static_cast<std::size_t>(std::count(s.begin(), s.end(), ',')) + 1;
      have_header = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream cells(s);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(detail::parse_number(cell, source, n));
    if (s.back() == ',') throw ParseError(source, n, "empty field");
    if (row.size() != columns) {
      throw ParseError(source, n, "expected " + std::to_string(columns) + " fields, got " + std::to_string(row.size()));
    }
    t.rows.push_back(std::move(row));
    t.line_numbers.push_back(n);
  }
  if (!have_header) throw ParseError(source, 0, "missing header line");
  return t;
}

namespace detail {
inline void check_increasing(const CsvTable& t, const std::string& source, const char* what) {
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    const double prev = t.rows[i - 1][0], cur = t.rows[i][0];
    if (cur == prev) throw ParseError(source, t.line_numbers[i], std::string("duplicate ") + what);
    if (cur < prev) throw ParseError(source, t.line_numbers[i], std::string(what) + " not increasing");
  }
}

inline std::string fmt_g(double v, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}
}  // namespace detail

inline constexpr const char* kBodeHeader = "frequency_Hz,gain_dB,phase_deg";
inline constexpr const char* kPsdHeader = "frequency_Hz,psd_Hz2_per_Hz";
inline constexpr const char* kPsdVoltHeader = "frequency_Hz,psd_V2_per_Hz";
inline constexpr const char* kRingdownHeader = "time_s,voltage_V";

/// Bode trace from CSV text. Phase is unwrapped on load.
inline BodeTrace parse_bode_csv_text(const std::string& text, const std::string& source = "<bode>") {
  const auto t = parse_csv(text, {kBodeHeader}, source);
  detail::check_increasing(t, source, "frequency");
  BodeTrace b;
  b.label = t.meta.count("label") ? t.meta.at("label") : source;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (!(t.rows[i][0] > 0.0)) throw ParseError(source, t.line_numbers[i], "frequency must be > 0");
    b.freq_hz.push_back(t.rows[i][0]);
    b.gain_db.push_back(t.rows[i][1]);
    b.phase_deg.push_back(t.rows[i][2]);
  }
  b.phase_deg = unwrap_deg(std::move(b.phase_deg));
  return b;
}

inline BodeTrace parse_bode_csv(const std::string& path) { return parse_bode_csv_text(read_file(path), path); }

inline std::string write_bode_csv(const BodeTrace& b, int digits = 17) {
  std::string out;
  if (!b.label.empty()) out += "# label=" + b.label + "\n";
  out += std::string(kBodeHeader) + "\n";
  for (std::size_t i = 0; i < b.size(); ++i) {
    out += detail::fmt_g(b.freq_hz[i], digits) + "," + detail::fmt_g(b.gain_db[i], digits) + "," +
           detail::fmt_g(b.phase_deg[i], digits) + "\n";
  }
  return out;
}

inline PsdTrace parse_psd_csv_text(const std::string& text, const std::string& source = "<psd>") {
  const auto t = parse_csv(text, {kPsdHeader, kPsdVoltHeader}, source);
  detail::check_increasing(t, source, "frequency");
  PsdTrace p;
  p.label = source;
  if (t.meta.count("rbw_Hz")) {
    p.resolution_bandwidth = detail::parse_number(t.meta.at("rbw_Hz"), source, 0);
  }
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (!(t.rows[i][0] > 0.0)) throw ParseError(source, t.line_numbers[i], "frequency must be > 0");
    if (!(t.rows[i][1] >= 0.0)) throw ParseError(source, t.line_numbers[i], "PSD must be >= 0");
    p.freq_hz.push_back(t.rows[i][0]);
    p.values.push_back(t.rows[i][1]);
  }
  return p;
}

inline PsdTrace parse_psd_csv(const std::string& path) { return parse_psd_csv_text(read_file(path), path); }

inline std::string write_psd_csv(const PsdTrace& p, bool volts = false, int digits = 17) {
  std::string out;
  if (p.resolution_bandwidth > 0.0) out += "# rbw_Hz=" + detail::fmt_g(p.resolution_bandwidth, digits) + "\n";
  out += std::string(volts ? kPsdVoltHeader : kPsdHeader) + "\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    out += detail::fmt_g(p.freq_hz[i], digits) + "," + detail::fmt_g(p.values[i], digits) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ring-down

struct RingdownTrace {
  std::vector<double> times;      // s
  std::vector<double> voltages;   // V
  int averages = 1;

  double sample_period() const { return (times.back() - times.front()) / static_cast<double>(times.size() - 1); }
};

inline RingdownTrace parse_ringdown_csv_text(const std::string& text, const std::string& source = "<ringdown>") {
  const auto t = parse_csv(text, {kRingdownHeader}, source);
  detail::check_increasing(t, source, "time");
  if (t.rows.size() < 2) throw ParseError(source, 0, "need at least two samples");
  RingdownTrace r;
  if (t.meta.count("averages")) {
    const double a = detail::parse_number(t.meta.at("averages"), source, 0);
    if (!(a >= 1.0) || a != std::floor(a)) throw ParseError(source, 0, "averages must be a positive integer");
    r.averages = static_cast<int>(a);
  }
  for (const auto& row : t.rows) {
    r.times.push_back(row[0]);
    r.voltages.push_back(row[1]);
  }
  const double dt = r.sample_period();
  for (std::size_t i = 1; i < r.times.size(); ++i) {
    if (std::abs(r.times[i] - r.times[i - 1] - dt) > 1e-6 * dt) {
      throw ParseError(source, t.line_numbers[i], "samples are not uniformly spaced");
    }
  }
  return r;
}

inline RingdownTrace parse_ringdown_csv(const std::string& path) {
  return parse_ringdown_csv_text(read_file(path), path);
}

inline std::string write_ringdown_csv(const RingdownTrace& r, int digits = 17) {
  std::string out = "# averages=" + std::to_string(r.averages) + "\n" + kRingdownHeader + "\n";
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    out += detail::fmt_g(r.times[i], digits) + "," + detail::fmt_g(r.voltages[i], digits) + "\n";
  }
  return out;
}

struct FitParameter {
  std::string name;
  double value = 0.0;
  double sigma = 0.0;
};

struct FitReport {
  std::vector<FitParameter> parameters;   // tau_s, V0_V, V_off_V, delta_nu_c_Hz
  double residual_rms = 0.0;
  std::size_t points_used = 0;
  double excluded_s = 0.0;
  std::string note;

  const FitParameter& at(const std::string& n) const {
    for (const auto& p : parameters) {
      if (p.name == n) return p;
    }
    throw Error("FitReport: no parameter " + n);
  }
};

struct RingdownFit {
  double delta_nu_c = 0.0;   // Hz
  FitReport report;
};

/// Fit V(t) = V0 exp(-(t - t0)/tau) + V_off after dropping the initial transient,
/// with t0 the first fitted sample. delta_nu_c = 1/(2 pi tau), tau being the 1/e
/// time of the transmitted intensity.
inline RingdownFit fit_ringdown(const RingdownTrace& trace, std::optional<double> exclude_initial = {}) {
  if (trace.times.size() != trace.voltages.size() || trace.times.size() < 2) {
    throw FitError("fit_ringdown: malformed trace");
  }
  const double dt = trace.sample_period();
  const double excl = exclude_initial.value_or(3.0 * dt);
  std::vector<double> t, v;
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    if (trace.times[i] - trace.times.front() >= excl - 1e-9 * dt) {
      t.push_back(trace.times[i]);
      v.push_back(trace.voltages[i]);
    }
  }
  const std::size_t n = t.size();
  if (n < 50) throw FitError("fit_ringdown: fewer than 50 samples after exclusion");
  const double t0 = t.front();
  for (auto& x : t) x -= t0;

  // Offset from the last 10% of the window, amplitude from a log-linear fit of
  // the samples still well above it.
  const std::size_t tail = std::max<std::size_t>(5, n / 10);
  double v_off = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) v_off += v[i];
  v_off /= static_cast<double>(tail);
  double tail_var = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) tail_var += (v[i] - v_off) * (v[i] - v_off);
  const double tail_sd = std::sqrt(tail_var / static_cast<double>(tail));
  const double a0 = v.front() - v_off;
  if (!(std::abs(a0) > 10.0 * tail_sd) || a0 == 0.0) throw FitError("fit_ringdown: trace does not decay");
  const double sgn = a0 > 0.0 ? 1.0 : -1.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = sgn * (v[i] - v_off);
    if (y < 0.1 * std::abs(a0) || y < 5.0 * tail_sd) break;
    const double ly = std::log(y);
    sx += t[i];
    sy += ly;
    sxx += t[i] * t[i];
    sxy += t[i] * ly;
    ++m;
  }
  if (m < 3) throw FitError("fit_ringdown: too few samples above the offset to initialize");
  const double md = static_cast<double>(m);
  const double slope = (md * sxy - sx * sy) / (md * sxx - sx * sx);
  if (!(slope < 0.0)) throw FitError("fit_ringdown: trace does not decay");
  Eigen::Vector3d p(sgn * std::exp((sy - slope * sx) / md), -1.0 / slope, v_off);

  auto ssr = [&](const Eigen::Vector3d& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = v[i] - (q[0] * std::exp(-t[i] / q[1]) + q[2]);
      s += r * r;
    }
    return s;
  };
  auto jacobian = [&](const Eigen::Vector3d& q, Eigen::MatrixXd& J, Eigen::VectorXd& r) {
    J.resize(static_cast<Eigen::Index>(n), 3);
    r.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double e = std::exp(-t[i] / q[1]);
      r[k] = v[i] - (q[0] * e + q[2]);
      J(k, 0) = e;
      J(k, 1) = q[0] * e * t[i] / (q[1] * q[1]);
      J(k, 2) = 1.0;
    }
  };

  Eigen::MatrixXd J;
  Eigen::VectorXd r;
  double s = ssr(p);
  for (int it = 0; it < 100; ++it) {
    jacobian(p, J, r);
    const Eigen::Vector3d step = J.colPivHouseholderQr().solve(r);
    double lambda = 1.0;
    bool accepted = false;
    for (int h = 0; h < 30; ++h) {
      const Eigen::Vector3d q = p + lambda * step;
      if (q[1] > 0.0) {
        const double sq = ssr(q);
        if (sq <= s) {
          const double gain = s - sq;
          p = q;
          s = sq;
          accepted = true;
          if (gain <= 1e-14 * (s + 1e-300) || (lambda * step).cwiseAbs().cwiseQuotient(p.cwiseAbs().cwiseMax(1e-300)).maxCoeff() < 1e-12) {
            it = 100;
          }
          break;
        }
      }
      lambda *= 0.5;
    }
    if (!accepted) break;
  }
  if (!(p[1] > 0.0) || !std::isfinite(p[1])) throw FitError("fit_ringdown: fitted decay time is not positive");

  jacobian(p, J, r);
  const double dof = static_cast<double>(n) - 3.0;
  const double sigma2 = s / dof;
  const Eigen::Matrix3d cov = sigma2 * (J.transpose() * J).inverse();
  const double tau = p[1];
  const double sd_tau = std::sqrt(std::max(cov(1, 1), 0.0));

  RingdownFit out;
  out.delta_nu_c = 1.0 / (2.0 * kPi * tau);
  const double sd_dnu = out.delta_nu_c * sd_tau / tau;
  out.report.parameters = {{"tau_s", tau, sd_tau},
                           {"V0_V", p[0], std::sqrt(std::max(cov(0, 0), 0.0))},
                           {"V_off_V", p[2], std::sqrt(std::max(cov(2, 2), 0.0))},
                           {"delta_nu_c_Hz", out.delta_nu_c, sd_dnu}};
  out.report.residual_rms = std::sqrt(s / static_cast<double>(n));
  out.report.points_used = n;
  out.report.excluded_s = excl;
  out.report.note = "samples before t = " + detail::fmt_g(trace.times.front() + excl, 6) +
                    " s excluded; V0 refers to the first fitted sample";
  return out;
}

// ---------------------------------------------------------------------------
// Compensation of measured chains

namespace detail {
inline void require_within(const TransferModel& m, const BodeTrace& grid, const char* who) {
  for (double f : grid.freq_hz) {
    try {
      (void)m(f);
    } catch (const DomainError& e) {
      throw DomainError(std::string(who) + ": " + e.what());
    }
  }
}
}  // namespace detail

/// Remove the up-conversion mixer and the fiber delay from a measured
/// demodulation-chain trace, leaving D P as a tabulated model.
inline TransferModel fit_lockin_chain(const BodeTrace& measured, const BodeTrace& mx1_cal, double fiber_delay) {
  measured.validate();
  const auto mx1 = TransferModel::tabulated(mx1_cal, "MX1");
  detail::require_within(mx1, measured, "fit_lockin_chain");
  BodeTrace dp;
  dp.label = "DP";
  dp.freq_hz = measured.freq_hz;
  for (std::size_t i = 0; i < measured.size(); ++i) {
    const double f = measured.freq_hz[i];
    const Response c = mx1(f);
    dp.gain_db.push_back(measured.gain_db[i] - gain_db(c));
    dp.phase_deg.push_back(measured.phase_deg[i] - rad2deg(mx1.phase_rad(f)) + 360.0 * f * fiber_delay);
  }
  return TransferModel::tabulated(std::move(dp), "DP");
}

struct GfastResult {
  TransferModel model;
  std::vector<double> flagged_hz;   // bins dropped because the discriminator response vanishes
};

/// Divide a measured error-signal response to current modulation by the
/// discriminator chain and the propagation delay.
inline GfastResult derive_gfast(const BodeTrace& measured, const TransferModel& discriminator, double tau_l,
                                double floor_rel = 1e-9) {
  measured.validate();
  detail::require_within(discriminator, measured, "derive_gfast");
  double peak = 0.0;
  for (double f : measured.freq_hz) peak = std::max(peak, std::abs(discriminator(f)));
  GfastResult out;
  BodeTrace g;
  g.label = "G_fast";
  for (std::size_t i = 0; i < measured.size(); ++i) {
    const double f = measured.freq_hz[i];
    const Response d = discriminator(f);
    if (!(std::abs(d) > floor_rel * peak)) {
      out.flagged_hz.push_back(f);
      continue;
    }
    g.freq_hz.push_back(f);
    g.gain_db.push_back(measured.gain_db[i] - gain_db(d));
    g.phase_deg.push_back(measured.phase_deg[i] - rad2deg(discriminator.phase_rad(f)) + 360.0 * f * tau_l);
  }
  g.phase_deg = unwrap_deg(std::move(g.phase_deg));
  out.model = TransferModel::tabulated(std::move(g), "G_fast");
  return out;
}

struct PdOrderFit {
  int order = 0;
  double f_pd = 0.0;          // Hz
  double residual_deg = 0.0;  // RMS phase residual
};

/// Least-squares fit of -n atan(f/f_PD) to a photodetector phase trace for each
/// n in 1..5. Results are sorted by order; the caller picks.
inline std::vector<PdOrderFit> fit_pd_order(const BodeTrace& pd_response) {
  pd_response.validate();
  const auto& f = pd_response.freq_hz;
  const auto& ph = pd_response.phase_deg;
  std::vector<PdOrderFit> out;
  for (int n = 1; n <= 5; ++n) {
    auto cost = [&](double lf) {
      const double fp = std::exp(lf);
      double s = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double r = ph[i] - butterworth_phase_approx_deg(n, fp, f[i]);
        s += r * r;
      }
      return s;
    };
    // Coarse scan, then golden section around the best point.
    double lo = std::log(f.front()) - std::log(100.0), hi = std::log(f.back()) + std::log(100.0);
    const int k = 200;
    double best = lo, best_c = cost(lo);
    for (int i = 1; i <= k; ++i) {
      const double x = lo + (hi - lo) * i / k;
      const double c = cost(x);
      if (c < best_c) {
        best_c = c;
        best = x;
      }
    }
    double a = best - (hi - lo) / k, b = best + (hi - lo) / k;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c1 = b - g * (b - a), c2 = a + g * (b - a);
    double f1 = cost(c1), f2 = cost(c2);
    while (b - a > 1e-10) {
      if (f1 < f2) {
        b = c2; c2 = c1; f2 = f1; c1 = b - g * (b - a); f1 = cost(c1);
      } else {
        a = c1; c1 = c2; f1 = f2; c2 = a + g * (b - a); f2 = cost(c2);
      }
    }
    const double x = 0.5 * (a + b);
    out.push_back({n, std::exp(x), std::sqrt(cost(x) / static_cast<double>(f.size()))});
  }
  return out;
}

}  // namespace pdhlock
