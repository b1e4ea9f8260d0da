#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pdhlock/json_io.hpp"
#include "pdhlock/pdhlock.hpp"

namespace pdhlock::ops {

/// Error classes map onto CLI exit codes and HTTP statuses.
enum class ErrorKind { validation, computation, internal };

inline ErrorKind classify(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const json::exception*>(&e)) {
    return ErrorKind::validation;
  }
  if (dynamic_cast<const Error*>(&e)) return ErrorKind::computation;
  return ErrorKind::internal;
}

inline json error_json(const std::exception& e) {
  json j = {{"error", e.what()}};
  if (const auto* v = dynamic_cast<const ValidationError*>(&e)) j["field"] = v->field();
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) j["line"] = p->line();
  return j;
}

inline BodeTrace open_loop_trace(const ProjectConfig& c, Branch branch = Branch::both) {
  return sample(assemble_open_loop(c.loop, branch), log_grid(c.analysis.f_min, c.analysis.f_max, c.analysis.points_per_decade),
                branch == Branch::fast ? "alpha_fast" : branch == Branch::slow ? "alpha_slow" : "alpha");
}

inline json margins_json(const ProjectConfig& c) { return to_json(margins(open_loop_trace(c))); }

/// Open-loop Bode trace, closed-loop trace, margins, predicted S_y1 and its
/// beta-separation linewidth for one configuration.
inline json evaluate(const ProjectConfig& c) {
  const auto alpha = open_loop_trace(c);
  const auto m = margins(alpha);
  const auto closed = closed_loop_trace(alpha);
  const NoiseModel laser = c.noise.laser;
  const double s_n4 = c.noise.s_n4;
  const auto psd = closed_loop_psd(
      alpha, PsdFunction([laser](double f) { return noise_model_psd(laser, f); }),
      PsdFunction([s_n4](double) { return s_n4; }), c.loop.k_e, TransferModel::cavity(c.loop.delta_nu_c));
  const auto lw = beta_separation_linewidth(psd, std::max(laser.f_low, c.analysis.f_min), c.analysis.f_max);
  return {{"name", c.name},
          {"k_e_V_per_Hz", c.loop.k_e},
          {"margins", to_json(m)},
          {"bode", to_json(alpha)},
          {"closed_loop", to_json(closed)},
          {"psd", to_json(psd)},
          {"linewidth", to_json(lw)}};
}

inline TuneOptions tune_options(const ProjectConfig& c) {
  TuneOptions o;
  o.grid = c.analysis;
  return o;
}

inline json tune(const ProjectConfig& c) { return to_json(autotune_fast(c.loop, tune_options(c))); }

/// Open-loop trace reconstructed from the configuration's measured y5/m6 trace.
inline BodeTrace measured_alpha(const ProjectConfig& c) {
  return closed_to_open(parse_bode_csv(c.measurement("closed_loop_csv")));
}

/// Phase budget of the configured components at f_ref against a measured loop phase.
/// Without `measured_deg` the measured closed-loop trace is converted to alpha and
/// interpolated at f_ref; without `f_ref` the measured f_UG is used.
inline PhaseBudget budget(const ProjectConfig& c, std::optional<double> f_ref, std::optional<double> measured_deg) {
  std::optional<BodeTrace> alpha;
  if (!measured_deg || !f_ref) alpha = measured_alpha(c);
  if (!f_ref) {
    const auto m = margins(*alpha);
    if (!m.f_ug) throw DomainError("budget: measured loop has no unity-gain crossing");
    f_ref = m.f_ug;
  }
  if (!measured_deg) measured_deg = rad2deg(TransferModel::tabulated(*alpha).phase_rad(*f_ref));
  const std::vector<std::pair<std::string, TransferModel>> parts = {
      {"K_fast", fast_filter(c.loop)},
      {"G_fast", c.loop.g_fast},
      {"C", TransferModel::cavity(c.loop.delta_nu_c)},
      {"DP", compose({c.loop.demod, c.loop.pd})},
      {"T", TransferModel::delay(c.loop.tau_l)}};
  return phase_budget(parts, *f_ref, *measured_deg);
}

inline json ringdown(const RingdownTrace& t, std::optional<double> exclude) {
  const auto fit = fit_ringdown(t, exclude);
  json j = to_json(fit.report);
  j["delta_nu_c_Hz"] = fit.delta_nu_c;
  j["averages"] = t.averages;
  return j;
}

/// Parsed Bode trace; a closed-loop trace is also converted to alpha with margins.
inline json ingest_bode(const std::string& csv, bool closed) {
  const auto trace = parse_bode_csv_text(csv, "request");
  json j = {{"trace", to_json(trace)}};
  const auto alpha = closed ? closed_to_open(trace) : trace;
  if (closed) j["alpha"] = to_json(alpha);
  j["margins"] = to_json(margins(alpha));
  return j;
}

}  // namespace pdhlock::ops
