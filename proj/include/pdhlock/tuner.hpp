#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pdhlock/errors.hpp"
#include "pdhlock/loopan.hpp"
#include "pdhlock/tfcore.hpp"

namespace pdhlock {

/// Frequency grid used for every stability decision.
struct AnalysisGrid {
  double f_min = 10.0;
  double f_max = 10e6;
  int points_per_decade = 100;
};

struct OscillationVerdict {
  bool oscillating = false;
  std::optional<double> f_osc;   // f_180 when the gain margin is lost, else f_UG
};

inline OscillationVerdict oscillation_test(const MarginsReport& m) {
  OscillationVerdict v;
  if (!m.f_ug) return v;
  if (m.g_m && *m.g_m <= 1.0) {
    v.oscillating = true;
    v.f_osc = m.f_180;
  } else if (*m.phi_m <= 0.0) {
    v.oscillating = true;
    v.f_osc = m.f_ug;
  }
  return v;
}

inline OscillationVerdict oscillation_test(const LoopConfig& c, const AnalysisGrid& g = {}) {
  return oscillation_test(margins(assemble_open_loop(c), g.f_min, g.f_max, g.points_per_decade));
}

struct TuneOptions {
  AnalysisGrid grid;
  double k_p_initial = 1e-3;
  double f_i_min = 10.0;          // Hz, the "minimal f_I" of the weak lock
  double step = 1.25;             // multiplicative search step
  double back_off = 2.0;          // divide by this after oscillation
  double f_d_start = 1e9;         // Hz, where the derivative term is switched on
  double f_d_raise = 1.5;         // raise f_D by 50% after oscillation
  double k_p_bump = 1.1;          // final K_P step, bounded by phi_m >= 30
  double converge_tol = 0.05;
  int max_sweeps = 30;
  int max_steps = 200;            // per search
  bool tune_slow = true;          // tune f_I_slow when the loop has a slow branch
  double f_i_slow_initial = 1.0;  // Hz
};

struct TuneStep {
  std::string stage;       // prepare, sweep N, final, slow
  std::string parameter;   // k_p, f_i, f_d, f_i_slow
  double from = 0.0;
  double to = 0.0;
  bool oscillating = false;
  std::optional<double> f_osc;
};

struct TuneResult {
  PidParams k_fast;
  double f_i_slow = 0.0;
  MarginsReport margins;
  bool feasible = true;
  std::string binding_constraint;   // set when infeasible
  int iterations = 0;               // completed optimization sweeps
  std::vector<TuneStep> trace;
};

namespace detail {

class Tuner {
 public:
  Tuner(LoopConfig c, TuneOptions o) : cfg_(std::move(c)), opt_(std::move(o)) {}

  TuneResult run() {
    const double f_i_slow_configured = cfg_.f_i_slow;
    cfg_.f_i_slow = 0.0;
    cfg_.k_fast = PidParams{opt_.k_p_initial, opt_.f_i_min, std::nullopt};

    stage_ = "prepare";
    raise_until_oscillation("k_p");
    raise_until_oscillation("f_i");
    enforce_low_freq_phase();
    set("k_p", cfg_.k_fast.k_p * opt_.k_p_bump);

    double best_score = score();
    PidParams best = cfg_.k_fast;
    int sweeps = 0;
    for (int s = 1; s <= opt_.max_sweeps; ++s) {
      stage_ = "sweep " + std::to_string(s);
      const PidParams old = cfg_.k_fast;
      lower_f_d();
      raise_until_oscillation("k_p");
      raise_until_oscillation("f_i");
      enforce_low_freq_phase();
      sweeps = s;
      const double sc = score();
      const bool improved = sc > best_score;
      if (improved) {
        best_score = sc;
        best = cfg_.k_fast;
      }
      if (!improved || small_change(old, cfg_.k_fast)) break;
    }
    restore(best);

    stage_ = "final";
    place_k_p();

    if (opt_.tune_slow && f_i_slow_configured > 0.0) tune_slow();

    TuneResult r;
    r.k_fast = cfg_.k_fast;
    r.f_i_slow = cfg_.f_i_slow;
    r.iterations = sweeps;
    r.margins = analyze();
    r.binding_constraint = binding_constraint(r.margins);
    r.feasible = r.binding_constraint.empty();
    if (!r.feasible) r.binding_constraint = diagnose();
    r.trace = std::move(trace_);
    return r;
  }

 private:
  MarginsReport analyze() const {
    return margins(assemble_open_loop(cfg_), opt_.grid.f_min, opt_.grid.f_max, opt_.grid.points_per_decade);
  }

  double get(const std::string& p) const {
    if (p == "k_p") return cfg_.k_fast.k_p;
    if (p == "f_i") return cfg_.k_fast.f_i;
    if (p == "f_d") return cfg_.k_fast.f_d.value_or(0.0);
    return cfg_.f_i_slow;
  }

  void assign(const std::string& p, double v) {
    if (p == "k_p") cfg_.k_fast.k_p = v;
    else if (p == "f_i") cfg_.k_fast.f_i = v;
    else if (p == "f_d") cfg_.k_fast.f_d = v;
    else cfg_.f_i_slow = v;
  }

  /// Apply one parameter change, record it with the resulting verdict.
  OscillationVerdict set(const std::string& p, double v) {
    TuneStep st{stage_, p, get(p), v, false, std::nullopt};
    assign(p, v);
    last_ = analyze();
    const auto verdict = oscillation_test(last_);
    st.oscillating = verdict.oscillating;
    st.f_osc = verdict.f_osc;
    trace_.push_back(std::move(st));
    return verdict;
  }

  void raise_until_oscillation(const std::string& p) {
    for (int i = 0; i < opt_.max_steps; ++i) {
      if (set(p, get(p) * opt_.step).oscillating) {
        set(p, get(p) / opt_.back_off);
        return;
      }
    }
  }

  void lower_f_d() {
    if (!cfg_.k_fast.f_d) set("f_d", opt_.f_d_start);
    for (int i = 0; i < opt_.max_steps; ++i) {
      if (set("f_d", get("f_d") / opt_.step).oscillating) {
        bool osc = set("f_d", get("f_d") * opt_.f_d_raise).oscillating;
        for (int j = 0; osc && j < opt_.max_steps; ++j) osc = set("f_d", get("f_d") * opt_.step).oscillating;
        return;
      }
    }
  }

  bool low_freq_phase_ok() {
    last_ = analyze();
    return !last_.f_ug || last_.goals.low_freq_phase;
  }

  void enforce_low_freq_phase() {
    while (!low_freq_phase_ok() && get("f_i") / 2.0 >= opt_.f_i_min) set("f_i", get("f_i") / 2.0);
  }

  bool placement_ok(const MarginsReport& m) const {
    return m.f_ug && *m.phi_m >= 30.0 && !oscillation_test(m).oscillating && m.goals.low_freq_phase;
  }

  /// Highest f_UG reachable from the current state by K_P placement, without
  /// changing the state.
  double score() const {
    Tuner probe(cfg_, opt_);
    probe.stage_ = "score";
    probe.place_k_p();
    const auto m = probe.analyze();
    return placement_ok(m) ? *m.f_ug : 0.0;
  }

  void place_k_p() {
    const double floor = 1e-12;
    for (int i = 0; i < opt_.max_steps && placement_ok(analyze()); ++i) {
      set("k_p", get("k_p") * opt_.k_p_bump);
    }
    for (int i = 0; i < opt_.max_steps && !placement_ok(analyze()) && get("k_p") > floor; ++i) {
      set("k_p", get("k_p") / opt_.k_p_bump);
    }
  }

  void tune_slow() {
    stage_ = "slow";
    auto bad = [this](const OscillationVerdict& v) { return v.oscillating || !last_.goals.all(); };
    set("f_i_slow", opt_.f_i_slow_initial);
    if (bad(oscillation_test(last_))) {
      set("f_i_slow", 0.0);
      return;
    }
    for (int i = 0; i < opt_.max_steps; ++i) {
      if (bad(set("f_i_slow", get("f_i_slow") * opt_.step))) break;
    }
    for (int i = 0; i < opt_.max_steps; ++i) {
      if (!bad(set("f_i_slow", get("f_i_slow") / opt_.step))) return;
    }
    set("f_i_slow", 0.0);
  }

  bool small_change(const PidParams& a, const PidParams& b) const {
    auto rel = [](double x, double y) { return std::abs(y / x - 1.0); };
    return rel(a.k_p, b.k_p) < opt_.converge_tol && rel(a.f_i, b.f_i) < opt_.converge_tol && a.f_d &&
           b.f_d && rel(*a.f_d, *b.f_d) < opt_.converge_tol;
  }

  void restore(const PidParams& p) {
    if (p.k_p != cfg_.k_fast.k_p) set("k_p", p.k_p);
    if (p.f_i != cfg_.k_fast.f_i) set("f_i", p.f_i);
    if (p.f_d != cfg_.k_fast.f_d && p.f_d) set("f_d", *p.f_d);
  }

  /// Scan K_P over 24 decades at the final f_I, f_D and name what limits the loop.
  std::string diagnose() const {
    LoopConfig c = cfg_;
    std::optional<double> best_pm;
    bool any_crossing = false;
    for (int e = -120; e <= 120; ++e) {
      c.k_fast.k_p = std::pow(10.0, e / 10.0);
      const auto m = margins(assemble_open_loop(c), opt_.grid.f_min, opt_.grid.f_max, opt_.grid.points_per_decade);
      if (!m.f_ug) continue;
      any_crossing = true;
      const double pm = oscillation_test(m).oscillating ? std::min(*m.phi_m, 0.0) : *m.phi_m;
      if (!best_pm || pm > *best_pm) best_pm = pm;
    }
    if (!any_crossing) return "no unity-gain crossing in the analysis band at any gain";
    if (*best_pm <= 0.0) return "phase margin <= 0 deg at every gain: no stable crossing";
    if (*best_pm < 30.0) return "phase margin below 30 deg at every gain";
    return binding_constraint(analyze());
  }

  static std::string binding_constraint(const MarginsReport& m) {
    if (!m.f_ug) return "no unity-gain crossing in the analysis band";
    if (oscillation_test(m).oscillating) return "loop oscillates at every gain tried";
    if (*m.phi_m <= 30.0) return "phase margin below 30 deg";
    if (*m.phi_m >= 60.0) return "phase margin above 60 deg";
    if (!m.goals.low_freq_phase) return "phase below -120 deg under f_UG/sqrt(10)";
    return {};
  }

  LoopConfig cfg_;
  TuneOptions opt_;
  std::string stage_;
  MarginsReport last_;
  std::vector<TuneStep> trace_;
};

}  // namespace detail

/// Automated form of the weak-lock / optimize / check workflow on a loop model.
/// The fast PID is tuned with the slow branch disabled; the slow integrator is
/// tuned afterwards against the combined loop.
inline TuneResult autotune_fast(const LoopConfig& config, const TuneOptions& options = {}) {
  return detail::Tuner(config, options).run();
}

inline LoopConfig apply(LoopConfig c, const TuneResult& r) {
  c.k_fast = r.k_fast;
  c.f_i_slow = r.f_i_slow;
  return c;
}

/// Re-run the recorded steps on `config`. Throws Error if any recorded verdict
/// differs from the recomputed one. Returns the final parameters and margins.
inline TuneResult replay(const LoopConfig& config, const TuneResult& recorded, const TuneOptions& options = {}) {
  const AnalysisGrid& grid = options.grid;
  LoopConfig c = config;
  c.f_i_slow = 0.0;
  c.k_fast = PidParams{options.k_p_initial, options.f_i_min, std::nullopt};
  TuneResult out;
  out.trace = recorded.trace;
  out.iterations = recorded.iterations;
  for (const auto& st : recorded.trace) {
    if (st.parameter == "k_p") c.k_fast.k_p = st.to;
    else if (st.parameter == "f_i") c.k_fast.f_i = st.to;
    else if (st.parameter == "f_d") c.k_fast.f_d = st.to;
    else if (st.parameter == "f_i_slow") c.f_i_slow = st.to;
    else throw Error("replay: unknown parameter " + st.parameter);
    const auto v = oscillation_test(c, grid);
    if (v.oscillating != st.oscillating || v.f_osc != st.f_osc) {
      throw Error("replay: verdict differs at " + st.stage + " " + st.parameter);
    }
  }
  out.k_fast = c.k_fast;
  out.f_i_slow = c.f_i_slow;
  out.margins = margins(assemble_open_loop(c), grid.f_min, grid.f_max, grid.points_per_decade);
  out.feasible = recorded.feasible;
  out.binding_constraint = recorded.binding_constraint;
  return out;
}

// ---------------------------------------------------------------------------
// Checks

struct ExcessCheck {
  bool pass = true;
  std::optional<std::pair<double, double>> band;   // offending sub-band, Hz
  double worst_gain_db = 0.0;
  double worst_phase_deg = 0.0;
};

/// First -180 deg crossing of a closed-loop trace's phase.
inline std::optional<double> closed_loop_f180(const BodeTrace& closed) {
  const auto& ph = closed.phase_deg;
  for (std::size_t j = 0; j + 1 < closed.size(); ++j) {
    if (ph[j] > -180.0 && ph[j + 1] <= -180.0) {
      const double t = (ph[j] + 180.0) / (ph[j] - ph[j + 1]);
      return std::exp(std::log(closed.freq_hz[j]) + t * std::log(closed.freq_hz[j + 1] / closed.freq_hz[j]));
    }
  }
  return std::nullopt;
}

/// y5/m6 should be flat (within 3 dB and 30 deg of unity) below f_180/10.
inline ExcessCheck low_freq_excess_check(const BodeTrace& closed, double f_180cl, double gain_tol_db = 3.0,
                                         double phase_tol_deg = 30.0) {
  closed.validate();
  const double f_hi = f_180cl / 10.0;
  if (closed.size() < 2 || closed.freq_hz.front() > f_hi / 10.0 * (1.0 + 1e-9)) {
    throw DomainError("low_freq_excess_check: trace must cover the decade below f_180/10");
  }
  ExcessCheck r;
  for (std::size_t i = 0; i < closed.size() && closed.freq_hz[i] <= f_hi; ++i) {
    const double g = closed.gain_db[i];
    const double ph = closed.phase_deg[i] - 360.0 * std::round(closed.phase_deg[i] / 360.0);
    if (std::abs(g) > std::abs(r.worst_gain_db)) r.worst_gain_db = g;
    if (std::abs(ph) > std::abs(r.worst_phase_deg)) r.worst_phase_deg = ph;
    if (std::abs(g) > gain_tol_db || std::abs(ph) > phase_tol_deg) {
      r.pass = false;
      const double f = closed.freq_hz[i];
      r.band = r.band ? std::make_pair(r.band->first, f) : std::make_pair(f, f);
    }
  }
  return r;
}

struct PhaseBudget {
  std::vector<std::pair<std::string, double>> entries;   // degrees at f_ref
  double sum = 0.0;
  double measured = 0.0;
  double residual = 0.0;
  double f_ref = 0.0;
};

inline PhaseBudget phase_budget(const std::vector<std::pair<std::string, double>>& entries_deg,
                                double measured_alpha_phase) {
  PhaseBudget b;
  b.entries = entries_deg;
  for (const auto& e : entries_deg) b.sum += e.second;
  b.measured = measured_alpha_phase;
  b.residual = b.measured - b.sum;
  return b;
}

inline PhaseBudget phase_budget(const std::vector<std::pair<std::string, TransferModel>>& components,
                                double f_ref, double measured_alpha_phase) {
  if (!(f_ref > 0.0)) throw DomainError("phase_budget: f_ref must be > 0");
  std::vector<std::pair<std::string, double>> e;
  e.reserve(components.size());
  for (const auto& [name, m] : components) e.emplace_back(name, rad2deg(m.phase_rad(f_ref)));
  auto b = phase_budget(e, measured_alpha_phase);
  b.f_ref = f_ref;
  return b;
}

struct CavityAdvice {
  double delta_nu_c_min = 0.0;   // Hz
  double delta_nu_c_max = 0.0;   // Hz
  bool empty = false;
  std::string rationale;
};

/// Linewidth range that keeps the cavity pole sqrt(10) above the slow unity-gain
/// point and sqrt(10) below the fast one.
inline CavityAdvice cavity_advisor(double f_ug_fast, double f_ug_slow) {
  if (!(f_ug_fast > 0.0) || !(f_ug_slow > 0.0)) throw DomainError("cavity_advisor: unity-gain frequencies must be > 0");
  if (!(f_ug_slow < f_ug_fast)) throw DomainError("cavity_advisor: slow unity-gain point must lie below the fast one");
  CavityAdvice a;
  const double r10 = std::sqrt(10.0);
  a.delta_nu_c_min = 2.0 * r10 * f_ug_slow;
  a.delta_nu_c_max = 2.0 * f_ug_fast / r10;
  a.empty = !(a.delta_nu_c_min < a.delta_nu_c_max * (1.0 - 1e-12));
  a.rationale =
      "A cavity pole below f_UG,fast/sqrt(10) lets the fast branch suppress the laser noise that the "
      "cavity filters out of the error signal, at the cost of a narrower capture range. A pole above "
      "sqrt(10) f_UG,slow keeps the slow branch clear of the cavity lag. Keep delta_nu_c/2 under about "
      "300 kHz for a 1 MHz fast loop.";
  if (a.empty) a.rationale += " The two bounds do not leave a usable interval for these unity-gain points.";
  return a;
}

}  // namespace pdhlock
