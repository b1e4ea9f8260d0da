// Acceptance run: one PASS/FAIL line per primary criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "pdhlock/json_io.hpp"
#include "pdhlock/pdhlock.hpp"

using namespace pdhlock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    o_.pass = o_.pass && ok;
    if (!o_.detail.empty()) o_.detail += "; ";
    o_.detail += (ok ? "" : "MISS ") + what;
  }
  Outcome done() const { return o_; }

 private:
  Outcome o_;
};

std::string num(double v, int digits = 6) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*g", digits, v);
  return b;
}

bool within(double v, double want, double tol) { return std::abs(v - want) <= tol; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome modulation_optimum() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const double b = optimal_beta();
  const double dt = seconds_since(t0);
  c.expect(within(b, 1.082, 0.001), "beta=" + num(b));
  c.expect(dt < 1.0, "t=" + num(dt, 3) + "s");
  return c.done();
}

Outcome demod_filter() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const double att = gain_db(eval_lowpass_butterworth(8, 9e6, 20e6));
  const double ph = phase_deg(eval_lowpass_butterworth(8, 9e6, 1e6));
  const double dt = seconds_since(t0);
  c.expect(att <= -55.0, "|H(20MHz)|=" + num(att, 4) + "dB");
  c.expect(within(ph, -33.0, 1.0), "phase(1MHz)=" + num(ph, 4) + "deg");
  c.expect(dt < 1.0, "t=" + num(dt, 3) + "s");
  return c.done();
}

Outcome pd_lockin_phase() {
  Check c;
  const double a = rad2deg(lockin_phase_rad(3, 200e6, 20e6, 1e6));
  const double b = rad2deg(lockin_phase_rad(3, 5e6, 5e6, 1e6));
  c.expect(within(a, -0.9, 0.1), "fPD=200MHz: " + num(a, 4) + "deg");
  c.expect(within(b, -17.0, 0.5), "fPD=5MHz: " + num(b, 4) + "deg");
  return c.done();
}

Outcome noise_budget() {
  Check c;
  const auto nb = pd_noise_budget(DetectorConfig{}, 1.082, 650e-6, 9e6);
  c.expect(within(nb.p_eq_w, 720e-6, 0.05 * 720e-6), "P_eq=" + num(nb.p_eq_w * 1e6, 4) + "uW");
  c.expect(within(nb.snr_at_p_eq, 8480.0, 0.03 * 8480.0), "SNR=" + num(nb.snr_at_p_eq, 5));
  return c.done();
}

Outcome delay_phases() {
  Check c;
  const double coax = phase_deg(eval_delay(propagation_delay({0.0, 0.0, 10.0}), 1e6));
  const auto cfg = load_config(oracle::fixture("config3.json"));
  const double table = phase_deg(eval_delay(cfg.loop.tau_l, 1.06e6));
  c.expect(within(coax, -18.0, 0.5), "10m coax @1MHz=" + num(coax, 4) + "deg");
  c.expect(within(table, -15.0, 0.5), "loop path @1.06MHz=" + num(table, 4) + "deg");
  return c.done();
}

Outcome cavity_phase() {
  Check c;
  const double ph = phase_deg(eval_cavity(45.7e3, 1.06e6));
  c.expect(within(ph, -89.0, 0.3), "phase=" + num(ph, 5) + "deg");
  return c.done();
}

Outcome phase_budget_audit() {
  Check c;
  const auto b = phase_budget({{"K_fast", 40}, {"G_fast", -52}, {"C", -89}, {"DP", -9}, {"T", -15}}, -126.0);
  c.expect(b.sum == -125.0, "sum=" + num(b.sum) + "deg");
  c.expect(std::abs(b.residual) < 5.0, "residual=" + num(b.residual) + "deg");
  return c.done();
}

Outcome fixture_margins() {
  Check c;
  const auto alpha = closed_to_open(parse_bode_csv(oracle::fixture("config3_closed_loop.csv")));
  const auto m = margins(alpha);
  c.expect(m.f_ug && within(*m.f_ug, 1.06e6, 0.02 * 1.06e6), "f_UG=" + (m.f_ug ? num(*m.f_ug, 5) : "none") + "Hz");
  c.expect(m.phi_m && within(*m.phi_m, 54.0, 2.0), "phi_m=" + (m.phi_m ? num(*m.phi_m, 4) : "none") + "deg");
  c.expect(m.f_bump && within(*m.f_bump, 1.94e6, 0.05 * 1.94e6), "f_bump=" + (m.f_bump ? num(*m.f_bump, 5) : "none") + "Hz");
  c.expect(true, "model reproduction, not measured data");
  return c.done();
}

Outcome linewidth() {
  Check c;
  const auto r = beta_separation_linewidth(NoiseModel{5e8, 2e3, 10.0});
  const auto w = beta_separation_linewidth(NoiseModel{0.0, 2e3, 10.0});
  c.expect(within(r.fwhm_hz, 150e3, 10e3), "FWHM=" + num(r.fwhm_hz / 1e3, 5) + "kHz");
  const double want = oracle::pi * 2e3;
  c.expect(within(w.fwhm_hz, want, 0.005 * want), "white FWHM/(pi h0)=" + num(w.fwhm_hz / want, 6));
  return c.done();
}

Outcome ringdown() {
  Check c;
  const auto fit = fit_ringdown(parse_ringdown_csv(oracle::fixture("ringdown.csv")));
  c.expect(within(fit.delta_nu_c, 45.7e3, 0.005 * 45.7e3), "delta_nu_c=" + num(fit.delta_nu_c / 1e3, 5) + "kHz");
  return c.done();
}

oracle::Blocks blocks(const LoopConfig& c, double f) {
  oracle::Blocks b;
  b.h = c.demod(f) * c.pd(f) * c.k_e * oracle::cavity(c.delta_nu_c, f);
  b.kf = oracle::pid(c.k_fast.k_p, c.k_fast.f_i, c.k_fast.f_d, f) *
         (c.loop_filter_f0 ? oracle::butterworth(1, *c.loop_filter_f0, f) : 1.0);
  b.ks = c.f_i_slow > 0 ? oracle::C(0.0, -c.f_i_slow / f) : 0.0;
  b.gf = c.g_fast(f);
  b.gs = c.g_slow(f);
  b.t = oracle::delay(c.tau_l, f);
  return b;
}

Outcome property_suites(double& elapsed) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 g(20240601);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Response a = std::polar(std::pow(10.0, 6.0 * u(g) - 3.0), 2.0 * oracle::pi * u(g));
    if (std::abs(1.0 + a) < 1e-3) continue;
    worst = std::max(worst, std::abs(closed_to_open(closed_loop_from_open(a)) - a) / std::abs(a));
  }
  c.expect(worst < 1e-10, "round trip max rel err=" + num(worst, 3));

  const auto loop = load_config(oracle::fixture("config3.json")).loop;
  const Stimulus stims[] = {Stimulus::m2, Stimulus::m6, Stimulus::m8};
  const Observable obs[] = {Observable::y5, Observable::y6, Observable::y8};
  worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const double f = std::exp(std::log(10.0) + u(g) * std::log(1e6));
    const auto b = blocks(loop, f);
    for (int s = 0; s < 3; ++s) {
      const auto x = oracle::signal_flow(b, s == 0 ? 1.0 : 0.0, s == 1 ? 1.0 : 0.0, s == 2 ? 1.0 : 0.0);
      for (int o = 0; o < 3; ++o) {
        const Response want = x(1 + o);
        const double e = std::abs(loop_matrix_response(loop, stims[s], obs[o], f) - want) / std::max(1.0, std::abs(want));
        worst = std::max(worst, e);
      }
    }
  }
  c.expect(worst < 1e-9, "matrix vs signal flow max err=" + num(worst, 3));

  worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = TransferModel::butterworth(1 + static_cast<int>(u(g) * 8), std::pow(10.0, 4 + 4 * u(g)));
    const auto b = TransferModel::delay(1e-7 * u(g));
    const auto d = TransferModel::cavity(std::pow(10.0, 3 + 4 * u(g)));
    const double f = std::pow(10.0, 1 + 6 * u(g));
    const double sum = a.phase_rad(f) + b.phase_rad(f) + d.phase_rad(f);
    worst = std::max(worst, std::abs(compose({a, b, d}).phase_rad(f) - sum));
  }
  c.expect(worst < 1e-12, "compose phase additivity max err=" + num(worst, 3) + "rad");

  LoopConfig plant;
  plant.k_e = 1.0;
  plant.delta_nu_c = 45.7e3;
  plant.loop_filter_f0.reset();
  plant.g_fast = TransferModel::butterworth(2, 10e6);
  plant.tau_l = 40e-9;
  TuneOptions opt;
  opt.grid.f_max = 1e8;
  const auto r = autotune_fast(plant, opt);
  const auto best = oracle::tuning_grid_search();
  const bool tuned = r.feasible && r.margins.f_ug && r.margins.phi_m;
  c.expect(tuned && *r.margins.f_ug >= 0.9 * best.f_ug && *r.margins.phi_m > 30.0 && *r.margins.phi_m < 60.0,
           "autotune f_UG=" + (r.margins.f_ug ? num(*r.margins.f_ug, 4) : "none") + "Hz vs grid " + num(best.f_ug, 4) +
               "Hz, phi_m=" + (r.margins.phi_m ? num(*r.margins.phi_m, 4) : "none"));

  const auto again = autotune_fast(plant, opt);
  bool same = again.trace.size() == r.trace.size() && again.k_fast.k_p == r.k_fast.k_p &&
              again.k_fast.f_i == r.k_fast.f_i && again.k_fast.f_d == r.k_fast.f_d;
  for (std::size_t i = 0; same && i < r.trace.size(); ++i) {
    same = again.trace[i].to == r.trace[i].to && again.trace[i].oscillating == r.trace[i].oscillating;
  }
  bool replayed = false;
  try {
    const auto rep = replay(plant, r, opt);
    replayed = rep.k_fast.k_p == r.k_fast.k_p && rep.k_fast.f_i == r.k_fast.f_i && rep.k_fast.f_d == r.k_fast.f_d;
  } catch (const Error&) {
  }
  c.expect(same && replayed, "bit-identical rerun and replay");

  elapsed = seconds_since(t0);
  c.expect(elapsed < 120.0, "t=" + num(elapsed, 3) + "s");
  return c.done();
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  double property_time = 0.0;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"modulation optimum", modulation_optimum},
      {"demod filter sizing", demod_filter},
      {"PD lock-in phase", pd_lockin_phase},
      {"noise budget", noise_budget},
      {"delay phases", delay_phases},
      {"cavity phase", cavity_phase},
      {"phase budget audit", phase_budget_audit},
      {"margins on config-3 fixture trace", fixture_margins},
      {"linewidth", linewidth},
      {"ring-down", ringdown},
      {"property suites", [&] { return property_suites(property_time); }},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  }
  std::printf("%d/%zu criteria passed in %.2f s\n", static_cast<int>(criteria.size()) - failed, criteria.size(),
              seconds_since(t0));
  return failed == 0 ? 0 : 1;
}
