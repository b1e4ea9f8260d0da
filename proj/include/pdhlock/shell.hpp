#pragma once

#include <cstdio>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdhlock/ops.hpp"
#include "pdhlock/service.hpp"

namespace pdhlock::shell {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitComputation = 3;

namespace detail {

inline std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string freq(const std::optional<double>& f) {
  if (!f) return "not in range";
  if (*f >= 1e6) return fmt(*f / 1e6, 4) + " MHz";
  if (*f >= 1e3) return fmt(*f / 1e3, 4) + " kHz";
  return fmt(*f, 4) + " Hz";
}

inline std::string opt(const std::optional<double>& v, const char* unit = "") {
  return v ? fmt(*v, 4) + unit : std::string("not in range");
}

inline void row(std::ostream& out, const std::string& k, const std::string& v) {
  out << k << std::string(k.size() < 14 ? 14 - k.size() : 1, ' ') << v << "\n";
}

inline void print_margins(std::ostream& out, const MarginsReport& m) {
  row(out, "f_UG", freq(m.f_ug));
  row(out, "phi_m", opt(m.phi_m, " deg"));
  row(out, "f_180", freq(m.f_180));
  row(out, "g_m", opt(m.g_m));
  row(out, "f_bump", freq(m.f_bump));
  auto pf = [](bool b) { return std::string(b ? "pass" : "FAIL"); };
  row(out, "goal UG", pf(m.goals.unity_gain_found));
  row(out, "goal 30-60", pf(m.goals.phase_margin_in_band));
  row(out, "goal >-120", pf(m.goals.low_freq_phase));
  for (const auto& w : m.warnings) out << "warning: " << w << "\n";
}

inline ProjectConfig load(const std::string& path) { return load_config(path); }

}  // namespace detail

/// Run one CLI invocation. `args` excludes the program name. Returns the exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PDH lock-loop modeling, analysis and tuning"};
  app.set_version_flag("--version", std::string("pdhlock 0.1.0"));
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "Emit JSON on stdout");

  // bode
  auto* bode = app.add_subcommand("bode", "Sample a model or loop as a Bode CSV");
  std::string bode_model, bode_config, bode_branch = "both";
  double f_min = 10.0, f_max = 10e6;
  int ppd = 100;
  bode->add_option("--model", bode_model, "Model JSON file, or 'identity'");
  bode->add_option("--config", bode_config, "Project configuration; samples the open loop");
  bode->add_option("--branch", bode_branch, "fast, slow or both")->check(CLI::IsMember({"fast", "slow", "both"}));
  bode->add_option("--f-min", f_min, "Lowest frequency, Hz");
  bode->add_option("--f-max", f_max, "Highest frequency, Hz");
  bode->add_option("--ppd", ppd, "Points per decade");

  // margins
  auto* marg = app.add_subcommand("margins", "Stability margins and design-goal checks");
  std::string marg_config, marg_trace, marg_closed;
  marg->add_option("--config", marg_config, "Project configuration");
  marg->add_option("--trace", marg_trace, "Open-loop Bode CSV");
  marg->add_option("--closed", marg_closed, "Closed-loop y5/m6 Bode CSV");

  // closed2open
  auto* c2o = app.add_subcommand("closed2open", "Convert a closed-loop y5/m6 CSV to the open loop");
  std::string c2o_csv;
  c2o->add_option("csv", c2o_csv, "Closed-loop Bode CSV")->required();

  // tune
  auto* tune = app.add_subcommand("tune", "Autotune the loop filter on the model");
  std::string tune_config;
  tune->add_option("--config", tune_config, "Project configuration")->required();

  // budget
  auto* budget = app.add_subcommand("budget", "Phase budget at a reference frequency");
  std::string budget_config;
  std::optional<double> budget_f, budget_measured;
  budget->add_option("--config", budget_config, "Project configuration")->required();
  budget->add_option("--f-ref", budget_f, "Reference frequency, Hz (default: measured f_UG)");
  budget->add_option("--measured-deg", budget_measured, "Measured loop phase at f_ref, deg");

  // ringdown
  auto* ring = app.add_subcommand("ringdown", "Fit a cavity ring-down trace");
  std::string ring_csv;
  std::optional<double> ring_excl;
  ring->add_option("csv", ring_csv, "Ring-down CSV")->required();
  ring->add_option("--exclude", ring_excl, "Initial interval to exclude, s");

  // psd
  auto* psd = app.add_subcommand("psd", "Convert an error-signal spectrum S_y4 to S_y1");
  std::string psd_csv, psd_config, psd_baseline;
  std::optional<double> psd_omega;
  psd->add_option("csv", psd_csv, "S_y4 CSV")->required();
  psd->add_option("--config", psd_config, "Project configuration")->required();
  psd->add_option("--baseline", psd_baseline, "PD noise baseline CSV on the same grid")->required();
  psd->add_option("--omega", psd_omega, "Modulation frequency, Hz (default: from config)");

  // linewidth
  auto* lw = app.add_subcommand("linewidth", "Beta-separation linewidth from a PSD or noise model");
  std::string lw_psd;
  std::optional<double> h_m1, h0, lw_low, lw_high;
  lw->add_option("--psd", lw_psd, "Frequency-noise PSD CSV");
  lw->add_option("--h-minus1", h_m1, "1/f intercept, Hz^2");
  lw->add_option("--h0", h0, "White intercept, Hz^2/Hz");
  lw->add_option("--f-low", lw_low, "Lower integration cutoff, Hz (default 10)");
  lw->add_option("--f-high", lw_high, "Upper integration cutoff, Hz");

  // advise-cavity
  auto* adv = app.add_subcommand("advise-cavity", "Recommended cavity linewidth range");
  double ug_fast = 0.0, ug_slow = 0.0;
  adv->add_option("--f-ug-fast", ug_fast, "Fast-branch unity-gain frequency, Hz")->required();
  adv->add_option("--f-ug-slow", ug_slow, "Slow-branch unity-gain frequency, Hz")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP analysis service");
  std::string bind = "127.0.0.1", root = ".";
  int port = 8080;
  serve->add_option("--bind", bind, "Bind address");
  serve->add_option("--port", port, "TCP port");
  serve->add_option("--root", root, "Working directory for sessions and relative paths");

  std::vector<const char*> argv{"pdhlock"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*bode) {
      BodeTrace t;
      if (!bode_config.empty()) {
        const auto c = detail::load(bode_config);
        const Branch b = bode_branch == "fast" ? Branch::fast : bode_branch == "slow" ? Branch::slow : Branch::both;
        t = sample(assemble_open_loop(c.loop, b), log_grid(f_min, f_max, ppd), b == Branch::both ? "alpha" : "alpha_" + bode_branch);
      } else if (bode_model == "identity" || bode_model.empty()) {
        t = bode_grid(TransferModel::identity(), f_min, f_max, ppd);
      } else {
        json j;
        try {
          j = json::parse(read_file(bode_model));
        } catch (const json::parse_error& e) {
          throw ValidationError("<root>", std::string("invalid JSON: ") + e.what());
        }
        t = bode_grid(model_from_json(j, "model", std::filesystem::path(bode_model).parent_path().string()), f_min, f_max, ppd);
      }
      if (as_json) out << dump(to_json(t));
      else out << write_bode_csv(t);
    } else if (*marg) {
      BodeTrace alpha;
      if (!marg_config.empty()) alpha = ops::open_loop_trace(detail::load(marg_config));
      else if (!marg_trace.empty()) alpha = parse_bode_csv(marg_trace);
      else if (!marg_closed.empty()) alpha = closed_to_open(parse_bode_csv(marg_closed));
      else throw ValidationError("margins", "give one of --config, --trace, --closed");
      const auto m = margins(alpha);
      if (as_json) out << dump(to_json(m));
      else detail::print_margins(out, m);
    } else if (*c2o) {
      const auto a = closed_to_open(parse_bode_csv(c2o_csv));
      if (as_json) out << dump(to_json(a));
      else out << write_bode_csv(a);
    } else if (*tune) {
      const auto c = detail::load(tune_config);
      const auto r = autotune_fast(c.loop, ops::tune_options(c));
      if (as_json) {
        out << dump(to_json(r));
      } else {
        detail::row(out, "feasible", r.feasible ? "yes" : "no: " + r.binding_constraint);
        detail::row(out, "K_P", detail::fmt(r.k_fast.k_p));
        detail::row(out, "f_I", detail::freq(r.k_fast.f_i));
        detail::row(out, "f_D", detail::freq(r.k_fast.f_d));
        detail::row(out, "f_I_slow", detail::freq(r.f_i_slow));
        detail::row(out, "sweeps", std::to_string(r.iterations));
        detail::row(out, "steps", std::to_string(r.trace.size()));
        detail::print_margins(out, r.margins);
      }
    } else if (*budget) {
      const auto b = ops::budget(detail::load(budget_config), budget_f, budget_measured);
      if (as_json) {
        out << dump(to_json(b));
      } else {
        detail::row(out, "f_ref", detail::freq(b.f_ref));
        for (const auto& [name, deg] : b.entries) detail::row(out, name, detail::fmt(deg, 4) + " deg");
        detail::row(out, "sum", detail::fmt(b.sum, 4) + " deg");
        detail::row(out, "measured", detail::fmt(b.measured, 4) + " deg");
        detail::row(out, "residual", detail::fmt(b.residual, 3) + " deg");
      }
    } else if (*ring) {
      const auto j = ops::ringdown(parse_ringdown_csv(ring_csv), ring_excl);
      if (as_json) {
        out << dump(j);
      } else {
        const auto& p = j.at("parameters");
        detail::row(out, "delta_nu_c", detail::fmt(j.at("delta_nu_c_Hz").get<double>() / 1e3, 5) + " kHz +/- " +
                                           detail::fmt(p.at("delta_nu_c_Hz").at("sigma").get<double>() / 1e3, 2) + " kHz");
        detail::row(out, "tau", detail::fmt(p.at("tau_s").at("value").get<double>() * 1e6, 5) + " us");
        detail::row(out, "residual rms", detail::fmt(j.at("residual_rms").get<double>(), 3) + " V");
        detail::row(out, "points", std::to_string(j.at("points_used").get<std::size_t>()));
      }
    } else if (*psd) {
      const auto c = detail::load(psd_config);
      const auto omega = psd_omega ? psd_omega : c.omega_over_2pi;
      if (!omega) throw ValidationError("loop.discriminator.omega_over_2pi_Hz", "required to shift S_y4");
      const auto r = sy4_to_sy1(parse_psd_csv(psd_csv), *omega, c.loop.k_e, c.loop.pd,
                                TransferModel::cavity(c.loop.delta_nu_c), parse_psd_csv(psd_baseline));
      if (as_json) {
        json j = to_json(r.s_y1);
        j["clamped"] = r.clamped;
        j["dropped"] = r.dropped;
        out << dump(j);
      } else {
        out << write_psd_csv(r.s_y1);
        if (r.clamped) err << "note: " << r.clamped << " bins below the baseline were clamped to 0\n";
      }
    } else if (*lw) {
      LinewidthResult r;
      if (!lw_psd.empty()) {
        const auto p = parse_psd_csv(lw_psd);
        r = beta_separation_linewidth(p, lw_low.value_or(10.0), lw_high.value_or(p.freq_hz.back()));
      } else {
        if (!h_m1 && !h0) throw ValidationError("linewidth", "give --psd or --h-minus1/--h0");
        r = beta_separation_linewidth(NoiseModel{h_m1.value_or(0.0), h0.value_or(0.0), lw_low.value_or(10.0)}, lw_low, lw_high);
      }
      if (as_json) {
        out << dump(to_json(r));
      } else {
        detail::row(out, "FWHM", detail::freq(r.fwhm_hz));
        detail::row(out, "band", detail::freq(r.f_low) + " - " + detail::freq(r.f_high));
        if (r.empty_region) out << "note: the PSD never exceeds the beta-separation line in the band\n";
      }
    } else if (*adv) {
      const auto a = cavity_advisor(ug_fast, ug_slow);
      if (as_json) {
        out << dump(to_json(a));
      } else {
        detail::row(out, "delta_nu_c", detail::freq(a.delta_nu_c_min) + " - " + detail::freq(a.delta_nu_c_max));
        if (a.empty) out << "warning: empty interval\n";
        out << a.rationale << "\n";
      }
    } else if (*serve) {
      Service svc(root);
      httplib::Server svr;
      svc.mount(svr);
      err << "listening on " << bind << ":" << port << "\n";
      if (!svr.listen(bind, port)) throw Error("cannot listen on " + bind + ":" + std::to_string(port));
    }
  } catch (const std::exception& e) {
    const auto kind = ops::classify(e);
    if (as_json) out << dump(ops::error_json(e));
    err << "error: " << e.what() << "\n";
    if (kind == ops::ErrorKind::validation) return kExitValidation;
    if (kind == ops::ErrorKind::computation) return kExitComputation;
    return 1;
  }
  return kExitOk;
}

}  // namespace pdhlock::shell
