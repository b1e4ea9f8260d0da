// Deterministic generator for data/fixtures. Usage: make_fixtures <out_dir>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <string>

#include "pdhlock/json_io.hpp"
#include "pdhlock/pdhlock.hpp"

using namespace pdhlock;
namespace fs = std::filesystem;

namespace {

constexpr double kKe = 2.69e-6;
constexpr double kDeltaNu = 45.7e3;
constexpr double kOmega = 20e6;
constexpr double kFi = 1e4;
constexpr double kFiSlow = 300.0;
constexpr double kFug3 = 1.06e6;

// Portable normal deviates: std::normal_distribution is implementation-defined.
class Gauss {
 public:
  explicit Gauss(std::uint64_t seed) : eng_(seed) {}
  double operator()() {
    const double u1 = (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

 private:
  std::mt19937_64 eng_;
};

double bisect(const std::function<double(double)>& g, double lo, double hi) {
  double glo = g(lo);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if ((gm < 0.0) == (glo < 0.0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double phase_at(const TransferModel& m, double f) { return rad2deg(std::arg(m(f))); }

struct Design {
  std::string name;
  PathLengths path;
  int pd_order = 3;
  double f_pd = 150e6;
  json demod;
  double k_p = 1.0;
  double f_d = 1e6;
  double f0g = 0.0;
};

json jmodel(const TransferModel& m) { return to_json(m); }

json gfast_json(double f0g) {
  return {{"type", "product"},
          {"label", "G_fast"},
          {"factors",
           {{{"type", "gain"}, {"k", 2e7}},
            {{"type", "highpass"}, {"f_hp_Hz", 100.0}},
            {{"type", "butterworth"}, {"order", 1}, {"f0_Hz", f0g}}}}};
}

json gslow_json() {
  return {{"type", "product"},
          {"label", "G_slow"},
          {"factors", {{{"type", "gain"}, {"k", 5e6}}, {{"type", "butterworth"}, {"order", 2}, {"f0_Hz", 6e3}}}}};
}

json mixer_json() { return {{"type", "delay"}, {"label", "mixer"}, {"tau_s", 1.0 / 360e6}}; }

json config_json(const Design& d) {
  json j = {{"schema_version", kSchemaVersion},
            {"name", d.name},
            {"loop",
             {{"discriminator", {{"delta_nu_c_Hz", kDeltaNu}, {"k_e_V_per_Hz", kKe}, {"omega_over_2pi_Hz", kOmega}}},
              {"k_fast", {{"K_P", d.k_p}, {"f_I_Hz", kFi}, {"f_D_Hz", d.f_d}}},
              {"loop_filter_f0_Hz", 20e6},
              {"f_I_slow_Hz", kFiSlow},
              {"g_fast", gfast_json(d.f0g)},
              {"g_slow", gslow_json()},
              {"demod", d.demod},
              {"pd", {{"type", "pd_lockin"}, {"label", "P"}, {"order", d.pd_order}, {"f_PD_Hz", d.f_pd}, {"omega_over_2pi_Hz", kOmega}}},
              {"path_lengths", {{"free_space_m", d.path.free_space_m}, {"fiber_m", d.path.fiber_m}, {"coax_m", d.path.coax_m}}}}},
            {"noise", {{"h_minus1_Hz2", 5e8}, {"h0_Hz2_per_Hz", 2e3}, {"f_low_Hz", 10.0}, {"S_n4_V2_per_Hz", 1e-14}}},
            {"analysis", {{"f_min_Hz", 10.0}, {"f_max_Hz", 10e6}, {"points_per_decade", 100}}}};
  return j;
}

ProjectConfig parse(const json& j) { return config_from_json(j); }

// K_P such that |k_p a_fast + a_slow| = 1 at f.
double unity_kp(const LoopConfig& c, double f) {
  LoopConfig u = c;
  u.k_fast.k_p = 1.0;
  const Response a = assemble_open_loop(u, Branch::fast)(f);
  const Response b = assemble_open_loop(u, Branch::slow)(f);
  const double aa = std::norm(a);
  const double ab = std::real(a * std::conj(b));
  return (-ab + std::sqrt(ab * ab - aa * (std::norm(b) - 1.0))) / aa;
}

double phase_margin_at(const LoopConfig& c, double f) {
  return 180.0 + rad2deg(std::arg(assemble_open_loop(c)(f)));
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
  std::cout << "wrote " << p.filename().string() << "\n";
}

Design config3(double f0g) {
  Design d;
  d.name = "config-3";
  d.path = {2.1, 4.9, 1.7};
  d.f0g = f0g;
  const auto p3 = TransferModel::pd_lockin(3, 150e6, kOmega);
  const auto mix = TransferModel::delay(1.0 / 360e6);
  const double fm = bisect([&](double lf) {
    return phase_at(compose({TransferModel::butterworth(1, std::exp(lf)), p3, mix}), kFug3) + 10.0;
  }, std::log(1e5), std::log(1e9));
  d.demod = {{"type", "product"},
             {"label", "D"},
             {"factors", {{{"type", "butterworth"}, {"order", 1}, {"f0_Hz", std::exp(fm)}}, mixer_json()}}};
  const double kph = deg2rad(40.0 - phase_at(TransferModel::butterworth(1, 20e6), kFug3));
  d.f_d = kFug3 / (std::tan(kph) + kFi / kFug3);
  d.k_p = unity_kp(parse(config_json(d)).loop, kFug3);
  return d;
}

Design config12(const std::string& name, double f_pd, double extra_coax, double f_ug, double phi_m, double f0g) {
  Design d;
  d.name = name;
  d.path = {2.1, 4.9, 1.7 + extra_coax};
  d.f_pd = f_pd;
  d.f0g = f0g;
  d.demod = {{"type", "product"},
             {"label", "D"},
             {"factors", {{{"type", "butterworth"}, {"order", 8}, {"f0_Hz", 14e6}}, mixer_json()}}};
  auto pm_err = [&](double lfd) {
    Design t = d;
    t.f_d = std::exp(lfd);
    LoopConfig c = parse(config_json(t)).loop;
    c.k_fast.k_p = unity_kp(c, f_ug);
    return phase_margin_at(c, f_ug) - phi_m;
  };
  d.f_d = std::exp(bisect(pm_err, std::log(1e4), std::log(1e9)));
  d.k_p = unity_kp(parse(config_json(d)).loop, f_ug);
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <out_dir>\n";
    return 2;
  }
  const fs::path out = argv[1];
  fs::create_directories(out);

  // G_fast corner chosen so that the measured G_fast phase is -51.9 deg at 1.06 MHz.
  const double f0g = std::exp(bisect([](double lf) {
    return phase_at(compose({TransferModel::highpass(100.0), TransferModel::butterworth(1, std::exp(lf))}), kFug3) + 51.9;
  }, std::log(1e4), std::log(1e8)));

  const Design d3 = config3(f0g);
  const Design d1 = config12("config-1", 20e6, 6.8, 0.49e6, 50.0, f0g);
  const Design d2 = config12("config-2", 150e6, 0.0, 0.71e6, 51.0, f0g);

  json j3 = config_json(d3);
  j3["measurements"] = {{"closed_loop_csv", "config3_closed_loop.csv"},
                        {"sy4_csv", "sy4_config3.csv"},
                        {"pd_baseline_csv", "pd_baseline.csv"}};
  write(out / "config1.json", dump(config_json(d1)));
  write(out / "config2.json", dump(config_json(d2)));
  write(out / "config3.json", dump(j3));

  const ProjectConfig c3 = parse(j3);
  const auto alpha3 = assemble_open_loop(c3.loop);

  // Closed-loop y5/m6 as a network analyzer would record it.
  {
    BodeTrace t = sample(alpha3, log_grid(10.0, 10e6, 100), "y5/m6");
    t = closed_loop_trace(t);
    t.label = "y5/m6";
    write(out / "config3_closed_loop.csv", write_bode_csv(t));
  }

  // Error-signal spectrum around the modulation frequency and the PD baseline.
  {
    std::vector<double> freqs;
    for (int i = 0; i <= 2000; ++i) freqs.push_back(10e6 + 1e4 * i);
    PsdTrace base;
    base.label = "PD baseline";
    base.freq_hz = freqs;
    base.values.assign(freqs.size(), 1e-14);
    base.resolution_bandwidth = 1e4;
    const NoiseModel laser = c3.noise.laser;
    const double s_n4 = c3.noise.s_n4;
    const auto sensor = compose({TransferModel::gain(c3.loop.k_e), TransferModel::cavity(c3.loop.delta_nu_c)});
    PsdFunction s_y1 = [&](double f) {
      const Response a = alpha3(f);
      const double d = std::norm(1.0 + a);
      return noise_model_psd(laser, f) / d + std::norm(a) / d * s_n4 / std::norm(sensor(f));
    };
    const auto sy4 = sy1_to_sy4(s_y1, freqs, kOmega, c3.loop.k_e, c3.loop.pd,
                                TransferModel::cavity(c3.loop.delta_nu_c), base);
    write(out / "sy4_config3.csv", write_psd_csv(sy4, true));
    write(out / "pd_baseline.csv", write_psd_csv(base, true));
  }

  // Cavity ring-down: 256 averages, switching transient in the first samples.
  {
    Gauss g(0x5eed0001);
    RingdownTrace r;
    r.averages = 256;
    const double tau = 3.482e-6, v0 = 1.0, off = 2e-3, sigma = 0.01 / 16.0;
    for (int i = 0; i < 2000; ++i) {
      const double t = 1e-8 * i;
      double v = v0 * std::exp(-t / tau) + off;
      if (i < 3) v *= 0.3 * (i + 1);
      r.times.push_back(t);
      r.voltages.push_back(v + sigma * g());
    }
    write(out / "ringdown.csv", write_ringdown_csv(r));
  }

  // Lock-in chain: components measured one by one, the assembled D P through the
  // up-conversion mixer MX1 and 10 m of fiber, and MX1 alone.
  {
    const auto f = log_grid(1e3, 10e6, 50);
    const auto lowpass = TransferModel::butterworth(8, 14e6, "lowpass");
    const auto cable = TransferModel::delay(propagation_delay({0.0, 0.0, 3.0}), "cable");
    const auto pd = TransferModel::pd_lockin(3, 150e6, kOmega, "P");
    // The splitter corner brings the sum of the separately measured parts to -31.9 deg.
    const double f_split = std::exp(bisect([&](double lf) {
      return phase_at(compose({TransferModel::butterworth(1, std::exp(lf)), lowpass, cable, pd}), kFug3) + 31.9;
    }, std::log(1e6), std::log(1e9)));
    const auto splitter = TransferModel::butterworth(1, f_split, "splitter");
    const auto unmodeled = TransferModel::delay(0.9 / (360.0 * kFug3), "unmodeled");
    const auto mx1 = compose({TransferModel::butterworth(1, 50e6), TransferModel::delay(3e-9)}, "MX1");
    const double fiber = propagation_delay({0.0, 10.0, 0.0});
    const auto dp = compose({splitter, lowpass, cable, pd, unmodeled}, "DP");
    write(out / "lockin_splitter.csv", write_bode_csv(sample(splitter, f, "splitter")));
    write(out / "lockin_lowpass.csv", write_bode_csv(sample(lowpass, f, "lowpass")));
    write(out / "lockin_cable.csv", write_bode_csv(sample(cable, f, "cable")));
    write(out / "lockin_pd.csv", write_bode_csv(sample(pd, f, "P")));
    write(out / "mx1_cal.csv", write_bode_csv(sample(mx1, f, "MX1")));
    write(out / "lockin_measured.csv",
          write_bode_csv(sample(compose({dp, mx1, TransferModel::delay(fiber)}), f, "measured")));
  }

  // Photodetector phase response, third-order roll-off at 150 MHz plus 0.05 deg noise.
  {
    Gauss g(0x5eed0002);
    BodeTrace t;
    t.label = "PD";
    t.freq_hz = log_grid(1e6, 100e6, 20);
    for (double f : t.freq_hz) {
      t.gain_db.push_back(0.0);
      t.phase_deg.push_back(butterworth_phase_approx_deg(3, 150e6, f) + 0.05 * g());
    }
    write(out / "pd_response.csv", write_bode_csv(t));
  }

  // Error-signal response to current modulation, measured on a 5.4 MHz wide
  // Fabry-Perot reference so that G_fast is visible well above the lock cavity pole.
  {
    const auto disc = compose({c3.loop.demod, c3.loop.pd, TransferModel::gain(c3.loop.k_e),
                               TransferModel::cavity(5.4e6, "FPI")}, "H_FPI");
    const auto meas = compose({c3.loop.g_fast, disc, TransferModel::delay(c3.loop.tau_l)});
    write(out / "gfast_measured.csv", write_bode_csv(sample(meas, log_grid(1e3, 10e6, 50), "error/current")));
    json dj = {{"discriminator", jmodel(disc)}, {"tau_l_s", c3.loop.tau_l}};
    write(out / "gfast_discriminator.json", dump(dj));
  }
  return 0;
}
