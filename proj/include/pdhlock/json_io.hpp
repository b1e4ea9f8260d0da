#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdhlock/errors.hpp"
#include "pdhlock/ingest.hpp"
#include "pdhlock/linewidth.hpp"
#include "pdhlock/loopan.hpp"
#include "pdhlock/pdh.hpp"
#include "pdhlock/tfcore.hpp"
#include "pdhlock/tuner.hpp"

namespace pdhlock {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Canonical text form shared by the CLI and the service.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

namespace io {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path.empty() ? "<root>" : path, "must be an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(join(path, key), "required field is missing");
  return *it;
}

inline double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path, "must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(path, "must be finite");
  return d;
}

inline double number(const json& obj, const std::string& key, const std::string& path) {
  return as_number(require(obj, key, path), join(path, key));
}

inline double positive(const json& obj, const std::string& key, const std::string& path) {
  const double d = number(obj, key, path);
  if (!(d > 0.0)) throw ValidationError(join(path, key), "must be > 0");
  return d;
}

inline double non_negative(const json& obj, const std::string& key, const std::string& path) {
  const double d = number(obj, key, path);
  if (!(d >= 0.0)) throw ValidationError(join(path, key), "must be >= 0");
  return d;
}

inline int integer_at_least(const json& obj, const std::string& key, const std::string& path, int lo) {
  const json& v = require(obj, key, path);
  if (!v.is_number_integer()) throw ValidationError(join(path, key), "must be an integer");
  const auto i = v.get<long long>();
  if (i < lo || i > 1000000) throw ValidationError(join(path, key), "must be >= " + std::to_string(lo));
  return static_cast<int>(i);
}

inline bool has(const json& obj, const std::string& key) { return obj.is_object() && obj.contains(key); }

inline std::optional<double> optional_positive(const json& obj, const std::string& key, const std::string& path) {
  if (!has(obj, key) || obj.at(key).is_null()) return std::nullopt;
  return positive(obj, key, path);
}

inline std::string string_field(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_string()) throw ValidationError(join(path, key), "must be a string");
  return v.get<std::string>();
}

inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::string resolve(const std::string& base_dir, const std::string& p) {
  namespace fs = std::filesystem;
  if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

}  // namespace io

// ---------------------------------------------------------------------------
// Traces

inline json to_json(const BodeTrace& b) {
  return {{"label", b.label}, {"frequency_Hz", b.freq_hz}, {"gain_dB", b.gain_db}, {"phase_deg", b.phase_deg}};
}

inline BodeTrace bode_from_json(const json& j, const std::string& path) {
  BodeTrace b;
  if (io::has(j, "label")) b.label = io::string_field(j, "label", path);
  auto column = [&](const char* key) {
    const json& v = io::require(j, key, path);
    if (!v.is_array()) throw ValidationError(io::join(path, key), "must be an array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(io::as_number(v[i], io::join(path, key) + "[" + std::to_string(i) + "]"));
    return out;
  };
  b.freq_hz = column("frequency_Hz");
  b.gain_db = column("gain_dB");
  b.phase_deg = column("phase_deg");
  try {
    b.validate();
  } catch (const DomainError& e) {
    throw ValidationError(io::join(path, "frequency_Hz"), e.what());
  }
  return b;
}

inline json to_json(const PsdTrace& p) {
  return {{"label", p.label}, {"frequency_Hz", p.freq_hz}, {"psd", p.values}, {"rbw_Hz", p.resolution_bandwidth}};
}

// ---------------------------------------------------------------------------
// Models

inline json to_json(const TransferModel& m) {
  json j = std::visit(
      detail::overloaded{
          [](const model::Gain& g) -> json { return {{"type", "gain"}, {"k", g.k}}; },
          [](const model::Pid& p) -> json {
            return {{"type", "pid"}, {"K_P", p.k_p}, {"f_I_Hz", p.f_i}, {"f_D_Hz", io::opt(p.f_d)}};
          },
          [](const model::Butterworth& b) -> json { return {{"type", "butterworth"}, {"order", b.order}, {"f0_Hz", b.f0}}; },
          [](const model::HighPass& h) -> json { return {{"type", "highpass"}, {"f_hp_Hz", h.f_hp}}; },
          [](const model::Integrator& i) -> json { return {{"type", "integrator"}, {"f_I_Hz", i.f_i}}; },
          [](const model::Delay& d) -> json { return {{"type", "delay"}, {"tau_s", d.tau_s}}; },
          [](const model::Cavity& c) -> json { return {{"type", "cavity"}, {"delta_nu_c_Hz", c.delta_nu_c}}; },
          [](const model::PdLockin& p) -> json {
            return {{"type", "pd_lockin"}, {"order", p.order}, {"f_PD_Hz", p.f_pd}, {"omega_over_2pi_Hz", p.omega_over_2pi}};
          },
          [](const model::Product& p) -> json {
            json f = json::array();
            for (const auto& c : p.factors) f.push_back(to_json(c));
            return {{"type", "product"}, {"factors", f}};
          },
          [](const model::Sum& s) -> json {
            json f = json::array();
            for (const auto& c : s.terms) f.push_back(to_json(c));
            return {{"type", "sum"}, {"terms", f}};
          },
          [](const model::Tabulated& t) -> json { return {{"type", "tabulated"}, {"trace", to_json(t.trace)}}; },
      },
      m.node());
  const std::string dflt = j.at("type") == "butterworth" ? "lowpass" : j.at("type") == "pd_lockin" ? "pd" : j.at("type").get<std::string>();
  if (dflt == "tabulated" || m.label() != dflt) j["label"] = m.label();
  return j;
}

inline TransferModel model_from_json(const json& j, const std::string& path, const std::string& base_dir = {}) {
  if (!j.is_object()) throw ValidationError(path, "model must be an object");
  const std::string type = io::string_field(j, "type", path);
  const std::string label = io::has(j, "label") ? io::string_field(j, "label", path) : std::string{};
  auto lab = [&](const char* dflt) { return label.empty() ? std::string(dflt) : label; };
  auto children = [&](const char* key) {
    const json& v = io::require(j, key, path);
    if (!v.is_array() || v.empty()) throw ValidationError(io::join(path, key), "must be a non-empty array");
    std::vector<TransferModel> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back(model_from_json(v[i], io::join(path, key) + "[" + std::to_string(i) + "]", base_dir));
    }
    return out;
  };
  if (type == "identity") return TransferModel::identity().relabeled(lab("identity"));
  if (type == "gain") return TransferModel::gain(io::number(j, "k", path), lab("gain"));
  if (type == "pid") {
    return TransferModel::pid(io::positive(j, "K_P", path), io::non_negative(j, "f_I_Hz", path),
                              io::optional_positive(j, "f_D_Hz", path), lab("pid"));
  }
  if (type == "butterworth") {
    return TransferModel::butterworth(io::integer_at_least(j, "order", path, 1), io::positive(j, "f0_Hz", path), lab("lowpass"));
  }
  if (type == "highpass") return TransferModel::highpass(io::positive(j, "f_hp_Hz", path), lab("highpass"));
  if (type == "integrator") return TransferModel::integrator(io::positive(j, "f_I_Hz", path), lab("integrator"));
  if (type == "delay") return TransferModel::delay(io::non_negative(j, "tau_s", path), lab("delay"));
  if (type == "cavity") return TransferModel::cavity(io::positive(j, "delta_nu_c_Hz", path), lab("cavity"));
  if (type == "pd_lockin") {
    return TransferModel::pd_lockin(io::integer_at_least(j, "order", path, 1), io::positive(j, "f_PD_Hz", path),
                                    io::positive(j, "omega_over_2pi_Hz", path), lab("pd"));
  }
  if (type == "product") return compose(children("factors"), lab("product"));
  if (type == "sum") return sum(children("terms"), lab("sum"));
  if (type == "tabulated") {
    BodeTrace t;
    if (io::has(j, "trace")) {
      t = bode_from_json(j.at("trace"), io::join(path, "trace"));
    } else {
      const std::string csv = io::string_field(j, "csv", path);
      try {
        t = parse_bode_csv(io::resolve(base_dir, csv));
      } catch (const ParseError& e) {
        throw ValidationError(io::join(path, "csv"), e.what());
      }
    }
    if (t.size() < 2) throw ValidationError(io::join(path, "trace"), "need at least two points");
    return TransferModel::tabulated(std::move(t), label);
  }
  throw ValidationError(io::join(path, "type"), "unknown model type '" + type + "'");
}

// ---------------------------------------------------------------------------
// Project configuration

struct NoiseSpec {
  NoiseModel laser{5e8, 2e3, 10.0};
  double s_n4 = 0.0;   // V^2/Hz, discriminator noise at the PD
};

struct ProjectConfig {
  int schema_version = kSchemaVersion;
  std::string name;
  LoopConfig loop;
  std::optional<double> k_e_explicit;
  std::optional<DiscriminatorConfig> physics;   // present when the detection physics is given
  std::optional<double> omega_over_2pi;         // Hz, modulation frequency
  std::optional<PathLengths> path;
  NoiseSpec noise;
  AnalysisGrid analysis;
  std::map<std::string, std::string> measurements;   // as written in the document
  std::string base_dir;

  std::string measurement(const std::string& key) const {
    auto it = measurements.find(key);
    if (it == measurements.end()) throw ValidationError("measurements." + key, "required field is missing");
    return io::resolve(base_dir, it->second);
  }
};

inline DetectorConfig detector_from_json(const json& j, const std::string& path) {
  DetectorConfig d;
  d.responsivity = io::positive(j, "responsivity_A_per_W", path);
  d.transimpedance = io::positive(j, "transimpedance_V_per_A", path);
  d.nep = io::non_negative(j, "nep_W_per_rtHz", path);
  d.f_pd = io::positive(j, "f_PD_Hz", path);
  d.order = io::integer_at_least(j, "order", path, 1);
  return d;
}

inline json to_json(const DetectorConfig& d) {
  return {{"responsivity_A_per_W", d.responsivity}, {"transimpedance_V_per_A", d.transimpedance},
          {"nep_W_per_rtHz", d.nep}, {"f_PD_Hz", d.f_pd}, {"order", d.order}};
}

inline ProjectConfig config_from_json(const json& j, const std::string& base_dir = {}) {
  ProjectConfig c;
  c.base_dir = base_dir;
  if (!j.is_object()) throw ValidationError("<root>", "configuration must be an object");
  c.schema_version = io::integer_at_least(j, "schema_version", "", 1);
  if (c.schema_version != kSchemaVersion) {
    throw ValidationError("schema_version", "unsupported version " + std::to_string(c.schema_version));
  }
  if (io::has(j, "name")) c.name = io::string_field(j, "name", "");

  const json& loop = io::require(j, "loop", "");
  const std::string lp = "loop";
  const json& disc = io::require(loop, "discriminator", lp);
  const std::string dp = "loop.discriminator";
  c.loop.delta_nu_c = io::positive(disc, "delta_nu_c_Hz", dp);
  if (io::has(disc, "k_e_V_per_Hz")) {
    const double k = io::number(disc, "k_e_V_per_Hz", dp);
    if (k == 0.0) throw ValidationError(io::join(dp, "k_e_V_per_Hz"), "must be non-zero");
    c.k_e_explicit = k;
  }
  if (io::has(disc, "omega_over_2pi_Hz")) c.omega_over_2pi = io::positive(disc, "omega_over_2pi_Hz", dp);
  if (io::has(disc, "P_PD_W") || !c.k_e_explicit) {
    DiscriminatorConfig d;
    d.delta_nu_c = c.loop.delta_nu_c;
    d.modulation.beta = io::positive(disc, "beta_rad", dp);
    d.modulation.omega_over_2pi = io::positive(disc, "omega_over_2pi_Hz", dp);
    d.p_pd = io::non_negative(disc, "P_PD_W", dp);
    d.f_m = io::positive(disc, "f_M_Hz", dp);
    d.lp_order = io::integer_at_least(disc, "lp_order", dp, 1);
    if (io::has(disc, "offset_V")) d.offset_v = io::number(disc, "offset_V", dp);
    d.detector = detector_from_json(io::require(disc, "detector", dp), io::join(dp, "detector"));
    c.physics = d;
  }
  c.loop.k_e = c.k_e_explicit ? *c.k_e_explicit : ke_slope(*c.physics);

  const json& kf = io::require(loop, "k_fast", lp);
  c.loop.k_fast.k_p = io::positive(kf, "K_P", "loop.k_fast");
  c.loop.k_fast.f_i = io::non_negative(kf, "f_I_Hz", "loop.k_fast");
  c.loop.k_fast.f_d = io::optional_positive(kf, "f_D_Hz", "loop.k_fast");
  if (io::has(loop, "loop_filter_f0_Hz")) {
    c.loop.loop_filter_f0 = io::optional_positive(loop, "loop_filter_f0_Hz", lp);
  }
  c.loop.f_i_slow = io::has(loop, "f_I_slow_Hz") ? io::non_negative(loop, "f_I_slow_Hz", lp) : 0.0;
  c.loop.g_fast = model_from_json(io::require(loop, "g_fast", lp), "loop.g_fast", base_dir);
  c.loop.g_slow = io::has(loop, "g_slow") ? model_from_json(loop.at("g_slow"), "loop.g_slow", base_dir)
                                          : TransferModel::identity();
  c.loop.demod = io::has(loop, "demod") ? model_from_json(loop.at("demod"), "loop.demod", base_dir)
                                        : TransferModel::identity();
  c.loop.pd = io::has(loop, "pd") ? model_from_json(loop.at("pd"), "loop.pd", base_dir) : TransferModel::identity();
  if (io::has(loop, "path_lengths")) {
    const json& pl = loop.at("path_lengths");
    const std::string pp = "loop.path_lengths";
    PathLengths p;
    p.free_space_m = io::has(pl, "free_space_m") ? io::non_negative(pl, "free_space_m", pp) : 0.0;
    p.fiber_m = io::has(pl, "fiber_m") ? io::non_negative(pl, "fiber_m", pp) : 0.0;
    p.coax_m = io::has(pl, "coax_m") ? io::non_negative(pl, "coax_m", pp) : 0.0;
    c.path = p;
    c.loop.tau_l = propagation_delay(p);
    if (io::has(loop, "tau_l_s")) throw ValidationError("loop.tau_l_s", "give either tau_l_s or path_lengths");
  } else {
    c.loop.tau_l = io::non_negative(loop, "tau_l_s", lp);
  }

  if (io::has(j, "noise")) {
    const json& n = j.at("noise");
    c.noise.laser.h_minus1 = io::non_negative(n, "h_minus1_Hz2", "noise");
    c.noise.laser.h0 = io::non_negative(n, "h0_Hz2_per_Hz", "noise");
    c.noise.laser.f_low = io::has(n, "f_low_Hz") ? io::positive(n, "f_low_Hz", "noise") : 10.0;
    c.noise.s_n4 = io::has(n, "S_n4_V2_per_Hz") ? io::non_negative(n, "S_n4_V2_per_Hz", "noise") : 0.0;
  }
  if (io::has(j, "analysis")) {
    const json& a = j.at("analysis");
    c.analysis.f_min = io::positive(a, "f_min_Hz", "analysis");
    c.analysis.f_max = io::positive(a, "f_max_Hz", "analysis");
    c.analysis.points_per_decade = io::integer_at_least(a, "points_per_decade", "analysis", 1);
    if (!(c.analysis.f_max > c.analysis.f_min)) throw ValidationError("analysis.f_max_Hz", "must exceed f_min_Hz");
  }
  if (io::has(j, "measurements")) {
    const json& m = j.at("measurements");
    if (!m.is_object()) throw ValidationError("measurements", "must be an object");
    for (auto it = m.begin(); it != m.end(); ++it) {
      if (!it->is_string()) throw ValidationError("measurements." + it.key(), "must be a string");
      c.measurements[it.key()] = it->get<std::string>();
    }
  }
  return c;
}

inline ProjectConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j, std::filesystem::path(path).parent_path().string());
}

inline json to_json(const ProjectConfig& c) {
  json disc = {{"delta_nu_c_Hz", c.loop.delta_nu_c}};
  if (c.k_e_explicit) disc["k_e_V_per_Hz"] = *c.k_e_explicit;
  if (c.omega_over_2pi) disc["omega_over_2pi_Hz"] = *c.omega_over_2pi;
  if (c.physics) {
    const auto& d = *c.physics;
    disc["beta_rad"] = d.modulation.beta;
    disc["omega_over_2pi_Hz"] = d.modulation.omega_over_2pi;
    disc["P_PD_W"] = d.p_pd;
    disc["f_M_Hz"] = d.f_m;
    disc["lp_order"] = d.lp_order;
    disc["offset_V"] = d.offset_v;
    disc["detector"] = to_json(d.detector);
  }
  json loop = {{"discriminator", disc},
               {"k_fast", {{"K_P", c.loop.k_fast.k_p}, {"f_I_Hz", c.loop.k_fast.f_i}, {"f_D_Hz", io::opt(c.loop.k_fast.f_d)}}},
               {"loop_filter_f0_Hz", io::opt(c.loop.loop_filter_f0)},
               {"f_I_slow_Hz", c.loop.f_i_slow},
               {"g_fast", to_json(c.loop.g_fast)},
               {"g_slow", to_json(c.loop.g_slow)},
               {"demod", to_json(c.loop.demod)},
               {"pd", to_json(c.loop.pd)}};
  if (c.path) {
    loop["path_lengths"] = {{"free_space_m", c.path->free_space_m}, {"fiber_m", c.path->fiber_m}, {"coax_m", c.path->coax_m}};
  } else {
    loop["tau_l_s"] = c.loop.tau_l;
  }
  json j = {{"schema_version", c.schema_version},
            {"name", c.name},
            {"loop", loop},
            {"noise",
             {{"h_minus1_Hz2", c.noise.laser.h_minus1},
              {"h0_Hz2_per_Hz", c.noise.laser.h0},
              {"f_low_Hz", c.noise.laser.f_low},
              {"S_n4_V2_per_Hz", c.noise.s_n4}}},
            {"analysis",
             {{"f_min_Hz", c.analysis.f_min}, {"f_max_Hz", c.analysis.f_max}, {"points_per_decade", c.analysis.points_per_decade}}}};
  if (!c.measurements.empty()) j["measurements"] = c.measurements;
  return j;
}

// ---------------------------------------------------------------------------
// Reports

inline json to_json(const MarginsReport& m) {
  return {{"f_UG_Hz", io::opt(m.f_ug)},
          {"phi_m_deg", io::opt(m.phi_m)},
          {"f_180_Hz", io::opt(m.f_180)},
          {"g_m", io::opt(m.g_m)},
          {"f_bump_Hz", io::opt(m.f_bump)},
          {"bump_dB", m.bump_db && std::isfinite(*m.bump_db) ? json(*m.bump_db) : json(nullptr)},
          {"goals",
           {{"unity_gain_found", m.goals.unity_gain_found},
            {"phase_margin_30_60", m.goals.phase_margin_in_band},
            {"low_freq_phase_above_minus_120", m.goals.low_freq_phase},
            {"all", m.goals.all()}}},
          {"warnings", m.warnings}};
}

inline json to_json(const TuneResult& r) {
  json steps = json::array();
  for (const auto& s : r.trace) {
    steps.push_back({{"stage", s.stage}, {"parameter", s.parameter}, {"from", s.from}, {"to", s.to},
                     {"oscillating", s.oscillating}, {"f_osc_Hz", io::opt(s.f_osc)}});
  }
  return {{"k_fast", {{"K_P", r.k_fast.k_p}, {"f_I_Hz", r.k_fast.f_i}, {"f_D_Hz", io::opt(r.k_fast.f_d)}}},
          {"f_I_slow_Hz", r.f_i_slow},
          {"feasible", r.feasible},
          {"binding_constraint", r.binding_constraint.empty() ? json(nullptr) : json(r.binding_constraint)},
          {"iterations", r.iterations},
          {"margins", to_json(r.margins)},
          {"trace", steps}};
}

inline json to_json(const PhaseBudget& b) {
  json e = json::array();
  for (const auto& [name, deg] : b.entries) e.push_back({{"component", name}, {"phase_deg", deg}});
  return {{"f_ref_Hz", b.f_ref}, {"entries", e}, {"sum_deg", b.sum}, {"measured_deg", b.measured}, {"residual_deg", b.residual}};
}

inline json to_json(const FitReport& r) {
  json p = json::object();
  for (const auto& x : r.parameters) p[x.name] = {{"value", x.value}, {"sigma", x.sigma}};
  return {{"parameters", p}, {"residual_rms", r.residual_rms}, {"points_used", r.points_used},
          {"excluded_s", r.excluded_s}, {"note", r.note}};
}

inline json to_json(const NoiseBudget& n) {
  return {{"bandwidth_Hz", n.bandwidth_hz}, {"P_eq_W", n.p_eq_w}, {"snr_at_P_eq", n.snr_at_p_eq},
          {"snr_at_P_PD", n.snr_at_p_pd}, {"shot_limited", n.shot_limited}};
}

inline json to_json(const LinewidthResult& l) {
  return {{"fwhm_Hz", l.fwhm_hz}, {"area_Hz2", l.area_hz2}, {"empty_region", l.empty_region},
          {"f_low_Hz", l.f_low}, {"f_high_Hz", l.f_high}};
}

inline json to_json(const CavityAdvice& a) {
  return {{"delta_nu_c_min_Hz", a.delta_nu_c_min}, {"delta_nu_c_max_Hz", a.delta_nu_c_max}, {"empty", a.empty},
          {"rationale", a.rationale}};
}

}  // namespace pdhlock
