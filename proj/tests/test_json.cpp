#include <gtest/gtest.h>

#include "oracle.hpp"
#include "pdhlock/json_io.hpp"
#include "pdhlock/ops.hpp"

using namespace pdhlock;

namespace {

json config3() { return json::parse(read_file(oracle::fixture("config3.json"))); }

std::string field_of(const json& j) {
  try {
    config_from_json(j, oracle::data("fixtures"));
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "<accepted>";
}

}  // namespace

TEST(ConfigJson, FixturesLoad) {
  for (const char* name : {"config1.json", "config2.json", "config3.json"}) {
    const auto c = load_config(oracle::fixture(name));
    EXPECT_EQ(c.schema_version, kSchemaVersion);
    EXPECT_GT(c.loop.k_e, 0.0);
    EXPECT_GT(c.loop.tau_l, 0.0);
  }
}

TEST(ConfigJson, ErrorsNameTheField) {
  auto j = config3();
  j["loop"]["discriminator"]["delta_nu_c_Hz"] = 0.0;
  EXPECT_EQ(field_of(j), "loop.discriminator.delta_nu_c_Hz");

  j = config3();
  j["loop"]["k_fast"].erase("K_P");
  EXPECT_EQ(field_of(j), "loop.k_fast.K_P");

  j = config3();
  j["loop"]["g_fast"]["factors"][2]["order"] = 0;
  EXPECT_EQ(field_of(j), "loop.g_fast.factors[2].order");

  j = config3();
  j["loop"]["demod"]["factors"][0]["type"] = "bessel";
  EXPECT_EQ(field_of(j), "loop.demod.factors[0].type");

  j = config3();
  j["analysis"]["f_max_Hz"] = 1.0;
  EXPECT_EQ(field_of(j), "analysis.f_max_Hz");

  j = config3();
  j["schema_version"] = 2;
  EXPECT_EQ(field_of(j), "schema_version");

  j = config3();
  j["noise"]["h0_Hz2_per_Hz"] = "lots";
  EXPECT_EQ(field_of(j), "noise.h0_Hz2_per_Hz");

  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}

TEST(ConfigJson, SerializeParseSerializeIsFixedPoint) {
  for (const char* name : {"config1.json", "config2.json", "config3.json"}) {
    const auto c = load_config(oracle::fixture(name));
    const std::string a = dump(to_json(c));
    const std::string b = dump(to_json(config_from_json(json::parse(a), c.base_dir)));
    EXPECT_EQ(a, b) << name;
  }
}

TEST(ConfigJson, FixtureTextIsCanonical) {
  const auto c = load_config(oracle::fixture("config3.json"));
  EXPECT_EQ(dump(to_json(c)), read_file(oracle::fixture("config3.json")));
}

TEST(ModelJson, RoundTripEveryVariant) {
  const auto f = log_grid(10.0, 1e7, 5);
  const std::vector<TransferModel> models = {
      TransferModel::identity(),
      TransferModel::gain(-3.5),
      TransferModel::pid(2.0, 1e4, 1e6),
      TransferModel::pid(2.0, 0.0, std::nullopt),
      TransferModel::butterworth(7, 3e6),
      TransferModel::highpass(100.0),
      TransferModel::integrator(300.0),
      TransferModel::delay(1.234e-8),
      TransferModel::cavity(45.7e3),
      TransferModel::pd_lockin(3, 150e6, 20e6),
      compose({TransferModel::gain(2.0), TransferModel::butterworth(2, 1e6)}, "G"),
      sum({TransferModel::gain(1.0), TransferModel::integrator(1e3)}, "K"),
      TransferModel::tabulated(sample(TransferModel::butterworth(3, 1e5), f), "tab"),
  };
  for (const auto& m : models) {
    const json a = to_json(m);
    const auto back = model_from_json(a, "m");
    EXPECT_EQ(dump(a), dump(to_json(back)));
    for (double x : f) EXPECT_EQ(back(x), m(x)) << dump(a);
  }
}

TEST(ModelJson, TabulatedFromCsvResolvesRelativePath) {
  const json j = {{"type", "tabulated"}, {"csv", "lockin_cable.csv"}};
  const auto m = model_from_json(j, "x", oracle::data("fixtures"));
  EXPECT_LT(rad2deg(m.phase_rad(1e6)), 0.0);
  const json bad = {{"type", "tabulated"}, {"csv", "missing.csv"}};
  try {
    model_from_json(bad, "x", oracle::data("fixtures"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "x.csv");
  }
}

TEST(ReportJson, FieldsAndStability) {
  const auto c = load_config(oracle::fixture("config3.json"));
  const json m = ops::margins_json(c);
  for (const char* k : {"f_UG_Hz", "phi_m_deg", "f_180_Hz", "g_m", "f_bump_Hz", "goals", "warnings"}) {
    EXPECT_TRUE(m.contains(k)) << k;
  }
  EXPECT_TRUE(m["goals"]["all"].get<bool>());
  EXPECT_EQ(dump(m), dump(json::parse(dump(m))));

  const json b = to_json(ops::budget(c, std::nullopt, std::nullopt));
  EXPECT_EQ(b["entries"].size(), 5u);
  EXPECT_EQ(dump(b), dump(json::parse(dump(b))));

  const json e = ops::evaluate(c);
  EXPECT_EQ(e["bode"]["frequency_Hz"].size(), e["psd"]["frequency_Hz"].size());
  EXPECT_EQ(dump(e), dump(json::parse(dump(e))));
}

TEST(ReportJson, MissingCrossingSerializesAsNull) {
  const auto t = sample(TransferModel::gain(0.1), log_grid(10.0, 1e6, 10));
  const json m = to_json(margins(t));
  EXPECT_TRUE(m["f_UG_Hz"].is_null());
  EXPECT_FALSE(m["goals"]["all"].get<bool>());
}
