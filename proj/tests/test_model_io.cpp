#include "daeident/model_io.hpp"

#include <cstdio>
#include <fstream>

#include "daeident/scenarios.hpp"
#include "doctest.h"

using namespace daeident;
using nlohmann::json;

namespace {

std::string temp_path(const char* name) {
  return std::string("io_test_") + name;
}

}  // namespace

TEST_CASE("model files round-trip through save and parse") {
  Scenario sc = load_scenario("reactor");
  const DaeModel& m = *sc.model.dae;
  std::string text = save_model_json(m);
  DaeModel back = parse_dae_json(json::parse(text));
  CHECK(back.n1() == m.n1());
  CHECK(back.n2() == m.n2());
  CHECK(back.parameters.size() == m.parameters.size());
  for (std::size_t i = 0; i < m.parameters.size(); ++i) {
    SymbolId a = m.parameters[i];
    SymbolId b = back.parameters[i];
    CHECK((*m.symbols)[a].name == (*back.symbols)[b].name);
    CHECK(m.parameter_values.at(a) == back.parameter_values.at(b));  // value-exact
  }
  for (std::size_t i = 0; i < m.f1.size(); ++i)
    CHECK(to_string(back.f1[i], *back.symbols) == to_string(m.f1[i], *m.symbols));
  CHECK(back.initial_condition == m.initial_condition);
}

TEST_CASE("numeric literals are printed to 17 significant digits") {
  CHECK(format_numeric(209.205) == "209.20500000000001");
  CHECK(format_numeric(7.2e10) == "72000000000");
  CHECK(format_numeric(1.0 / 3.0) == "0.33333333333333331");
  Scenario sc = load_scenario("reactor");
  std::string text = save_model_json(*sc.model.dae);
  CHECK(text.find("209.20500000000001") != std::string::npos);
}

TEST_CASE("model parsing rejects malformed declarations") {
  CHECK_THROWS_AS(parse_dae_json(json::parse(R"({"outputs": ["x"]})")), IoError);
  CHECK_THROWS_AS(parse_dae_json(json::parse(
                      R"({"states_differential": ["x"], "f1": ["y"], "outputs": ["x"]})")),
                  IoError);
  CHECK_THROWS_AS(
      parse_dae_json(json::parse(
          R"({"states_differential": ["x"], "f1": ["x"], "F": ["x"], "outputs": ["x"]})")),
      IoError);
  CHECK_THROWS_AS(parse_dae_json(json::parse(
                      R"({"states_differential": ["x"], "f1": ["x +"], "outputs": ["x"]})")),
                  IoError);
}

TEST_CASE("implicit models parse derivative symbols") {
  json j = json::parse(R"({
    "states_differential": ["x"],
    "F": ["-x - x'"],
    "outputs": ["x"]
  })");
  DaeModel m = parse_dae_json(j);
  CHECK(m.has_implicit());
  CHECK_FALSE(m.has_semi_explicit());
}

TEST_CASE("csv matrices with a sidecar config") {
  std::string apath = temp_path("A.csv");
  {
    std::ofstream a(apath);
    a << "# system matrix\n-1.0, 2.0\n0.5 -3.0\n";
  }
  json j;
  j["linear"] = {{"A", apath}, {"partition", {1, 1}}, {"theta", {"A12", "A21"}}};
  j["linear"]["E"] = {{1, 0}, {0, 0}};
  LoadedModel lm = parse_model_json(j, ".");
  REQUIRE(lm.is_linear());
  CHECK(lm.linear->A(0, 1) == 2.0);
  CHECK(lm.linear->A(1, 0) == 0.5);
  CHECK(lm.linear->theta.size() == 2);
  std::remove(apath.c_str());
}

TEST_CASE("theta specs: masks, entry names, and blocks") {
  Scenario sc = load_scenario("linear4");
  const LinearDae& d = *sc.model.linear;
  CHECK(parse_theta_spec(d, json::parse(R"(["a12","a34"])")) ==
        std::vector<std::pair<int, int>>{{0, 1}, {2, 3}});
  auto mask = json::parse(
      R"([[true,false,false,false],[false,false,false,false],
          [false,false,false,false],[false,false,false,true]])");
  CHECK(parse_theta_spec(d, mask) == std::vector<std::pair<int, int>>{{0, 0}, {3, 3}});
  CHECK(parse_theta_spec(d, json::parse(R"(["A11"])")).size() == 4);
  CHECK(parse_theta_spec(d, json::parse(R"("nonzero")")).size() == 16);
  CHECK_THROWS_AS(parse_theta_spec(d, json::parse(R"(["a99"])")), IoError);
  CHECK_THROWS_AS(parse_theta_spec(d, json::parse(R"([])")), IoError);
}

TEST_CASE("point files") {
  std::string path = temp_path("pt.json");
  {
    std::ofstream f(path);
    f << R"({"x": [0.5, 350.0, 0.4995], "time": 2.5})";
  }
  PointFile pf = load_point_file(path);
  REQUIRE(pf.x.has_value());
  CHECK(pf.x->size() == 3);
  CHECK(pf.time == 2.5);
  std::remove(path.c_str());
  {
    std::ofstream f(path);
    f << R"({"theta": [305.0]})";
  }
  CHECK_THROWS_AS(load_point_file(path), IoError);
  std::remove(path.c_str());
}

TEST_CASE("rank report serialization carries every field") {
  RankReport r;
  r.satisfied = true;
  r.rank_full = 12;
  r.rank_right = 11;
  r.required = 12;
  r.mu = r.nu = 2;
  r.sigma = 3;
  r.tolerance = 5e-13;
  r.min_counted_ratio = 42.0;
  r.singular_values = {3.0, 2.0, 1.0};
  json j = rank_report_json(r, true);
  CHECK(j["verdict"] == "satisfied");
  CHECK(j["rank_full"] == 12);
  CHECK(j["required"] == 12);
  CHECK(j["sigma"] == 3);
  CHECK(j["singular_values"].size() == 3);
  json no_audit = rank_report_json(r, false);
  CHECK_FALSE(no_audit.contains("singular_values"));
}
