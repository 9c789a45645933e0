#include <doctest.h>

#include "ntk/scenario.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ntk;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Scenario tiny() {
    Scenario s;
    s.name = "tiny";
    s.h = 0.5;
    s.n_t = 2;
    s.T = 0.4;
    s.lattice = {1, 2, 4};
    s.velocity_quad = 4;
    s.cycle_samples = 200;
    s.cover_samples = 100;
    s.eps_sweep = {0.16, 0.08};
    return s;
}

std::string error_of(const std::string& text) {
    try {
        scenario_from_json(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("scenario JSON round trip") {
    Scenario s = tiny();
    s.domain = {"torus", {1.0, 0.4}};
    s.material = {"radial", {0.7, 0.2}};
    s.initial = {"linear", {1, 0.5, 0, 0}};
    s.cycle_v = Vec3(0, 1.5, 0.2);
    s.seed = 99;
    s.output_dir = "somewhere";
    CHECK(scenario_from_json(scenario_to_json(s)) == s);
    CHECK(scenario_from_json("{}") == Scenario{});
}

TEST_CASE("scenario hash") {
    Scenario a = tiny();
    Scenario b = a;
    CHECK(scenario_hash(a).size() == 16);
    CHECK(scenario_hash(a) == scenario_hash(b));
    b.output_dir = "elsewhere";
    CHECK(scenario_hash(a) == scenario_hash(b));
    b.seed = 2;
    CHECK(scenario_hash(a) != scenario_hash(b));
    b = a;
    b.h = 0.4999;
    CHECK(scenario_hash(a) != scenario_hash(b));
}

TEST_CASE("configuration errors name the key") {
    CHECK(error_of(R"({"velocity": {"a": 2.5}})").find("velocity.a") != std::string::npos);
    CHECK(error_of(R"({"solver": {"grid": {"hh": 1}}})").find("solver.grid.hh") != std::string::npos);
    CHECK(error_of(R"({"solver": {"grid": {"h": "x"}}})").find("solver.grid.h") != std::string::npos);
    CHECK(error_of(R"({"domain": {"name": "cube"}})").find("domain.name") != std::string::npos);
    CHECK(error_of(R"({"domain": {"name": "torus", "params": [1, 2]}})").find("domain.params") !=
          std::string::npos);
    CHECK(error_of(R"({"data": {"inflow": {"name": "wave", "params": []}}})").find("data.inflow") !=
          std::string::npos);
    CHECK(error_of(R"({"cycles": {"x": [1, 2]}})").find("cycles.x") != std::string::npos);
    CHECK(error_of(R"({"cover": {"eps_sweep": [0.1]}})").find("cover.eps_sweep") != std::string::npos);
    CHECK(error_of("{not json").find("JSON") != std::string::npos);
    CHECK(error_of("[1, 2]").find("object") != std::string::npos);
    CHECK_THROWS_AS(parse_verb("explode"), ConfigError);
    for (Verb v : {Verb::Solve, Verb::BV, Verb::Cycles, Verb::Cover, Verb::VerifyAll})
        CHECK(parse_verb(verb_name(v)) == v);
}

TEST_CASE("presets") {
    auto bump = build_initial({"bump", {1, 0.5}});
    CHECK(bump(Vec3(0, 0, 0), Vec3(0, 0, 0)) == doctest::Approx(1.5));
    CHECK(bump(Vec3(1, 0, 0), Vec3(0, 0, 1)) == doctest::Approx(1.0));
    CHECK_FALSE(build_initial({"zero", {}}));
    auto wave = build_data({"wave", {0.25}}, "data.inflow");
    CHECK(wave(1.0, Vec3(0, 1, 0), Vec3(1, 0, 0)) == doctest::Approx(0.5 * std::sin(1.0)));
    auto ramp = build_data({"ramp", {0.2}}, "data.source");
    CHECK(ramp(2.0, Vec3(0, 0, 0.5), Vec3(1, 0, 0)) == doctest::Approx(0.3));
    CHECK(build_domain({"peanut", {}})->name() == make_peanut()->name());
}

TEST_CASE("field CSV layout") {
    auto setup = build(tiny());
    PhaseField f(setup->grid, 1, 0.0, 0.25);
    std::ostringstream os;
    write_field_csv(os, f, "0123456789abcdef");
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "# scenario_hash 0123456789abcdef");
    std::getline(in, line);
    CHECK(line == "t,x1,x2,x3,v1,v2,v3,value");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 7);
        CHECK(line.find('\r') == std::string::npos);
        ++rows;
    }
    CHECK(rows > 0);
    CHECK(rows % setup->grid->vel().size() == 0);
}

TEST_CASE("runs are reproducible and stamped with the hash") {
    const auto root = std::filesystem::temp_directory_path() / "ntk_scenario_test";
    std::filesystem::remove_all(root);
    Scenario s = tiny();
    const std::string hash = scenario_hash(s);
    for (Verb v : {Verb::Solve, Verb::Cycles, Verb::Cover}) {
        RunResult a = run(s, v, (root / "a").string());
        RunResult b = run(s, v, (root / "b").string());
        REQUIRE(a.files == b.files);
        REQUIRE_FALSE(a.files.empty());
        for (const std::string& name : a.files) {
            const std::string text = slurp(root / "a" / name);
            CHECK(text == slurp(root / "b" / name));
            CHECK(text.find(hash) != std::string::npos);
        }
    }
    s.seed = 7;
    run(s, Verb::Cycles, (root / "c").string());
    CHECK(slurp(root / "a" / "survival.csv") != slurp(root / "c" / "survival.csv"));
    std::filesystem::remove_all(root);
}
