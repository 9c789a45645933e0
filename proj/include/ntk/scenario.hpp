#pragma once

#include "ntk/diagnostics.hpp"
#include "ntk/solver.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ntk {

// A preset picked by name with positional numeric parameters.
struct Preset {
    std::string name;
    std::vector<double> params;

    bool operator==(const Preset&) const = default;
};

// Everything a run needs. Defaults give the ball with the Gaussian
// material and compatible smooth data.
struct Scenario {
    std::string name = "default";
    Preset domain{"ball", {}};
    double velocity_a = 1.0, velocity_b = 2.0;
    int velocity_quad = 8;
    Preset material{"gaussian", {0.5, 0.3}};  // sigma, kappa
    Preset initial{"bump", {1.0, 0.5}};
    Preset inflow{"wave", {0.25}};
    Preset source{"ramp", {0.2}};

    // solver
    double lambda = 0.0;  // <= 0: 1.5 (1 + M_a + M_b)
    std::vector<int> j_schedule{2, 4, 8};
    double tol = 1e-10;
    int max_iter = 400;
    double h = 0.25;
    int n_t = 8;
    double T = 1.0;
    std::array<int, 3> lattice{2, 3, 6};  // speed, polar cosine, azimuth cells

    // cover
    std::vector<double> eps_sweep{0.16, 0.08, 0.04, 0.02};
    double epsilon = 0.02;
    double C_star = 4.0;
    double C_tilde = 64.0;
    int chi_points = 5;
    double atlas_theta = 0.3;
    int cover_samples = 2000;

    // bv
    int bv_m_max = 60;
    double bv_tol = 1e-8;
    double jump_tol = 0.1;
    double delta = 0.1;
    int boundary_nodes = 12;

    // cycles
    int k_max = 20;
    int cycle_samples = 10000;
    Vec3 cycle_x = Vec3(0.99, 0, 0);
    Vec3 cycle_v = Vec3(0, 2, 0);

    std::uint64_t seed = 1;
    std::string output_dir;

    bool operator==(const Scenario&) const = default;
};

// JSON text <-> Scenario. Missing keys keep their defaults; unknown keys,
// wrong types and invalid values raise ConfigError naming the key path
// (for example "velocity.a").
Scenario scenario_from_json(const std::string& text);
std::string scenario_to_json(const Scenario& s);
Scenario load_scenario(const std::string& path);
void validate(const Scenario& s);

// 16 hex digits (FNV-1a over the canonical JSON form). The output
// directory is excluded so that relocating a run keeps its hash.
std::string scenario_hash(const Scenario& s);

// Built objects. The velocity space and material live here so that the
// MixedProblem's raw pointers stay valid.
struct Setup {
    DomainPtr domain;
    std::unique_ptr<VelocitySpace> space;
    std::unique_ptr<Material> material;
    MixedProblem problem;
    GridPtr grid;
};
std::unique_ptr<Setup> build(const Scenario& s);
DomainPtr build_domain(const Preset& p);
InitialFn build_initial(const Preset& p);
DataFn build_data(const Preset& p, const std::string& path);

// The in-flow problem with the scenario's data (no reflection).
InflowProblem inflow_problem(const Setup& s, double lambda);

// ------------------------------------------------------------------ runs

enum class Verb { Solve, BV, Cycles, Cover, VerifyAll };
Verb parse_verb(const std::string& v);
const char* verb_name(Verb v);

struct RunResult {
    int exit_code = 0;  // 0 pass, 1 fail
    std::vector<std::string> files;
    std::string summary;
};

// Runs one pipeline and writes its artifacts into out_dir (created if
// missing). Every file embeds the scenario hash.
RunResult run(const Scenario& s, Verb verb, const std::string& out_dir);

// CSV writer for a field: header t,x1,x2,x3,v1,v2,v3,value; interior
// nodes only; all time levels unless level >= 0.
void write_field_csv(std::ostream& os, const PhaseField& f, const std::string& hash, int level = -1);

// JSON form of a report (for inequalities.json).
std::string report_json(const InequalityReport& r);

}  // namespace ntk
