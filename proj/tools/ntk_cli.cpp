// ntk_cli <verb> --scenario PATH [--threads N] [--seed S] [--out DIR]
//
// Exit codes: 0 success, 1 a verification or pipeline failure, 2 bad
// configuration.

#include "ntk/parallel.hpp"
#include "ntk/scenario.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <thread>

int main(int argc, char** argv) {
    CLI::App app{"Kinetic transport toolkit"};
    app.require_subcommand(1, 1);

    std::string scenario_path, out_dir;
    int threads = 0;
    std::uint64_t seed = 0;
    bool have_seed = false;

    for (const char* verb : {"solve", "bv", "cycles", "cover", "verify-all"}) {
        CLI::App* sub = app.add_subcommand(verb);
        sub->add_option("--scenario", scenario_path, "scenario JSON file")->required();
        sub->add_option("--threads", threads, "worker threads (default: hardware concurrency)");
        sub->add_option("--seed", seed, "override the scenario seed")->each([&](const std::string&) {
            have_seed = true;
        });
        sub->add_option("--out", out_dir, "output directory (default: $NTK_OUT_DIR, then output_dir, then .)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    const std::string verb_text = app.get_subcommands().front()->get_name();

    ntk::Scenario s;
    ntk::Verb verb;
    try {
        verb = ntk::parse_verb(verb_text);
        s = ntk::load_scenario(scenario_path);
        if (have_seed) s.seed = seed;
        if (out_dir.empty()) {
            if (const char* env = std::getenv("NTK_OUT_DIR"); env && *env)
                out_dir = env;
            else
                out_dir = s.output_dir.empty() ? "." : s.output_dir;
        }
        ntk::set_thread_count(threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency()));
    } catch (const ntk::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        ntk::RunResult r = ntk::run(s, verb, out_dir);
        std::cout << r.summary;
        return r.exit_code;
    } catch (const ntk::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error in " << verb_text << ": " << e.what() << "\n";
        return 1;
    }
}
