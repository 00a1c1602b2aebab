// Command-line driver: solve / validate scenario configs, print reference
// oracle values.  Artifacts land under --out, $EVI_OUT_ROOT, or ./evi-out.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "evi/evi.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 3;
constexpr int kExitSolver = 4;

fs::path output_root(const std::string& out_flag) {
    if (!out_flag.empty()) return fs::path(out_flag);
    if (const char* env = std::getenv("EVI_OUT_ROOT")) return fs::path(env);
    return fs::path("evi-out");
}

struct JobResult {
    std::string name;
    bool ok = false;
    int code = 0;
    std::string message;
};

JobResult solve_one(const std::string& config, const fs::path& root, bool verbose,
                    std::mutex& io) {
    JobResult r;
    r.name = config;
    try {
        const evi::Scenario scn = evi::load_scenario(config);
        r.name = scn.name;
        const fs::path dir = root / scn.name;
        const evi::RunArtifacts art = evi::run_scenario(scn, dir);
        r.ok = true;
        std::lock_guard<std::mutex> lock(io);
        std::cout << scn.name << ": ok -> " << dir.string() << "\n";
        if (verbose) {
            std::cout << "  workflow " << evi::workflow_name(scn.workflow) << ", grid n="
                      << scn.grid.n_steps << ", b=" << scn.grid.b << "\n";
            std::cout << "  periodicity_residual " << art.report.periodicity_residual
                      << ", outer_iterations " << art.report.outer_iterations << "\n";
            for (const auto& f : art.files) std::cout << "  wrote " << f << "\n";
        }
    } catch (const evi::ConfigError& e) {
        r.code = kExitConfig;
        r.message = e.what();
    } catch (const evi::ConvergenceError& e) {
        r.code = kExitSolver;
        r.message = e.what();
    } catch (const std::exception& e) {
        r.code = 1;
        r.message = e.what();
    }
    if (!r.ok) {
        std::lock_guard<std::mutex> lock(io);
        std::cerr << r.name << ": FAILED (" << r.message << ")\n";
    }
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"periodic evolution-inclusion solver"};
    app.require_subcommand(1);

    std::vector<std::string> configs;
    std::string out_flag;
    int jobs = 1;
    bool verbose = false;
    auto* solve = app.add_subcommand("solve", "run scenario configs and write artifacts");
    solve->add_option("config", configs, "config file(s)")->required()->expected(-1);
    solve->add_option("--out", out_flag, "output root directory");
    solve->add_option("--jobs", jobs, "parallel scenario workers")->check(CLI::PositiveNumber);
    solve->add_flag("--verbose", verbose, "per-scenario detail");

    std::string validate_config;
    auto* validate = app.add_subcommand("validate", "parse and validate a config, run nothing");
    validate->add_option("config", validate_config, "config file")->required();

    std::string oracle_name;
    auto* oracle = app.add_subcommand("oracle", "print closed-form reference values");
    oracle->add_option("name", oracle_name, "oracle name, or 'list'");

    CLI11_PARSE(app, argc, argv);

    if (solve->parsed()) {
        const fs::path root = output_root(out_flag);
        std::vector<JobResult> results(configs.size());
        std::mutex io;
        std::atomic<size_t> next{0};
        const size_t workers =
            std::min(static_cast<size_t>(std::max(jobs, 1)), configs.size());
        auto worker = [&]() {
            for (size_t i = next.fetch_add(1); i < configs.size(); i = next.fetch_add(1))
                results[i] = solve_one(configs[i], root, verbose, io);
        };
        if (workers <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
        int exit_code = 0;
        for (const auto& r : results)
            if (!r.ok) exit_code = exit_code == 0 ? r.code : exit_code;
        return exit_code;
    }

    if (validate->parsed()) {
        try {
            const evi::Scenario scn = evi::load_scenario(validate_config);
            std::cout << "valid: name=" << scn.name << " workflow="
                      << evi::workflow_name(scn.workflow) << " grid.n=" << scn.grid.n_steps
                      << " space=" << scn.space.size() << "\n";
            for (const auto& d : scn.defaults_applied) std::cout << "default: " << d << "\n";
            return 0;
        } catch (const evi::ConfigError& e) {
            std::cerr << "invalid: " << e.what() << "\n";
            return kExitConfig;
        } catch (const std::exception& e) {
            std::cerr << "invalid: " << e.what() << "\n";
            return kExitConfig;
        }
    }

    // oracle
    const auto& catalog = evi::oracle_catalog();
    if (oracle_name.empty() || oracle_name == "list") {
        for (const auto& [name, entry] : catalog)
            std::cout << name << "  " << evi::detail::fmt_g15(entry.value) << "  # "
                      << entry.what << "\n";
        return 0;
    }
    const auto it = catalog.find(oracle_name);
    if (it == catalog.end()) {
        std::cerr << "unknown oracle '" << oracle_name << "'; try 'oracle list'\n";
        return 2;
    }
    std::cout << evi::detail::fmt_g15(it->second.value) << "\n";
    return 0;
}
