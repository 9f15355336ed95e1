// Scenario harness: spawns a cluster on loopback, injects crashes, drives
// client operations and checks the outcome. Exit 0 on pass, 1 on a failed
// assertion, 2 on an environment problem.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "bank/scenario.hpp"

namespace {

std::filesystem::path self_dir() {
    char buf[4096];
    ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
    if (n <= 0) return ".";
    buf[n] = '\0';
    return std::filesystem::path(buf).parent_path();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fault scenario harness"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "execute a scenario file");
    std::string scenario;
    std::string bindir;
    std::string workdir;
    bool verbose = false;
    bool keep = false;
    run->add_option("scenario", scenario, "scenario file")->required();
    run->add_option("--bindir", bindir, "directory holding bankserver/bankrm/bankmon");
    run->add_option("--workdir", workdir, "scratch directory (default: fresh temp dir)");
    run->add_flag("--verbose,-v", verbose, "echo steps while running");
    run->add_flag("--keep", keep, "keep the scratch directory for inspection");

    CLI11_PARSE(app, argc, argv);

    bank::harness::ScenarioRunner::Options opt;
    opt.bindir = bindir.empty() ? self_dir() : std::filesystem::path(bindir);
    opt.verbose = verbose;
    bool temp_workdir = workdir.empty();
    if (temp_workdir) {
        std::string tmpl = (std::filesystem::temp_directory_path() / "faultlabXXXXXX").string();
        if (!mkdtemp(tmpl.data())) {
            std::fprintf(stderr, "ERROR: cannot create scratch directory\n");
            return 2;
        }
        opt.workdir = tmpl;
    } else {
        opt.workdir = workdir;
    }

    int rc = 2;
    {
        bank::harness::ScenarioRunner runner(opt);
        auto verdict = runner.run_file(scenario);
        using Kind = bank::harness::ScenarioRunner::Verdict::Kind;
        switch (verdict.kind) {
        case Kind::Pass:
            std::printf("PASS %s\n", scenario.c_str());
            rc = 0;
            break;
        case Kind::Fail:
            std::printf("FAIL %s line %d: %s\n", scenario.c_str(), verdict.line,
                        verdict.message.c_str());
            rc = 1;
            break;
        case Kind::EnvError:
            std::printf("ERROR %s line %d: %s\n", scenario.c_str(), verdict.line,
                        verdict.message.c_str());
            rc = 2;
            break;
        }
        if (rc != 0) std::fprintf(stderr, "scratch directory: %s\n", opt.workdir.c_str());
    }
    if (temp_workdir && !keep && rc == 0) {
        std::error_code ec;
        std::filesystem::remove_all(opt.workdir, ec);
    }
    return rc;
}
