// Heartbeat monitor daemon: asks the recovery coordinator to restart any
// registered branch server that goes silent.

#include <cstdio>

#include <CLI11.hpp>

#include "bank/monitor.hpp"
#include "common.hpp"

int main(int argc, char** argv) {
    CLI::App app{"bank heartbeat monitor"};
    app.set_config("--config");

    bank::MonitorConfig cfg;

    app.add_option("--port", cfg.port, "heartbeat port")->envname("BANKMON_PORT");
    app.add_option("--rm-host", cfg.rm_host, "recovery coordinator host")
        ->envname("BANKMON_RM_HOST");
    app.add_option("--rm-port", cfg.rm_port, "recovery coordinator port")
        ->envname("BANKMON_RM_PORT");
    tools::add_duration_option(app, "--timeout", cfg.timeout,
                               "silence after which a server counts as crashed", "BANKMON_TIMEOUT");
    tools::add_duration_option(app, "--check-interval", cfg.check_interval,
                               "how often to scan the registry (default: timeout/3)",
                               "BANKMON_CHECK_INTERVAL");

    CLI11_PARSE(app, argc, argv);

    tools::block_termination_signals();
    try {
        bank::Monitor monitor(cfg);
        monitor.boot();
        tools::wait_for_termination();
        monitor.stop();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bankmon: %s\n", e.what());
        return 1;
    }
    return 0;
}
