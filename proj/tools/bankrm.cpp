// Recovery coordinator daemon: dependency pool, FIFO checkpoint sessions,
// crashed-server restarts.

#include <cstdio>

#include <CLI11.hpp>

#include "bank/rm.hpp"
#include "common.hpp"

int main(int argc, char** argv) {
    CLI::App app{"bank recovery coordinator"};
    app.set_config("--config");

    bank::RmConfig cfg;
    std::string event_log;

    app.add_option("--port", cfg.port, "request port")->envname("BANKRM_PORT");
    app.add_option("--checkpoint-port", cfg.checkpoint_port, "reserved checkpoint port")
        ->envname("BANKRM_CHECKPOINT_PORT");
    app.add_option("--branch-host", cfg.branch_host, "host the branch servers listen on")
        ->envname("BANKRM_BRANCH_HOST");
    tools::add_duration_option(app, "--msg-timeout", cfg.msg_timeout,
                               "wait for session replies", "BANKRM_MSG_TIMEOUT");
    app.add_option("--restart-cmd", cfg.restart_cmd,
                   "command template for restarting a server; {branch} is substituted")
        ->envname("BANKRM_RESTART_CMD");
    tools::add_duration_option(app, "--restart-grace", cfg.restart_grace,
                               "suppress duplicate restarts of one branch for this long",
                               "BANKRM_RESTART_GRACE");
    app.add_option("--event-log", event_log, "append machine-readable events to this file")
        ->envname("BANKRM_EVENT_LOG");

    CLI11_PARSE(app, argc, argv);
    cfg.event_log = event_log;

    tools::block_termination_signals();
    try {
        bank::RecoveryCoordinator rm(cfg);
        rm.boot();
        tools::wait_for_termination();
        rm.stop();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bankrm: %s\n", e.what());
        return 1;
    }
    return 0;
}
