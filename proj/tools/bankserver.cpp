// Branch server daemon. Recovers from its checkpoint and message log, then
// serves clients and peers on port = branch id until SIGINT/SIGTERM.

#include <cstdio>
#include <optional>

#include <CLI11.hpp>

#include "bank/server.hpp"
#include "common.hpp"

int main(int argc, char** argv) {
    CLI::App app{"fault-tolerant bank branch server"};
    app.set_config("--config");

    bank::ServerConfig cfg;
    int branch = 0;
    std::string data_dir = ".";
    std::string crash_point;

    app.add_option("--branch", branch, "branch id / listen port; probed from the range when unset")
        ->envname("BANKSERVER_BRANCH");
    app.add_option("--data-dir", data_dir, "directory for log and checkpoint files")
        ->envname("BANKSERVER_DATA_DIR");
    app.add_option("--rm-host", cfg.rm_host, "recovery coordinator host")
        ->envname("BANKSERVER_RM_HOST");
    app.add_option("--rm-port", cfg.rm_port, "recovery coordinator port")
        ->envname("BANKSERVER_RM_PORT");
    app.add_option("--rm-checkpoint-port", cfg.rm_checkpoint_port,
                   "reserved checkpoint port on the coordinator")
        ->envname("BANKSERVER_RM_CHECKPOINT_PORT");
    app.add_option("--monitor-host", cfg.monitor_host, "monitor host")
        ->envname("BANKSERVER_MONITOR_HOST");
    app.add_option("--monitor-port", cfg.monitor_port, "monitor port")
        ->envname("BANKSERVER_MONITOR_PORT");
    app.add_option("--peer-host", cfg.peer_host, "host other branch servers listen on")
        ->envname("BANKSERVER_PEER_HOST");
    app.add_option("--self-host", cfg.self_host, "address advertised to the monitor")
        ->envname("BANKSERVER_SELF_HOST");
    app.add_option("--threshold", cfg.checkpoint_threshold,
                   "log records that trigger a checkpoint request")
        ->envname("BANKSERVER_THRESHOLD")
        ->check(CLI::PositiveNumber);
    tools::add_duration_option(app, "--heartbeat", cfg.heartbeat_interval,
                               "heartbeat interval", "BANKSERVER_HEARTBEAT");
    tools::add_duration_option(app, "--peer-timeout", cfg.peer_reply_timeout,
                               "wait for the peer's transfer reply", "BANKSERVER_PEER_TIMEOUT");
    tools::add_duration_option(app, "--msg-timeout", cfg.checkpoint_msg_timeout,
                               "wait for checkpoint session frames", "BANKSERVER_MSG_TIMEOUT");
    tools::add_duration_option(app, "--ack-timeout", cfg.ack_timeout,
                               "wait for the transfer OK to be consumed", "BANKSERVER_ACK_TIMEOUT");
    app.add_option("--crash-point", crash_point, "fault injection hook (testing)")
        ->envname("BANK_CRASH_POINT");

    CLI11_PARSE(app, argc, argv);

    if (branch != 0) cfg.branch = branch;
    cfg.data_dir = data_dir;
    if (!crash_point.empty()) {
        cfg.crash_point = bank::parse_crash_point(crash_point);
        if (!cfg.crash_point) {
            std::fprintf(stderr, "unknown crash point '%s'\n", crash_point.c_str());
            return 1;
        }
    }

    tools::block_termination_signals();
    try {
        bank::BankServer server(cfg);
        server.boot();
        tools::wait_for_termination();
        server.stop();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bankserver: %s\n", e.what());
        return 1;
    }
    return 0;
}
