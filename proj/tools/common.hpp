#pragma once

// Shared plumbing for the daemon executables: duration-valued CLI options and
// clean SIGINT/SIGTERM shutdown.

#include <signal.h>

#include <chrono>
#include <string>

#include <CLI11.hpp>

#include "bank/harness.hpp"

namespace tools {

// Accepts "500ms", "30s", "2m" or a bare millisecond count.
inline void add_duration_option(CLI::App& app, const std::string& flag,
                                std::chrono::milliseconds& target, const std::string& desc,
                                const std::string& envname) {
    app.add_option_function<std::string>(
           flag,
           [&target](const std::string& v) { target = bank::harness::parse_duration(v); }, desc)
        ->envname(envname)
        ->default_str(std::to_string(target.count()) + "ms");
}

// Must be called before any thread is spawned so the mask is inherited.
inline void block_termination_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

inline void wait_for_termination() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    int sig = 0;
    sigwait(&set, &sig);
}

}  // namespace tools
