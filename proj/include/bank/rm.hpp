#pragma once

// The recovery coordinator: listens on one port for DEPENDENCY, CHECKPOINT
// and RESTART frames, maintains the dependency pool, drives two-phase-commit
// checkpoint sessions strictly one at a time in arrival order, and respawns
// crashed branch servers.
//
// Each session member is handled over a single coordinator-initiated
// connection to its branch port: READY query, READY reply, then DO/CANCEL
// and DONE on the same socket.

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdarg>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bank/dependency_pool.hpp"
#include "bank/net.hpp"
#include "bank/wire.hpp"

namespace bank {

struct RmConfig {
    int port = 3000;
    int checkpoint_port = 3001;  // reserved; unused by default
    std::string branch_host = "127.0.0.1";
    std::chrono::milliseconds msg_timeout{5000};
    std::string restart_cmd;  // e.g. "bankserver --branch {branch} --data-dir /var/bank"
    std::chrono::milliseconds restart_grace{10000};
    std::filesystem::path event_log;  // empty: stderr only
};

enum class SessionOutcome { Committed, Canceled, Partial };

inline const char* to_string(SessionOutcome o) {
    switch (o) {
    case SessionOutcome::Committed: return "committed";
    case SessionOutcome::Canceled: return "canceled";
    case SessionOutcome::Partial: return "partial";
    }
    return "?";
}

// One line per coordinator event: "EV <steady-ns> <KIND> <args...>".
struct RmEvent {
    long long ns = 0;
    std::string kind;
    std::vector<std::string> args;
};

inline std::vector<RmEvent> read_rm_events(const std::filesystem::path& path) {
    std::vector<RmEvent> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        auto tok = detail::split_tokens(line);
        if (tok.size() < 3 || tok[0] != "EV") continue;
        RmEvent ev;
        ev.ns = std::stoll(tok[1]);
        ev.kind = tok[2];
        ev.args.assign(tok.begin() + 3, tok.end());
        out.push_back(std::move(ev));
    }
    return out;
}

class RecoveryCoordinator {
public:
    explicit RecoveryCoordinator(RmConfig cfg) : cfg_(std::move(cfg)) {}
    ~RecoveryCoordinator() { stop(); }

    void boot() {
        if (!cfg_.event_log.empty()) {
            events_out_.open(cfg_.event_log, std::ios::app);
            if (!events_out_) throw std::runtime_error("cannot open " + cfg_.event_log.string());
        }
        listener_ = net::Listener::bind(cfg_.port);
        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
        session_thread_ = std::thread([this] { session_loop(); });
        info("listening on port %d", cfg_.port);
    }

    void stop() {
        bool was_running = running_.exchange(false);
        if (!was_running) return;
        queue_cv_.notify_all();
        listener_.shutdown();
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        if (session_thread_.joinable()) session_thread_.join();
        std::unique_lock lk(handler_mu_);
        handler_cv_.wait_for(lk, std::chrono::seconds(10), [this] { return handlers_ == 0; });
    }

    std::vector<DependencyPool::Group> pool_groups() {
        std::lock_guard lk(pool_mu_);
        return pool_.groups();
    }

    // Runs one coordinated checkpoint for the requester's dependency group
    // (or for just the requester when it has none).
    SessionOutcome coordinate_checkpoint(BranchId requester) {
        DependencyPool::Group group;
        {
            std::lock_guard lk(pool_mu_);
            auto g = pool_.find_group(requester);
            group = g ? *g : DependencyPool::Group{requester};
        }
        std::string members;
        for (BranchId b : group) members += (members.empty() ? "" : ",") + std::to_string(b);
        event("SESSION_START " + std::to_string(requester) + " " + members);

        // Phase 1: every member must answer READY_FOR_CHECKPOINT.
        std::vector<net::Socket> conns;
        std::vector<BranchId> order;
        bool all_ready = true;
        for (BranchId b : group) {
            try {
                net::Socket s = net::connect_to(cfg_.branch_host, b, cfg_.msg_timeout);
                s.send_all(encode_control(MsgReadyForCheckpoint{}));
                auto line = s.recv_line(cfg_.msg_timeout);
                if (!line || !std::holds_alternative<MsgReadyForCheckpoint>(parse_control(*line))) {
                    all_ready = false;
                    break;
                }
                conns.push_back(std::move(s));
                order.push_back(b);
            } catch (const std::exception& e) {
                info("branch %d not ready: %s", b, e.what());
                all_ready = false;
                break;
            }
        }
        if (!all_ready) {
            for (std::size_t i = 0; i < conns.size(); ++i) {
                try {
                    conns[i].send_all(encode_control(MsgCancelCheckpoint{}));
                } catch (const std::exception&) {
                }
            }
            event("SESSION_END " + std::to_string(requester) + " canceled");
            return SessionOutcome::Canceled;
        }

        // Phase 2: everyone confirmed; tell them to write and wait for DONE.
        bool all_done = true;
        for (std::size_t i = 0; i < conns.size(); ++i) {
            try {
                conns[i].send_all(encode_control(MsgDoCheckpoint{}));
                auto line = conns[i].recv_line(cfg_.msg_timeout);
                if (!line || !std::holds_alternative<MsgCheckpointDone>(parse_control(*line)))
                    all_done = false;
            } catch (const std::exception& e) {
                info("no CHECKPOINT_DONE from branch %d: %s", order[i], e.what());
                all_done = false;
            }
        }

        std::lock_guard lk(pool_mu_);
        if (all_done) {
            pool_.remove_members(group);
            event_pool_locked();
            event("SESSION_END " + std::to_string(requester) + " committed");
            return SessionOutcome::Committed;
        }
        // checkpoint could not be done for all members; keep the group so a
        // later request retries the whole set
        pool_.ensure_group(group);
        event_pool_locked();
        event("SESSION_END " + std::to_string(requester) + " partial");
        return SessionOutcome::Partial;
    }

    void restart_server(BranchId b) {
        event("RESTART_REQ " + std::to_string(b));
        if (cfg_.restart_cmd.empty()) {
            info("restart of %d requested but no restart command configured", b);
            event("SPAWN_FAILED " + std::to_string(b));
            return;
        }
        {
            std::lock_guard lk(spawn_mu_);
            auto now = std::chrono::steady_clock::now();
            auto it = last_spawn_.find(b);
            if (it != last_spawn_.end() && now - it->second < cfg_.restart_grace) {
                event("SPAWN_SUPPRESSED " + std::to_string(b));
                return;
            }
            last_spawn_[b] = now;
        }
        std::string cmd = cfg_.restart_cmd;
        const std::string placeholder = "{branch}";
        for (std::size_t pos = cmd.find(placeholder); pos != std::string::npos;
             pos = cmd.find(placeholder, pos))
            cmd.replace(pos, placeholder.size(), std::to_string(b));

        pid_t pid = spawn_detached(cmd);
        if (pid > 0) {
            info("restarted branch %d: %s (pid %d)", b, cmd.c_str(), pid);
            event("SPAWN " + std::to_string(b) + " " + std::to_string(pid));
        } else {
            info("failed to spawn '%s'", cmd.c_str());
            event("SPAWN_FAILED " + std::to_string(b));
        }
    }

private:
    void accept_loop() {
        while (running_) {
            auto conn = listener_.accept();
            if (!conn) break;
            {
                std::lock_guard lk(handler_mu_);
                ++handlers_;
            }
            std::thread([this, c = std::move(*conn)]() mutable {
                try {
                    handle_connection(std::move(c));
                } catch (const std::exception& e) {
                    info("dropping frame: %s", e.what());
                }
                std::lock_guard lk(handler_mu_);
                --handlers_;
                handler_cv_.notify_all();
            }).detach();
        }
    }

    void handle_connection(net::Socket conn) {
        auto line = conn.recv_line(cfg_.msg_timeout);
        if (!line) return;
        ControlMessage msg;
        try {
            msg = parse_control(*line);
        } catch (const ParseError& e) {
            info("dropping malformed frame: %s", e.what());
            return;
        }
        if (auto* d = std::get_if<MsgDependency>(&msg)) {
            if (d->a == d->b) {
                info("ignoring self dependency of branch %d", d->a);
                return;
            }
            std::lock_guard lk(pool_mu_);
            pool_.record_dependency(d->a, d->b);
            event("DEPENDENCY " + std::to_string(d->a) + " " + std::to_string(d->b));
            event_pool_locked();
            return;
        }
        if (auto* c = std::get_if<MsgCheckpointRequest>(&msg)) {
            std::lock_guard lk(queue_mu_);
            queue_.push_back(c->branch);
            queue_cv_.notify_one();
            return;
        }
        if (auto* r = std::get_if<MsgRestart>(&msg)) {
            restart_server(r->branch);
            return;
        }
        info("dropping unexpected frame: %s", line->c_str());
    }

    // Checkpoint coordinations run strictly one at a time in arrival order.
    void session_loop() {
        while (running_) {
            BranchId requester = 0;
            {
                std::unique_lock lk(queue_mu_);
                queue_cv_.wait(lk, [this] { return !running_ || !queue_.empty(); });
                if (!running_) return;
                requester = queue_.front();
                queue_.pop_front();
            }
            coordinate_checkpoint(requester);
        }
    }

    // Double-fork so the server outlives the coordinator and leaves no zombie.
    pid_t spawn_detached(const std::string& cmd) {
        int fds[2];
        if (pipe(fds) != 0) return -1;
        pid_t child = fork();
        if (child < 0) {
            close(fds[0]);
            close(fds[1]);
            return -1;
        }
        if (child == 0) {
            close(fds[0]);
            setsid();
            pid_t grandchild = fork();
            if (grandchild == 0) {
                close(fds[1]);
                execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
                _exit(127);
            }
            ssize_t ignored = write(fds[1], &grandchild, sizeof grandchild);
            (void)ignored;
            _exit(grandchild > 0 ? 0 : 1);
        }
        close(fds[1]);
        pid_t grandchild = -1;
        ssize_t n = read(fds[0], &grandchild, sizeof grandchild);
        close(fds[0]);
        int status = 0;
        waitpid(child, &status, 0);
        if (n != sizeof grandchild) return -1;
        return grandchild;
    }

    void event(const std::string& text) {
        auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                      std::chrono::steady_clock::now().time_since_epoch())
                      .count();
        std::lock_guard lk(event_mu_);
        if (events_out_) events_out_ << "EV " << ns << " " << text << std::endl;
        std::fprintf(stderr, "[rm] %s\n", text.c_str());
    }

    // caller holds pool_mu_
    void event_pool_locked() {
        std::string text = "POOL";
        for (const auto& g : pool_.groups()) {
            text += ' ';
            bool first = true;
            for (BranchId b : g) {
                text += (first ? "" : ",") + std::to_string(b);
                first = false;
            }
        }
        event(text);
    }

    void info(const char* fmt, ...) {
        std::va_list ap;
        va_start(ap, fmt);
        std::fprintf(stderr, "[rm] ");
        std::vfprintf(stderr, fmt, ap);
        std::fputc('\n', stderr);
        va_end(ap);
    }

    RmConfig cfg_;
    net::Listener listener_;

    std::mutex pool_mu_;
    DependencyPool pool_;

    std::mutex queue_mu_;
    std::condition_variable queue_cv_;
    std::deque<BranchId> queue_;

    std::mutex spawn_mu_;
    std::map<BranchId, std::chrono::steady_clock::time_point> last_spawn_;

    std::mutex event_mu_;
    std::ofstream events_out_;

    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::thread session_thread_;
    std::mutex handler_mu_;
    std::condition_variable handler_cv_;
    int handlers_ = 0;
};

}  // namespace bank
