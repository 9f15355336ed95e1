#pragma once

// Heartbeat watchdog. Branch servers register once and then heartbeat on a
// fixed interval; a registered server silent for longer than the timeout is
// reported to the recovery coordinator exactly once per crash epoch (the
// flag clears when the restarted server re-registers).

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "bank/net.hpp"
#include "bank/wire.hpp"

namespace bank {

// Pure bookkeeping; the Monitor wraps it with sockets and a timer thread.
class HeartbeatRegistry {
public:
    using Clock = std::chrono::steady_clock;

    struct Entry {
        std::string host;
        Clock::time_point last_seen;
        bool flagged = false;
    };

    void register_server(const std::string& host, BranchId b, Clock::time_point now) {
        entries_[b] = Entry{host, now, false};
    }

    // Unknown senders are dropped: they must register first.
    bool heartbeat(BranchId b, Clock::time_point now) {
        auto it = entries_.find(b);
        if (it == entries_.end()) return false;
        it->second.last_seen = now;
        return true;
    }

    // Asks `request_restart` for every unflagged entry that went silent; the
    // entry is flagged only when the request actually went out, so a failed
    // attempt is retried on the next pass.
    std::vector<BranchId> check(Clock::time_point now, std::chrono::milliseconds timeout,
                                const std::function<bool(BranchId)>& request_restart) {
        std::vector<BranchId> restarted;
        for (auto& [b, e] : entries_) {
            if (e.flagged || now - e.last_seen <= timeout) continue;
            if (request_restart(b)) {
                e.flagged = true;
                restarted.push_back(b);
            }
        }
        return restarted;
    }

    const std::map<BranchId, Entry>& entries() const { return entries_; }

private:
    std::map<BranchId, Entry> entries_;
};

struct MonitorConfig {
    int port = 3100;
    std::string rm_host = "127.0.0.1";
    int rm_port = 3000;
    std::chrono::milliseconds timeout{30000};
    std::chrono::milliseconds check_interval{0};  // 0: timeout / 3
};

class Monitor {
public:
    explicit Monitor(MonitorConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.check_interval.count() <= 0) cfg_.check_interval = cfg_.timeout / 3;
    }
    ~Monitor() { stop(); }

    void boot() {
        listener_ = net::Listener::bind(cfg_.port);
        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
        checker_thread_ = std::thread([this] { checker_loop(); });
        info("listening on port %d, timeout %lld ms", cfg_.port,
             static_cast<long long>(cfg_.timeout.count()));
    }

    void stop() {
        bool was_running = running_.exchange(false);
        if (!was_running) return;
        checker_cv_.notify_all();
        listener_.shutdown();
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        if (checker_thread_.joinable()) checker_thread_.join();
    }

private:
    void accept_loop() {
        while (running_) {
            auto conn = listener_.accept();
            if (!conn) break;
            try {
                auto line = conn->recv_line(std::chrono::milliseconds(2000));
                if (!line) continue;
                ControlMessage msg = parse_control(*line);
                auto now = HeartbeatRegistry::Clock::now();
                std::lock_guard lk(mu_);
                if (auto* r = std::get_if<MsgRegister>(&msg)) {
                    registry_.register_server(r->host, r->branch, now);
                    info("registered branch %d at %s", r->branch, r->host.c_str());
                } else if (auto* h = std::get_if<MsgHeartbeat>(&msg)) {
                    if (!registry_.heartbeat(h->branch, now))
                        info("heartbeat from unregistered branch %d ignored", h->branch);
                } else {
                    info("ignoring unexpected frame: %s", line->c_str());
                }
            } catch (const std::exception& e) {
                info("dropping frame: %s", e.what());
            }
        }
    }

    void checker_loop() {
        while (running_) {
            {
                std::unique_lock lk(checker_mu_);
                checker_cv_.wait_for(lk, cfg_.check_interval, [this] { return !running_; });
            }
            if (!running_) break;
            std::lock_guard lk(mu_);
            registry_.check(HeartbeatRegistry::Clock::now(), cfg_.timeout, [this](BranchId b) {
                try {
                    net::send_frame(cfg_.rm_host, cfg_.rm_port, encode_control(MsgRestart{b}),
                                    std::chrono::milliseconds(1000));
                    info("branch %d silent, restart requested", b);
                    return true;
                } catch (const net::NetError& e) {
                    info("cannot reach recovery coordinator: %s", e.what());
                    return false;
                }
            });
        }
    }

    void info(const char* fmt, ...) {
        std::va_list ap;
        va_start(ap, fmt);
        std::fprintf(stderr, "[monitor] ");
        std::vfprintf(stderr, fmt, ap);
        std::fputc('\n', stderr);
        va_end(ap);
    }

    MonitorConfig cfg_;
    net::Listener listener_;

    std::mutex mu_;
    HeartbeatRegistry registry_;

    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::thread checker_thread_;
    std::mutex checker_mu_;
    std::condition_variable checker_cv_;
};

}  // namespace bank
