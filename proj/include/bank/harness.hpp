#pragma once

// Process-level utilities for driving a real cluster on loopback: spawning
// and killing components, polling liveness, summing balances across branches,
// and checking the transfer-block shape of log files.

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "bank/client.hpp"
#include "bank/durability.hpp"
#include "bank/wire.hpp"

namespace bank::harness {

using std::chrono::milliseconds;

// "500ms", "30s", "2m", or a bare number of milliseconds.
inline milliseconds parse_duration(const std::string& s) {
    if (s.empty()) throw std::invalid_argument("empty duration");
    std::size_t i = 0;
    long long v = 0;
    for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i) v = v * 10 + (s[i] - '0');
    if (i == 0) throw std::invalid_argument("bad duration: " + s);
    std::string unit = s.substr(i);
    if (unit.empty() || unit == "ms") return milliseconds(v);
    if (unit == "s") return milliseconds(v * 1000);
    if (unit == "m") return milliseconds(v * 60000);
    throw std::invalid_argument("bad duration unit: " + s);
}

class ChildProcess {
public:
    ChildProcess() = default;
    explicit ChildProcess(pid_t pid) : pid_(pid) {}

    pid_t pid() const { return pid_; }
    bool valid() const { return pid_ > 0; }

    bool running() {
        if (pid_ <= 0) return false;
        int status = 0;
        pid_t r = ::waitpid(pid_, &status, WNOHANG);
        if (r == pid_) {
            pid_ = -pid_;  // reaped
            return false;
        }
        return r == 0;
    }

    void kill9() {
        if (pid_ <= 0) return;
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
        pid_ = -pid_;
    }

    // Waits for self-termination (e.g. a crash point firing).
    bool wait_exit(milliseconds timeout) {
        auto deadline = std::chrono::steady_clock::now() + timeout;
        while (std::chrono::steady_clock::now() < deadline) {
            if (!running()) return true;
            std::this_thread::sleep_for(milliseconds(10));
        }
        return !running();
    }

private:
    pid_t pid_ = -1;
};

// Fork/exec with stdout+stderr appended to a log file.
inline ChildProcess spawn(const std::vector<std::string>& argv,
                          const std::filesystem::path& output_file,
                          const std::vector<std::string>& extra_env = {}) {
    std::vector<char*> cargv;
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);

    pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
        int fd = ::open(output_file.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        if (fd >= 0) {
            ::dup2(fd, 1);
            ::dup2(fd, 2);
            ::close(fd);
        }
        for (const auto& e : extra_env) ::putenv(const_cast<char*>(strdup(e.c_str())));
        ::execv(cargv[0], cargv.data());
        ::_exit(127);
    }
    return ChildProcess(pid);
}

// A server is up once it answers a request (not merely once it accepts:
// connections queue during recovery).
inline bool wait_server_up(const std::string& host, int port, milliseconds timeout) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
        try {
            if (client_request(host, port, ReqAccounts{}, milliseconds(500)).ok) return true;
        } catch (const std::exception&) {
        }
        std::this_thread::sleep_for(milliseconds(20));
    }
    return false;
}

inline bool wait_port_down(const std::string& host, int port, milliseconds timeout) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
        try {
            net::Socket s = net::connect_to(host, port, milliseconds(200));
        } catch (const net::NetError&) {
            return true;
        }
        std::this_thread::sleep_for(milliseconds(20));
    }
    return false;
}

inline std::vector<AccountId> list_remote_accounts(const std::string& host, int port) {
    Reply r = client_request(host, port, ReqAccounts{});
    if (!r.ok) throw std::runtime_error("ACCOUNTS failed: " + r.text);
    std::vector<AccountId> out;
    std::size_t i = 0;
    while (i < r.text.size()) {
        std::size_t j = r.text.find(' ', i);
        if (j == std::string::npos) j = r.text.size();
        out.push_back(std::stoll(r.text.substr(i, j - i)));
        i = j + 1;
    }
    return out;
}

inline Amount remote_balance(const std::string& host, int port, AccountId acct) {
    Reply r = client_request(host, port, ReqBalance{acct});
    if (!r.ok) throw std::runtime_error("BALANCE failed: " + r.text);
    return parse_amount(r.text);
}

// Exact sum over every account of every listed branch. Throws if any branch
// is unreachable: a partial sum would be meaningless.
inline Amount global_sum(const std::string& host, const std::vector<int>& ports) {
    Amount sum{0};
    for (int port : ports)
        for (AccountId acct : list_remote_accounts(host, port))
            sum = sum + remote_balance(host, port, acct);
    return sum;
}

// Careful-logging shape: every TRANSFER START is closed by exactly one
// COMMIT/CANCEL with the same account pair; only the final block may be open.
inline bool log_shape_ok(const std::filesystem::path& log_file, std::string* why = nullptr) {
    auto fail = [&](const std::string& reason) {
        if (why) *why = reason;
        return false;
    };
    if (!std::filesystem::exists(log_file)) return true;
    auto lines = detail::read_lines(log_file);
    bool in_block = false;
    AccountId src = 0, dst = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        LogRecord r;
        try {
            r = parse_log_line(lines[i]).second;
        } catch (const ParseError& e) {
            return fail("line " + std::to_string(i + 1) + ": " + e.what());
        }
        switch (r.kind) {
        case LogRecord::Kind::TransferStart:
            if (in_block) return fail("line " + std::to_string(i + 1) + ": nested START");
            in_block = true;
            src = r.src;
            dst = r.dst;
            break;
        case LogRecord::Kind::TransferCommit:
        case LogRecord::Kind::TransferCancel:
            if (!in_block) return fail("line " + std::to_string(i + 1) + ": stray close");
            if (r.src != src || r.dst != dst)
                return fail("line " + std::to_string(i + 1) + ": close pair mismatch");
            in_block = false;
            break;
        default:
            break;
        }
    }
    return true;  // a final open block is legal: that server crashed mid-transfer
}

}  // namespace bank::harness
