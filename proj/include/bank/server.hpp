#pragma once

// The branch server: startup recovery, client request service, the two-sided
// transfer protocol with careful logging and built-in rollback, the follower
// half of the coordinated checkpoint, and the heartbeat sender.
//
// Locking: mutation_mu_ serializes state-changing work — each single account
// operation, each whole transfer (including its network exchange), and each
// checkpoint session. op_mu_ guards the account table itself so that reads
// can interleave with everything except the instant a mutation is applied.
// Every log append happens while holding mutation_mu_.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

#include "bank/crash.hpp"
#include "bank/durability.hpp"
#include "bank/ledger.hpp"
#include "bank/net.hpp"
#include "bank/wire.hpp"

namespace bank {

struct ServerConfig {
    std::optional<BranchId> branch;          // probed from the port range when unset
    std::filesystem::path data_dir = ".";
    std::string rm_host = "127.0.0.1";
    int rm_port = 3000;
    int rm_checkpoint_port = 3001;           // reserved; sessions ride the branch port
    std::string monitor_host = "127.0.0.1";
    int monitor_port = 3100;
    std::string peer_host = "127.0.0.1";     // host other branch ports live on
    std::string self_host = "127.0.0.1";     // advertised in REGISTER_MSG
    std::chrono::milliseconds heartbeat_interval{30000};
    int checkpoint_threshold = 10;
    std::chrono::milliseconds peer_reply_timeout{5000};
    std::chrono::milliseconds checkpoint_msg_timeout{5000};
    std::chrono::milliseconds ack_timeout{200};  // wait for the OK to be consumed
    std::optional<CrashPoint> crash_point;
};

struct TransferOutcome {
    bool committed = false;
    Amount new_src_balance{};
    std::string error;  // set when not committed
};

class BankServer {
public:
    explicit BankServer(ServerConfig cfg) : cfg_(std::move(cfg)), hooks_(cfg_.crash_point) {}

    ~BankServer() { stop(); }

    // Claims a port, recovers from stable storage (no request is served until
    // replay finished), then starts the listener and heartbeat threads.
    void boot() {
        if (cfg_.branch) {
            branch_ = *cfg_.branch;
            listener_ = net::Listener::bind(branch_);
        } else {
            bool bound = false;
            for (int p = kBranchMin; p <= kBranchMax; ++p) {
                try {
                    listener_ = net::Listener::bind(p);
                    branch_ = p;
                    bound = true;
                    break;
                } catch (const net::NetError&) {
                }
            }
            if (!bound)
                throw net::NetError("no free port in " + std::to_string(kBranchMin) + "-" +
                                    std::to_string(kBranchMax));
        }

        Recovered rec = recover(cfg_.data_dir, branch_);
        state_ = std::move(rec.state);
        log_ = LogStore(cfg_.data_dir, branch_, rec.record_count);
        info("branch %d up, %zu accounts, %zu pending log records", branch_,
             state_.accounts.size(), rec.record_count);

        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
        heartbeat_thread_ = std::thread([this] { heartbeat_loop(); });
    }

    void stop() {
        bool was_running = running_.exchange(false);
        if (!was_running) return;
        heartbeat_cv_.notify_all();
        listener_.shutdown();
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        if (heartbeat_thread_.joinable()) heartbeat_thread_.join();
        std::unique_lock lk(handler_mu_);
        handler_cv_.wait_for(lk, std::chrono::seconds(10), [this] { return handlers_ == 0; });
    }

    BranchId branch() const { return branch_; }

    // Source balance after the transfer attempt; restored exactly on rollback.
    TransferOutcome transfer_leading(AccountId src, AccountId dst, Amount amt);

private:
    struct MutationGuard {
        BankServer& s;
        std::unique_lock<std::mutex> lock;
        bool transfer;
        MutationGuard(BankServer& server, bool is_transfer)
            : s(server), lock(server.mutation_mu_), transfer(is_transfer) {
            if (transfer) s.in_transfer_ = true;
        }
        ~MutationGuard() {
            if (transfer) s.in_transfer_ = false;
        }
    };

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
                    info("connection error: %s", e.what());
                }
                std::lock_guard lk(handler_mu_);
                --handlers_;
                handler_cv_.notify_all();
            }).detach();
        }
    }

    void handle_connection(net::Socket conn) {
        auto line = conn.recv_line(cfg_.checkpoint_msg_timeout);
        if (!line) return;
        ControlMessage msg;
        try {
            msg = parse_control(*line);
        } catch (const ParseError& e) {
            conn.send_all(encode_control(RespErr{e.what()}));
            return;
        }

        if (auto* t = std::get_if<MsgTransfer>(&msg)) {
            transfer_receiving(*t, conn);
            return;
        }
        if (std::holds_alternative<MsgReadyForCheckpoint>(msg)) {
            checkpoint_follower(conn);
            return;
        }
        conn.send_all(serve_client(msg));
    }

    // ---- client requests ----------------------------------------------

    std::string serve_client(const ControlMessage& msg) {
        try {
            if (std::holds_alternative<ReqOpen>(msg)) {
                MutationGuard g(*this, false);
                AccountId acct;
                {
                    std::unique_lock op(op_mu_);
                    acct = open_account(state_);
                }
                log_.append(LogRecord::open(acct));
                maybe_request_checkpoint();
                return encode_control(RespOk{std::to_string(acct)});
            }
            if (auto* d = std::get_if<ReqDeposit>(&msg)) {
                MutationGuard g(*this, false);
                Amount bal;
                {
                    std::unique_lock op(op_mu_);
                    bal = deposit(state_, d->acct, d->amount);
                }
                log_.append(LogRecord::deposit(d->acct, d->amount));
                maybe_request_checkpoint();
                return encode_control(RespOk{format_amount(bal)});
            }
            if (auto* w = std::get_if<ReqWithdraw>(&msg)) {
                MutationGuard g(*this, false);
                Amount bal;
                {
                    std::unique_lock op(op_mu_);
                    bal = withdraw(state_, w->acct, w->amount);
                }
                log_.append(LogRecord::withdraw(w->acct, w->amount));
                maybe_request_checkpoint();
                return encode_control(RespOk{format_amount(bal)});
            }
            if (auto* b = std::get_if<ReqBalance>(&msg)) {
                std::shared_lock op(op_mu_);
                return encode_control(RespOk{format_amount(balance(state_, b->acct))});
            }
            if (std::holds_alternative<ReqAccounts>(msg)) {
                std::shared_lock op(op_mu_);
                std::string payload;
                for (AccountId a : list_accounts(state_)) {
                    if (!payload.empty()) payload += ' ';
                    payload += std::to_string(a);
                }
                return encode_control(RespOk{payload});
            }
            if (auto* t = std::get_if<ReqTransfer>(&msg)) {
                TransferOutcome out = transfer_leading(t->src, t->dst, t->amount);
                if (out.committed) return encode_control(RespOk{format_amount(out.new_src_balance)});
                return encode_control(RespErr{out.error});
            }
        } catch (const LedgerError& e) {
            return encode_control(RespErr{e.what()});
        }
        return encode_control(RespErr{"unsupported request"});
    }

    // ---- transfers ------------------------------------------------------

    void transfer_receiving(const MsgTransfer& t, net::Socket& conn) {
        MutationGuard g(*this, true);
        {
            std::shared_lock op(op_mu_);
            if (account_branch(t.dst) != branch_ || !state_.accounts.count(t.dst)) {
                // rejected before anything is logged
                conn.send_all(encode_control(MsgErr{branch_, unknown_account_msg(t.dst)}));
                return;
            }
        }
        log_.append(LogRecord::transfer_start(t.src, t.dst));
        hooks_.hit(CrashPoint::AfterStartLog);
        {
            std::unique_lock op(op_mu_);
            deposit(state_, t.dst, t.amount);
        }
        log_.append(LogRecord::deposit(t.dst, t.amount));
        hooks_.hit(CrashPoint::AfterDepositLog);

        hooks_.hit(CrashPoint::BeforeOkSend);
        bool delivered = true;
        try {
            conn.send_all(encode_control(MsgOk{branch_}));
        } catch (const net::NetError&) {
            delivered = false;
        }
        hooks_.hit(CrashPoint::AfterOkSend);
        if (delivered) {
            // A reset here means the leader never read the OK; an orderly
            // close means it did.
            delivered = conn.await_close(cfg_.ack_timeout) != net::Socket::CloseKind::Reset;
        }

        if (delivered) {
            hooks_.hit(CrashPoint::BeforeCommitLog);
            log_.append(LogRecord::transfer_commit(t.src, t.dst));
        } else {
            info("rolling back transfer %lld->%lld: OK not delivered", t.src, t.dst);
            {
                std::unique_lock op(op_mu_);
                withdraw(state_, t.dst, t.amount);
            }
            log_.append(LogRecord::withdraw(t.dst, t.amount));
            log_.append(LogRecord::transfer_cancel(t.src, t.dst));
        }
    }

    // ---- checkpoint follower -------------------------------------------

    void checkpoint_follower(net::Socket& conn) {
        // Blocks until in-flight mutations drain, then holds every mutation
        // off for the whole session. Reads and heartbeats keep running.
        MutationGuard g(*this, false);
        conn.send_all(encode_control(MsgReadyForCheckpoint{}));

        bool do_it = false;
        try {
            auto line = conn.recv_line(cfg_.checkpoint_msg_timeout);
            if (line) do_it = std::holds_alternative<MsgDoCheckpoint>(parse_control(*line));
        } catch (const std::exception&) {
            // timeout or garbage: treated as a canceled checkpoint
        }
        if (!do_it) {
            checkpoint_requested_ = false;
            info("checkpoint canceled, files untouched");
            return;
        }

        hooks_.hit(CrashPoint::BeforeCheckpointWrite);
        {
            std::shared_lock op(op_mu_);
            checkpoint_stage(cfg_.data_dir, state_);
        }
        hooks_.hit(CrashPoint::AfterCheckpointWrite);
        log_.delete_log();
        checkpoint_publish(cfg_.data_dir, branch_);
        checkpoint_requested_ = false;
        info("checkpoint written, message log truncated");
        try {
            conn.send_all(encode_control(MsgCheckpointDone{}));
        } catch (const net::NetError& e) {
            info("CHECKPOINT_DONE not delivered: %s", e.what());
        }
    }

    // Called after every append, still under mutation_mu_.
    void maybe_request_checkpoint() {
        if (in_transfer_ || checkpoint_requested_) return;
        if (log_.record_count() < static_cast<std::size_t>(cfg_.checkpoint_threshold)) return;
        try {
            net::send_frame(cfg_.rm_host, cfg_.rm_port,
                            encode_control(MsgCheckpointRequest{branch_}),
                            std::chrono::milliseconds(1000));
            checkpoint_requested_ = true;
        } catch (const net::NetError& e) {
            info("checkpoint request failed (will retry): %s", e.what());
        }
    }

    // ---- heartbeat -------------------------------------------------------

    void heartbeat_loop() {
        bool registered = false;
        while (running_) {
            try {
                if (!registered) {
                    net::send_frame(cfg_.monitor_host, cfg_.monitor_port,
                                    encode_control(MsgRegister{cfg_.self_host, branch_}),
                                    std::chrono::milliseconds(1000));
                    registered = true;
                } else {
                    net::send_frame(cfg_.monitor_host, cfg_.monitor_port,
                                    encode_control(MsgHeartbeat{branch_}),
                                    std::chrono::milliseconds(1000));
                }
            } catch (const net::NetError& e) {
                info("monitor unreachable: %s", e.what());
            }
            std::unique_lock lk(heartbeat_mu_);
            heartbeat_cv_.wait_for(lk, cfg_.heartbeat_interval, [this] { return !running_; });
        }
    }

    void info(const char* fmt, ...) {
        std::va_list ap;
        va_start(ap, fmt);
        std::fprintf(stderr, "[bankserver %d] ", branch_);
        std::vfprintf(stderr, fmt, ap);
        std::fputc('\n', stderr);
        va_end(ap);
    }

    ServerConfig cfg_;
    CrashHooks hooks_;
    BranchId branch_ = 0;

    net::Listener listener_;
    BranchState state_;
    LogStore log_;

    std::mutex mutation_mu_;
    std::shared_mutex op_mu_;
    bool in_transfer_ = false;           // guarded by mutation_mu_
    bool checkpoint_requested_ = false;  // guarded by mutation_mu_

    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::thread heartbeat_thread_;
    std::mutex heartbeat_mu_;
    std::condition_variable heartbeat_cv_;
    std::mutex handler_mu_;
    std::condition_variable handler_cv_;
    int handlers_ = 0;
};

inline TransferOutcome BankServer::transfer_leading(AccountId src, AccountId dst, Amount amt) {
    TransferOutcome out;
    if (account_branch(src) != branch_) {
        out.error = unknown_account_msg(src);
        return out;
    }
    MutationGuard g(*this, true);

    bool local = account_branch(dst) == branch_;
    {
        // funds check precedes any logging; a rejected transfer leaves no trace
        std::shared_lock op(op_mu_);
        auto it = state_.accounts.find(src);
        if (it == state_.accounts.end()) {
            out.error = unknown_account_msg(src);
            return out;
        }
        if (amt.cents <= 0) {
            out.error = "Amount must be positive.";
            return out;
        }
        if (it->second < amt) {
            out.error = "Insufficient funds in account #" + std::to_string(src) + ".";
            return out;
        }
        if (local && !state_.accounts.count(dst)) {
            out.error = unknown_account_msg(dst);
            return out;
        }
    }

    log_.append(LogRecord::transfer_start(src, dst));
    hooks_.hit(CrashPoint::AfterStartLog);
    {
        std::unique_lock op(op_mu_);
        out.new_src_balance = withdraw(state_, src, amt);
    }
    log_.append(LogRecord::withdraw(src, amt));
    hooks_.hit(CrashPoint::AfterWithdrawLog);

    if (local) {
        {
            std::unique_lock op(op_mu_);
            deposit(state_, dst, amt);
        }
        log_.append(LogRecord::deposit(dst, amt));
        log_.append(LogRecord::transfer_commit(src, dst));
        out.committed = true;
        return out;  // no DEPENDENCY for a local transfer
    }

    bool peer_ok = false;
    std::string peer_error = "no response from branch " + std::to_string(account_branch(dst));
    hooks_.hit(CrashPoint::BeforePeerSend);
    try {
        net::Socket peer =
            net::connect_to(cfg_.peer_host, account_branch(dst), cfg_.peer_reply_timeout);
        peer.send_all(encode_control(MsgTransfer{branch_, src, dst, amt}));
        hooks_.hit(CrashPoint::AfterPeerSend);
        auto line = peer.recv_line(cfg_.peer_reply_timeout);
        if (line) {
            ControlMessage reply = parse_control(*line);
            if (std::holds_alternative<MsgOk>(reply)) {
                peer_ok = true;
            } else if (auto* err = std::get_if<MsgErr>(&reply)) {
                peer_error = err->msg;
            }
        }
    } catch (const std::exception& e) {
        peer_error = e.what();
    }

    if (peer_ok) {
        hooks_.hit(CrashPoint::BeforeCommitLog);
        log_.append(LogRecord::transfer_commit(src, dst));
        try {
            net::send_frame(cfg_.rm_host, cfg_.rm_port,
                            encode_control(MsgDependency{branch_, account_branch(dst)}),
                            std::chrono::milliseconds(1000));
        } catch (const net::NetError& e) {
            info("dependency report failed: %s", e.what());
        }
        out.committed = true;
        return out;
    }

    // rollback: compensating deposit, logged like any other operation
    info("rolling back transfer %lld->%lld: %s", src, dst, peer_error.c_str());
    {
        std::unique_lock op(op_mu_);
        out.new_src_balance = deposit(state_, src, amt);
    }
    log_.append(LogRecord::deposit(src, amt));
    log_.append(LogRecord::transfer_cancel(src, dst));
    out.error = peer_error;
    return out;
}

}  // namespace bank
