#pragma once

// Text encodings for the three external surfaces: message-log files,
// checkpoint files, and the newline-delimited TCP frames. Every value has
// exactly one canonical frame; parse(encode(x)) == x.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bank/types.hpp"

namespace bank {

// ---------------------------------------------------------------------------
// Log records
// ---------------------------------------------------------------------------

// One message-log entry. Only operations with site effect are ever logged;
// balance queries never appear here.
struct LogRecord {
    enum class Kind { Open, Deposit, Withdraw, TransferStart, TransferCommit, TransferCancel };

    Kind kind = Kind::Open;
    AccountId acct = 0;  // Open/Deposit/Withdraw
    Amount amount{};     // Deposit/Withdraw
    AccountId src = 0;   // Transfer*
    AccountId dst = 0;   // Transfer*

    friend bool operator==(const LogRecord&, const LogRecord&) = default;

    static LogRecord open(AccountId a) { return {Kind::Open, a, {}, 0, 0}; }
    static LogRecord deposit(AccountId a, Amount amt) { return {Kind::Deposit, a, amt, 0, 0}; }
    static LogRecord withdraw(AccountId a, Amount amt) { return {Kind::Withdraw, a, amt, 0, 0}; }
    static LogRecord transfer_start(AccountId s, AccountId d) {
        return {Kind::TransferStart, 0, {}, s, d};
    }
    static LogRecord transfer_commit(AccountId s, AccountId d) {
        return {Kind::TransferCommit, 0, {}, s, d};
    }
    static LogRecord transfer_cancel(AccountId s, AccountId d) {
        return {Kind::TransferCancel, 0, {}, s, d};
    }
};

struct CheckpointEntry {
    AccountId acct = 0;
    Amount balance{};

    friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

namespace detail {

inline bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    return true;
}

// Positive integer token; accounts are not range-checked so that historical
// lines round-trip verbatim.
inline long long parse_uint(const std::string& s, const char* what) {
    if (!all_digits(s)) throw ParseError(std::string("bad ") + what + ": '" + s + "'");
    long long v = 0;
    for (char c : s) {
        if (v > (INT64_MAX - 9) / 10) throw ParseError(std::string(what) + " overflow: " + s);
        v = v * 10 + (c - '0');
    }
    return v;
}

inline std::vector<std::string> split_tokens(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = s.find(' ', i);
        if (j == std::string::npos) j = s.size();
        out.push_back(s.substr(i, j - i));
        i = j + 1;
    }
    if (!s.empty() && s.back() == ' ') out.push_back("");
    return out;
}

// "BANK #<branch>:<body>"
inline std::pair<BranchId, std::string> split_bank_prefix(const std::string& line) {
    if (line.rfind("BANK #", 0) != 0) throw ParseError("line does not start with 'BANK #'");
    std::size_t colon = line.find(':', 6);
    if (colon == std::string::npos) throw ParseError("missing ':' after branch number");
    std::string num = line.substr(6, colon - 6);
    BranchId branch = static_cast<BranchId>(parse_uint(num, "branch number"));
    return {branch, line.substr(colon + 1)};
}

inline std::pair<AccountId, AccountId> parse_account_pair(const std::string& s) {
    std::size_t dash = s.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 >= s.size())
        throw ParseError("expected '<src>-<dst>' account pair: '" + s + "'");
    AccountId src = parse_uint(s.substr(0, dash), "source account");
    AccountId dst = parse_uint(s.substr(dash + 1), "destination account");
    return {src, dst};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Message-log file lines
// ---------------------------------------------------------------------------

inline std::string encode_log_line(BranchId branch, const LogRecord& r) {
    std::string out = "BANK #" + std::to_string(branch) + ":";
    switch (r.kind) {
    case LogRecord::Kind::Open:
        return out + "OPEN " + std::to_string(r.acct);
    case LogRecord::Kind::Deposit:
        return out + "DEPOSIT " + std::to_string(r.acct) + " " + format_amount(r.amount);
    case LogRecord::Kind::Withdraw:
        return out + "WITHDRAW " + std::to_string(r.acct) + " " + format_amount(r.amount);
    case LogRecord::Kind::TransferStart:
        return out + "TRANSFER START " + std::to_string(r.src) + "-" + std::to_string(r.dst);
    case LogRecord::Kind::TransferCommit:
        return out + "TRANSFER COMMIT " + std::to_string(r.src) + "-" + std::to_string(r.dst);
    case LogRecord::Kind::TransferCancel:
        return out + "TRANSFER CANCEL " + std::to_string(r.src) + "-" + std::to_string(r.dst);
    }
    throw std::logic_error("unreachable");
}

inline std::pair<BranchId, LogRecord> parse_log_line(const std::string& line) {
    auto [branch, body] = detail::split_bank_prefix(line);
    auto tok = detail::split_tokens(body);
    if (tok.empty()) throw ParseError("empty log record body");
    const std::string& kw = tok[0];
    if (kw == "OPEN" && tok.size() == 2) {
        return {branch, LogRecord::open(detail::parse_uint(tok[1], "account"))};
    }
    if (kw == "DEPOSIT" && tok.size() == 3) {
        return {branch, LogRecord::deposit(detail::parse_uint(tok[1], "account"),
                                           parse_amount(tok[2]))};
    }
    if (kw == "WITHDRAW" && tok.size() == 3) {
        return {branch, LogRecord::withdraw(detail::parse_uint(tok[1], "account"),
                                            parse_amount(tok[2]))};
    }
    if (kw == "TRANSFER" && tok.size() == 3) {
        auto [src, dst] = detail::parse_account_pair(tok[2]);
        if (tok[1] == "START") return {branch, LogRecord::transfer_start(src, dst)};
        if (tok[1] == "COMMIT") return {branch, LogRecord::transfer_commit(src, dst)};
        if (tok[1] == "CANCEL") return {branch, LogRecord::transfer_cancel(src, dst)};
    }
    throw ParseError("unrecognized log record: '" + line + "'");
}

// ---------------------------------------------------------------------------
// Checkpoint file lines
// ---------------------------------------------------------------------------

inline std::string encode_checkpoint_line(BranchId branch, const CheckpointEntry& e) {
    return "BANK #" + std::to_string(branch) + ":" + std::to_string(e.acct) + " " +
           format_amount(e.balance);
}

inline std::pair<BranchId, CheckpointEntry> parse_checkpoint_line(const std::string& line) {
    auto [branch, body] = detail::split_bank_prefix(line);
    auto tok = detail::split_tokens(body);
    if (tok.size() != 2) throw ParseError("checkpoint entry needs '<acct> <balance>': '" + line + "'");
    CheckpointEntry e;
    e.acct = detail::parse_uint(tok[0], "account");
    e.balance = parse_amount(tok[1]);
    if (e.balance.cents < 0) throw ParseError("negative balance: '" + line + "'");
    return {branch, e};
}

// ---------------------------------------------------------------------------
// Control frames
// ---------------------------------------------------------------------------

// Server-to-server transfer request, sent by the leading branch.
struct MsgTransfer {
    BranchId from_branch = 0;
    AccountId src = 0;
    AccountId dst = 0;
    Amount amount{};
    friend bool operator==(const MsgTransfer&, const MsgTransfer&) = default;
};
// Positive reply to MsgTransfer.
struct MsgOk {
    BranchId branch = 0;
    friend bool operator==(const MsgOk&, const MsgOk&) = default;
};
// Negative reply; msg carries the remote exception text. The text itself must
// not form a valid OK/TRANSFER frame, which real error strings never do.
struct MsgErr {
    BranchId branch = 0;
    std::string msg;
    friend bool operator==(const MsgErr&, const MsgErr&) = default;
};
struct MsgDependency {
    BranchId a = 0;
    BranchId b = 0;
    friend bool operator==(const MsgDependency&, const MsgDependency&) = default;
};
struct MsgCheckpointRequest {
    BranchId branch = 0;
    friend bool operator==(const MsgCheckpointRequest&, const MsgCheckpointRequest&) = default;
};
struct MsgReadyForCheckpoint {
    friend bool operator==(const MsgReadyForCheckpoint&, const MsgReadyForCheckpoint&) = default;
};
struct MsgDoCheckpoint {
    friend bool operator==(const MsgDoCheckpoint&, const MsgDoCheckpoint&) = default;
};
struct MsgCancelCheckpoint {
    friend bool operator==(const MsgCancelCheckpoint&, const MsgCancelCheckpoint&) = default;
};
struct MsgCheckpointDone {
    friend bool operator==(const MsgCheckpointDone&, const MsgCheckpointDone&) = default;
};
struct MsgRegister {
    std::string host;
    BranchId branch = 0;
    friend bool operator==(const MsgRegister&, const MsgRegister&) = default;
};
struct MsgHeartbeat {
    BranchId branch = 0;
    friend bool operator==(const MsgHeartbeat&, const MsgHeartbeat&) = default;
};
struct MsgRestart {
    BranchId branch = 0;
    friend bool operator==(const MsgRestart&, const MsgRestart&) = default;
};

// Client requests.
struct ReqOpen {
    friend bool operator==(const ReqOpen&, const ReqOpen&) = default;
};
struct ReqDeposit {
    AccountId acct = 0;
    Amount amount{};
    friend bool operator==(const ReqDeposit&, const ReqDeposit&) = default;
};
struct ReqWithdraw {
    AccountId acct = 0;
    Amount amount{};
    friend bool operator==(const ReqWithdraw&, const ReqWithdraw&) = default;
};
struct ReqBalance {
    AccountId acct = 0;
    friend bool operator==(const ReqBalance&, const ReqBalance&) = default;
};
struct ReqTransfer {
    AccountId src = 0;
    AccountId dst = 0;
    Amount amount{};
    friend bool operator==(const ReqTransfer&, const ReqTransfer&) = default;
};
struct ReqAccounts {
    friend bool operator==(const ReqAccounts&, const ReqAccounts&) = default;
};

// Client responses.
struct RespOk {
    std::string payload;  // may be empty
    friend bool operator==(const RespOk&, const RespOk&) = default;
};
struct RespErr {
    std::string msg;
    friend bool operator==(const RespErr&, const RespErr&) = default;
};

using ControlMessage =
    std::variant<MsgTransfer, MsgOk, MsgErr, MsgDependency, MsgCheckpointRequest,
                 MsgReadyForCheckpoint, MsgDoCheckpoint, MsgCancelCheckpoint, MsgCheckpointDone,
                 MsgRegister, MsgHeartbeat, MsgRestart, ReqOpen, ReqDeposit, ReqWithdraw,
                 ReqBalance, ReqTransfer, ReqAccounts, RespOk, RespErr>;

// One newline-terminated UTF-8 frame per message.
inline std::string encode_control(const ControlMessage& m) {
    struct V {
        std::string operator()(const MsgTransfer& t) const {
            return std::to_string(t.from_branch) + " TRANSFER " + std::to_string(t.src) + " " +
                   std::to_string(t.dst) + " " + format_amount(t.amount);
        }
        std::string operator()(const MsgOk& m) const { return std::to_string(m.branch) + " OK"; }
        std::string operator()(const MsgErr& m) const {
            return std::to_string(m.branch) + " " + m.msg;
        }
        std::string operator()(const MsgDependency& m) const {
            return "DEPENDENCY " + std::to_string(m.a) + " " + std::to_string(m.b);
        }
        std::string operator()(const MsgCheckpointRequest& m) const {
            return "CHECKPOINT " + std::to_string(m.branch);
        }
        std::string operator()(const MsgReadyForCheckpoint&) const { return "READY_FOR_CHECKPOINT"; }
        std::string operator()(const MsgDoCheckpoint&) const { return "DO_CHECKPOINT"; }
        std::string operator()(const MsgCancelCheckpoint&) const { return "CANCEL_CHECKPOINT"; }
        std::string operator()(const MsgCheckpointDone&) const { return "CHECKPOINT_DONE"; }
        std::string operator()(const MsgRegister& m) const {
            return "REGISTER_MSG " + m.host + " " + std::to_string(m.branch);
        }
        std::string operator()(const MsgHeartbeat& m) const {
            return "HEARTBEAT_MSG " + std::to_string(m.branch);
        }
        std::string operator()(const MsgRestart& m) const {
            return "RESTART " + std::to_string(m.branch);
        }
        std::string operator()(const ReqOpen&) const { return "OPEN"; }
        std::string operator()(const ReqDeposit& r) const {
            return "DEPOSIT " + std::to_string(r.acct) + " " + format_amount(r.amount);
        }
        std::string operator()(const ReqWithdraw& r) const {
            return "WITHDRAW " + std::to_string(r.acct) + " " + format_amount(r.amount);
        }
        std::string operator()(const ReqBalance& r) const {
            return "BALANCE " + std::to_string(r.acct);
        }
        std::string operator()(const ReqTransfer& r) const {
            return "TRANSFER " + std::to_string(r.src) + " " + std::to_string(r.dst) + " " +
                   format_amount(r.amount);
        }
        std::string operator()(const ReqAccounts&) const { return "ACCOUNTS"; }
        std::string operator()(const RespOk& r) const {
            return r.payload.empty() ? "OK" : "OK " + r.payload;
        }
        std::string operator()(const RespErr& r) const {
            return r.msg.empty() ? "ERR" : "ERR " + r.msg;
        }
    };
    return std::visit(V{}, m) + "\n";
}

inline ControlMessage parse_control(std::string frame) {
    if (!frame.empty() && frame.back() == '\n') frame.pop_back();
    if (!frame.empty() && frame.back() == '\r') frame.pop_back();
    auto tok = detail::split_tokens(frame);
    if (frame.empty() || tok.empty()) throw ParseError("empty frame");
    for (const auto& t : tok)
        if (t.empty()) throw ParseError("malformed frame (double space): '" + frame + "'");

    auto join_rest = [&](std::size_t from) {
        std::string out;
        for (std::size_t i = from; i < tok.size(); ++i) {
            if (i > from) out += ' ';
            out += tok[i];
        }
        return out;
    };

    if (detail::all_digits(tok[0])) {
        BranchId branch = static_cast<BranchId>(detail::parse_uint(tok[0], "branch"));
        if (tok.size() == 2 && tok[1] == "OK") return MsgOk{branch};
        if (tok.size() == 5 && tok[1] == "TRANSFER" && detail::all_digits(tok[2]) &&
            detail::all_digits(tok[3])) {
            return MsgTransfer{branch, detail::parse_uint(tok[2], "source account"),
                               detail::parse_uint(tok[3], "destination account"),
                               parse_amount(tok[4])};
        }
        if (tok.size() >= 2) return MsgErr{branch, join_rest(1)};
        throw ParseError("lone branch number: '" + frame + "'");
    }

    const std::string& kw = tok[0];
    if (kw == "DEPENDENCY" && tok.size() == 3)
        return MsgDependency{static_cast<BranchId>(detail::parse_uint(tok[1], "branch")),
                             static_cast<BranchId>(detail::parse_uint(tok[2], "branch"))};
    if (kw == "CHECKPOINT" && tok.size() == 2)
        return MsgCheckpointRequest{static_cast<BranchId>(detail::parse_uint(tok[1], "branch"))};
    if (kw == "READY_FOR_CHECKPOINT" && tok.size() == 1) return MsgReadyForCheckpoint{};
    if (kw == "DO_CHECKPOINT" && tok.size() == 1) return MsgDoCheckpoint{};
    if (kw == "CANCEL_CHECKPOINT" && tok.size() == 1) return MsgCancelCheckpoint{};
    if (kw == "CHECKPOINT_DONE" && tok.size() == 1) return MsgCheckpointDone{};
    if (kw == "REGISTER_MSG" && tok.size() == 3)
        return MsgRegister{tok[1], static_cast<BranchId>(detail::parse_uint(tok[2], "branch"))};
    if (kw == "HEARTBEAT_MSG" && tok.size() == 2)
        return MsgHeartbeat{static_cast<BranchId>(detail::parse_uint(tok[1], "branch"))};
    if (kw == "RESTART" && tok.size() == 2)
        return MsgRestart{static_cast<BranchId>(detail::parse_uint(tok[1], "branch"))};
    if (kw == "OPEN" && tok.size() == 1) return ReqOpen{};
    if (kw == "DEPOSIT" && tok.size() == 3)
        return ReqDeposit{detail::parse_uint(tok[1], "account"), parse_amount(tok[2])};
    if (kw == "WITHDRAW" && tok.size() == 3)
        return ReqWithdraw{detail::parse_uint(tok[1], "account"), parse_amount(tok[2])};
    if (kw == "BALANCE" && tok.size() == 2) return ReqBalance{detail::parse_uint(tok[1], "account")};
    if (kw == "TRANSFER" && tok.size() == 4)
        return ReqTransfer{detail::parse_uint(tok[1], "source account"),
                           detail::parse_uint(tok[2], "destination account"), parse_amount(tok[3])};
    if (kw == "ACCOUNTS" && tok.size() == 1) return ReqAccounts{};
    if (kw == "OK") return RespOk{join_rest(1)};
    if (kw == "ERR") return RespErr{join_rest(1)};
    throw ParseError("unknown keyword or arity: '" + frame + "'");
}

}  // namespace bank
