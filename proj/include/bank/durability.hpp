#pragma once

// Stable storage for a branch: the append-only message log, the checkpoint
// file, recovery replay, and log truncation after checkpoints.
//
// Checkpoint commits go through a two-step publish so that a crash at any
// point leaves a recoverable pair of files:
//   1. the new state is written to checkpoint_<b>.log.ready (via a .writing
//      temp and an atomic rename),
//   2. the message log is deleted,
//   3. .ready is renamed over checkpoint_<b>.log.
// recover() promotes a surviving .ready file (deleting the stale log first),
// so an operation is never replayed on top of a checkpoint that already
// contains it.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "bank/ledger.hpp"
#include "bank/wire.hpp"

namespace bank {

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class CorruptLog : public std::runtime_error {
public:
    CorruptLog(const std::string& file, std::size_t line_no, const std::string& reason)
        : std::runtime_error(file + ":" + std::to_string(line_no) + ": " + reason),
          line_no(line_no) {}
    std::size_t line_no;
};

inline std::filesystem::path msglog_path(const std::filesystem::path& dir, BranchId b) {
    return dir / ("msglog_" + std::to_string(b) + ".log");
}
inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, BranchId b) {
    return dir / ("checkpoint_" + std::to_string(b) + ".log");
}

namespace detail {

inline void throw_errno(const std::string& what) {
    throw IoError(what + ": " + std::strerror(errno));
}

inline void fsync_dir(const std::filesystem::path& dir) {
    int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

inline void write_file_durably(const std::filesystem::path& path, const std::string& bytes) {
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw_errno("open " + path.string());
    std::size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            int e = errno;
            ::close(fd);
            errno = e;
            throw_errno("write " + path.string());
        }
        off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0) {
        int e = errno;
        ::close(fd);
        errno = e;
        throw_errno("fsync " + path.string());
    }
    ::close(fd);
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Message log
// ---------------------------------------------------------------------------

// Append-only log with one owner. Appends are flushed to stable storage
// before returning; the caller must not acknowledge an operation earlier.
class LogStore {
public:
    LogStore() = default;
    LogStore(std::filesystem::path dir, BranchId branch, std::size_t initial_count = 0)
        : dir_(std::move(dir)), branch_(branch), count_(initial_count) {}
    ~LogStore() { close_fd(); }

    LogStore(const LogStore&) = delete;
    LogStore& operator=(const LogStore&) = delete;
    LogStore(LogStore&& other) noexcept { *this = std::move(other); }
    LogStore& operator=(LogStore&& other) noexcept {
        if (this != &other) {
            close_fd();
            dir_ = std::move(other.dir_);
            branch_ = other.branch_;
            fd_ = other.fd_;
            count_ = other.count_;
            other.fd_ = -1;
            other.count_ = 0;
        }
        return *this;
    }

    std::size_t record_count() const { return count_; }
    std::filesystem::path path() const { return msglog_path(dir_, branch_); }

    std::size_t append(const LogRecord& r) {
        std::string line = encode_log_line(branch_, r) + "\n";
        if (fd_ < 0) {
            fd_ = ::open(path().c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
            if (fd_ < 0) detail::throw_errno("open " + path().string());
        }
        std::size_t off = 0;
        while (off < line.size()) {
            ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                detail::throw_errno("append " + path().string());
            }
            off += static_cast<std::size_t>(n);
        }
        if (::fdatasync(fd_) != 0) detail::throw_errno("fdatasync " + path().string());
        return ++count_;
    }

    // Only valid after a checkpoint of the current state has durably completed.
    void delete_log() {
        close_fd();
        if (::unlink(path().c_str()) != 0 && errno != ENOENT)
            detail::throw_errno("unlink " + path().string());
        detail::fsync_dir(dir_);
        count_ = 0;
    }

private:
    void close_fd() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    std::filesystem::path dir_;
    BranchId branch_ = 0;
    int fd_ = -1;
    std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint file
// ---------------------------------------------------------------------------

inline std::string serialize_checkpoint(const BranchState& s) {
    std::string out;
    for (AccountId acct : list_accounts(s))
        out += encode_checkpoint_line(s.branch, {acct, s.accounts.at(acct)}) + "\n";
    return out;
}

// Atomic replace: a crash mid-write leaves the previous file intact.
inline void write_checkpoint(const std::filesystem::path& target, const BranchState& s) {
    std::filesystem::path tmp = target;
    tmp += ".writing";
    detail::write_file_durably(tmp, serialize_checkpoint(s));
    if (::rename(tmp.c_str(), target.c_str()) != 0)
        detail::throw_errno("rename " + tmp.string() + " -> " + target.string());
    detail::fsync_dir(target.parent_path());
}

inline BranchState load_checkpoint(const std::filesystem::path& path, BranchId branch) {
    BranchState s;
    s.branch = branch;
    if (!std::filesystem::exists(path)) return s;
    auto lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            auto [b, entry] = parse_checkpoint_line(lines[i]);
            if (b != branch)
                throw ParseError("entry tagged for branch " + std::to_string(b) +
                                 " in checkpoint of branch " + std::to_string(branch));
            if (s.accounts.count(entry.acct))
                throw ParseError("duplicate account " + std::to_string(entry.acct));
            s.accounts[entry.acct] = entry.balance;
        } catch (const ParseError& e) {
            throw CorruptLog(path.string(), i + 1, e.what());
        }
    }
    if (!s.accounts.empty()) s.next_seq = account_seq(s.accounts.rbegin()->first) + 1;
    return s;
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

struct ReplayResult {
    std::size_t applied_lines = 0;  // records whose effect is in the state
    bool dangling_tail = false;     // file ended inside an open transfer block
};

// Re-executes the log on top of a checkpointed state. Records between a
// TRANSFER START and its COMMIT/CANCEL are buffered and applied only when the
// block closes; a block left open by a crash contributes nothing. Anything a
// successful original execution could not have produced is corruption.
inline ReplayResult replay(BranchState& s, const std::filesystem::path& log_path) {
    ReplayResult result;
    if (!std::filesystem::exists(log_path)) return result;
    auto lines = detail::read_lines(log_path);

    bool in_block = false;
    AccountId block_src = 0, block_dst = 0;
    std::vector<LogRecord> buffered;
    std::size_t block_start_line = 0;

    auto apply = [&](const LogRecord& r, std::size_t line_no) {
        try {
            switch (r.kind) {
            case LogRecord::Kind::Open: {
                if (s.accounts.count(r.acct))
                    throw LedgerError("account " + std::to_string(r.acct) + " already exists");
                if (account_branch(r.acct) != s.branch)
                    throw LedgerError("account " + std::to_string(r.acct) +
                                      " does not belong to branch " + std::to_string(s.branch));
                s.accounts[r.acct] = Amount{0};
                if (account_seq(r.acct) + 1 > s.next_seq) s.next_seq = account_seq(r.acct) + 1;
                break;
            }
            case LogRecord::Kind::Deposit:
                deposit(s, r.acct, r.amount);
                break;
            case LogRecord::Kind::Withdraw:
                withdraw(s, r.acct, r.amount);
                break;
            default:
                throw LedgerError("record kind cannot be applied");
            }
        } catch (const LedgerError& e) {
            throw CorruptLog(log_path.string(), line_no,
                             std::string("replayed operation failed: ") + e.what());
        }
    };

    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::size_t line_no = i + 1;
        BranchId b;
        LogRecord r;
        try {
            std::tie(b, r) = parse_log_line(lines[i]);
        } catch (const ParseError& e) {
            throw CorruptLog(log_path.string(), line_no, e.what());
        }
        if (b != s.branch)
            throw CorruptLog(log_path.string(), line_no,
                             "record tagged for branch " + std::to_string(b));

        switch (r.kind) {
        case LogRecord::Kind::TransferStart:
            if (in_block)
                throw CorruptLog(log_path.string(), line_no, "TRANSFER START inside open block");
            in_block = true;
            block_src = r.src;
            block_dst = r.dst;
            buffered.clear();
            block_start_line = line_no;
            break;
        case LogRecord::Kind::TransferCommit:
        case LogRecord::Kind::TransferCancel: {
            if (!in_block)
                throw CorruptLog(log_path.string(), line_no, "transfer close without open block");
            if (r.src != block_src || r.dst != block_dst)
                throw CorruptLog(log_path.string(), line_no,
                                 "transfer close does not match open block");
            std::size_t n = block_start_line;
            for (const auto& rec : buffered) apply(rec, ++n);
            in_block = false;
            result.applied_lines = line_no;
            break;
        }
        case LogRecord::Kind::Deposit:
        case LogRecord::Kind::Withdraw:
            if (in_block) {
                buffered.push_back(r);
            } else {
                apply(r, line_no);
                result.applied_lines = line_no;
            }
            break;
        case LogRecord::Kind::Open:
            if (in_block)
                throw CorruptLog(log_path.string(), line_no, "OPEN inside open transfer block");
            apply(r, line_no);
            result.applied_lines = line_no;
            break;
        }
    }
    result.dangling_tail = in_block;
    return result;
}

// ---------------------------------------------------------------------------
// Recovery and checkpoint commit
// ---------------------------------------------------------------------------

inline std::filesystem::path checkpoint_ready_path(const std::filesystem::path& dir, BranchId b) {
    auto p = checkpoint_path(dir, b);
    p += ".ready";
    return p;
}

struct Recovered {
    BranchState state;
    std::size_t record_count = 0;
};

// Finish or discard a checkpoint commit interrupted by a crash, then load
// the checkpoint and replay the log. A transfer block left open at the tail
// is truncated away: its effect is discarded and nothing may come after it.
inline Recovered recover(const std::filesystem::path& dir, BranchId branch) {
    std::filesystem::create_directories(dir);

    auto ready = checkpoint_ready_path(dir, branch);
    auto writing = checkpoint_path(dir, branch);
    writing += ".writing";
    if (std::filesystem::exists(writing)) std::filesystem::remove(writing);
    if (std::filesystem::exists(ready)) {
        std::filesystem::remove(msglog_path(dir, branch));
        if (::rename(ready.c_str(), checkpoint_path(dir, branch).c_str()) != 0)
            detail::throw_errno("rename " + ready.string());
        detail::fsync_dir(dir);
    }

    Recovered out;
    out.state = load_checkpoint(checkpoint_path(dir, branch), branch);
    auto log = msglog_path(dir, branch);
    ReplayResult r = replay(out.state, log);
    if (r.dangling_tail) {
        auto lines = detail::read_lines(log);
        std::string kept;
        for (std::size_t i = 0; i < r.applied_lines; ++i) kept += lines[i] + "\n";
        off_t offset = static_cast<off_t>(kept.size());
        if (::truncate(log.c_str(), offset) != 0) detail::throw_errno("truncate " + log.string());
        detail::fsync_dir(dir);
    }
    out.record_count = r.applied_lines;
    return out;
}

// Steps of a checkpoint commit; the server runs them in this order with its
// crash hooks in between.
inline void checkpoint_stage(const std::filesystem::path& dir, const BranchState& s) {
    write_checkpoint(checkpoint_ready_path(dir, s.branch), s);
}

inline void checkpoint_publish(const std::filesystem::path& dir, BranchId branch) {
    auto ready = checkpoint_ready_path(dir, branch);
    if (::rename(ready.c_str(), checkpoint_path(dir, branch).c_str()) != 0)
        detail::throw_errno("rename " + ready.string());
    detail::fsync_dir(dir);
}

}  // namespace bank
