#pragma once

// Named crash points for fault-injection testing. A process configured with
// one of these (flag or BANK_CRASH_POINT environment variable) terminates
// immediately, without any cleanup, the moment execution reaches the hook.

#include <unistd.h>

#include <array>
#include <optional>
#include <string>

namespace bank {

enum class CrashPoint {
    AfterStartLog,
    AfterWithdrawLog,
    BeforePeerSend,
    AfterPeerSend,
    AfterDepositLog,
    BeforeOkSend,
    AfterOkSend,
    BeforeCommitLog,
    BeforeCheckpointWrite,
    AfterCheckpointWrite,
};

inline constexpr std::array<std::pair<CrashPoint, const char*>, 10> kCrashPointNames = {{
    {CrashPoint::AfterStartLog, "after_start_log"},
    {CrashPoint::AfterWithdrawLog, "after_withdraw_log"},
    {CrashPoint::BeforePeerSend, "before_peer_send"},
    {CrashPoint::AfterPeerSend, "after_peer_send"},
    {CrashPoint::AfterDepositLog, "after_deposit_log"},
    {CrashPoint::BeforeOkSend, "before_ok_send"},
    {CrashPoint::AfterOkSend, "after_ok_send"},
    {CrashPoint::BeforeCommitLog, "before_commit_log"},
    {CrashPoint::BeforeCheckpointWrite, "before_checkpoint_write"},
    {CrashPoint::AfterCheckpointWrite, "after_checkpoint_write"},
}};

inline std::optional<CrashPoint> parse_crash_point(const std::string& name) {
    for (auto [cp, n] : kCrashPointNames)
        if (name == n) return cp;
    return std::nullopt;
}

inline const char* crash_point_name(CrashPoint cp) {
    for (auto [c, n] : kCrashPointNames)
        if (c == cp) return n;
    return "?";
}

class CrashHooks {
public:
    CrashHooks() = default;
    explicit CrashHooks(std::optional<CrashPoint> armed) : armed_(armed) {}

    void hit(CrashPoint cp) const {
        if (armed_ && *armed_ == cp) ::_exit(137);
    }

    std::optional<CrashPoint> armed() const { return armed_; }

private:
    std::optional<CrashPoint> armed_;
};

}  // namespace bank
