#include "bank/rm.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <thread>

#include "bank/client.hpp"
#include "bank/server.hpp"
#include "support/fake_endpoint.hpp"
#include "support/temp_dir.hpp"

using namespace bank;
using namespace std::chrono_literals;
using testsupport::FakeFollower;
using testsupport::TempDir;
using testsupport::free_port;
using testsupport::read_file;

namespace {

RmConfig rm_config(int port, const TempDir& dir) {
    RmConfig cfg;
    cfg.port = port;
    cfg.msg_timeout = 800ms;
    cfg.event_log = dir.path() / "rm_events.log";
    return cfg;
}

ServerConfig server_config(const TempDir& dir, BranchId branch, int rm_port) {
    ServerConfig cfg;
    cfg.branch = branch;
    cfg.data_dir = dir.path();
    cfg.rm_port = rm_port;
    cfg.monitor_port = free_port(3300);
    cfg.heartbeat_interval = 10s;
    cfg.checkpoint_msg_timeout = 800ms;
    return cfg;
}

Reply req(int port, const ControlMessage& m) { return client_request("127.0.0.1", port, m); }

std::size_t count_events(const std::filesystem::path& p, const std::string& kind) {
    std::size_t n = 0;
    for (const auto& ev : read_rm_events(p))
        if (ev.kind == kind) ++n;
    return n;
}

}  // namespace

TEST(Coordinate, IndependentServerCommits) {
    TempDir dir;
    int rm_port = free_port(3200);
    RecoveryCoordinator rm(rm_config(rm_port, dir));
    rm.boot();

    BranchId b = free_port(1500);
    BankServer server(server_config(dir, b, rm_port));
    server.boot();
    AccountId acct = std::stoll(req(b, ReqOpen{}).text);
    req(b, ReqDeposit{acct, cents(500)});

    EXPECT_EQ(rm.coordinate_checkpoint(b), SessionOutcome::Committed);
    EXPECT_FALSE(std::filesystem::exists(msglog_path(dir.path(), b)));
    BranchState on_disk = load_checkpoint(checkpoint_path(dir.path(), b), b);
    EXPECT_EQ(on_disk.accounts.at(acct).cents, 500);
    EXPECT_TRUE(rm.pool_groups().empty());
    server.stop();
    rm.stop();
}

TEST(Coordinate, DependencyGroupCommitsTogetherAndLeavesThePool) {
    TempDir dir_a, dir_b, dir_rm;
    int rm_port = free_port(3200);
    RecoveryCoordinator rm(rm_config(rm_port, dir_rm));
    rm.boot();

    BranchId ba = free_port(1500);
    BranchId bb = free_port(ba + 1);
    BankServer a(server_config(dir_a, ba, rm_port));
    BankServer b(server_config(dir_b, bb, rm_port));
    a.boot();
    b.boot();

    AccountId src = std::stoll(req(ba, ReqOpen{}).text);
    req(ba, ReqDeposit{src, cents(5000)});
    AccountId dst = std::stoll(req(bb, ReqOpen{}).text);
    auto r = req(ba, ReqTransfer{src, dst, cents(1000)});
    ASSERT_TRUE(r.ok) << r.text;

    // the transfer reported the dependency
    auto deadline = std::chrono::steady_clock::now() + 2s;
    while (rm.pool_groups().empty() && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(10ms);
    ASSERT_EQ(rm.pool_groups(), (std::vector<DependencyPool::Group>{{ba, bb}}));

    EXPECT_EQ(rm.coordinate_checkpoint(ba), SessionOutcome::Committed);
    EXPECT_TRUE(rm.pool_groups().empty());
    EXPECT_FALSE(std::filesystem::exists(msglog_path(dir_a.path(), ba)));
    EXPECT_FALSE(std::filesystem::exists(msglog_path(dir_b.path(), bb)));
    a.stop();
    b.stop();
    rm.stop();
}

TEST(Coordinate, CrashedMemberCancelsAndNobodyTouchesFiles) {
    TempDir dir_a, dir_rm;
    int rm_port = free_port(3200);
    RecoveryCoordinator rm(rm_config(rm_port, dir_rm));
    rm.boot();

    BranchId ba = free_port(1500);
    BranchId bb = free_port(ba + 1);  // never started
    BankServer a(server_config(dir_a, ba, rm_port));
    a.boot();
    AccountId acct = std::stoll(req(ba, ReqOpen{}).text);
    req(ba, ReqDeposit{acct, cents(500)});
    std::string log_before = read_file(msglog_path(dir_a.path(), ba));

    net::send_frame("127.0.0.1", rm_port, encode_control(MsgDependency{ba, bb}), 500ms);
    auto deadline = std::chrono::steady_clock::now() + 2s;
    while (rm.pool_groups().empty() && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(10ms);
    ASSERT_FALSE(rm.pool_groups().empty());

    EXPECT_EQ(rm.coordinate_checkpoint(ba), SessionOutcome::Canceled);
    EXPECT_EQ(read_file(msglog_path(dir_a.path(), ba)), log_before);
    EXPECT_FALSE(std::filesystem::exists(checkpoint_path(dir_a.path(), ba)));
    // pool unchanged: the group is retried later
    EXPECT_EQ(rm.pool_groups(), (std::vector<DependencyPool::Group>{{ba, bb}}));
    a.stop();
    rm.stop();
}

TEST(Coordinate, SurvivorOfCanceledSessionReceivesCancelFrame) {
    TempDir dir_rm;
    int rm_port = free_port(3200);
    RecoveryCoordinator rm(rm_config(rm_port, dir_rm));
    rm.boot();

    BranchId bf = free_port(1500);
    BranchId dead = free_port(bf + 1);
    FakeFollower follower(bf, FakeFollower::Mode::Full);
    net::send_frame("127.0.0.1", rm_port, encode_control(MsgDependency{bf, dead}), 500ms);
    std::this_thread::sleep_for(50ms);

    EXPECT_EQ(rm.coordinate_checkpoint(bf), SessionOutcome::Canceled);
    auto got = follower.received();
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0], "READY_FOR_CHECKPOINT");
    EXPECT_EQ(got[1], "CANCEL_CHECKPOINT");
    rm.stop();
}

TEST(Coordinate, MissingDoneIsPartialAndGroupStaysPooled) {
    TempDir dir_rm;
    int rm_port = free_port(3200);
    RecoveryCoordinator rm(rm_config(rm_port, dir_rm));
    rm.boot();

    BranchId bf = free_port(1500);
    FakeFollower follower(bf, FakeFollower::Mode::ReadyThenSilent);

    // unknown requester: a fresh singleton session (use case extension)
    EXPECT_EQ(rm.coordinate_checkpoint(bf), SessionOutcome::Partial);
    EXPECT_EQ(rm.pool_groups(), (std::vector<DependencyPool::Group>{{bf}}));
    rm.stop();
}

TEST(Coordinate, UnknownRequesterSingletonCommitIsRemoved) {
    TempDir dir, dir_rm;
    int rm_port = free_port(3200);
    RecoveryCoordinator rm(rm_config(rm_port, dir_rm));
    rm.boot();

    BranchId b = free_port(1500);
    BankServer server(server_config(dir, b, rm_port));
    server.boot();
    req(b, ReqOpen{});

    EXPECT_EQ(rm.coordinate_checkpoint(b), SessionOutcome::Committed);
    EXPECT_TRUE(rm.pool_groups().empty());
    server.stop();
    rm.stop();
}

TEST(Serve, CheckpointRequestsRunFifoWithoutOverlap) {
    TempDir dir_a, dir_b, dir_rm;
    int rm_port = free_port(3200);
    auto cfg = rm_config(rm_port, dir_rm);
    RecoveryCoordinator rm(cfg);
    rm.boot();

    BranchId ba = free_port(1500);
    BranchId bb = free_port(ba + 1);
    BankServer a(server_config(dir_a, ba, rm_port));
    BankServer b(server_config(dir_b, bb, rm_port));
    a.boot();
    b.boot();
    req(ba, ReqOpen{});
    req(bb, ReqOpen{});

    net::send_frame("127.0.0.1", rm_port, encode_control(MsgCheckpointRequest{ba}), 500ms);
    net::send_frame("127.0.0.1", rm_port, encode_control(MsgCheckpointRequest{bb}), 500ms);

    auto deadline = std::chrono::steady_clock::now() + 5s;
    while (count_events(cfg.event_log, "SESSION_END") < 2 &&
           std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(20ms);

    auto events = read_rm_events(cfg.event_log);
    struct Interval {
        long long start = 0, end = 0;
    };
    std::vector<Interval> sessions;
    for (const auto& ev : events) {
        if (ev.kind == "SESSION_START") sessions.push_back({ev.ns, 0});
        if (ev.kind == "SESSION_END" && !sessions.empty()) sessions.back().end = ev.ns;
    }
    ASSERT_EQ(sessions.size(), 2u);
    ASSERT_GT(sessions[0].end, 0);
    ASSERT_GT(sessions[1].end, 0);
    EXPECT_LE(sessions[0].end, sessions[1].start);  // strictly one at a time
    a.stop();
    b.stop();
    rm.stop();
}

TEST(Serve, MalformedFramesAreDroppedAndServiceContinues) {
    TempDir dir_rm;
    int rm_port = free_port(3200);
    RecoveryCoordinator rm(rm_config(rm_port, dir_rm));
    rm.boot();

    net::send_frame("127.0.0.1", rm_port, "GIBBERISH 1 2 3\n", 500ms);
    net::send_frame("127.0.0.1", rm_port, "DEPENDENCY 1500\n", 500ms);  // bad arity
    net::send_frame("127.0.0.1", rm_port, encode_control(MsgDependency{1500, 1501}), 500ms);

    auto deadline = std::chrono::steady_clock::now() + 2s;
    while (rm.pool_groups().empty() && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(10ms);
    EXPECT_EQ(rm.pool_groups(), (std::vector<DependencyPool::Group>{{1500, 1501}}));
    rm.stop();
}

TEST(Restart, SpawnsTemplateOncePerGracePeriod) {
    TempDir dir_rm;
    int rm_port = free_port(3200);
    auto cfg = rm_config(rm_port, dir_rm);
    cfg.restart_cmd = "touch " + (dir_rm.path() / "spawned_{branch}").string();
    cfg.restart_grace = 1s;
    RecoveryCoordinator rm(cfg);
    rm.boot();

    net::send_frame("127.0.0.1", rm_port, encode_control(MsgRestart{1500}), 500ms);
    auto marker = dir_rm.path() / "spawned_1500";
    auto deadline = std::chrono::steady_clock::now() + 3s;
    while (!std::filesystem::exists(marker) && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(20ms);
    EXPECT_TRUE(std::filesystem::exists(marker));

    net::send_frame("127.0.0.1", rm_port, encode_control(MsgRestart{1500}), 500ms);
    std::this_thread::sleep_for(200ms);
    EXPECT_EQ(count_events(cfg.event_log, "SPAWN"), 1u);
    EXPECT_EQ(count_events(cfg.event_log, "SPAWN_SUPPRESSED"), 1u);
    rm.stop();
}

TEST(Restart, MissingTemplateIsLoggedErrorNotACrash) {
    TempDir dir_rm;
    int rm_port = free_port(3200);
    auto cfg = rm_config(rm_port, dir_rm);
    RecoveryCoordinator rm(cfg);
    rm.boot();

    net::send_frame("127.0.0.1", rm_port, encode_control(MsgRestart{1500}), 500ms);
    auto deadline = std::chrono::steady_clock::now() + 2s;
    while (count_events(cfg.event_log, "SPAWN_FAILED") == 0 &&
           std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(20ms);
    EXPECT_EQ(count_events(cfg.event_log, "SPAWN_FAILED"), 1u);

    // still serving
    net::send_frame("127.0.0.1", rm_port, encode_control(MsgDependency{1500, 1501}), 500ms);
    deadline = std::chrono::steady_clock::now() + 2s;
    while (rm.pool_groups().empty() && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(10ms);
    EXPECT_FALSE(rm.pool_groups().empty());
    rm.stop();
}
