#include "bank/durability.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "support/replay_oracle.hpp"
#include "support/temp_dir.hpp"

using namespace bank;
using testsupport::TempDir;
using testsupport::read_file;
using testsupport::write_file;

namespace {

const std::string kData = TEST_DATA_DIR;

void copy_sample_files(const std::filesystem::path& dir, BranchId b = 1111) {
    std::filesystem::copy_file(kData + "/sample_msglog_1111.log", msglog_path(dir, b));
    std::filesystem::copy_file(kData + "/sample_checkpoint_1111.log", checkpoint_path(dir, b));
}

std::vector<LogRecord> sample_log_records() {
    return {
        LogRecord::open(1111006),
        LogRecord::deposit(1111006, cents(100000)),
        LogRecord::withdraw(1111006, cents(10000)),
        LogRecord::transfer_start(1111006, 111200),
        LogRecord::transfer_cancel(1111006, 111200),
        LogRecord::transfer_start(1111000, 1112000),
        LogRecord::withdraw(1111000, cents(1000)),
        LogRecord::transfer_commit(1111000, 1112000),
    };
}

}  // namespace

TEST(Append, CountsAndFlushes) {
    TempDir tmp;
    LogStore store(tmp.path(), 1111);
    EXPECT_EQ(store.record_count(), 0u);
    EXPECT_EQ(store.append(LogRecord::open(1111000)), 1u);
    EXPECT_EQ(store.append(LogRecord::deposit(1111000, cents(100))), 2u);
    EXPECT_EQ(read_file(store.path()),
              "BANK #1111:OPEN 1111000\nBANK #1111:DEPOSIT 1111000 1.0\n");
}

TEST(Append, ReproducesSampleFileExactly) {
    TempDir tmp;
    LogStore store(tmp.path(), 1111);
    for (const auto& r : sample_log_records()) store.append(r);
    EXPECT_EQ(store.record_count(), 8u);
    EXPECT_EQ(read_file(store.path()), read_file(kData + "/sample_msglog_1111.log"));
}

TEST(Checkpoint, WritesSampleStateByteExact) {
    TempDir tmp;
    BranchState s;
    s.branch = 1111;
    s.accounts = {{1111000, cents(137400)}, {1111001, cents(13000)}, {1111002, cents(12000)},
                  {1111003, cents(103000)}, {1111004, cents(0)},     {1111005, cents(103000)}};
    s.next_seq = 6;
    auto path = checkpoint_path(tmp.path(), 1111);
    write_checkpoint(path, s);
    EXPECT_EQ(read_file(path), read_file(kData + "/sample_checkpoint_1111.log"));
}

TEST(Checkpoint, EmptyStateWritesEmptyFile) {
    TempDir tmp;
    BranchState s;
    s.branch = 1111;
    auto path = checkpoint_path(tmp.path(), 1111);
    write_checkpoint(path, s);
    EXPECT_EQ(read_file(path), "");
}

TEST(Checkpoint, LoadsSampleFile) {
    TempDir tmp;
    copy_sample_files(tmp.path());
    BranchState s = load_checkpoint(checkpoint_path(tmp.path(), 1111), 1111);
    EXPECT_EQ(s.accounts.size(), 6u);
    EXPECT_EQ(s.accounts.at(1111000).cents, 137400);
    EXPECT_EQ(s.accounts.at(1111005).cents, 103000);
    EXPECT_EQ(s.next_seq, 6);
}

TEST(Checkpoint, MissingFileMeansEmptyState) {
    TempDir tmp;
    BranchState s = load_checkpoint(checkpoint_path(tmp.path(), 1111), 1111);
    EXPECT_TRUE(s.accounts.empty());
    EXPECT_EQ(s.next_seq, 0);
}

TEST(Checkpoint, WrongBranchTagIsCorruption) {
    TempDir tmp;
    write_file(checkpoint_path(tmp.path(), 1112), "BANK #1111:1111000 1.0\n");
    EXPECT_THROW(load_checkpoint(checkpoint_path(tmp.path(), 1112), 1112), CorruptLog);
}

TEST(Checkpoint, MalformedLineIsCorruption) {
    TempDir tmp;
    write_file(checkpoint_path(tmp.path(), 1111), "BANK #1111:1111000 1.0\ngarbage\n");
    try {
        load_checkpoint(checkpoint_path(tmp.path(), 1111), 1111);
        FAIL() << "expected CorruptLog";
    } catch (const CorruptLog& e) {
        EXPECT_EQ(e.line_no, 2u);
    }
}

TEST(Replay, SampleFilesMatchOracleAndFrozenValues) {
    TempDir tmp;
    copy_sample_files(tmp.path());

    Recovered rec = recover(tmp.path(), 1111);

    // Frozen expectations, computed with the independent interpreter.
    EXPECT_EQ(rec.state.accounts.at(1111006).cents, 90000);   // 900.0
    EXPECT_EQ(rec.state.accounts.at(1111000).cents, 136400);  // 1364.0
    EXPECT_EQ(rec.state.accounts.at(1111001).cents, 13000);
    EXPECT_EQ(rec.state.accounts.at(1111002).cents, 12000);
    EXPECT_EQ(rec.state.accounts.at(1111003).cents, 103000);
    EXPECT_EQ(rec.state.accounts.at(1111004).cents, 0);
    EXPECT_EQ(rec.state.accounts.at(1111005).cents, 103000);
    EXPECT_EQ(rec.state.next_seq, 7);
    EXPECT_EQ(rec.record_count, 8u);

    oracle::State expected = oracle::recover(kData + "/sample_checkpoint_1111.log",
                                             kData + "/sample_msglog_1111.log");
    EXPECT_EQ(expected.cents.size(), rec.state.accounts.size());
    for (const auto& [acct, c] : expected.cents) EXPECT_EQ(rec.state.accounts.at(acct).cents, c);
    EXPECT_EQ(expected.next_account, 1111007);
}

TEST(Replay, EmptyFilesGiveEmptyState) {
    TempDir tmp;
    Recovered rec = recover(tmp.path(), 1111);
    EXPECT_TRUE(rec.state.accounts.empty());
    EXPECT_EQ(rec.record_count, 0u);
}

TEST(Replay, UnclosedBlockIsDiscardedAndTruncated) {
    TempDir tmp;
    std::filesystem::copy_file(kData + "/sample_crashed_receiver_1111.log",
                               msglog_path(tmp.path(), 1111));
    write_file(checkpoint_path(tmp.path(), 1111), "BANK #1111:1111000 50.0\n");

    Recovered rec = recover(tmp.path(), 1111);
    EXPECT_EQ(rec.state.accounts.at(1111000).cents, 5000);  // deposit not applied
    EXPECT_EQ(rec.record_count, 0u);
    // the dangling block is gone from stable storage
    EXPECT_EQ(read_file(msglog_path(tmp.path(), 1111)), "");
}

TEST(Replay, CanceledBlockAppliesItsCompensatedRecords) {
    TempDir tmp;
    std::filesystem::copy_file(kData + "/sample_failed_leader_1112.log",
                               msglog_path(tmp.path(), 1112));
    write_file(checkpoint_path(tmp.path(), 1112), "BANK #1112:1112000 50.0\n");

    Recovered rec = recover(tmp.path(), 1112);
    EXPECT_EQ(rec.state.accounts.at(1112000).cents, 5000);  // withdraw + compensating deposit
    EXPECT_EQ(rec.record_count, 4u);

    oracle::State expected = oracle::recover((checkpoint_path(tmp.path(), 1112)).string(),
                                             kData + "/sample_failed_leader_1112.log");
    EXPECT_EQ(expected.cents.at(1112000), 5000);
}

TEST(Replay, ImpossibleOperationIsCorruption) {
    TempDir tmp;
    write_file(msglog_path(tmp.path(), 1111), "BANK #1111:WITHDRAW 1111000 10.0\n");
    EXPECT_THROW(recover(tmp.path(), 1111), CorruptLog);

    write_file(msglog_path(tmp.path(), 1111), "BANK #1111:DEPOSIT 1111000 10.0\n");
    EXPECT_THROW(recover(tmp.path(), 1111), CorruptLog);
}

TEST(Replay, NestedTransferStartIsCorruption) {
    TempDir tmp;
    write_file(msglog_path(tmp.path(), 1111),
               "BANK #1111:TRANSFER START 1111000-1112000\n"
               "BANK #1111:TRANSFER START 1111001-1112000\n");
    EXPECT_THROW(recover(tmp.path(), 1111), CorruptLog);
}

TEST(Replay, StrayCloseIsCorruption) {
    TempDir tmp;
    write_file(msglog_path(tmp.path(), 1111), "BANK #1111:TRANSFER COMMIT 1111000-1112000\n");
    EXPECT_THROW(recover(tmp.path(), 1111), CorruptLog);
}

TEST(Replay, WrongBranchRecordIsCorruption) {
    TempDir tmp;
    write_file(msglog_path(tmp.path(), 1111), "BANK #1112:OPEN 1112000\n");
    EXPECT_THROW(recover(tmp.path(), 1111), CorruptLog);
}

TEST(DeleteLog, RemovesFileAndResetsCount) {
    TempDir tmp;
    LogStore store(tmp.path(), 1111);
    store.append(LogRecord::open(1111000));
    store.delete_log();
    EXPECT_EQ(store.record_count(), 0u);
    EXPECT_FALSE(std::filesystem::exists(store.path()));

    store.delete_log();  // absent file is a no-op
    EXPECT_EQ(store.append(LogRecord::open(1111000)), 1u);
}

TEST(CheckpointCommit, InterruptedWriteLeavesOldFileIntact) {
    TempDir tmp;
    BranchState s;
    s.branch = 1111;
    write_file(checkpoint_path(tmp.path(), 1111), "BANK #1111:1111000 50.0\n");
    // a crash between temp write and rename leaves only the .writing file
    write_file(checkpoint_path(tmp.path(), 1111).string() + ".writing", "BANK #1111:garbage");

    Recovered rec = recover(tmp.path(), 1111);
    EXPECT_EQ(rec.state.accounts.at(1111000).cents, 5000);
    EXPECT_FALSE(
        std::filesystem::exists(checkpoint_path(tmp.path(), 1111).string() + ".writing"));
}

TEST(CheckpointCommit, StagedCheckpointIsPromotedAndStaleLogDropped) {
    TempDir tmp;
    // crash happened after the new checkpoint was staged but before the log
    // was deleted: the staged state already contains the logged deposit
    write_file(checkpoint_path(tmp.path(), 1111), "BANK #1111:1111000 50.0\n");
    write_file(msglog_path(tmp.path(), 1111), "BANK #1111:DEPOSIT 1111000 10.0\n");
    BranchState staged;
    staged.branch = 1111;
    staged.accounts[1111000] = cents(6000);
    staged.next_seq = 1;
    checkpoint_stage(tmp.path(), staged);

    Recovered rec = recover(tmp.path(), 1111);
    EXPECT_EQ(rec.state.accounts.at(1111000).cents, 6000);  // applied exactly once
    EXPECT_EQ(rec.record_count, 0u);
    EXPECT_FALSE(std::filesystem::exists(msglog_path(tmp.path(), 1111)));
    EXPECT_FALSE(std::filesystem::exists(checkpoint_ready_path(tmp.path(), 1111)));
}

TEST(CheckpointCommit, FullSequenceSurvivesReboot) {
    TempDir tmp;
    BranchState s;
    s.branch = 1111;
    LogStore store(tmp.path(), 1111);
    AccountId a = open_account(s);
    store.append(LogRecord::open(a));
    deposit(s, a, cents(12345));
    store.append(LogRecord::deposit(a, cents(12345)));

    checkpoint_stage(tmp.path(), s);
    store.delete_log();
    checkpoint_publish(tmp.path(), 1111);

    Recovered rec = recover(tmp.path(), 1111);
    EXPECT_EQ(rec.state, s);
    EXPECT_EQ(rec.record_count, 0u);
}

// The master recovery invariant: at any quiescent moment, checkpoint + replay
// reproduces the live state exactly.
TEST(Properties, RecoverEqualsLiveStateAfterRandomOps) {
    std::mt19937_64 rng(99);
    for (int round = 0; round < 20; ++round) {
        TempDir tmp;
        BranchState live;
        live.branch = 1111;
        LogStore store(tmp.path(), 1111);
        int ops = 30 + static_cast<int>(rng() % 50);
        for (int i = 0; i < ops; ++i) {
            try {
                switch (rng() % 4) {
                case 0: {
                    AccountId a = open_account(live);
                    store.append(LogRecord::open(a));
                    break;
                }
                case 1: {
                    AccountId a = 1111000 + static_cast<long long>(rng() % 10);
                    Amount amt = cents(1 + rng() % 10000);
                    deposit(live, a, amt);
                    store.append(LogRecord::deposit(a, amt));
                    break;
                }
                case 2: {
                    AccountId a = 1111000 + static_cast<long long>(rng() % 10);
                    Amount amt = cents(1 + rng() % 10000);
                    withdraw(live, a, amt);
                    store.append(LogRecord::withdraw(a, amt));
                    break;
                }
                case 3: {
                    // occasionally checkpoint and truncate, as the server would
                    checkpoint_stage(tmp.path(), live);
                    store.delete_log();
                    checkpoint_publish(tmp.path(), 1111);
                    break;
                }
                }
            } catch (const LedgerError&) {
                // failed ops are never logged
            }
        }
        Recovered rec = recover(tmp.path(), 1111);
        EXPECT_EQ(rec.state, live) << "round " << round;
        EXPECT_EQ(rec.record_count, store.record_count()) << "round " << round;

        // replay is deterministic: a second recovery gives the identical state
        Recovered again = recover(tmp.path(), 1111);
        EXPECT_EQ(again.state, rec.state);
    }
}
