#include "bank/dependency_pool.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <vector>

using namespace bank;
using Group = DependencyPool::Group;

namespace {

std::set<Group> as_set(const std::vector<Group>& groups) {
    return std::set<Group>(groups.begin(), groups.end());
}

// Brute-force partition by repeated set union, independent of the pool's
// four-case logic.
class PartitionOracle {
public:
    void add(BranchId a, BranchId b) {
        if (a == b) return;
        Group merged{a, b};
        std::vector<Group> rest;
        for (auto& g : groups_) {
            if (g.count(a) || g.count(b))
                merged.insert(g.begin(), g.end());
            else
                rest.push_back(g);
        }
        rest.push_back(merged);
        groups_ = std::move(rest);
    }
    std::set<Group> snapshot() const { return std::set<Group>(groups_.begin(), groups_.end()); }

private:
    std::vector<Group> groups_;
};

void expect_disjoint(const std::vector<Group>& groups) {
    std::set<BranchId> seen;
    for (const auto& g : groups) {
        EXPECT_FALSE(g.empty());
        for (BranchId b : g) {
            EXPECT_TRUE(seen.insert(b).second) << "branch " << b << " in two groups";
        }
    }
}

}  // namespace

TEST(Pool, NewPairMakesNewGroup) {
    DependencyPool pool;
    pool.record_dependency(1111, 1112);
    EXPECT_EQ(as_set(pool.groups()), (std::set<Group>{{1111, 1112}}));
}

TEST(Pool, ExistingMemberAbsorbsNewcomer) {
    DependencyPool pool;
    pool.record_dependency(1111, 1112);
    pool.record_dependency(1112, 1113);
    EXPECT_EQ(as_set(pool.groups()), (std::set<Group>{{1111, 1112, 1113}}));
}

TEST(Pool, DependencyAcrossGroupsMergesThem) {
    DependencyPool pool;
    pool.record_dependency(1111, 1112);
    pool.record_dependency(1113, 1114);
    pool.record_dependency(1112, 1113);
    EXPECT_EQ(as_set(pool.groups()), (std::set<Group>{{1111, 1112, 1113, 1114}}));
}

TEST(Pool, SameGroupPairIsNoop) {
    DependencyPool pool;
    pool.record_dependency(1111, 1112);
    pool.record_dependency(1112, 1111);
    EXPECT_EQ(as_set(pool.groups()), (std::set<Group>{{1111, 1112}}));
}

TEST(Pool, SelfDependencyIgnored) {
    DependencyPool pool;
    pool.record_dependency(1111, 1111);
    EXPECT_TRUE(pool.empty());
}

TEST(Pool, FindGroup) {
    DependencyPool pool;
    pool.record_dependency(1111, 1112);
    EXPECT_EQ(pool.find_group(1112), (Group{1111, 1112}));
    EXPECT_EQ(pool.find_group(1113), std::nullopt);
    DependencyPool empty;
    EXPECT_EQ(empty.find_group(1111), std::nullopt);
}

TEST(Pool, RemoveMembersDropsEmptiedGroups) {
    DependencyPool pool;
    pool.record_dependency(1111, 1112);
    pool.record_dependency(1113, 1114);
    pool.remove_members({1111, 1112});
    EXPECT_EQ(as_set(pool.groups()), (std::set<Group>{{1113, 1114}}));
    pool.remove_members({1113, 1114});
    EXPECT_TRUE(pool.empty());
}

TEST(Pool, EnsureGroupOnlyAddsWhenAbsent) {
    DependencyPool pool;
    pool.ensure_group({1111});
    EXPECT_EQ(as_set(pool.groups()), (std::set<Group>{{1111}}));
    pool.ensure_group({1111});
    EXPECT_EQ(pool.groups().size(), 1u);
    pool.record_dependency(1111, 1112);
    pool.ensure_group({1111, 1112});
    EXPECT_EQ(as_set(pool.groups()), (std::set<Group>{{1111, 1112}}));
}

// 1000 random dependency sequences over at most 6 branches, checked after
// every step against the union oracle.
TEST(Pool, MatchesPartitionOracleOnRandomSequences) {
    std::mt19937_64 rng(2026);
    for (int seq = 0; seq < 1000; ++seq) {
        DependencyPool pool;
        PartitionOracle oracle;
        int steps = 1 + static_cast<int>(rng() % 12);
        for (int i = 0; i < steps; ++i) {
            BranchId a = 1111 + static_cast<BranchId>(rng() % 6);
            BranchId b = 1111 + static_cast<BranchId>(rng() % 6);
            pool.record_dependency(a, b);
            oracle.add(a, b);
            expect_disjoint(pool.groups());
            ASSERT_EQ(as_set(pool.groups()), oracle.snapshot())
                << "seq " << seq << " step " << i << " after (" << a << "," << b << ")";
        }
    }
}
