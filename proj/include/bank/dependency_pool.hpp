#pragma once

// Partition of branch ids into disjoint dependency groups. Branches linked by
// transfers since their last checkpoint must checkpoint together; the pool
// tracks who is linked to whom.

#include <algorithm>
#include <optional>
#include <set>
#include <vector>

#include "bank/types.hpp"

namespace bank {

class DependencyPool {
public:
    using Group = std::set<BranchId>;

    // Four cases: new pair, extend a group from either side, or merge two
    // groups. A self-dependency is ignored.
    void record_dependency(BranchId a, BranchId b) {
        if (a == b) return;
        auto ia = index_of(a);
        auto ib = index_of(b);
        if (!ia && !ib) {
            groups_.push_back({a, b});
        } else if (ia && !ib) {
            groups_[*ia].insert(b);
        } else if (!ia && ib) {
            groups_[*ib].insert(a);
        } else if (*ia != *ib) {
            groups_[*ia].insert(groups_[*ib].begin(), groups_[*ib].end());
            groups_.erase(groups_.begin() + static_cast<std::ptrdiff_t>(*ib));
        }
        // both already in the same group: nothing to do
    }

    std::optional<Group> find_group(BranchId b) const {
        auto i = index_of(b);
        if (!i) return std::nullopt;
        return groups_[*i];
    }

    // Drops the given members from the pool after they checkpointed together.
    void remove_members(const Group& members) {
        for (auto& g : groups_)
            for (BranchId b : members) g.erase(b);
        std::erase_if(groups_, [](const Group& g) { return g.empty(); });
    }

    // Keeps a group that must be retried later. No-op when any member is
    // already pooled (the original group is still intact in that case).
    void ensure_group(const Group& members) {
        for (BranchId b : members)
            if (index_of(b)) return;
        if (!members.empty()) groups_.push_back(members);
    }

    std::vector<Group> groups() const { return groups_; }
    bool empty() const { return groups_.empty(); }

private:
    std::optional<std::size_t> index_of(BranchId b) const {
        for (std::size_t i = 0; i < groups_.size(); ++i)
            if (groups_[i].count(b)) return i;
        return std::nullopt;
    }

    std::vector<Group> groups_;
};

}  // namespace bank
