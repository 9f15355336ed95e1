#pragma once

// In-memory branch state and the pure account operations. No networking,
// no persistence; the server layer provides mutual exclusion.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bank/types.hpp"

namespace bank {

class LedgerError : public std::runtime_error {
public:
    explicit LedgerError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string unknown_account_msg(AccountId acct) {
    return "Account #" + std::to_string(acct) + " does not exists.";
}

struct BranchState {
    BranchId branch = 0;
    std::map<AccountId, Amount> accounts;
    int next_seq = 0;

    friend bool operator==(const BranchState&, const BranchState&) = default;
};

inline AccountId open_account(BranchState& s) {
    if (s.next_seq >= kAccountsPerBranch)
        throw LedgerError("Branch " + std::to_string(s.branch) + " has no free account numbers.");
    AccountId acct = make_account(s.branch, s.next_seq);
    s.accounts[acct] = Amount{0};
    ++s.next_seq;
    return acct;
}

inline Amount balance(const BranchState& s, AccountId acct) {
    auto it = s.accounts.find(acct);
    if (it == s.accounts.end()) throw LedgerError(unknown_account_msg(acct));
    return it->second;
}

inline Amount deposit(BranchState& s, AccountId acct, Amount amt) {
    auto it = s.accounts.find(acct);
    if (it == s.accounts.end()) throw LedgerError(unknown_account_msg(acct));
    if (amt.cents <= 0) throw LedgerError("Amount must be positive.");
    it->second = it->second + amt;
    return it->second;
}

inline Amount withdraw(BranchState& s, AccountId acct, Amount amt) {
    auto it = s.accounts.find(acct);
    if (it == s.accounts.end()) throw LedgerError(unknown_account_msg(acct));
    if (amt.cents <= 0) throw LedgerError("Amount must be positive.");
    if (amt > it->second)
        throw LedgerError("Insufficient funds in account #" + std::to_string(acct) + ".");
    it->second = it->second - amt;
    return it->second;
}

// All account ids, descending. The checkpoint file uses this order.
inline std::vector<AccountId> list_accounts(const BranchState& s) {
    std::vector<AccountId> out;
    out.reserve(s.accounts.size());
    for (auto it = s.accounts.rbegin(); it != s.accounts.rend(); ++it) out.push_back(it->first);
    return out;
}

inline Amount total_balance(const BranchState& s) {
    Amount sum{0};
    for (const auto& [acct, bal] : s.accounts) sum = sum + bal;
    return sum;
}

}  // namespace bank
