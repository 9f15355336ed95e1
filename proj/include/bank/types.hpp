#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bank {

// Branch ids double as TCP listen ports.
inline constexpr int kBranchMin = 1111;
inline constexpr int kBranchMax = 2111;

// Accounts are numbered branch*1000 + seq, seq in [0, 999].
inline constexpr int kAccountsPerBranch = 1000;

using BranchId = int;
using AccountId = long long;

inline bool is_valid_branch(BranchId b) { return b >= kBranchMin && b <= kBranchMax; }

inline BranchId account_branch(AccountId acct) {
    return static_cast<BranchId>(acct / kAccountsPerBranch);
}

inline int account_seq(AccountId acct) {
    return static_cast<int>(acct % kAccountsPerBranch);
}

inline AccountId make_account(BranchId branch, int seq) {
    return static_cast<AccountId>(branch) * kAccountsPerBranch + seq;
}

// Money is integer cents. The decimal text form ("1000.0", "10.55") is a
// rendering concern handled by format_amount/parse_amount.
struct Amount {
    std::int64_t cents = 0;

    friend auto operator<=>(const Amount&, const Amount&) = default;
    friend Amount operator+(Amount a, Amount b) { return Amount{a.cents + b.cents}; }
    friend Amount operator-(Amount a, Amount b) { return Amount{a.cents - b.cents}; }
};

inline Amount cents(std::int64_t c) { return Amount{c}; }

class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Minimal number of fraction digits, but at least one: "1000.0", "10.5", "10.55".
inline std::string format_amount(Amount a) {
    std::string out = std::to_string(a.cents / 100);
    int frac = static_cast<int>(a.cents % 100);
    if (frac < 0) frac = -frac;  // stored balances are non-negative; be safe anyway
    out += '.';
    if (frac % 10 == 0) {
        out += static_cast<char>('0' + frac / 10);
    } else {
        out += static_cast<char>('0' + frac / 10);
        out += static_cast<char>('0' + frac % 10);
    }
    return out;
}

// Accepts an integer or a decimal with at most two fraction digits.
// Finer precision or anything malformed is a parse error, never rounded.
inline Amount parse_amount(const std::string& s) {
    if (s.empty()) throw ParseError("empty amount");
    std::size_t i = 0;
    std::int64_t whole = 0;
    if (s[i] == '-') throw ParseError("negative amount: " + s);
    std::size_t digits = 0;
    for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i, ++digits) {
        if (whole > (INT64_MAX - 9) / 10) throw ParseError("amount overflow: " + s);
        whole = whole * 10 + (s[i] - '0');
    }
    if (digits == 0) throw ParseError("malformed amount: " + s);
    std::int64_t frac = 0;
    if (i < s.size()) {
        if (s[i] != '.') throw ParseError("malformed amount: " + s);
        ++i;
        std::size_t frac_digits = 0;
        for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i, ++frac_digits) {
            if (frac_digits < 2) frac = frac * 10 + (s[i] - '0');
        }
        if (frac_digits == 0 || frac_digits > 2) {
            throw ParseError("amount must have 1 or 2 fraction digits: " + s);
        }
        if (frac_digits == 1) frac *= 10;
        if (i != s.size()) throw ParseError("malformed amount: " + s);
    }
    if (whole > (INT64_MAX - frac) / 100) throw ParseError("amount overflow: " + s);
    return Amount{whole * 100 + frac};
}

}  // namespace bank
