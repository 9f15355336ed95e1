// Command-line bank client. Prints the OK payload on stdout; server errors go
// to stderr as "Bank Server error: <msg>" with exit code 1; unreachable or
// misbehaving servers exit with 2.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "bank/client.hpp"

namespace {

struct Target {
    std::string host;
    int port = 0;
};

Target parse_target(const std::string& s) {
    auto colon = s.rfind(':');
    if (colon == std::string::npos || colon + 1 >= s.size())
        throw CLI::ValidationError("--server", "expected HOST:PORT");
    return {s.substr(0, colon), std::stoi(s.substr(colon + 1))};
}

int run(const Target& t, const bank::ControlMessage& req) {
    try {
        bank::Reply reply = bank::client_request(t.host, t.port, req);
        if (reply.ok) {
            std::printf("%s\n", reply.text.c_str());
            return 0;
        }
        std::fprintf(stderr, "Bank Server error: %s\n", reply.text.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bankctl: %s\n", e.what());
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bank branch client"};
    app.require_subcommand(1);

    std::string server;
    app.add_option("--server", server, "branch server as HOST:PORT")
        ->envname("BANKCTL_SERVER")
        ->required();

    std::string acct, src, dst, amt;

    auto* open = app.add_subcommand("open", "open a new account, print its number");
    auto* deposit = app.add_subcommand("deposit", "deposit into an account, print the new balance");
    deposit->add_option("acct", acct)->required();
    deposit->add_option("amount", amt)->required();
    auto* withdraw =
        app.add_subcommand("withdraw", "withdraw from an account, print the new balance");
    withdraw->add_option("acct", acct)->required();
    withdraw->add_option("amount", amt)->required();
    auto* balance = app.add_subcommand("balance", "print an account's balance");
    balance->add_option("acct", acct)->required();
    auto* transfer =
        app.add_subcommand("transfer", "move money between accounts, print the source balance");
    transfer->add_option("src", src)->required();
    transfer->add_option("dst", dst)->required();
    transfer->add_option("amount", amt)->required();
    auto* accounts = app.add_subcommand("accounts", "list account numbers, newest first");

    CLI11_PARSE(app, argc, argv);

    try {
        Target t = parse_target(server);
        if (open->parsed()) return run(t, bank::ReqOpen{});
        if (deposit->parsed())
            return run(t, bank::ReqDeposit{std::stoll(acct), bank::parse_amount(amt)});
        if (withdraw->parsed())
            return run(t, bank::ReqWithdraw{std::stoll(acct), bank::parse_amount(amt)});
        if (balance->parsed()) return run(t, bank::ReqBalance{std::stoll(acct)});
        if (transfer->parsed())
            return run(t, bank::ReqTransfer{std::stoll(src), std::stoll(dst),
                                            bank::parse_amount(amt)});
        if (accounts->parsed()) return run(t, bank::ReqAccounts{});
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bankctl: %s\n", e.what());
        return 3;
    }
    return 3;
}
