#pragma once

// One-shot client exchange with a branch server: send a request frame, read
// the OK/ERR reply. Shared by the bankctl tool, the fault harness, and tests.

#include <string>

#include "bank/net.hpp"
#include "bank/wire.hpp"

namespace bank {

struct Reply {
    bool ok = false;
    std::string text;  // OK payload or error message
};

inline Reply client_request(const std::string& host, int port, const ControlMessage& req,
                            std::chrono::milliseconds timeout = std::chrono::milliseconds(5000)) {
    std::string line = net::request_reply(host, port, encode_control(req), timeout);
    ControlMessage resp = parse_control(line);
    if (auto* ok = std::get_if<RespOk>(&resp)) return {true, ok->payload};
    if (auto* err = std::get_if<RespErr>(&resp)) return {false, err->msg};
    throw ParseError("unexpected reply: '" + line + "'");
}

}  // namespace bank
