#pragma once

// Declarative fault scenarios: plain text files, one step per line, executed
// against real processes on loopback. The step vocabulary covers component
// lifecycle (start/kill/restart with crash points), client operations, raw
// frames, timed/conditional waits, and assertions over live state, log and
// checkpoint files, and coordinator events.

#include <fstream>
#include <map>
#include <sstream>

#include "bank/harness.hpp"
#include "bank/rm.hpp"

namespace bank::harness {

class ScenarioRunner {
public:
    struct Options {
        std::filesystem::path bindir;   // bankserver/bankrm/bankmon location
        std::filesystem::path workdir;  // scratch space, created if missing
        bool verbose = false;
    };

    struct Verdict {
        enum class Kind { Pass, Fail, EnvError };
        Kind kind = Kind::Pass;
        int line = 0;
        std::string message;
        bool passed() const { return kind == Kind::Pass; }
    };

    explicit ScenarioRunner(Options opt) : opt_(std::move(opt)) {
        std::filesystem::create_directories(opt_.workdir);
        std::filesystem::create_directories(data_dir());
    }

    ~ScenarioRunner() { cleanup(); }

    Verdict run_file(const std::filesystem::path& file) {
        scenario_dir_ = file.parent_path();
        std::ifstream in(file);
        if (!in) return {Verdict::Kind::EnvError, 0, "cannot open " + file.string()};
        std::string line;
        int line_no = 0;
        try {
            while (std::getline(in, line)) {
                ++line_no;
                auto tok = tokenize(line);
                if (tok.empty()) continue;
                if (opt_.verbose) std::fprintf(stderr, "[faultlab] %4d | %s\n", line_no, line.c_str());
                try {
                    step(tok);
                } catch (const StepFail& f) {
                    return {Verdict::Kind::Fail, line_no, f.msg + "  [" + line + "]"};
                }
            }
        } catch (const std::exception& e) {
            return {Verdict::Kind::EnvError, line_no, e.what()};
        }
        return {};
    }

private:
    struct StepFail {
        std::string msg;
    };

    struct Component {
        std::string name;
        std::string kind;  // server | rm | monitor
        BranchId branch = 0;
        int port = 0;
        std::vector<std::string> argv;
        std::vector<std::string> env;
        std::filesystem::path out_file;
        std::filesystem::path event_log;  // rm only
        ChildProcess proc;
    };

    static std::vector<std::string> tokenize(const std::string& line) {
        std::vector<std::string> tok;
        std::istringstream in(line);
        std::string t;
        while (in >> t) tok.push_back(t);
        if (!tok.empty() && tok[0][0] == '#') return {};
        return tok;
    }

    std::filesystem::path data_dir() const { return opt_.workdir / "data"; }

    std::string setting(const std::string& key, const std::string& fallback) const {
        auto it = settings_.find(key);
        return it == settings_.end() ? fallback : it->second;
    }

    Component& comp(const std::string& name) {
        auto it = components_.find(name);
        if (it == components_.end()) throw StepFail{"unknown component '" + name + "'"};
        return it->second;
    }

    static void fail_unless(bool ok, const std::string& msg) {
        if (!ok) throw StepFail{msg};
    }

    template <typename Pred>
    static bool poll_until(milliseconds timeout, Pred pred) {
        auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (pred()) return true;
            if (std::chrono::steady_clock::now() >= deadline) return pred();
            std::this_thread::sleep_for(milliseconds(15));
        }
    }

    // ---- step dispatch ---------------------------------------------------

    void step(const std::vector<std::string>& tok) {
        const std::string& op = tok[0];
        if (op == "set" && tok.size() == 3) {
            settings_[tok[1]] = tok[2];
        } else if (op == "seed" && tok.size() == 3) {
            seed(std::stoll(tok[1]), parse_amount(tok[2]));
        } else if (op == "start" && tok.size() >= 3) {
            start_component(tok[1], tok[2], {tok.begin() + 3, tok.end()});
        } else if (op == "kill" && tok.size() == 2) {
            comp(tok[1]).proc.kill9();
        } else if (op == "restart" && tok.size() >= 2) {
            restart_component(comp(tok[1]), {tok.begin() + 2, tok.end()});
        } else if (op == "client" && tok.size() >= 3) {
            client_step(tok);
        } else if (op == "send" && tok.size() >= 3) {
            std::string frame;
            for (std::size_t i = 2; i < tok.size(); ++i) frame += (i > 2 ? " " : "") + tok[i];
            net::send_frame("127.0.0.1", comp(tok[1]).port, frame + "\n", milliseconds(1000));
        } else if (op == "wait" && tok.size() == 2) {
            std::this_thread::sleep_for(parse_duration(tok[1]));
        } else if (op == "wait_up" && tok.size() >= 2) {
            auto timeout = tok.size() > 2 ? parse_duration(tok[2]) : milliseconds(5000);
            fail_unless(wait_server_up("127.0.0.1", comp(tok[1]).port, timeout),
                        tok[1] + " did not come up");
        } else if (op == "wait_down" && tok.size() >= 2) {
            auto timeout = tok.size() > 2 ? parse_duration(tok[2]) : milliseconds(3000);
            fail_unless(wait_port_down("127.0.0.1", comp(tok[1]).port, timeout),
                        tok[1] + " still accepting connections");
        } else if (op == "wait_exit" && tok.size() >= 2) {
            auto timeout = tok.size() > 2 ? parse_duration(tok[2]) : milliseconds(3000);
            fail_unless(comp(tok[1]).proc.wait_exit(timeout), tok[1] + " did not exit");
        } else if (op == "wait_event" && tok.size() >= 4) {
            auto timeout = tok.size() > 4 ? parse_duration(tok[4]) : milliseconds(5000);
            Component& c = comp(tok[1]);
            std::size_t want = std::stoull(tok[3]);
            fail_unless(poll_until(timeout,
                                   [&] { return count_events(c, tok[2]) >= want; }),
                        "expected " + tok[3] + " " + tok[2] + " events, got " +
                            std::to_string(count_events(c, tok[2])));
        } else if (op == "wait_no_msglog" && tok.size() >= 2) {
            auto timeout = tok.size() > 2 ? parse_duration(tok[2]) : milliseconds(5000);
            Component& c = comp(tok[1]);
            fail_unless(poll_until(timeout,
                                   [&] {
                                       return !std::filesystem::exists(
                                           msglog_path(data_dir(), c.branch));
                                   }),
                        "message log of " + tok[1] + " still present");
        } else if (op == "assert" && tok.size() >= 2) {
            assert_step({tok.begin() + 1, tok.end()});
        } else {
            throw StepFail{"unrecognized step '" + op + "'"};
        }
    }

    // ---- components ------------------------------------------------------

    void seed(AccountId acct, Amount balance) {
        BranchId branch = account_branch(acct);
        auto path = checkpoint_path(data_dir(), branch);
        std::ofstream out(path, std::ios::app);
        out << encode_checkpoint_line(branch, {acct, balance}) << "\n";
    }

    void start_component(const std::string& kind, const std::string& name,
                         const std::vector<std::string>& extra) {
        if (components_.count(name)) throw StepFail{"component '" + name + "' already started"};
        Component c;
        c.name = name;
        c.kind = kind;
        c.out_file = opt_.workdir / (name + ".out");

        std::map<std::string, std::string> kv;
        for (const auto& e : extra) {
            auto eq = e.find('=');
            if (eq == std::string::npos) throw StepFail{"expected key=value, got '" + e + "'"};
            kv[e.substr(0, eq)] = e.substr(eq + 1);
        }

        if (kind == "server") {
            if (!kv.count("branch")) throw StepFail{"server start needs branch=<id>"};
            c.branch = std::stoi(kv["branch"]);
            c.port = c.branch;
            c.argv = server_argv(c.branch, kv);
            if (kv.count("crash")) c.env.push_back("BANK_CRASH_POINT=" + kv["crash"]);
        } else if (kind == "rm") {
            c.port = std::stoi(setting("rm_port", "3000"));
            c.event_log = opt_.workdir / (name + ".events");
            c.argv = {bin("bankrm"),
                      "--port", std::to_string(c.port),
                      "--msg-timeout", setting("msg_timeout", "2s"),
                      "--restart-grace", setting("restart_grace", "2s"),
                      "--event-log", c.event_log.string(),
                      "--restart-cmd", restart_template()};
        } else if (kind == "monitor") {
            c.port = std::stoi(setting("monitor_port", "3100"));
            c.argv = {bin("bankmon"),
                      "--port", std::to_string(c.port),
                      "--rm-port", setting("rm_port", "3000"),
                      "--timeout", setting("monitor_timeout", "350ms")};
        } else {
            throw StepFail{"unknown component kind '" + kind + "'"};
        }

        c.proc = spawn(c.argv, c.out_file, c.env);
        std::this_thread::sleep_for(milliseconds(30));
        if (!c.proc.running())
            throw std::runtime_error(name + " exited immediately, see " + c.out_file.string());
        components_[name] = std::move(c);
    }

    void restart_component(Component& c, const std::vector<std::string>& extra) {
        if (c.proc.running()) throw StepFail{c.name + " is still running"};
        std::vector<std::string> env;
        for (const auto& e : extra) {
            auto eq = e.find('=');
            if (eq != std::string::npos && e.substr(0, eq) == "crash")
                env.push_back("BANK_CRASH_POINT=" + e.substr(eq + 1));
        }
        c.env = env;  // a restart is clean unless a new crash point is given
        c.proc = spawn(c.argv, c.out_file, c.env);
        std::this_thread::sleep_for(milliseconds(30));
        if (!c.proc.running())
            throw std::runtime_error(c.name + " exited immediately, see " + c.out_file.string());
    }

    std::string bin(const std::string& name) const { return (opt_.bindir / name).string(); }

    std::vector<std::string> server_argv(BranchId branch,
                                         const std::map<std::string, std::string>& kv) {
        auto get = [&](const char* k, const std::string& fallback) {
            auto it = kv.find(k);
            return it == kv.end() ? setting(k, fallback) : it->second;
        };
        return {bin("bankserver"),
                "--branch", std::to_string(branch),
                "--data-dir", data_dir().string(),
                "--rm-port", setting("rm_port", "3000"),
                "--monitor-port", setting("monitor_port", "3100"),
                "--heartbeat", get("heartbeat", "100ms"),
                "--threshold", get("threshold", "10"),
                "--peer-timeout", get("peer_timeout", "500ms"),
                "--msg-timeout", get("msg_timeout", "2s"),
                "--ack-timeout", get("ack_timeout", "200ms")};
    }

    // Command the coordinator uses to relaunch a crashed server, with the
    // same scaled timings as directly started ones.
    std::string restart_template() {
        std::string out = bin("bankserver");
        out += " --branch {branch}";
        out += " --data-dir " + data_dir().string();
        out += " --rm-port " + setting("rm_port", "3000");
        out += " --monitor-port " + setting("monitor_port", "3100");
        out += " --heartbeat " + setting("heartbeat", "100ms");
        out += " --threshold " + setting("threshold", "10");
        out += " --peer-timeout " + setting("peer_timeout", "500ms");
        out += " --msg-timeout " + setting("msg_timeout", "2s");
        out += " --ack-timeout " + setting("ack_timeout", "200ms");
        out += " >> " + (opt_.workdir / "respawn_{branch}.out").string() + " 2>&1";
        return out;
    }

    // ---- client steps ------------------------------------------------------

    void client_step(const std::vector<std::string>& tok) {
        Component& c = comp(tok[1]);
        const std::string& op = tok[2];
        std::size_t i = 3;
        ControlMessage req;
        if (op == "open") {
            req = ReqOpen{};
        } else if (op == "deposit") {
            req = ReqDeposit{std::stoll(tok.at(i)), parse_amount(tok.at(i + 1))};
            i += 2;
        } else if (op == "withdraw") {
            req = ReqWithdraw{std::stoll(tok.at(i)), parse_amount(tok.at(i + 1))};
            i += 2;
        } else if (op == "balance") {
            req = ReqBalance{std::stoll(tok.at(i))};
            i += 1;
        } else if (op == "transfer") {
            req = ReqTransfer{std::stoll(tok.at(i)), std::stoll(tok.at(i + 1)),
                              parse_amount(tok.at(i + 2))};
            i += 3;
        } else if (op == "accounts") {
            req = ReqAccounts{};
        } else {
            throw StepFail{"unknown client op '" + op + "'"};
        }

        std::string expect = i < tok.size() ? tok[i] : "ok";
        std::string expect_val;
        for (std::size_t j = i + 1; j < tok.size(); ++j)
            expect_val += (j > i + 1 ? " " : "") + tok[j];

        Reply reply;
        try {
            reply = client_request("127.0.0.1", c.port, req, milliseconds(10000));
        } catch (const std::exception& e) {
            if (expect == "any") return;  // process may well have died mid-request
            throw StepFail{std::string("request failed: ") + e.what()};
        }
        if (expect == "any") return;
        if (expect == "ok") {
            fail_unless(reply.ok, "expected OK, got ERR " + reply.text);
            if (!expect_val.empty())
                fail_unless(reply.text == expect_val,
                            "expected payload '" + expect_val + "', got '" + reply.text + "'");
        } else if (expect == "err") {
            fail_unless(!reply.ok, "expected ERR, got OK " + reply.text);
            if (!expect_val.empty())
                fail_unless(reply.text == expect_val,
                            "expected error '" + expect_val + "', got '" + reply.text + "'");
        } else {
            throw StepFail{"bad expectation '" + expect + "'"};
        }
    }

    // ---- assertions --------------------------------------------------------

    void assert_step(const std::vector<std::string>& tok) {
        const std::string& what = tok[0];
        if (what == "balance" && tok.size() == 4) {
            Amount got = remote_balance("127.0.0.1", comp(tok[1]).port, std::stoll(tok[2]));
            Amount want = parse_amount(tok[3]);
            fail_unless(got == want, "balance is " + format_amount(got));
        } else if (what == "accounts" && tok.size() == 3) {
            auto got = list_remote_accounts("127.0.0.1", comp(tok[1]).port);
            std::vector<AccountId> want;
            if (tok[2] != "none") {
                std::istringstream in(tok[2]);
                std::string part;
                while (std::getline(in, part, ',')) want.push_back(std::stoll(part));
            }
            std::string got_s;
            for (AccountId a : got) got_s += std::to_string(a) + ",";
            fail_unless(got == want, "accounts are " + got_s);
        } else if (what == "sum" && tok.size() == 3) {
            std::vector<int> ports;
            std::istringstream in(tok[1]);
            std::string part;
            while (std::getline(in, part, ',')) ports.push_back(comp(part).port);
            Amount got = global_sum("127.0.0.1", ports);
            fail_unless(got == parse_amount(tok[2]), "sum is " + format_amount(got));
        } else if (what == "log" && tok.size() == 3) {
            Component& c = comp(tok[1]);
            std::string want = slurp(scenario_dir_ / tok[2]);
            auto path = msglog_path(data_dir(), c.branch);
            // the receiving side commits shortly after the leader's reply
            poll_until(milliseconds(2000),
                       [&] { return std::filesystem::exists(path) && slurp(path) == want; });
            fail_unless(std::filesystem::exists(path), "log file missing");
            std::string got = slurp(path);
            fail_unless(got == want, "log differs:\n--- got ---\n" + got);
        } else if (what == "no_msglog" && tok.size() == 2) {
            Component& c = comp(tok[1]);
            fail_unless(!std::filesystem::exists(msglog_path(data_dir(), c.branch)),
                        "message log still present");
        } else if (what == "msglog_lines" && tok.size() == 3) {
            Component& c = comp(tok[1]);
            auto path = msglog_path(data_dir(), c.branch);
            std::size_t want = std::stoull(tok[2]);
            std::size_t got =
                std::filesystem::exists(path) ? detail::read_lines(path).size() : 0;
            fail_unless(got == want, "log has " + std::to_string(got) + " lines");
        } else if (what == "logshape" && tok.size() == 2) {
            Component& c = comp(tok[1]);
            std::string why;
            fail_unless(log_shape_ok(msglog_path(data_dir(), c.branch), &why), "bad shape: " + why);
        } else if (what == "ckpt_live_match" && tok.size() == 2) {
            Component& c = comp(tok[1]);
            BranchState from_disk = load_checkpoint(checkpoint_path(data_dir(), c.branch), c.branch);
            replay(from_disk, msglog_path(data_dir(), c.branch));
            for (AccountId acct : list_remote_accounts("127.0.0.1", c.port)) {
                Amount live = remote_balance("127.0.0.1", c.port, acct);
                fail_unless(from_disk.accounts.count(acct) &&
                                from_disk.accounts.at(acct) == live,
                            "account " + std::to_string(acct) + " differs from stable storage");
                from_disk.accounts.erase(acct);
            }
            fail_unless(from_disk.accounts.empty(), "stable storage has extra accounts");
        } else if (what == "ckpt_absent" && tok.size() == 2) {
            Component& c = comp(tok[1]);
            fail_unless(!std::filesystem::exists(checkpoint_path(data_dir(), c.branch)),
                        "checkpoint file exists");
        } else if (what == "session_outcomes" && tok.size() == 3) {
            Component& c = comp(tok[1]);
            std::string got;
            for (const auto& ev : read_rm_events(c.event_log))
                if (ev.kind == "SESSION_END" && ev.args.size() >= 2)
                    got += (got.empty() ? "" : ",") + ev.args[1];
            fail_unless(got == tok[2], "session outcomes were '" + got + "'");
        } else if (what == "event_count" && tok.size() == 4) {
            Component& c = comp(tok[1]);
            std::size_t got = count_events(c, tok[2]);
            fail_unless(got == std::stoull(tok[3]),
                        "saw " + std::to_string(got) + " " + tok[2] + " events");
        } else if (what == "sessions_fifo" && tok.size() == 2) {
            check_sessions_fifo(comp(tok[1]));
        } else if (what == "spawned" && tok.size() == 3) {
            Component& c = comp(tok[1]);
            bool found = false;
            for (const auto& ev : read_rm_events(c.event_log))
                if (ev.kind == "SPAWN" && !ev.args.empty() && ev.args[0] == tok[2]) found = true;
            fail_unless(found, "no SPAWN event for branch " + tok[2]);
        } else if (what == "down" && tok.size() == 2) {
            fail_unless(wait_port_down("127.0.0.1", comp(tok[1]).port, milliseconds(500)),
                        tok[1] + " still up");
        } else if (what == "up" && tok.size() == 2) {
            fail_unless(wait_server_up("127.0.0.1", comp(tok[1]).port, milliseconds(500)),
                        tok[1] + " not serving");
        } else {
            throw StepFail{"unrecognized assertion '" + what + "'"};
        }
    }

    void check_sessions_fifo(Component& c) {
        auto events = read_rm_events(c.event_log);
        std::vector<std::pair<long long, long long>> sessions;
        for (const auto& ev : events) {
            if (ev.kind == "SESSION_START") sessions.push_back({ev.ns, 0});
            if (ev.kind == "SESSION_END" && !sessions.empty()) sessions.back().second = ev.ns;
        }
        fail_unless(sessions.size() >= 2, "need at least two sessions to check FIFO");
        for (std::size_t i = 0; i < sessions.size(); ++i) {
            fail_unless(sessions[i].second != 0, "session without end event");
            if (i > 0)
                fail_unless(sessions[i - 1].second <= sessions[i].first,
                            "session intervals overlap");
        }
    }

    std::size_t count_events(Component& c, const std::string& kind) {
        std::size_t n = 0;
        for (const auto& ev : read_rm_events(c.event_log))
            if (ev.kind == kind) ++n;
        return n;
    }

    static std::string slurp(const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void cleanup() {
        // coordinator-respawned servers first; they are not our children
        for (auto& [name, c] : components_) {
            if (c.kind != "rm" || c.event_log.empty()) continue;
            for (const auto& ev : read_rm_events(c.event_log))
                if (ev.kind == "SPAWN" && ev.args.size() == 2)
                    ::kill(static_cast<pid_t>(std::stoll(ev.args[1])), SIGKILL);
        }
        for (auto& [name, c] : components_) c.proc.kill9();
        components_.clear();
    }

    Options opt_;
    std::filesystem::path scenario_dir_;
    std::map<std::string, std::string> settings_;
    std::map<std::string, Component> components_;
};

}  // namespace bank::harness
