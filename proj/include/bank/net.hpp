#pragma once

// Thin RAII layer over POSIX TCP sockets: line-oriented send/receive with
// deadlines, which is all the protocol needs. One logical exchange per
// connection.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>

namespace bank::net {

using std::chrono::milliseconds;

class NetError : public std::runtime_error {
public:
    explicit NetError(const std::string& what) : std::runtime_error(what) {}
};

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() { close(); }

    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
    Socket& operator=(Socket&& other) noexcept {
        if (this != &other) {
            close();
            fd_ = other.fd_;
            other.fd_ = -1;
        }
        return *this;
    }

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    void send_all(const std::string& bytes) {
        std::size_t off = 0;
        while (off < bytes.size()) {
            ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw NetError(std::string("send: ") + std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    // Reads up to and including '\n'. nullopt on orderly EOF before any byte.
    std::optional<std::string> recv_line(milliseconds timeout) {
        std::string line;
        auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            auto left = std::chrono::duration_cast<milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) throw NetError("recv: timed out");
            pollfd p{fd_, POLLIN, 0};
            int pr = ::poll(&p, 1, static_cast<int>(left.count()));
            if (pr < 0) {
                if (errno == EINTR) continue;
                throw NetError(std::string("poll: ") + std::strerror(errno));
            }
            if (pr == 0) throw NetError("recv: timed out");
            char c;
            ssize_t n = ::recv(fd_, &c, 1, 0);
            if (n == 0) {
                if (line.empty()) return std::nullopt;
                return line;  // unterminated final line
            }
            if (n < 0) {
                if (errno == EINTR) continue;
                throw NetError(std::string("recv: ") + std::strerror(errno));
            }
            if (c == '\n') return line;
            line += c;
            if (line.size() > 64 * 1024) throw NetError("recv: frame too long");
        }
    }

    // Waits for the peer to close. Distinguishes an orderly shutdown (the
    // peer consumed everything we sent) from a reset, which on this protocol
    // means bytes we sent were never read.
    enum class CloseKind { Clean, Reset, Timeout };
    CloseKind await_close(milliseconds timeout) {
        auto deadline = std::chrono::steady_clock::now() + timeout;
        bool saw_eof = false;
        for (;;) {
            auto left = std::chrono::duration_cast<milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) return saw_eof ? CloseKind::Clean : CloseKind::Timeout;
            if (saw_eof && left > milliseconds(50)) left = milliseconds(50);
            pollfd p{fd_, POLLIN, 0};
            int pr = ::poll(&p, 1, static_cast<int>(left.count()));
            if (pr < 0 && errno == EINTR) continue;
            if (pr <= 0) {
                if (saw_eof) return CloseKind::Clean;
                continue;
            }
            char buf[256];
            ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
            if (n < 0) {
                if (errno == EINTR) continue;
                return CloseKind::Reset;
            }
            if (n == 0) {
                if (saw_eof) return CloseKind::Clean;
                // FIN seen; linger briefly in case a reset is on its way
                saw_eof = true;
                deadline = std::chrono::steady_clock::now() + milliseconds(60);
            }
            // stray bytes are ignored
        }
    }

private:
    int fd_ = -1;
};

inline Socket connect_to(const std::string& host, int port, milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
        throw NetError("cannot resolve " + host);
    int fd = ::socket(res->ai_family, SOCK_STREAM | SOCK_NONBLOCK, 0);
    if (fd < 0) {
        freeaddrinfo(res);
        throw NetError(std::string("socket: ") + std::strerror(errno));
    }
    int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
    freeaddrinfo(res);
    if (rc != 0 && errno != EINPROGRESS) {
        int e = errno;
        ::close(fd);
        throw NetError("connect " + host + ":" + std::to_string(port) + ": " + std::strerror(e));
    }
    if (rc != 0) {
        pollfd p{fd, POLLOUT, 0};
        int pr = ::poll(&p, 1, static_cast<int>(timeout.count()));
        if (pr <= 0) {
            ::close(fd);
            throw NetError("connect " + host + ":" + std::to_string(port) + ": timed out");
        }
        int err = 0;
        socklen_t len = sizeof err;
        getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            ::close(fd);
            throw NetError("connect " + host + ":" + std::to_string(port) + ": " +
                           std::strerror(err));
        }
    }
    int flags = 0;
    // back to blocking mode; all reads go through poll anyway
    flags = fcntl(fd, F_GETFL, 0);
    fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return Socket(fd);
}

class Listener {
public:
    Listener() = default;
    ~Listener() { close(); }
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;
    Listener(Listener&& other) noexcept : fd_(other.fd_), port_(other.port_) { other.fd_ = -1; }
    Listener& operator=(Listener&& other) noexcept {
        if (this != &other) {
            close();
            fd_ = other.fd_;
            port_ = other.port_;
            other.fd_ = -1;
        }
        return *this;
    }

    // Binds and listens; throws NetError if the port is taken.
    static Listener bind(int port) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw NetError(std::string("socket: ") + std::strerror(errno));
        int one = 1;
        setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
        addr.sin_port = htons(static_cast<uint16_t>(port));
        if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
            ::listen(fd, 128) != 0) {
            int e = errno;
            ::close(fd);
            throw NetError("bind port " + std::to_string(port) + ": " + std::strerror(e));
        }
        Listener l;
        l.fd_ = fd;
        l.port_ = port;
        return l;
    }

    bool valid() const { return fd_ >= 0; }
    int port() const { return port_; }

    // Accepts one connection; nullopt if the listener was shut down.
    std::optional<Socket> accept() {
        for (;;) {
            int fd = ::accept(fd_, nullptr, nullptr);
            if (fd >= 0) {
                int one = 1;
                setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                return Socket(fd);
            }
            if (errno == EINTR) continue;
            return std::nullopt;
        }
    }

    // Unblocks a pending accept() from another thread.
    void shutdown() {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
    int port_ = 0;
};

// One-shot exchange: connect, send a frame, optionally read one reply line.
inline void send_frame(const std::string& host, int port, const std::string& frame,
                       milliseconds timeout) {
    Socket s = connect_to(host, port, timeout);
    s.send_all(frame);
}

inline std::string request_reply(const std::string& host, int port, const std::string& frame,
                                 milliseconds timeout) {
    Socket s = connect_to(host, port, timeout);
    s.send_all(frame);
    auto line = s.recv_line(timeout);
    if (!line) throw NetError("peer closed without replying");
    return *line;
}

}  // namespace bank::net
