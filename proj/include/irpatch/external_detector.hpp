#pragma once

#include <cerrno>
#include <csignal>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "irpatch/detect.hpp"
#include "irpatch/wire.hpp"

namespace irpatch {

/// A bidirectional stream of newline-terminated messages.
class LineChannel {
public:
    /// Raised for I/O failures; the detector attaches the request id.
    class Failure : public Error {
    public:
        using Error::Error;
    };

    virtual ~LineChannel() = default;
    virtual void send_line(const std::string& line) = 0;
    virtual std::string receive_line() = 0;
};

namespace detail {

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

/// Line framing over a pair of file descriptors.
class FdLineChannel : public LineChannel {
public:
    FdLineChannel(int read_fd, int write_fd, int timeout_ms) : rfd_(read_fd), wfd_(write_fd), timeout_ms_(timeout_ms) {}

    void send_line(const std::string& line) override {
        const std::string msg = line + "\n";
        std::size_t off = 0;
        while (off < msg.size()) {
            const ssize_t n = write_some(msg.data() + off, msg.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Failure(errno_text("write to detector peer failed"));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::string receive_line() override {
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            pollfd p{rfd_, POLLIN, 0};
            const int ready = ::poll(&p, 1, timeout_ms_);
            if (ready < 0) {
                if (errno == EINTR) continue;
                throw Failure(errno_text("poll on detector peer failed"));
            }
            if (ready == 0) throw Failure("detector peer did not answer within " + std::to_string(timeout_ms_) + " ms");
            char chunk[65536];
            const ssize_t n = ::read(rfd_, chunk, sizeof chunk);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Failure(errno_text("read from detector peer failed"));
            }
            if (n == 0) throw Failure("detector peer closed the connection");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

protected:
    virtual ssize_t write_some(const char* data, std::size_t n) { return ::write(wfd_, data, n); }

    int rfd_ = -1;
    int wfd_ = -1;
    int timeout_ms_;
    std::string buffer_;
};

}  // namespace detail

/// Runs `/bin/sh -c command` and talks to it over its stdin/stdout.
class ChildProcessChannel final : public detail::FdLineChannel {
public:
    explicit ChildProcessChannel(const std::string& command, int timeout_ms = 60000) : FdLineChannel(-1, -1, timeout_ms) {
        int to_child[2], from_child[2];
        if (::pipe2(to_child, O_CLOEXEC) != 0) throw Failure(detail::errno_text("pipe"));
        if (::pipe2(from_child, O_CLOEXEC) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw Failure(detail::errno_text("pipe"));
        }
        pid_ = ::fork();
        if (pid_ < 0) {
            for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
            throw Failure(detail::errno_text("fork"));
        }
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        wfd_ = to_child[1];
        rfd_ = from_child[0];
    }

    ChildProcessChannel(const ChildProcessChannel&) = delete;
    ChildProcessChannel& operator=(const ChildProcessChannel&) = delete;

    ~ChildProcessChannel() override {
        if (wfd_ >= 0) ::close(wfd_);
        if (rfd_ >= 0) ::close(rfd_);
        if (pid_ > 0) {
            int status = 0;
            for (int i = 0; i < 50; ++i) {
                if (::waitpid(pid_, &status, WNOHANG) != 0) return;
                ::usleep(10000);
            }
            ::kill(pid_, SIGTERM);
            ::waitpid(pid_, &status, 0);
        }
    }

protected:
    // Writing to a dead child must fail with EPIPE rather than kill this process.
    ssize_t write_some(const char* data, std::size_t n) override {
        sigset_t block, old;
        sigemptyset(&block);
        sigaddset(&block, SIGPIPE);
        pthread_sigmask(SIG_BLOCK, &block, &old);
        const ssize_t r = ::write(wfd_, data, n);
        const int saved = errno;
        if (r < 0 && saved == EPIPE) {
            const timespec zero{0, 0};
            sigtimedwait(&block, nullptr, &zero);
        }
        pthread_sigmask(SIG_SETMASK, &old, nullptr);
        errno = saved;
        return r;
    }

private:
    pid_t pid_ = -1;
};

/// A TCP connection to host:port.
class TcpChannel final : public detail::FdLineChannel {
public:
    TcpChannel(const std::string& host, int port, int timeout_ms = 60000) : FdLineChannel(-1, -1, timeout_ms) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
            throw Failure("cannot resolve " + host + ": " + ::gai_strerror(rc));
        int fd = -1;
        for (addrinfo* a = res; a; a = a->ai_next) {
            fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(res);
        if (fd < 0) throw Failure(detail::errno_text(("cannot connect to " + host + ":" + std::to_string(port)).c_str()));
        rfd_ = wfd_ = fd;
    }

    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;
    ~TcpChannel() override {
        if (rfd_ >= 0) ::close(rfd_);
    }

protected:
    ssize_t write_some(const char* data, std::size_t n) override { return ::send(wfd_, data, n, MSG_NOSIGNAL); }
};

/// Scores-only detector served by a peer speaking the line-delimited JSON protocol.
/// Requests on one connection are serialized.
class ExternalDetector final : public Detector {
public:
    ExternalDetector(std::string name, std::unique_ptr<LineChannel> channel)
        : name_(std::move(name)), channel_(std::move(channel)) {}

    std::string name() const override { return name_; }
    Capabilities capabilities() const override { return {false}; }

    std::vector<Detection> detect(const GrayImage& image) const override {
        std::lock_guard lock(mutex_);
        const std::int64_t id = ++last_id_;
        std::string line;
        try {
            channel_->send_line(wire::encode_request(id, image));
            line = channel_->receive_line();
        } catch (const LineChannel::Failure& e) {
            throw TransportError(id, e.what());
        }
        auto resp = wire::decode_response(line);
        if (resp.id != id)
            throw ProtocolError("response id " + std::to_string(resp.id) + " does not match request " + std::to_string(id));
        sort_by_objectness(resp.detections);
        return resp.detections;
    }

private:
    std::string name_;
    std::unique_ptr<LineChannel> channel_;
    mutable std::mutex mutex_;
    mutable std::int64_t last_id_ = 0;
};

}  // namespace irpatch
