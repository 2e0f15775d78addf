#include "ocsc/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "ocsc/codec.hpp"

namespace ocsc {

TcpConn::TcpConn(TcpConn&& other) noexcept : fd_(other.fd_) {
    other.fd_ = -1;
}

TcpConn& TcpConn::operator=(TcpConn&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

TcpConn::~TcpConn() {
    close();
}

void TcpConn::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void TcpConn::abort_close() {
    if (fd_ < 0) return;
    struct linger lg{1, 0};
    setsockopt(fd_, SOL_SOCKET, SO_LINGER, &lg, sizeof(lg));
    close();
}

std::optional<TcpConn> TcpConn::connect(const std::string& host, uint16_t port,
                                        std::chrono::milliseconds timeout) {
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) return std::nullopt;

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        return std::nullopt;
    }

    int flags = fcntl(fd, F_GETFL, 0);
    fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    if (rc < 0 && errno == EINPROGRESS) {
        pollfd pfd{fd, POLLOUT, 0};
        rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
        if (rc <= 0) {
            ::close(fd);
            return std::nullopt;
        }
        int err = 0;
        socklen_t len = sizeof(err);
        getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            ::close(fd);
            return std::nullopt;
        }
    } else if (rc < 0) {
        ::close(fd);
        return std::nullopt;
    }
    fcntl(fd, F_SETFL, flags);
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return TcpConn(fd);
}

bool TcpConn::send_all(ByteView data) {
    size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) return false;
        sent += static_cast<size_t>(n);
    }
    return true;
}

bool TcpConn::peer_closed(std::chrono::milliseconds wait) {
    auto deadline = std::chrono::steady_clock::now() + wait;
    for (;;) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        pollfd pfd{fd_, POLLIN, 0};
        int rc = ::poll(&pfd, 1, std::max<int>(0, static_cast<int>(left.count())));
        if (rc <= 0) return false;  // idle: peer still up
        if (pfd.revents & (POLLERR | POLLHUP)) return true;
        uint8_t buf[512];
        ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
        if (n <= 0) return true;
        // Payload from the peer: drain and keep waiting.
    }
}

std::optional<Bytes> TcpConn::recv_exact(size_t n, std::chrono::milliseconds timeout) {
    Bytes out;
    out.reserve(n);
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (out.size() < n) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        pollfd pfd{fd_, POLLIN, 0};
        if (::poll(&pfd, 1, static_cast<int>(left.count())) <= 0) return std::nullopt;
        uint8_t buf[4096];
        ssize_t got = ::recv(fd_, buf, std::min(sizeof(buf), n - out.size()), 0);
        if (got <= 0) return std::nullopt;
        out.insert(out.end(), buf, buf + got);
    }
    return out;
}

bool probe_liveness(const std::string& host, uint16_t port, std::chrono::milliseconds timeout,
                    bool send_noop_frame) {
    auto conn = TcpConn::connect(host, port, timeout);
    if (!conn) return false;
    if (send_noop_frame) {
        auto frame = serialize(build_noop());
        if (!frame || !conn->send_all(frame.value())) return false;
    }
    // An accept-then-instant-close peer shows up as EOF within the grace
    // window; a healthy agent just stays silent.
    bool closed = conn->peer_closed(std::chrono::milliseconds(30));
    conn->abort_close();
    return !closed;
}

}  // namespace ocsc
