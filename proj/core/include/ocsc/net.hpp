#ifndef OCSC_NET_HPP
#define OCSC_NET_HPP

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>

#include "ocsc/bytes.hpp"

namespace ocsc {

/// Loopback-oriented client socket with RAII ownership of the fd.
class TcpConn {
public:
    TcpConn() = default;
    TcpConn(TcpConn&& other) noexcept;
    TcpConn& operator=(TcpConn&& other) noexcept;
    TcpConn(const TcpConn&) = delete;
    TcpConn& operator=(const TcpConn&) = delete;
    ~TcpConn();

    static std::optional<TcpConn> connect(const std::string& host, uint16_t port,
                                          std::chrono::milliseconds timeout);

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    bool send_all(ByteView data);

    /// Polls up to `wait`; returns true iff the peer closed or reset the
    /// connection within that time. Drains any pending payload bytes.
    bool peer_closed(std::chrono::milliseconds wait);

    /// Reads exactly n bytes (with deadline); nullopt on EOF/timeout.
    std::optional<Bytes> recv_exact(size_t n, std::chrono::milliseconds timeout);

    /// Close with SO_LINGER 0 (RST): avoids TIME_WAIT buildup in campaigns.
    void abort_close();
    void close();

    static TcpConn adopt(int fd) { return TcpConn(fd); }

private:
    explicit TcpConn(int fd) : fd_(fd) {}
    int fd_ = -1;
};

/// connect + short idle check: alive iff the connection is accepted and not
/// immediately closed by the peer. Optionally sends a well-formed no-op frame.
bool probe_liveness(const std::string& host, uint16_t port,
                    std::chrono::milliseconds timeout = std::chrono::milliseconds(300),
                    bool send_noop_frame = false);

}  // namespace ocsc

#endif
