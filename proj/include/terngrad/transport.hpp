#pragma once

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "terngrad/wire.hpp"

namespace terngrad {

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bounded blocking mailbox; makes the synchronous barrier explicit.
class Mailbox {
public:
    explicit Mailbox(std::size_t capacity = 64) : capacity_(capacity) {}

    void push(Message m) {
        std::unique_lock lk(mu_);
        cv_space_.wait(lk, [&] { return q_.size() < capacity_; });
        q_.push_back(std::move(m));
        cv_data_.notify_one();
    }

    Message pop() {
        std::unique_lock lk(mu_);
        cv_data_.wait(lk, [&] { return !q_.empty(); });
        Message m = std::move(q_.front());
        q_.pop_front();
        cv_space_.notify_one();
        return m;
    }

private:
    std::size_t capacity_;
    std::deque<Message> q_;
    std::mutex mu_;
    std::condition_variable cv_data_, cv_space_;
};

// Server side: receive from any worker, send to one worker.
class ServerTransport {
public:
    virtual ~ServerTransport() = default;
    virtual Message recv() = 0;
    virtual void send(std::uint16_t worker, const Message& m) = 0;
};

// Worker side: talk to the server only.
class WorkerTransport {
public:
    virtual ~WorkerTransport() = default;
    virtual void send(const Message& m) = 0;
    virtual Message recv() = 0;
};

// --- in-process -------------------------------------------------------------

// Messages still pass through frame/unframe so both transports carry
// identical bytes and traffic accounting stays honest.
class InProcessHub {
public:
    explicit InProcessHub(std::size_t workers) {
        for (std::size_t i = 0; i < workers; ++i)
            outboxes_.push_back(std::make_unique<Mailbox>());
    }

    Mailbox& inbox() { return inbox_; }
    Mailbox& outbox(std::uint16_t worker) {
        if (worker >= outboxes_.size()) throw TransportError("unknown worker id");
        return *outboxes_[worker];
    }

private:
    Mailbox inbox_;
    std::vector<std::unique_ptr<Mailbox>> outboxes_;
};

class InProcessServerTransport final : public ServerTransport {
public:
    explicit InProcessServerTransport(InProcessHub& hub) : hub_(hub) {}
    Message recv() override { return hub_.inbox().pop(); }
    void send(std::uint16_t worker, const Message& m) override {
        // round-trip through the frame codec, same as the socket path
        hub_.outbox(worker).push(unframe(frame(m)));
    }

private:
    InProcessHub& hub_;
};

class InProcessWorkerTransport final : public WorkerTransport {
public:
    InProcessWorkerTransport(InProcessHub& hub, std::uint16_t worker)
        : hub_(hub), worker_(worker) {}
    void send(const Message& m) override { hub_.inbox().push(unframe(frame(m))); }
    Message recv() override { return hub_.outbox(worker_).pop(); }

private:
    InProcessHub& hub_;
    std::uint16_t worker_;
};

// --- sockets ----------------------------------------------------------------

namespace detail_net {

inline void write_all(int fd, const std::uint8_t* data, std::size_t len) {
    while (len > 0) {
        const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
        if (n <= 0) throw TransportError("socket write failed: " + std::string(std::strerror(errno)));
        data += n;
        len -= static_cast<std::size_t>(n);
    }
}

inline bool read_all(int fd, std::uint8_t* data, std::size_t len) {
    while (len > 0) {
        const ssize_t n = ::recv(fd, data, len, 0);
        if (n == 0) return false;  // peer closed
        if (n < 0) throw TransportError("socket read failed: " + std::string(std::strerror(errno)));
        data += n;
        len -= static_cast<std::size_t>(n);
    }
    return true;
}

// length-prefixed framing: the header carries payload-len, so one header
// read tells us how much more to pull off the stream
inline bool read_message(int fd, Message& out) {
    std::vector<std::uint8_t> buf(kHeaderSize);
    if (!read_all(fd, buf.data(), kHeaderSize)) return false;
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i)
        len |= static_cast<std::uint32_t>(buf[14 + i]) << (8 * i);
    buf.resize(kHeaderSize + len);
    if (!read_all(fd, buf.data() + kHeaderSize, len))
        throw TransportError("connection closed mid-frame");
    out = unframe(buf);
    return true;
}

inline void write_message(int fd, const Message& m) {
    const auto buf = frame(m);
    write_all(fd, buf.data(), buf.size());
}

struct FdCloser {
    int fd = -1;
    ~FdCloser() {
        if (fd >= 0) ::close(fd);
    }
};

}  // namespace detail_net

// Accepts N workers, each announcing itself with a Register message; framed
// messages from all connections funnel into one inbox.
class SocketServerTransport final : public ServerTransport {
public:
    SocketServerTransport(std::uint16_t port, std::size_t workers) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw TransportError("socket() failed");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
        addr.sin_port = htons(port);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw TransportError("bind failed: " + std::string(std::strerror(errno)));
        socklen_t alen = sizeof addr;
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
        port_ = ntohs(addr.sin_port);
        if (::listen(listen_fd_, static_cast<int>(workers)) != 0)
            throw TransportError("listen failed");
        fds_.assign(workers, -1);
        // accept in the background so the caller can spawn workers after
        // constructing the transport
        acceptor_ = std::thread([this, workers] {
            try {
                for (std::size_t i = 0; i < workers; ++i) {
                    const int fd = ::accept(listen_fd_, nullptr, nullptr);
                    if (fd < 0) throw TransportError("accept failed");
                    int nd = 1;
                    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &nd, sizeof nd);
                    Message reg;
                    if (!detail_net::read_message(fd, reg) || reg.type != MsgType::Register)
                        throw TransportError("expected Register as first message");
                    {
                        std::lock_guard lk(conn_mu_);
                        if (reg.worker >= workers || fds_[reg.worker] != -1)
                            throw TransportError("bad or duplicate worker id in Register");
                        fds_[reg.worker] = fd;
                    }
                    conn_cv_.notify_all();
                    // the handshake Register only identifies the connection;
                    // the worker's own Register flows through the reader
                    readers_.emplace_back([this, fd] { reader_loop(fd); });
                }
            } catch (const std::exception& e) {
                std::lock_guard lk(conn_mu_);
                accept_error_ = e.what();
                conn_cv_.notify_all();
            }
        });
    }

    ~SocketServerTransport() override {
        ::shutdown(listen_fd_, SHUT_RDWR);
        acceptor_.join();
        for (int fd : fds_)
            if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
        for (auto& t : readers_) t.join();
        for (int fd : fds_)
            if (fd >= 0) ::close(fd);
        ::close(listen_fd_);
    }

    std::uint16_t port() const { return port_; }

    Message recv() override { return inbox_.pop(); }

    void send(std::uint16_t worker, const Message& m) override {
        if (worker >= fds_.size()) throw TransportError("send to unknown worker");
        {
            std::unique_lock lk(conn_mu_);
            conn_cv_.wait(lk, [&] { return fds_[worker] >= 0 || !accept_error_.empty(); });
            if (fds_[worker] < 0)
                throw TransportError("worker never connected: " + accept_error_);
        }
        std::lock_guard lk(send_mu_);
        detail_net::write_message(fds_[worker], m);
    }

private:
    void reader_loop(int fd) {
        try {
            Message m;
            while (detail_net::read_message(fd, m)) inbox_.push(m);
        } catch (const std::exception&) {
            // connection torn down; the barrier logic surfaces the failure
        }
    }

    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::vector<int> fds_;
    std::thread acceptor_;
    std::vector<std::thread> readers_;
    Mailbox inbox_{1024};
    std::mutex send_mu_;
    std::mutex conn_mu_;
    std::condition_variable conn_cv_;
    std::string accept_error_;
};

class SocketWorkerTransport final : public WorkerTransport {
public:
    SocketWorkerTransport(const std::string& host, std::uint16_t port,
                          std::uint16_t worker) {
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
            throw TransportError("bad host address: " + host);
        // the server may not be listening yet; retry with a fresh socket,
        // a failed connect leaves the fd unusable
        int rc = -1;
        for (int attempt = 0; attempt < 100; ++attempt) {
            fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
            if (fd_ < 0) throw TransportError("socket() failed");
            rc = ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
            if (rc == 0) break;
            ::close(fd_);
            fd_ = -1;
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        if (rc != 0) throw TransportError("connect failed: " + std::string(std::strerror(errno)));
        int nd = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &nd, sizeof nd);
        Message reg;
        reg.type = MsgType::Register;
        reg.worker = worker;
        detail_net::write_message(fd_, reg);
    }

    ~SocketWorkerTransport() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void send(const Message& m) override { detail_net::write_message(fd_, m); }

    Message recv() override {
        Message m;
        if (!detail_net::read_message(fd_, m))
            throw TransportError("server closed connection");
        return m;
    }

private:
    int fd_ = -1;
};

}  // namespace terngrad
