#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fsk/errors.hpp"
#include "fsk/netsim/fabric.hpp"

namespace fsk {

struct TcpAddress {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
};

// Endpoint over real sockets with the fixed frame format. Every participant
// keeps one connection per peer; a reader thread per connection routes frames
// into per-(peer, kind) queues (sync collectives pop in FIFO order, the async
// mailbox keeps only the newest stamp). Peers that disappear surface as
// PeerLost on the next blocking operation.
class TcpEndpoint final : public Endpoint {
public:
    TcpEndpoint(int id, int clients, bool with_server, std::uint16_t listen_port = 0,
                double recv_timeout_seconds = 10.0)
        : id_(id), c_(clients), with_server_(with_server), timeout_(recv_timeout_seconds) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw PeerLost("socket() failed");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
        addr.sin_port = htons(listen_port);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            throw PeerLost("bind() failed for port " + std::to_string(listen_port));
        ::listen(listen_fd_, participants());
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }

    ~TcpEndpoint() override {
        shutdown_ = true;
        for (auto& [peer, fd] : fds_)
            if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
        if (listen_fd_ >= 0) { ::shutdown(listen_fd_, SHUT_RDWR); ::close(listen_fd_); }
        for (auto& t : readers_)
            if (t.joinable()) t.join();
        for (auto& [peer, fd] : fds_)
            if (fd >= 0) ::close(fd);
    }

    std::uint16_t port() const { return port_; }
    int participants() const { return c_ + (with_server_ ? 1 : 0); }

    /// Connects the full mesh. `addresses[i]` is participant i's listener.
    /// Lower ids connect to higher ids; higher ids accept.
    void establish(const std::vector<TcpAddress>& addresses) {
        const int p = participants();
        std::thread acceptor([this, p] {
            for (int k = 0; k < p - 1 - id_; ++k) {
                int fd = ::accept(listen_fd_, nullptr, nullptr);
                if (fd < 0) return;
                std::uint8_t idbuf[2];
                if (!recv_all(fd, idbuf, 2)) { ::close(fd); return; }
                int peer = idbuf[0] | (idbuf[1] << 8);
                register_peer(peer, fd);
            }
        });
        for (int peer = 0; peer < id_; ++peer) {
            int fd = connect_with_retry(addresses[static_cast<std::size_t>(peer)]);
            std::uint8_t idbuf[2] = {static_cast<std::uint8_t>(id_),
                                     static_cast<std::uint8_t>(id_ >> 8)};
            if (!send_all(fd, idbuf, 2)) throw PeerLost("handshake send failed");
            register_peer(peer, fd);
        }
        acceptor.join();
        {
            std::lock_guard lk(mu_);
            if (static_cast<int>(fds_.size()) != p - 1)
                throw PeerLost("mesh incomplete: have " + std::to_string(fds_.size()) +
                               " of " + std::to_string(p - 1) + " peers");
        }
        for (auto& [peer, fd] : fds_) readers_.emplace_back(&TcpEndpoint::reader_loop, this, peer, fd);
    }

    int id() const override { return id_; }
    int clients() const override { return c_; }
    bool is_server() const override { return with_server_ && id_ == c_; }

    Vec all_gather(Kind kind, std::span<const double> slice) override {
        auto t0 = std::chrono::steady_clock::now();
        Envelope e;
        e.sender = static_cast<std::uint16_t>(id_);
        e.kind = kind;
        e.iteration = iteration_.load();
        e.block_index = static_cast<std::uint32_t>(id_);
        e.payload.assign(slice.begin(), slice.end());
        auto bytes = tcp_frame_encode(e);
        for (int peer = 0; peer < c_; ++peer)
            if (peer != id_) send_frame(peer, bytes);
        std::vector<Vec> parts(static_cast<std::size_t>(c_));
        parts[static_cast<std::size_t>(id_)].assign(slice.begin(), slice.end());
        for (int peer = 0; peer < c_; ++peer) {
            if (peer == id_) continue;
            Envelope in = pop_sync(peer, kind);
            parts[static_cast<std::size_t>(peer)] = std::move(in.payload);
        }
        Vec out;
        for (auto& pt : parts) out.insert(out.end(), pt.begin(), pt.end());
        stats_.comm_seconds += std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();
        return out;
    }

    void send_to_server(Kind kind, std::span<const double> slice) override {
        auto t0 = std::chrono::steady_clock::now();
        Envelope e;
        e.sender = static_cast<std::uint16_t>(id_);
        e.kind = kind;
        e.iteration = iteration_.load();
        e.block_index = static_cast<std::uint32_t>(id_);
        e.payload.assign(slice.begin(), slice.end());
        send_frame(c_, tcp_frame_encode(e));
        stats_.comm_seconds += std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();
    }

    std::vector<Vec> gather_from_clients(Kind kind) override {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<Vec> out(static_cast<std::size_t>(c_));
        for (int peer = 0; peer < c_; ++peer) {
            Envelope in = pop_sync(peer, kind);
            if (in.block_index != static_cast<std::uint32_t>(peer))
                throw FrameError("unexpected block index from client " + std::to_string(peer));
            out[static_cast<std::size_t>(peer)] = std::move(in.payload);
        }
        stats_.comm_seconds += std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();
        return out;
    }

    void scatter(Kind kind, const Vec& full) override {
        auto t0 = std::chrono::steady_clock::now();
        if (full.size() % static_cast<std::size_t>(c_) != 0)
            throw FrameError("scatter vector length not divisible by client count");
        const std::size_t m = full.size() / static_cast<std::size_t>(c_);
        for (int peer = 0; peer < c_; ++peer) {
            Envelope e;
            e.sender = static_cast<std::uint16_t>(id_);
            e.kind = kind;
            e.iteration = iteration_.load();
            e.block_index = static_cast<std::uint32_t>(peer);
            e.payload.assign(full.begin() + static_cast<std::ptrdiff_t>(peer * m),
                             full.begin() + static_cast<std::ptrdiff_t>((peer + 1) * m));
            send_frame(peer, tcp_frame_encode(e));
        }
        stats_.comm_seconds += std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();
    }

    Vec receive_scatter(Kind kind) override {
        auto t0 = std::chrono::steady_clock::now();
        Envelope in = pop_sync(c_, kind);
        stats_.comm_seconds += std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();
        return std::move(in.payload);
    }

    void begin_iteration(std::uint64_t k) override { iteration_.store(k); }

    void post_broadcast(Kind kind, std::uint64_t stamp, std::span<const double> payload,
                        std::uint32_t block_index) override {
        if (c_ == 1) return;
        Envelope e;
        e.sender = static_cast<std::uint16_t>(id_);
        e.kind = kind;
        e.iteration = stamp;
        e.block_index = block_index;
        e.payload.assign(payload.begin(), payload.end());
        auto bytes = tcp_frame_encode(e);
        for (int peer = 0; peer < c_; ++peer)
            if (peer != id_) send_frame(peer, bytes);
    }

    std::vector<Envelope> drain_mailbox(Kind kind) override {
        std::vector<Envelope> out;
        const std::uint64_t now = iteration_.load();
        std::lock_guard lk(mu_);
        for (int peer = 0; peer < c_; ++peer) {
            if (peer == id_) continue;
            auto& q = queues_[qkey(peer, kind)];
            if (q.empty()) continue;
            std::size_t best = 0;
            for (std::size_t i = 1; i < q.size(); ++i)
                if (q[i].env.iteration > q[best].env.iteration) best = i;
            auto& sl = last_delivered_[qkey(peer, kind)];
            if (!sl.has_value() || q[best].env.iteration > *sl) {
                sl = q[best].env.iteration;
                std::uint64_t age = now >= q[best].enqueue_iteration
                                        ? now - q[best].enqueue_iteration + 1 : 1;
                stats_.tau[{peer, kind}].add(age);
                ++stats_.messages_received;
                out.push_back(std::move(q[best].env));
                stats_.messages_superseded += q.size() - 1;
            } else {
                stats_.messages_superseded += q.size();
            }
            q.clear();
        }
        return out;
    }

    void phase_barrier() override {}  // real concurrency; nothing to align

    bool continue_consensus(std::optional<bool> arbiter_continue) override {
        auto t0 = std::chrono::steady_clock::now();
        bool v;
        if (arbiter_continue) {
            v = *arbiter_continue;
            Envelope e;
            e.sender = static_cast<std::uint16_t>(id_);
            e.kind = Kind::Q;
            e.iteration = iteration_.load();
            e.block_index = kControlBlock;
            e.payload = {v ? 1.0 : 0.0};
            auto bytes = tcp_frame_encode(e);
            for (auto& [peer, fd] : fds_) send_frame(peer, bytes);
        } else {
            v = pop_control_blocking();
        }
        stats_.comm_seconds += std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();
        return v;
    }

    void post_control(bool stop) override {
        Envelope e;
        e.sender = static_cast<std::uint16_t>(id_);
        e.kind = Kind::Q;
        e.iteration = iteration_.load();
        e.block_index = kControlBlock;
        e.payload = {stop ? 0.0 : 1.0};
        auto bytes = tcp_frame_encode(e);
        for (auto& [peer, fd] : fds_) send_frame(peer, bytes);
    }

    std::optional<bool> poll_control() override {
        std::lock_guard lk(mu_);
        if (control_.empty()) return std::nullopt;
        bool cont = control_.front() != 0.0;
        return cont;
    }

    EndpointStats& stats() override { return stats_; }

private:
    struct Queued {
        Envelope env;
        std::uint64_t enqueue_iteration;
    };

    static std::uint64_t qkey(int peer, Kind kind) {
        return (static_cast<std::uint64_t>(peer) << 8) | static_cast<std::uint64_t>(kind);
    }

    static bool send_all(int fd, const void* data, std::size_t size) {
        const char* p = static_cast<const char*>(data);
        while (size > 0) {
            ssize_t n = ::send(fd, p, size, MSG_NOSIGNAL);
            if (n <= 0) return false;
            p += n;
            size -= static_cast<std::size_t>(n);
        }
        return true;
    }

    static bool recv_all(int fd, void* data, std::size_t size) {
        char* p = static_cast<char*>(data);
        while (size > 0) {
            ssize_t n = ::recv(fd, p, size, 0);
            if (n <= 0) return false;
            p += n;
            size -= static_cast<std::size_t>(n);
        }
        return true;
    }

    int connect_with_retry(const TcpAddress& addr) {
        auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
        for (;;) {
            int fd = ::socket(AF_INET, SOCK_STREAM, 0);
            sockaddr_in sa{};
            sa.sin_family = AF_INET;
            sa.sin_port = htons(addr.port);
            ::inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr);
            if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0) {
                int one = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
                return fd;
            }
            ::close(fd);
            if (std::chrono::steady_clock::now() > deadline)
                throw PeerLost("cannot connect to " + addr.host + ":" + std::to_string(addr.port));
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    }

    void register_peer(int peer, int fd) {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        std::lock_guard lk(mu_);
        fds_[peer] = fd;
    }

    void send_frame(int peer, const std::vector<std::uint8_t>& bytes) {
        int fd;
        {
            std::lock_guard lk(mu_);
            auto it = fds_.find(peer);
            if (it == fds_.end() || dead_peers_.count(peer))
                throw PeerLost("peer " + std::to_string(peer) + " is gone");
            fd = it->second;
        }
        if (!send_all(fd, bytes.data(), bytes.size()))
            throw PeerLost("send to peer " + std::to_string(peer) + " failed");
        ++stats_.messages_sent;
    }

    void reader_loop(int peer, int fd) {
        for (;;) {
            std::uint8_t header[kFrameHeaderSize];
            if (!recv_all(fd, header, sizeof(header))) break;
            std::uint32_t len;
            std::memcpy(&len, header + 20, 4);
            std::vector<std::uint8_t> frame(sizeof(header) + static_cast<std::size_t>(len) * 8);
            std::memcpy(frame.data(), header, sizeof(header));
            if (len > 0 && !recv_all(fd, frame.data() + sizeof(header),
                                     static_cast<std::size_t>(len) * 8))
                break;
            Envelope e;
            try {
                e = tcp_frame_decode(frame);
            } catch (const FrameError&) {
                break;  // protocol violation; treat the link as lost
            }
            std::lock_guard lk(mu_);
            if (e.block_index == kControlBlock) {
                control_.push_back(e.payload.empty() ? 0.0 : e.payload[0]);
            } else {
                queues_[qkey(peer, e.kind)].push_back(Queued{std::move(e), iteration_.load()});
            }
            cv_.notify_all();
        }
        std::lock_guard lk(mu_);
        dead_peers_.insert(peer);
        cv_.notify_all();
    }

    Envelope pop_sync(int peer, Kind kind) {
        std::unique_lock lk(mu_);
        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(timeout_);
        auto& q = queues_[qkey(peer, kind)];
        while (q.empty()) {
            if (dead_peers_.count(peer))
                throw PeerLost("peer " + std::to_string(peer) + " disconnected");
            if (shutdown_) throw PeerLost("endpoint shutting down");
            if (cv_.wait_until(lk, deadline) == std::cv_status::timeout && q.empty())
                throw PeerLost("timeout waiting for peer " + std::to_string(peer));
        }
        Envelope e = std::move(q.front().env);
        q.pop_front();
        ++stats_.messages_received;
        return e;
    }

    bool pop_control_blocking() {
        std::unique_lock lk(mu_);
        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(timeout_);
        while (control_.empty()) {
            if (!dead_peers_.empty() && control_.empty() && all_peers_dead())
                throw PeerLost("all peers disconnected");
            if (shutdown_) throw PeerLost("endpoint shutting down");
            if (cv_.wait_until(lk, deadline) == std::cv_status::timeout && control_.empty())
                throw PeerLost("timeout waiting for control message");
        }
        bool v = control_.front() != 0.0;
        control_.pop_front();
        return v;
    }

    bool all_peers_dead() const {
        return dead_peers_.size() == fds_.size() && !fds_.empty();
    }

    int id_, c_;
    bool with_server_;
    double timeout_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<std::uint64_t> iteration_{0};
    std::atomic<bool> shutdown_{false};

    std::mutex mu_;
    std::condition_variable cv_;
    std::map<int, int> fds_;
    std::map<std::uint64_t, std::deque<Queued>> queues_;
    std::map<std::uint64_t, std::optional<std::uint64_t>> last_delivered_;
    std::deque<double> control_;
    std::set<int> dead_peers_;
    std::vector<std::thread> readers_;
    EndpointStats stats_;
};

// All participants in one process, connected over loopback sockets. The
// drivers treat it exactly like the simulator fabric.
class TcpFabric final : public Fabric {
public:
    static std::unique_ptr<TcpFabric> loopback(int clients, bool with_server,
                                               double recv_timeout_seconds = 10.0) {
        auto fab = std::unique_ptr<TcpFabric>(new TcpFabric(clients, with_server));
        const int p = clients + (with_server ? 1 : 0);
        std::vector<TcpAddress> addrs(static_cast<std::size_t>(p));
        for (int i = 0; i < p; ++i) {
            fab->eps_.push_back(std::make_unique<TcpEndpoint>(i, clients, with_server, 0,
                                                              recv_timeout_seconds));
            addrs[static_cast<std::size_t>(i)] = {"127.0.0.1", fab->eps_.back()->port()};
        }
        std::vector<std::thread> ts;
        std::vector<std::exception_ptr> errs(static_cast<std::size_t>(p));
        for (int i = 0; i < p; ++i)
            ts.emplace_back([&, i] {
                try {
                    fab->eps_[static_cast<std::size_t>(i)]->establish(addrs);
                } catch (...) {
                    errs[static_cast<std::size_t>(i)] = std::current_exception();
                }
            });
        for (auto& t : ts) t.join();
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
        return fab;
    }

    int clients() const override { return c_; }
    bool has_server() const override { return with_server_; }
    Endpoint& endpoint(int id) override { return *eps_.at(static_cast<std::size_t>(id)); }

    /// Drops one endpoint (simulates a dying peer for fault tests).
    void kill(int id) { eps_.at(static_cast<std::size_t>(id)).reset(); }

private:
    TcpFabric(int clients, bool with_server) : c_(clients), with_server_(with_server) {}
    int c_;
    bool with_server_;
    std::vector<std::unique_ptr<TcpEndpoint>> eps_;
};

} // namespace fsk
