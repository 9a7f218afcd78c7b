#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsk/errors.hpp"
#include "fsk/netsim/delay.hpp"
#include "fsk/netsim/fabric.hpp"
#include "fsk/rng.hpp"

namespace fsk {

// In-process fabric with an injectable, seeded delay schedule. Workers run on
// real threads but advance in lockstep: collectives are generation-counted
// barriers, and the async drivers separate post and drain phases with
// phase_barrier(). Delivery and age accounting are therefore pure functions
// of (seed, schedule, topology, program), independent of thread scheduling.
//
// Waits carry a deadline; a participant that never shows up (killed worker)
// surfaces as PeerLost instead of a hang.
class SimFabric final : public Fabric {
public:
    SimFabric(int clients, bool with_server, DelaySchedule schedule,
              double deadlock_timeout_seconds = 5.0)
        : c_(clients), with_server_(with_server), schedule_(schedule),
          timeout_(deadlock_timeout_seconds) {
        if (clients <= 0) throw ConfigError("client count must be positive");
        const int participants = c_ + (with_server_ ? 1 : 0);
        for (int id = 0; id < participants; ++id)
            endpoints_.push_back(std::unique_ptr<SimEndpoint>(new SimEndpoint(*this, id)));
        for (auto& slot : gather_slots_) slot.slices.resize(static_cast<std::size_t>(c_));
        for (auto& slot : star_gather_slots_) slot.slices.resize(static_cast<std::size_t>(c_));
        for (int s = 0; s < participants; ++s)
            for (int r = 0; r < c_; ++r)
                if (s != r)
                    for (Kind k : {Kind::U, Kind::V, Kind::Q, Kind::R})
                        streams_[key(s, r, k)] = Stream{
                            {}, kNoDelivery,
                            SplitMix64(mix_seed(schedule_.seed, static_cast<std::uint64_t>(s),
                                                static_cast<std::uint64_t>(r),
                                                static_cast<std::uint64_t>(k)))};
    }

    int clients() const override { return c_; }
    bool has_server() const override { return with_server_; }
    Endpoint& endpoint(int id) override { return *endpoints_.at(static_cast<std::size_t>(id)); }
    bool virtual_time() const override { return true; }

    /// Abort all pending waits (e.g. after a worker failed); waiters throw.
    void abort_all(const std::string& reason) override {
        std::lock_guard lk(mu_);
        dead_ = true;
        dead_reason_ = reason;
        cv_.notify_all();
    }

private:
    static constexpr std::uint64_t kNoDelivery = ~0ULL;

    struct Pending {
        std::uint64_t stamp;
        std::uint64_t eligible_at;
        std::uint32_t block_index;
        Vec payload;
    };
    struct Stream {
        std::vector<Pending> pending;
        std::uint64_t last_delivered = kNoDelivery;
        SplitMix64 rng{0};
    };
    // generation-counted data barrier (reused every round)
    struct GatherSlot {
        std::vector<Vec> slices;
        Vec assembled;
        std::uint64_t gen = 0;  // completed generations
        int deposited = 0;
        int consumed = 0;
        bool ready = false;
    };
    struct ScatterSlot {
        Vec full;
        std::uint64_t gen = 0;
        bool ready = false;
        int consumed = 0;
    };
    struct ConsensusSlot {
        bool value = true;
        std::uint64_t gen = 0;
        bool ready = false;
        int consumed = 0;
    };
    struct BarrierState {
        std::uint64_t gen = 0;
        int arrived = 0;
    };

    static std::uint64_t key(int sender, int receiver, Kind k) {
        return (static_cast<std::uint64_t>(sender) << 32) |
               (static_cast<std::uint64_t>(receiver) << 8) | static_cast<std::uint64_t>(k);
    }

    template <class Pred>
    void wait(std::unique_lock<std::mutex>& lk, Pred pred, const char* what) {
        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(timeout_);
        while (!pred()) {
            if (dead_) throw PeerLost("fabric aborted: " + dead_reason_);
            if (cv_.wait_until(lk, deadline) == std::cv_status::timeout && !pred()) {
                dead_ = true;
                dead_reason_ = std::string("timeout in ") + what;
                cv_.notify_all();
                throw PeerLost("peer missing: timed out in " + std::string(what));
            }
        }
    }

    class SimEndpoint final : public Endpoint {
    public:
        SimEndpoint(SimFabric& f, int id) : f_(f), id_(id) {}

        int id() const override { return id_; }
        int clients() const override { return f_.c_; }
        bool is_server() const override { return id_ == f_.c_; }

        Vec all_gather(Kind kind, std::span<const double> slice) override {
            auto& slot = f_.gather_slots_[static_cast<std::size_t>(kind)];
            std::unique_lock lk(f_.mu_);
            const std::uint64_t my_gen = gather_gen_[static_cast<std::size_t>(kind)]++;
            f_.wait(lk, [&] { return slot.gen == my_gen && !slot.ready; }, "all_gather");
            slot.slices[static_cast<std::size_t>(id_)].assign(slice.begin(), slice.end());
            stats_.messages_sent += static_cast<std::uint64_t>(f_.c_ - 1);
            if (++slot.deposited == f_.c_) {
                slot.assembled.clear();
                for (const auto& s : slot.slices)
                    slot.assembled.insert(slot.assembled.end(), s.begin(), s.end());
                slot.ready = true;
                f_.cv_.notify_all();
            } else {
                f_.wait(lk, [&] { return slot.ready && slot.gen == my_gen; }, "all_gather");
            }
            Vec out = slot.assembled;
            stats_.messages_received += static_cast<std::uint64_t>(f_.c_ - 1);
            if (++slot.consumed == f_.c_) {
                slot.ready = false;
                slot.deposited = 0;
                slot.consumed = 0;
                ++slot.gen;
                f_.cv_.notify_all();
            }
            return out;
        }

        void send_to_server(Kind kind, std::span<const double> slice) override {
            auto& slot = f_.star_gather_slots_[static_cast<std::size_t>(kind)];
            std::unique_lock lk(f_.mu_);
            const std::uint64_t my_gen = star_send_gen_[static_cast<std::size_t>(kind)]++;
            f_.wait(lk, [&] { return slot.gen == my_gen && !slot.ready; }, "send_to_server");
            slot.slices[static_cast<std::size_t>(id_)].assign(slice.begin(), slice.end());
            stats_.messages_sent += 1;
            if (++slot.deposited == f_.c_) {
                slot.ready = true;
                f_.cv_.notify_all();
            }
            // sender does not wait for the server to read; the next deposit
            // generation opens only after the server consumed this one
        }

        std::vector<Vec> gather_from_clients(Kind kind) override {
            auto& slot = f_.star_gather_slots_[static_cast<std::size_t>(kind)];
            std::unique_lock lk(f_.mu_);
            const std::uint64_t my_gen = star_recv_gen_[static_cast<std::size_t>(kind)]++;
            f_.wait(lk, [&] { return slot.ready && slot.gen == my_gen; }, "gather_from_clients");
            std::vector<Vec> out = slot.slices;
            stats_.messages_received += static_cast<std::uint64_t>(f_.c_);
            slot.ready = false;
            slot.deposited = 0;
            ++slot.gen;
            f_.cv_.notify_all();
            return out;
        }

        void scatter(Kind kind, const Vec& full) override {
            auto& slot = f_.scatter_slots_[static_cast<std::size_t>(kind)];
            if (full.size() % static_cast<std::size_t>(f_.c_) != 0)
                throw FrameError("scatter vector length not divisible by client count");
            std::unique_lock lk(f_.mu_);
            const std::uint64_t my_gen = scatter_gen_[static_cast<std::size_t>(kind)]++;
            f_.wait(lk, [&] { return slot.gen == my_gen && !slot.ready; }, "scatter");
            slot.full = full;
            slot.ready = true;
            stats_.messages_sent += static_cast<std::uint64_t>(f_.c_);
            f_.cv_.notify_all();
        }

        Vec receive_scatter(Kind kind) override {
            auto& slot = f_.scatter_slots_[static_cast<std::size_t>(kind)];
            std::unique_lock lk(f_.mu_);
            const std::uint64_t my_gen = scatter_gen_[static_cast<std::size_t>(kind)]++;
            f_.wait(lk, [&] { return slot.ready && slot.gen == my_gen; }, "receive_scatter");
            const std::size_t m = slot.full.size() / static_cast<std::size_t>(f_.c_);
            const std::size_t r0 = static_cast<std::size_t>(id_) * m;
            Vec out(slot.full.begin() + static_cast<std::ptrdiff_t>(r0),
                    slot.full.begin() + static_cast<std::ptrdiff_t>(r0 + m));
            stats_.messages_received += 1;
            if (++slot.consumed == f_.c_) {
                slot.ready = false;
                slot.consumed = 0;
                ++slot.gen;
                f_.cv_.notify_all();
            }
            return out;
        }

        void begin_iteration(std::uint64_t k) override { iteration_ = k; }

        void post_broadcast(Kind kind, std::uint64_t stamp,
                            std::span<const double> payload,
                            std::uint32_t block_index) override {
            if (f_.c_ == 1) return;
            std::lock_guard lk(f_.mu_);
            for (int r = 0; r < f_.c_; ++r) {
                if (r == id_) continue;
                Stream& st = f_.streams_.at(key(id_, r, kind));
                const std::uint64_t delay = f_.schedule_.sample(st.rng, id_, r);
                st.pending.push_back(Pending{stamp, stamp + delay, block_index,
                                             Vec(payload.begin(), payload.end())});
                ++stats_.messages_sent;
            }
        }

        std::vector<Envelope> drain_mailbox(Kind kind) override {
            std::vector<Envelope> out;
            if (f_.c_ == 1) return out;
            std::lock_guard lk(f_.mu_);
            const std::uint64_t now = iteration_;
            for (int s = 0; s < f_.c_; ++s) {
                if (s == id_) continue;
                Stream& st = f_.streams_.at(key(s, id_, kind));
                // pick the newest eligible envelope; older eligible ones are
                // dead on arrival (the algorithm overwrites blocks wholesale)
                std::size_t best = st.pending.size();
                for (std::size_t i = 0; i < st.pending.size(); ++i) {
                    const Pending& p = st.pending[i];
                    if (p.eligible_at > now) continue;
                    if (best == st.pending.size() || p.stamp > st.pending[best].stamp) best = i;
                }
                if (best == st.pending.size()) continue;
                const bool fresh = st.last_delivered == kNoDelivery ||
                                   st.pending[best].stamp > st.last_delivered;
                if (fresh) {
                    Envelope e;
                    e.sender = static_cast<std::uint16_t>(s);
                    e.kind = kind;
                    e.iteration = st.pending[best].stamp;
                    e.block_index = st.pending[best].block_index;
                    e.payload = std::move(st.pending[best].payload);
                    st.last_delivered = e.iteration;
                    stats_.tau[{s, kind}].add(now - e.iteration);
                    ++stats_.messages_received;
                    out.push_back(std::move(e));
                }
                // drop every eligible entry (delivered or superseded)
                std::vector<Pending> keep;
                for (auto& p : st.pending)
                    if (p.eligible_at > now) keep.push_back(std::move(p));
                    else if (!fresh || p.stamp != st.last_delivered) ++stats_.messages_superseded;
                st.pending = std::move(keep);
            }
            return out;
        }

        void phase_barrier() override {
            std::unique_lock lk(f_.mu_);
            BarrierState& b = f_.barrier_;
            const std::uint64_t my_gen = barrier_gen_++;
            f_.wait(lk, [&] { return b.gen == my_gen; }, "phase_barrier");
            if (++b.arrived == f_.c_) {
                b.arrived = 0;
                ++b.gen;
                f_.cv_.notify_all();
            } else {
                f_.wait(lk, [&] { return b.gen > my_gen; }, "phase_barrier");
            }
        }

        bool continue_consensus(std::optional<bool> arbiter_continue) override {
            auto& slot = f_.consensus_;
            const int participants = f_.c_ + (f_.with_server_ ? 1 : 0);
            std::unique_lock lk(f_.mu_);
            const std::uint64_t my_gen = consensus_gen_++;
            if (arbiter_continue) {
                f_.wait(lk, [&] { return slot.gen == my_gen && !slot.ready; }, "consensus");
                slot.value = *arbiter_continue;
                slot.ready = true;
                f_.cv_.notify_all();
            } else {
                f_.wait(lk, [&] { return slot.ready && slot.gen == my_gen; }, "consensus");
            }
            bool v = slot.value;
            if (++slot.consumed == participants) {
                slot.ready = false;
                slot.consumed = 0;
                ++slot.gen;
                f_.cv_.notify_all();
            } else if (!arbiter_continue) {
                // nothing further; reader just leaves
            }
            return v;
        }

        void post_control(bool stop) override {
            std::lock_guard lk(f_.mu_);
            f_.control_cont_ = !stop;
            f_.control_set_ = true;
        }

        std::optional<bool> poll_control() override {
            std::lock_guard lk(f_.mu_);
            if (!f_.control_set_) return std::nullopt;
            return f_.control_cont_;  // the posted continue flag
        }

        EndpointStats& stats() override { return stats_; }

    private:
        SimFabric& f_;
        int id_;
        std::uint64_t iteration_ = 0;
        std::uint64_t barrier_gen_ = 0;
        std::uint64_t consensus_gen_ = 0;
        std::uint64_t gather_gen_[4] = {0, 0, 0, 0};
        std::uint64_t star_send_gen_[4] = {0, 0, 0, 0};
        std::uint64_t star_recv_gen_[4] = {0, 0, 0, 0};
        std::uint64_t scatter_gen_[4] = {0, 0, 0, 0};
        EndpointStats stats_;
    };

    friend class SimEndpoint;

    int c_;
    bool with_server_;
    DelaySchedule schedule_;
    double timeout_;

    std::mutex mu_;
    std::condition_variable cv_;
    bool dead_ = false;
    std::string dead_reason_;

    std::vector<std::unique_ptr<SimEndpoint>> endpoints_;
    std::map<std::uint64_t, Stream> streams_;
    GatherSlot gather_slots_[4];
    GatherSlot star_gather_slots_[4];
    ScatterSlot scatter_slots_[4];
    ConsensusSlot consensus_;
    BarrierState barrier_;
    bool control_set_ = false;
    bool control_cont_ = true;
};

} // namespace fsk
