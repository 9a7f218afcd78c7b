#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fsk/linalg.hpp"
#include "fsk/netsim/envelope.hpp"
#include "fsk/netsim/stats.hpp"

namespace fsk {

// One participant's handle on the communication fabric. Client endpoints have
// ids 0..c-1; the star server, when present, has id c. Each endpoint is owned
// by exactly one worker thread.
//
// Blocking collectives (all_gather, gather/scatter, continue_consensus)
// suspend the caller until all expected participants arrive. The mailbox pair
// (post_broadcast / drain_mailbox) never blocks. phase_barrier() separates the
// post and drain phases of one simulated iteration; the TCP backend, which has
// real concurrency instead of a virtual clock, implements it as a no-op.
class Endpoint {
public:
    virtual ~Endpoint() = default;

    virtual int id() const = 0;
    virtual int clients() const = 0;
    virtual bool is_server() const { return false; }

    /// Collective over the c client endpoints; returns the slices of all
    /// clients concatenated in id order. Acts as a barrier.
    virtual Vec all_gather(Kind kind, std::span<const double> slice) = 0;

    // star topology: clients send slices, the server assembles; the server
    // scatters a full vector, client j receives elements [j*m, (j+1)*m)
    virtual void send_to_server(Kind kind, std::span<const double> slice) = 0;
    virtual std::vector<Vec> gather_from_clients(Kind kind) = 0;
    virtual void scatter(Kind kind, const Vec& full) = 0;
    virtual Vec receive_scatter(Kind kind) = 0;

    /// Marks the start of local iteration k (1-based); fixes the stamp used
    /// by posts and the age reference used by drains.
    virtual void begin_iteration(std::uint64_t k) = 0;

    /// Non-blocking broadcast of an iteration-stamped slice to all other
    /// clients. Never waits; with one client this is a no-op.
    virtual void post_broadcast(Kind kind, std::uint64_t stamp,
                                std::span<const double> payload,
                                std::uint32_t block_index) = 0;

    /// Returns the currently deliverable envelopes, at most one per
    /// (sender, kind) stream (the newest); records one age sample each.
    virtual std::vector<Envelope> drain_mailbox(Kind kind) = 0;

    virtual void phase_barrier() = 0;

    /// Synchronous stop consensus: the arbiter passes its decision, every
    /// participant returns the arbiter's value. Blocking collective.
    virtual bool continue_consensus(std::optional<bool> arbiter_continue) = 0;

    /// Asynchronous stop signal: the arbiter posts once; peers poll.
    virtual void post_control(bool stop) = 0;
    virtual std::optional<bool> poll_control() = 0;

    virtual EndpointStats& stats() = 0;
};

class Fabric {
public:
    virtual ~Fabric() = default;
    virtual int clients() const = 0;
    virtual bool has_server() const = 0;
    virtual Endpoint& endpoint(int id) = 0;         // 0..c-1, or c for the server

    /// True when the fabric runs on a virtual clock (times are reported in
    /// iteration units and runs are bit-reproducible).
    virtual bool virtual_time() const { return false; }

    /// Wakes all blocked participants after a failure; default no-op.
    virtual void abort_all(const std::string&) {}
};

} // namespace fsk
