#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fsk/core.hpp"
#include "fsk/errors.hpp"
#include "fsk/netsim/delay.hpp"
#include "fsk/netsim/fabric.hpp"
#include "fsk/partition.hpp"
#include "fsk/stop.hpp"

namespace fsk {

enum class Topology { all_to_all_sync, all_to_all_async, star_sync };

inline const char* to_string(Topology t) {
    switch (t) {
        case Topology::all_to_all_sync: return "all_to_all_sync";
        case Topology::all_to_all_async: return "all_to_all_async";
        case Topology::star_sync: return "star_sync";
    }
    return "?";
}

inline Topology topology_from_string(const std::string& s) {
    if (s == "all_to_all_sync") return Topology::all_to_all_sync;
    if (s == "all_to_all_async") return Topology::all_to_all_async;
    if (s == "star_sync") return Topology::star_sync;
    throw ConfigError("unknown topology '" + s + "'");
}

struct FaultInjection {
    int client = -1;              // worker that dies silently at `at_iteration` (tests)
    std::uint64_t at_iteration = 0;
};

struct FedParams {
    Topology topology = Topology::all_to_all_sync;
    int c = 2;
    std::uint64_t w = 1;          // full local iterations per communication round
    double alpha = 0.5;           // async damping step size
    bool acknowledge_alpha_one = false;
    StopPolicy stop;
    DelaySchedule delay;
    std::uint64_t seed = 0;
    bool record_objective = false;
    FaultInjection fault;

    void validate() const {
        if (c <= 0) throw ConfigError("client count must be positive");
        if (w < 1) throw ConfigError("communication frequency w must be >= 1");
        if (topology == Topology::star_sync && w != 1)
            throw ConfigError("w is defined only for all-to-all topologies; star requires w = 1");
        if (topology == Topology::all_to_all_async) {
            if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
            if (alpha == 1.0 && !acknowledge_alpha_one)
                throw ConfigError("alpha = 1 in an async run is unstable; set "
                                  "acknowledge_alpha_one to proceed");
        }
    }
};

struct ClientReport {
    int id = 0;
    std::uint64_t iterations = 0;
    std::int64_t local_converged_at = -1;  // first iteration the local error met the threshold
    double compute_seconds = 0.0;
    double comm_seconds = 0.0;
    std::uint64_t messages_sent = 0;
    std::uint64_t messages_received = 0;
    std::uint64_t messages_superseded = 0;
};

struct PairTau {
    int receiver = 0;
    int sender = 0;
    TauStat stat;
};

struct RunReport {
    Verdict verdict = Verdict::max_iterations;
    std::string diagnostics;
    std::uint64_t iterations = 0;      // arbiter's iteration count
    double err_a_final = std::numeric_limits<double>::quiet_NaN();
    double err_b_final = std::numeric_limits<double>::quiet_NaN();
    double signed_err_a_final = std::numeric_limits<double>::quiet_NaN();
    double objective_final = std::numeric_limits<double>::quiet_NaN();
    // one entry per communication round; entry j describes the global state
    // after j full iterations (entry 0 = initial all-ones state)
    std::vector<double> err_a_traj;
    std::vector<double> err_b_traj;
    std::vector<double> objective_traj;
    std::uint64_t traj_stride = 1;
    std::vector<ClientReport> clients;
    std::vector<PairTau> tau_pairs;
    TauStat tau_all;
    double total_seconds = 0.0;        // virtual (= iterations) under the simulator
    bool virtual_time = true;
    ColMat final_u, final_v;           // reconciled scaling state, n x N

    std::string topology;
    int c = 1;
    std::uint64_t w = 1;
    double alpha = 1.0;
    std::uint64_t seed = 0;
    std::string delay_name = "zero";
    double threshold = 0.0;
    double timeout_seconds = 0.0;
    std::string backend = "sim";
};

// Optional harness hooks; with `cost` set the arbiter records the full
// objective along the trajectory (the arbiter side must hold the full kernel:
// its own in the star case, `kernel` here for all-to-all).
struct Instrumentation {
    const Matrix* cost = nullptr;
    const GibbsKernel* kernel = nullptr;
};

namespace fed_detail {

inline void pack_block(const ColMat& full, int id, std::size_t m, Vec& out) {
    out.resize(m * full.cols());
    for (std::size_t t = 0; t < full.cols(); ++t) {
        const double* col = full.col(t) + static_cast<std::size_t>(id) * m;
        for (std::size_t i = 0; i < m; ++i) out[t * m + i] = col[i];
    }
}

inline void unpack_gathered(const Vec& gathered, std::size_t m, std::size_t N, ColMat& full) {
    const std::size_t c = gathered.size() / (m * N);
    for (std::size_t j = 0; j < c; ++j)
        for (std::size_t t = 0; t < N; ++t)
            for (std::size_t i = 0; i < m; ++i)
                full(j * m + i, t) = gathered[j * m * N + t * m + i];
}

inline void unpack_block(const Vec& payload, std::size_t block, std::size_t m, std::size_t N,
                         ColMat& full) {
    for (std::size_t t = 0; t < N; ++t)
        for (std::size_t i = 0; i < m; ++i)
            full(block * m + i, t) = payload[t * m + i];
}

/// q = K_rows x v, one output block of the global K v product.
inline void block_q(const Matrix& k_rows, const ColMat& v, ColMat& q) {
    for (std::size_t t = 0; t < v.cols(); ++t) matvec(k_rows, v.col(t), q.col(t));
}

/// r = K_cols^T x u.
inline void block_r(const Matrix& k_cols, const ColMat& u, ColMat& r) {
    for (std::size_t t = 0; t < u.cols(); ++t) matvec_transpose(k_cols, u.col(t), r.col(t));
}

/// max over targets of ||u_own * q - a||_1 on the own block.
inline double block_err(const ColMat& full_u, int id, std::size_t m, const ColMat& q,
                        const Vec& a, double* signed_out = nullptr) {
    double best = 0.0, best_signed = 0.0;
    for (std::size_t t = 0; t < q.cols(); ++t) {
        const double* qc = q.col(t);
        const double* uc = full_u.col(t) + static_cast<std::size_t>(id) * m;
        double e = 0.0, s = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double d = uc[i] * qc[i] - a[i];
            e += std::abs(d);
            s += d;
        }
        if (t == 0 || e > best) { best = e; best_signed = s; }
    }
    if (signed_out) *signed_out = best_signed;
    return best;
}

inline double block_err_v(const ColMat& full_v, int id, std::size_t m, const ColMat& r,
                          const ColMat& b) {
    double best = 0.0;
    for (std::size_t t = 0; t < r.cols(); ++t) {
        const double* rc = r.col(t);
        const double* vc = full_v.col(t) + static_cast<std::size_t>(id) * m;
        double e = 0.0;
        for (std::size_t i = 0; i < m; ++i) e += std::abs(vc[i] * rc[i] - b(i, t));
        if (e > best) best = e;
    }
    return best;
}

/// Divide own block: target_own = marginal ./ denom, optionally damped into
/// the previous value. strict=true throws on floored denominators (sync);
/// strict=false substitutes the floor and flags it (async keeps running and
/// lets the divergence policy decide).
inline void divide_block(const Vec& a, const ColMat& denom, int id, std::size_t m,
                         double alpha, bool strict, ColMat& full, bool* flagged) {
    for (std::size_t t = 0; t < denom.cols(); ++t) {
        const double* dc = denom.col(t);
        double* out = full.col(t) + static_cast<std::size_t>(id) * m;
        for (std::size_t i = 0; i < m; ++i) {
            double fresh;
            if (a[i] == 0.0) {
                fresh = 0.0;
            } else if (dc[i] <= kUnderflowFloor) {
                if (strict) throw UnderflowDivide("denominator underflow in block update");
                if (flagged) *flagged = true;
                fresh = a[i] / kUnderflowFloor;
            } else {
                fresh = a[i] / dc[i];
            }
            out[i] = alpha == 1.0 ? fresh : alpha * fresh + (1.0 - alpha) * out[i];
        }
    }
}

inline void divide_block(const ColMat& b, const ColMat& denom, int id, std::size_t m,
                         double alpha, bool strict, ColMat& full, bool* flagged) {
    for (std::size_t t = 0; t < denom.cols(); ++t) {
        const double* dc = denom.col(t);
        double* out = full.col(t) + static_cast<std::size_t>(id) * m;
        for (std::size_t i = 0; i < m; ++i) {
            double bi = b(i, t);
            double fresh;
            if (bi == 0.0) {
                fresh = 0.0;
            } else if (dc[i] <= kUnderflowFloor) {
                if (strict) throw UnderflowDivide("denominator underflow in block update");
                if (flagged) *flagged = true;
                fresh = bi / kUnderflowFloor;
            } else {
                fresh = bi / dc[i];
            }
            out[i] = alpha == 1.0 ? fresh : alpha * fresh + (1.0 - alpha) * out[i];
        }
    }
}

struct Shared {
    std::mutex mu;
    Verdict verdict = Verdict::max_iterations;
    std::string diagnostics;
    bool failed = false;
    std::vector<double> err_a_traj, err_b_traj, obj_traj;
    std::vector<ClientReport> clients;
    ColMat final_u, final_v;
    double err_a_final = std::numeric_limits<double>::quiet_NaN();
    double err_b_final = std::numeric_limits<double>::quiet_NaN();
    double signed_a_final = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t arbiter_iterations = 0;
    bool numeric_flag = false;

    void set_failure(const std::string& what) {
        std::lock_guard lk(mu);
        if (!failed) {
            failed = true;
            verdict = Verdict::error;
            diagnostics = what;
        }
    }
};

inline RunReport finalize(Shared& sh, const FedParams& p, Fabric& fabric, bool with_server,
                          double wall_seconds) {
    RunReport rep;
    rep.verdict = sh.verdict;
    rep.diagnostics = sh.diagnostics;
    if (sh.numeric_flag) {
        if (!rep.diagnostics.empty()) rep.diagnostics += "; ";
        rep.diagnostics += "numeric underflow substituted by floor during damped updates";
    }
    rep.iterations = sh.arbiter_iterations;
    rep.err_a_traj = std::move(sh.err_a_traj);
    rep.err_b_traj = std::move(sh.err_b_traj);
    rep.objective_traj = std::move(sh.obj_traj);
    rep.traj_stride = p.w;
    rep.err_a_final = sh.err_a_final;
    rep.err_b_final = sh.err_b_final;
    rep.signed_err_a_final = sh.signed_a_final;
    if (!rep.objective_traj.empty()) rep.objective_final = rep.objective_traj.back();
    rep.clients = std::move(sh.clients);
    rep.final_u = std::move(sh.final_u);
    rep.final_v = std::move(sh.final_v);
    rep.virtual_time = fabric.virtual_time();
    rep.total_seconds = rep.virtual_time ? static_cast<double>(rep.iterations) : wall_seconds;

    const int participants = p.c + (with_server ? 1 : 0);
    for (int r = 0; r < participants; ++r) {
        EndpointStats& st = fabric.endpoint(r).stats();
        std::map<int, TauStat> by_sender;
        for (const auto& [key, stat] : st.tau) by_sender[key.first].merge(stat);
        for (const auto& [sender, stat] : by_sender) {
            rep.tau_pairs.push_back(PairTau{r, sender, stat});
            rep.tau_all.merge(stat);
        }
    }
    rep.topology = to_string(p.topology);
    rep.c = p.c;
    rep.w = p.w;
    rep.alpha = p.alpha;
    rep.seed = p.seed;
    rep.delay_name = p.delay.name();
    rep.threshold = p.stop.threshold;
    rep.timeout_seconds = p.stop.timeout_seconds;
    rep.backend = rep.virtual_time ? "sim" : "tcp";
    return rep;
}

inline double elapsed_of(bool virt, std::uint64_t k,
                         std::chrono::steady_clock::time_point t0) {
    if (virt) return static_cast<double>(k);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class Fn>
inline void run_workers(int count, Fabric& fabric, Shared& sh, Fn&& body) {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        threads.emplace_back([&, i] {
            try {
                body(i);
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
                sh.set_failure(e.what());
                fabric.abort_all(e.what());
            }
        });
    for (auto& t : threads) t.join();
}

} // namespace fed_detail

// ---------------------------------------------------------------------------
// Synchronous all-to-all (peer-to-peer). Every w-th iteration the clients
// AllGather their v then u slices; in between they iterate against stale
// foreign blocks. Client 0 arbitrates the stop policy on its local marginal
// error, evaluated at communication rounds where its view is fresh.
// ---------------------------------------------------------------------------
inline RunReport run_sync_all_to_all(const std::vector<BlockView>& views, Fabric& fabric,
                                     const FedParams& params,
                                     const Instrumentation* instr = nullptr) {
    FedParams p = params;
    p.validate();
    if (static_cast<int>(views.size()) != p.c)
        throw ConfigError("view count does not match client count");
    const std::size_t m = views[0].m, n = views[0].n, N = views[0].N;
    const bool virt = fabric.virtual_time();
    const bool record_obj = p.record_objective && instr && instr->cost && instr->kernel;

    fed_detail::Shared sh;
    sh.clients.resize(static_cast<std::size_t>(p.c));
    auto wall0 = std::chrono::steady_clock::now();

    fed_detail::run_workers(p.c, fabric, sh, [&](int id) {
        Endpoint& ep = fabric.endpoint(id);
        const BlockView& view = views[static_cast<std::size_t>(id)];
        ColMat u(n, N, 1.0), v(n, N, 1.0), q(m, N), r(m, N);
        Vec slab;
        double err_a = std::numeric_limits<double>::infinity();
        double err_b = std::numeric_limits<double>::infinity();
        double signed_a = 0.0;
        std::int64_t local_conv = -1;
        std::uint64_t k = 0;
        auto cstart = std::chrono::steady_clock::now();
        double compute_s = 0.0;
        for (;;) {
            ++k;
            if (p.fault.client == id && p.fault.at_iteration > 0 && k >= p.fault.at_iteration)
                return;  // simulated worker death
            ep.begin_iteration(k);
            const bool comm = (k % p.w) == 0;
            if (comm) {
                fed_detail::pack_block(v, id, m, slab);
                fed_detail::unpack_gathered(ep.all_gather(Kind::V, slab), m, N, v);
            }
            cstart = std::chrono::steady_clock::now();
            if (id == 0 && comm && record_obj) {
                ScalingState snap{u, v, k - 1};
                double obj = objective(snap, *instr->kernel, *instr->cost, 0);
                std::lock_guard lk(sh.mu);
                sh.obj_traj.push_back(obj);
            }
            fed_detail::block_q(view.k_rows, v, q);
            if (comm) err_a = fed_detail::block_err(u, id, m, q, view.a, &signed_a);
            fed_detail::divide_block(view.a, q, id, m, 1.0, /*strict=*/true, u, nullptr);
            compute_s += std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                       cstart).count();
            if (comm) {
                fed_detail::pack_block(u, id, m, slab);
                fed_detail::unpack_gathered(ep.all_gather(Kind::U, slab), m, N, u);
            }
            cstart = std::chrono::steady_clock::now();
            fed_detail::block_r(view.k_cols, u, r);
            if (comm) err_b = fed_detail::block_err_v(v, id, m, r, view.b);
            fed_detail::divide_block(view.b, r, id, m, 1.0, /*strict=*/true, v, nullptr);
            compute_s += std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                       cstart).count();

            if (!comm) continue;
            if (local_conv < 0 && err_a <= p.stop.threshold)
                local_conv = static_cast<std::int64_t>(k);
            std::optional<bool> decision;
            if (id == 0) {
                std::lock_guard lk(sh.mu);
                sh.err_a_traj.push_back(err_a);
                sh.err_b_traj.push_back(err_b);
                auto verdict = evaluate_stop(p.stop, err_a, k,
                                             fed_detail::elapsed_of(virt, k, wall0));
                decision = !verdict.has_value();
                if (verdict) {
                    sh.verdict = *verdict;
                    sh.err_a_final = err_a;
                    sh.err_b_final = err_b;
                    sh.signed_a_final = signed_a;
                    sh.arbiter_iterations = k;
                }
            }
            if (!ep.continue_consensus(decision)) break;
        }
        // final reconciliation: everyone ends with identical u, v
        fed_detail::pack_block(v, id, m, slab);
        fed_detail::unpack_gathered(ep.all_gather(Kind::V, slab), m, N, v);
        if (id == 0) {
            std::lock_guard lk(sh.mu);
            if (record_obj) {
                ScalingState snap{u, v, k};
                sh.obj_traj.push_back(objective(snap, *instr->kernel, *instr->cost, 0));
            }
            sh.final_u = u;
            sh.final_v = v;
        }
        ClientReport cr;
        cr.id = id;
        cr.iterations = k;
        cr.local_converged_at = local_conv;
        cr.compute_seconds = virt ? static_cast<double>(k) : compute_s;
        cr.comm_seconds = virt ? 0.0 : ep.stats().comm_seconds;
        cr.messages_sent = ep.stats().messages_sent;
        cr.messages_received = ep.stats().messages_received;
        cr.messages_superseded = ep.stats().messages_superseded;
        std::lock_guard lk(sh.mu);
        sh.clients[static_cast<std::size_t>(id)] = cr;
    });

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return fed_detail::finalize(sh, p, fabric, false, wall);
}

// ---------------------------------------------------------------------------
// Asynchronous all-to-all. Slices travel as inconsistently-broadcast
// envelopes; each client overwrites foreign blocks with whatever is
// deliverable and damps its own update by alpha. Clients may meet their local
// criterion at different times (recorded per client); the run verdict is the
// arbiter's, and a final consistent AllGather reconciles u and v.
// ---------------------------------------------------------------------------
inline RunReport run_async_all_to_all(const std::vector<BlockView>& views, Fabric& fabric,
                                      const FedParams& params,
                                      const Instrumentation* instr = nullptr) {
    FedParams p = params;
    p.validate();
    if (static_cast<int>(views.size()) != p.c)
        throw ConfigError("view count does not match client count");
    const std::size_t m = views[0].m, n = views[0].n, N = views[0].N;
    const bool virt = fabric.virtual_time();
    const bool record_obj = p.record_objective && instr && instr->cost && instr->kernel;

    fed_detail::Shared sh;
    sh.clients.resize(static_cast<std::size_t>(p.c));
    auto wall0 = std::chrono::steady_clock::now();

    fed_detail::run_workers(p.c, fabric, sh, [&](int id) {
        Endpoint& ep = fabric.endpoint(id);
        const BlockView& view = views[static_cast<std::size_t>(id)];
        ColMat u(n, N, 1.0), v(n, N, 1.0), q(m, N), r(m, N);
        Vec slab;
        bool numeric_flag = false;
        double err_a = std::numeric_limits<double>::infinity();
        double err_b = std::numeric_limits<double>::infinity();
        double signed_a = 0.0;
        std::int64_t local_conv = -1;
        std::uint64_t k = 0;
        double compute_s = 0.0;
        for (;;) {
            ++k;
            if (p.fault.client == id && p.fault.at_iteration > 0 && k >= p.fault.at_iteration)
                return;
            ep.begin_iteration(k);
            const bool comm = (k % p.w) == 0;
            if (comm) {
                fed_detail::pack_block(v, id, m, slab);
                ep.post_broadcast(Kind::V, k - 1, slab, static_cast<std::uint32_t>(id));
            }
            ep.phase_barrier();
            auto cstart = std::chrono::steady_clock::now();
            if (comm)
                for (Envelope& e : ep.drain_mailbox(Kind::V))
                    fed_detail::unpack_block(e.payload, e.block_index, m, N, v);
            if (id == 0 && comm && record_obj) {
                ScalingState snap{u, v, k - 1};
                double obj = objective(snap, *instr->kernel, *instr->cost, 0);
                std::lock_guard lk(sh.mu);
                sh.obj_traj.push_back(obj);
            }
            fed_detail::block_q(view.k_rows, v, q);
            if (comm) err_a = fed_detail::block_err(u, id, m, q, view.a, &signed_a);
            fed_detail::divide_block(view.a, q, id, m, p.alpha, /*strict=*/false, u,
                                     &numeric_flag);
            compute_s += std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                       cstart).count();
            ep.phase_barrier();
            if (comm) {
                fed_detail::pack_block(u, id, m, slab);
                ep.post_broadcast(Kind::U, k - 1, slab, static_cast<std::uint32_t>(id));
            }
            ep.phase_barrier();
            cstart = std::chrono::steady_clock::now();
            if (comm)
                for (Envelope& e : ep.drain_mailbox(Kind::U))
                    fed_detail::unpack_block(e.payload, e.block_index, m, N, u);
            fed_detail::block_r(view.k_cols, u, r);
            if (comm) err_b = fed_detail::block_err_v(v, id, m, r, view.b);
            fed_detail::divide_block(view.b, r, id, m, p.alpha, /*strict=*/false, v,
                                     &numeric_flag);
            compute_s += std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                       cstart).count();

            if (comm && local_conv < 0 && err_a <= p.stop.threshold)
                local_conv = static_cast<std::int64_t>(k);
            if (id == 0 && comm) {
                std::lock_guard lk(sh.mu);
                sh.err_a_traj.push_back(err_a);
                sh.err_b_traj.push_back(err_b);
                auto verdict = evaluate_stop(p.stop, err_a, k,
                                             fed_detail::elapsed_of(virt, k, wall0));
                if (verdict) {
                    sh.verdict = *verdict;
                    sh.err_a_final = err_a;
                    sh.err_b_final = err_b;
                    sh.signed_a_final = signed_a;
                    sh.arbiter_iterations = k;
                    ep.post_control(/*stop=*/true);
                }
            }
            ep.phase_barrier();
            auto ctl = ep.poll_control();
            if (ctl.has_value() && !*ctl) break;
        }
        // terminal consistent broadcast so every client reports the same plan;
        // Q/R streams are free in this topology and keep reconciliation frames
        // apart from leftover U/V mailbox traffic
        fed_detail::pack_block(u, id, m, slab);
        fed_detail::unpack_gathered(ep.all_gather(Kind::Q, slab), m, N, u);
        fed_detail::pack_block(v, id, m, slab);
        fed_detail::unpack_gathered(ep.all_gather(Kind::R, slab), m, N, v);
        if (id == 0) {
            std::lock_guard lk(sh.mu);
            sh.final_u = u;
            sh.final_v = v;
            if (record_obj) {
                ScalingState snap{u, v, k};
                sh.obj_traj.push_back(objective(snap, *instr->kernel, *instr->cost, 0));
            }
        }
        ClientReport cr;
        cr.id = id;
        cr.iterations = k;
        cr.local_converged_at = local_conv;
        cr.compute_seconds = virt ? static_cast<double>(k) : compute_s;
        cr.comm_seconds = virt ? 0.0 : ep.stats().comm_seconds;
        cr.messages_sent = ep.stats().messages_sent;
        cr.messages_received = ep.stats().messages_received;
        cr.messages_superseded = ep.stats().messages_superseded;
        std::lock_guard lk(sh.mu);
        sh.clients[static_cast<std::size_t>(id)] = cr;
        if (numeric_flag) sh.numeric_flag = true;
    });

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return fed_detail::finalize(sh, p, fabric, false, wall);
}

// ---------------------------------------------------------------------------
// Synchronous star. Clients hold marginal slices only; the server holds the
// full kernel, assembles u and v from client slices, performs both matrix
// products and scatters the intermediates. The server arbitrates the stop
// policy. It reconstructs the marginal error without ever holding `a`, from
// the identity a_i = u_i q_i that the client division enforces.
// ---------------------------------------------------------------------------
inline RunReport run_sync_star(const GibbsKernel& server_kernel,
                               const std::vector<BlockView>& client_views, Fabric& fabric,
                               const FedParams& params,
                               const Instrumentation* instr = nullptr) {
    FedParams p = params;
    p.validate();
    if (p.topology != Topology::star_sync) throw ConfigError("topology must be star_sync");
    if (static_cast<int>(client_views.size()) != p.c)
        throw ConfigError("view count does not match client count");
    if (!fabric.has_server()) throw ConfigError("star topology needs a server endpoint");
    const std::size_t m = client_views[0].m, n = client_views[0].n, N = client_views[0].N;
    const bool virt = fabric.virtual_time();
    const bool record_obj = p.record_objective && instr && instr->cost;

    fed_detail::Shared sh;
    sh.clients.resize(static_cast<std::size_t>(p.c) + 1);
    auto wall0 = std::chrono::steady_clock::now();

    fed_detail::run_workers(p.c + 1, fabric, sh, [&](int id) {
        Endpoint& ep = fabric.endpoint(id);
        std::uint64_t k = 0;
        double compute_s = 0.0;
        std::int64_t local_conv = -1;

        if (id == p.c) {  // server
            ColMat u(n, N, 1.0), v(n, N, 1.0), u_prev(n, N, 1.0);
            ColMat q(n, N), r(n, N), r_prev(n, N);
            bool have_r_prev = false;
            Vec slab(static_cast<std::size_t>(p.c) * m * N);
            double err_a = std::numeric_limits<double>::infinity();
            double err_b = std::numeric_limits<double>::infinity();
            for (;;) {
                ++k;
                ep.begin_iteration(k);
                std::vector<Vec> vparts = ep.gather_from_clients(Kind::V);
                auto cstart = std::chrono::steady_clock::now();
                // err_b of the state after iteration k-1, before overwriting v:
                // b = v_new * r_prev up to rounding, so the residual of the old
                // v is r_prev * (v_old - v_new)
                if (have_r_prev) {
                    double best = 0.0;
                    for (std::size_t t = 0; t < N; ++t) {
                        double e = 0.0;
                        for (int j = 0; j < p.c; ++j) {
                            const Vec& pj = vparts[static_cast<std::size_t>(j)];
                            for (std::size_t i = 0; i < m; ++i) {
                                std::size_t gi = static_cast<std::size_t>(j) * m + i;
                                e += std::abs(r_prev(gi, t) * (v(gi, t) - pj[t * m + i]));
                            }
                        }
                        if (e > best) best = e;
                    }
                    err_b = best;
                }
                for (int j = 0; j < p.c; ++j)
                    fed_detail::unpack_block(vparts[static_cast<std::size_t>(j)],
                                             static_cast<std::size_t>(j), m, N, v);
                if (record_obj) {
                    ScalingState snap{u, v, k - 1};
                    double obj = objective(snap, server_kernel, *instr->cost, 0);
                    std::lock_guard lk(sh.mu);
                    sh.obj_traj.push_back(obj);
                }
                for (std::size_t t = 0; t < N; ++t)
                    matvec(server_kernel.K, v.col(t), q.col(t));
                // block-major layout so the generic scatter hands client j its slab
                for (int j = 0; j < p.c; ++j)
                    for (std::size_t t = 0; t < N; ++t)
                        for (std::size_t i = 0; i < m; ++i)
                            slab[static_cast<std::size_t>(j) * m * N + t * m + i] =
                                q(static_cast<std::size_t>(j) * m + i, t);
                compute_s += std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - cstart).count();
                ep.scatter(Kind::Q, slab);
                std::vector<Vec> uparts = ep.gather_from_clients(Kind::U);
                cstart = std::chrono::steady_clock::now();
                u_prev = u;
                for (int j = 0; j < p.c; ++j)
                    fed_detail::unpack_block(uparts[static_cast<std::size_t>(j)],
                                             static_cast<std::size_t>(j), m, N, u);
                {   // err_a of state k-1 via a_i = u_new_i q_i
                    double best = 0.0, bsign = 0.0;
                    for (std::size_t t = 0; t < N; ++t) {
                        double e = 0.0, s = 0.0;
                        for (std::size_t i = 0; i < n; ++i) {
                            double d = q(i, t) * (u_prev(i, t) - u(i, t));
                            e += std::abs(d);
                            s += d;
                        }
                        if (t == 0 || e > best) { best = e; bsign = s; }
                    }
                    err_a = best;
                    std::lock_guard lk(sh.mu);
                    sh.err_a_traj.push_back(err_a);
                    sh.err_b_traj.push_back(err_b);
                    sh.signed_a_final = bsign;
                }
                for (std::size_t t = 0; t < N; ++t)
                    matvec_transpose(server_kernel.K, u.col(t), r.col(t));
                r_prev = r;
                have_r_prev = true;
                for (int j = 0; j < p.c; ++j)
                    for (std::size_t t = 0; t < N; ++t)
                        for (std::size_t i = 0; i < m; ++i)
                            slab[static_cast<std::size_t>(j) * m * N + t * m + i] =
                                r(static_cast<std::size_t>(j) * m + i, t);
                compute_s += std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - cstart).count();
                ep.scatter(Kind::R, slab);

                auto verdict = evaluate_stop(p.stop, err_a, k,
                                             fed_detail::elapsed_of(virt, k, wall0));
                if (verdict) {
                    std::lock_guard lk(sh.mu);
                    sh.verdict = *verdict;
                    sh.err_a_final = err_a;
                    sh.err_b_final = err_b;
                    sh.arbiter_iterations = k;
                    if (local_conv < 0 && *verdict == Verdict::converged)
                        local_conv = static_cast<std::int64_t>(k);
                }
                if (!ep.continue_consensus(!verdict.has_value())) {
                    std::vector<Vec> final_v = ep.gather_from_clients(Kind::V);
                    for (int j = 0; j < p.c; ++j)
                        fed_detail::unpack_block(final_v[static_cast<std::size_t>(j)],
                                                 static_cast<std::size_t>(j), m, N, v);
                    std::lock_guard lk(sh.mu);
                    sh.final_u = u;
                    sh.final_v = v;
                    if (record_obj) {
                        ScalingState snap{u, v, k};
                        sh.obj_traj.push_back(objective(snap, server_kernel, *instr->cost, 0));
                    }
                    break;
                }
            }
        } else {  // client
            const BlockView& view = client_views[static_cast<std::size_t>(id)];
            ColMat v_own(m, N, 1.0), u_own(m, N, 0.0);
            for (;;) {
                ++k;
                if (p.fault.client == id && p.fault.at_iteration > 0 &&
                    k >= p.fault.at_iteration)
                    return;
                ep.begin_iteration(k);
                ep.send_to_server(Kind::V, std::span<const double>(v_own.data()));
                Vec qslab = ep.receive_scatter(Kind::Q);
                auto cstart = std::chrono::steady_clock::now();
                for (std::size_t t = 0; t < N; ++t)
                    for (std::size_t i = 0; i < m; ++i) {
                        double qi = qslab[t * m + i];
                        if (view.a[i] == 0.0) { u_own(i, t) = 0.0; continue; }
                        if (qi <= kUnderflowFloor)
                            throw UnderflowDivide("scattered q underflow");
                        u_own(i, t) = view.a[i] / qi;
                    }
                compute_s += std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - cstart).count();
                ep.send_to_server(Kind::U, std::span<const double>(u_own.data()));
                Vec rslab = ep.receive_scatter(Kind::R);
                cstart = std::chrono::steady_clock::now();
                for (std::size_t t = 0; t < N; ++t)
                    for (std::size_t i = 0; i < m; ++i) {
                        double ri = rslab[t * m + i];
                        double bi = view.b(i, t);
                        if (bi == 0.0) { v_own(i, t) = 0.0; continue; }
                        if (ri <= kUnderflowFloor)
                            throw UnderflowDivide("scattered r underflow");
                        v_own(i, t) = bi / ri;
                    }
                compute_s += std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - cstart).count();
                if (!ep.continue_consensus(std::nullopt)) {
                    ep.send_to_server(Kind::V, std::span<const double>(v_own.data()));
                    break;
                }
            }
        }
        Endpoint& epr = fabric.endpoint(id);
        ClientReport cr;
        cr.id = id;
        cr.iterations = k;
        cr.local_converged_at = local_conv;
        cr.compute_seconds = virt ? static_cast<double>(k) : compute_s;
        cr.comm_seconds = virt ? 0.0 : epr.stats().comm_seconds;
        cr.messages_sent = epr.stats().messages_sent;
        cr.messages_received = epr.stats().messages_received;
        cr.messages_superseded = epr.stats().messages_superseded;
        std::lock_guard lk(sh.mu);
        sh.clients[static_cast<std::size_t>(id)] = cr;
    });

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return fed_detail::finalize(sh, p, fabric, true, wall);
}

/// Local-iteration variant: w full local half-step pairs between
/// communication events, running on whichever all-to-all parent the params
/// select. With w = 1 it is the parent driver.
inline RunReport run_local_iterations(const std::vector<BlockView>& views, Fabric& fabric,
                                      const FedParams& params,
                                      const Instrumentation* instr = nullptr) {
    if (params.topology == Topology::all_to_all_async)
        return run_async_all_to_all(views, fabric, params, instr);
    return run_sync_all_to_all(views, fabric, params, instr);
}

} // namespace fsk
