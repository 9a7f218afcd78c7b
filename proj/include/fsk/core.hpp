#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsk/errors.hpp"
#include "fsk/linalg.hpp"
#include "fsk/stop.hpp"
#include "fsk/xdouble.hpp"

namespace fsk {

// Kernel entries and scaling denominators are floored here instead of being
// allowed to reach zero; a denominator AT the floor is reported as
// UnderflowDivide because from that point the iteration only produces noise.
inline constexpr double kUnderflowFloor = 1e-300;

// One entropic-OT instance: C is n x n, a is the shared source marginal, B
// holds N target histograms as columns.
struct Problem {
    std::size_t n = 0;
    std::size_t N = 1;
    Matrix C;
    Vec a;
    ColMat B;
    double epsilon = 0.0;

    void validate() const {
        if (epsilon <= 0.0) throw NonPositiveEpsilon("epsilon must be > 0");
        if (C.rows() != n || C.cols() != n) throw ConfigError("C must be n x n");
        if (a.size() != n || B.n() != n || B.cols() != N)
            throw ConfigError("marginal shapes do not match n, N");
        double sa = 0.0;
        for (double v : a) {
            if (!(v >= 0.0)) throw ConfigError("a entries must be >= 0");
            sa += v;
        }
        if (!(sa > 0.0)) throw ConfigError("sum(a) must be > 0");
        for (double v : C.data())
            if (!std::isfinite(v) || v < 0.0)
                throw NonFiniteCost("cost entries must be finite and >= 0");
        for (std::size_t t = 0; t < N; ++t) {
            double sb = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double v = B(i, t);
                if (!(v >= 0.0)) throw ConfigError("B entries must be >= 0");
                sb += v;
            }
            if (std::abs(sb - sa) > 1e-12 * std::max(sa, 1.0))
                throw ConfigError("column " + std::to_string(t) +
                                  " of B does not carry the same mass as a");
        }
    }
};

struct GibbsKernel {
    Matrix K;
    double epsilon = 0.0;
    std::string cost_ref;  // provenance label for reports
};

// Scaling factors; u and v are n x N so all targets advance together.
struct ScalingState {
    ColMat u;
    ColMat v;
    std::uint64_t iteration = 0;
};

struct SolveResult {
    ScalingState state;
    double err_a = 0.0;
    double err_b = 0.0;
    double signed_err_a = 0.0;  // the raw signed sum, emitted for comparability
    double objective = 0.0;
    Verdict verdict = Verdict::max_iterations;
    std::uint64_t iterations = 0;
};

/// K_ij = exp(-C_ij / epsilon), floored at kUnderflowFloor.
inline GibbsKernel gibbs_kernel(const Matrix& C, double epsilon) {
    if (epsilon <= 0.0) throw NonPositiveEpsilon("epsilon must be > 0");
    GibbsKernel g;
    g.epsilon = epsilon;
    g.K = Matrix(C.rows(), C.cols());
    for (std::size_t i = 0; i < C.rows(); ++i) {
        const double* cr = C.row(i);
        double* kr = g.K.row(i);
        for (std::size_t j = 0; j < C.cols(); ++j) {
            if (!std::isfinite(cr[j])) throw NonFiniteCost("cost entry is not finite");
            double k = std::exp(-cr[j] / epsilon);
            kr[j] = k < kUnderflowFloor ? kUnderflowFloor : k;
        }
    }
    return g;
}

// q = K_rows * v (per column), u = a ./ q. `a` indexes the same rows as
// K_rows. Entries with a_i = 0 yield u_i = 0; a positive a_i over a floored
// denominator is the epsilon-too-small regime and raises UnderflowDivide.
inline void half_step_u(const Matrix& k_rows, const ColMat& v, const double* a,
                        ColMat& q, ColMat& u) {
    const std::size_t m = k_rows.rows(), cols = v.cols();
    for (std::size_t t = 0; t < cols; ++t) {
        matvec(k_rows, v.col(t), q.col(t));
        const double* qt = q.col(t);
        double* ut = u.col(t);
        for (std::size_t i = 0; i < m; ++i) {
            if (a[i] == 0.0) {
                ut[i] = 0.0;
            } else {
                if (qt[i] <= kUnderflowFloor)
                    throw UnderflowDivide("q underflow at row " + std::to_string(i));
                ut[i] = a[i] / qt[i];
            }
        }
    }
}

/// Mirror of half_step_u: r = K_cols^T * u, v = b ./ r. `k_cols` is the
/// column block stored row-major (full_rows x m); `b` is m x N.
inline void half_step_v(const Matrix& k_cols, const ColMat& u, const ColMat& b,
                        ColMat& r, ColMat& v) {
    const std::size_t m = k_cols.cols(), cols = u.cols();
    for (std::size_t t = 0; t < cols; ++t) {
        matvec_transpose(k_cols, u.col(t), r.col(t));
        const double* rt = r.col(t);
        double* vt = v.col(t);
        for (std::size_t i = 0; i < m; ++i) {
            double bi = b(i, t);
            if (bi == 0.0) {
                vt[i] = 0.0;
            } else {
                if (rt[i] <= kUnderflowFloor)
                    throw UnderflowDivide("r underflow at column " + std::to_string(i));
                vt[i] = bi / rt[i];
            }
        }
    }
}

/// alpha * fresh + (1 - alpha) * old, elementwise over a span.
inline void damped_combine(const double* fresh, const double* old, double alpha,
                           double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = alpha * fresh[i] + (1.0 - alpha) * old[i];
}

/// P_ij = u_i K_ij v_j for one target column.
inline Matrix transport_plan(const ScalingState& s, const GibbsKernel& g,
                             std::size_t target = 0) {
    const std::size_t n = g.K.rows();
    Matrix p(n, n);
    const double* u = s.u.col(target);
    const double* v = s.v.col(target);
    for (std::size_t i = 0; i < n; ++i) {
        const double* kr = g.K.row(i);
        double* pr = p.row(i);
        for (std::size_t j = 0; j < n; ++j) pr[j] = u[i] * kr[j] * v[j];
    }
    return p;
}

struct MarginalErrors {
    double err_a = 0.0;        // L1, maximized over target columns
    double err_b = 0.0;
    double signed_a = 0.0;     // signed sums from the same target column
    double signed_b = 0.0;
};

/// L1 residuals of the current plan against both marginals.
inline MarginalErrors marginal_errors(const ScalingState& s, const GibbsKernel& g,
                                      const Vec& a, const ColMat& b) {
    const std::size_t n = g.K.rows(), cols = s.u.cols();
    MarginalErrors out;
    Vec t1(n), t2(n);
    for (std::size_t t = 0; t < cols; ++t) {
        matvec(g.K, s.v.col(t), t1.data());
        const double* u = s.u.col(t);
        double ea = 0.0, sa = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = u[i] * t1[i] - a[i];
            ea += std::abs(d);
            sa += d;
        }
        matvec_transpose(g.K, s.u.col(t), t2.data());
        const double* v = s.v.col(t);
        double eb = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = v[i] * t2[i] - b(i, t);
            eb += std::abs(d);
            sb += d;
        }
        if (t == 0 || ea > out.err_a) { out.err_a = std::max(out.err_a, ea); out.signed_a = sa; }
        if (t == 0 || eb > out.err_b) { out.err_b = std::max(out.err_b, eb); out.signed_b = sb; }
    }
    return out;
}

/// <P, C> + eps * sum P_ij (log P_ij - 1), with 0 log 0 = 0.
inline double objective(const Matrix& p, const Matrix& c, double epsilon) {
    double cost = 0.0, ent = 0.0;
    const std::size_t n = p.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* pr = p.row(i);
        const double* cr = c.row(i);
        for (std::size_t j = 0; j < p.cols(); ++j) {
            cost += pr[j] * cr[j];
            if (pr[j] > 0.0) ent += pr[j] * (std::log(pr[j]) - 1.0);
        }
    }
    return cost + epsilon * ent;
}

/// Objective evaluated directly from scaling factors (avoids materializing P
/// when called per iteration).
inline double objective(const ScalingState& s, const GibbsKernel& g, const Matrix& c,
                        std::size_t target = 0) {
    const std::size_t n = g.K.rows();
    const double* u = s.u.col(target);
    const double* v = s.v.col(target);
    double cost = 0.0, ent = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* kr = g.K.row(i);
        const double* cr = c.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            double p = u[i] * kr[j] * v[j];
            cost += p * cr[j];
            if (p > 0.0) ent += p * (std::log(p) - 1.0);
        }
    }
    return cost + g.epsilon * ent;
}

struct SolveOptions {
    // called once per iteration with (iteration, err_a, err_b)
    std::function<void(std::uint64_t, double, double)> on_iteration;
    // called at the top of iteration k with the state after k-1 iterations
    std::function<void(std::uint64_t, const ScalingState&)> on_state;
    // optional warm start; both must be n x N when set
    const ColMat* initial_u = nullptr;
    const ColMat* initial_v = nullptr;
};

// Plain centralized Sinkhorn over all N targets at once. The marginal error
// is evaluated at the top of each iteration from the incoming q, so it costs
// nothing extra and describes the plan left by the previous full iteration.
inline SolveResult solve_centralized(const Problem& prob, const StopPolicy& stop,
                                     const SolveOptions& opts = {}) {
    prob.validate();
    GibbsKernel g = gibbs_kernel(prob.C, prob.epsilon);
    const std::size_t n = prob.n, N = prob.N;
    SolveResult res;
    ScalingState& s = res.state;
    s.u = opts.initial_u ? *opts.initial_u : ColMat(n, N, 1.0);
    s.v = opts.initial_v ? *opts.initial_v : ColMat(n, N, 1.0);

    ColMat q(n, N), r(n, N);
    std::uint64_t k = 0;
    try {
        for (;;) {
            ++k;
            // q = K v with the previous iteration's v
            double err_a = 0.0, sa = 0.0;
            for (std::size_t t = 0; t < N; ++t) {
                matvec(g.K, s.v.col(t), q.col(t));
                const double* qt = q.col(t);
                const double* ut = s.u.col(t);
                double ea = 0.0, ssa = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double d = ut[i] * qt[i] - prob.a[i];
                    ea += std::abs(d);
                    ssa += d;
                }
                if (t == 0 || ea > err_a) { err_a = std::max(err_a, ea); sa = ssa; }
            }
            // u = a ./ q
            for (std::size_t t = 0; t < N; ++t) {
                const double* qt = q.col(t);
                double* ut = s.u.col(t);
                for (std::size_t i = 0; i < n; ++i) {
                    if (prob.a[i] == 0.0) { ut[i] = 0.0; continue; }
                    if (qt[i] <= kUnderflowFloor)
                        throw UnderflowDivide("q underflow at iteration " + std::to_string(k));
                    ut[i] = prob.a[i] / qt[i];
                }
            }
            // r = K^T u, v = b ./ r, with err_b from the outgoing v
            double err_b = 0.0, sb = 0.0;
            for (std::size_t t = 0; t < N; ++t) {
                matvec_transpose(g.K, s.u.col(t), r.col(t));
                const double* rt = r.col(t);
                double* vt = s.v.col(t);
                double eb = 0.0, ssb = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double d = vt[i] * rt[i] - prob.B(i, t);
                    eb += std::abs(d);
                    ssb += d;
                }
                if (t == 0 || eb > err_b) { err_b = std::max(err_b, eb); sb = ssb; }
                for (std::size_t i = 0; i < n; ++i) {
                    double bi = prob.B(i, t);
                    if (bi == 0.0) { vt[i] = 0.0; continue; }
                    if (rt[i] <= kUnderflowFloor)
                        throw UnderflowDivide("r underflow at iteration " + std::to_string(k));
                    vt[i] = bi / rt[i];
                }
            }
            s.iteration = k;
            if (opts.on_iteration) opts.on_iteration(k, err_a, err_b);
            res.err_a = err_a;
            res.err_b = err_b;
            res.signed_err_a = sa;
            if (auto verdict = evaluate_stop(stop, err_a, k, static_cast<double>(k))) {
                res.verdict = *verdict;
                break;
            }
        }
    } catch (const UnderflowDivide&) {
        res.verdict = Verdict::error;
        res.iterations = k;
        throw;
    }
    res.iterations = k;
    res.objective = objective(s, g, prob.C, 0);
    return res;
}

// ---------------------------------------------------------------------------
// Extended-range variant. Identical recursion, but kernel entries and scaling
// factors carry a wide exponent so that regimes like epsilon = 1e-4 on unit
// costs (kernel entries near e^{-30000}) remain meaningful. Used by the
// epsilon study; everything else runs the plain double path above.
// ---------------------------------------------------------------------------

struct XSolveResult {
    Vec objective_trajectory;  // objective after each full iteration
    double err_a = 0.0;
    double final_objective = 0.0;
    std::uint64_t iterations = 0;
    Verdict verdict = Verdict::max_iterations;
};

inline XSolveResult solve_centralized_extended(const Matrix& C, const Vec& a,
                                               const Vec& b, double epsilon,
                                               const StopPolicy& stop) {
    if (epsilon <= 0.0) throw NonPositiveEpsilon("epsilon must be > 0");
    const std::size_t n = a.size();
    std::vector<XDouble> K(n * n), KT(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            XDouble e = XDouble::exp_of(-C(i, j) / epsilon);
            K[i * n + j] = e;
            KT[j * n + i] = e;
        }
    std::vector<XDouble> u(n), v(n), q(n), r(n), xa(n), xb(n);
    for (std::size_t i = 0; i < n; ++i) {
        u[i] = XDouble::from_double(1.0);
        v[i] = XDouble::from_double(1.0);
        xa[i] = XDouble::from_double(a[i]);
        xb[i] = XDouble::from_double(b[i]);
    }
    auto xmatvec = [n](const std::vector<XDouble>& m, const std::vector<XDouble>& x,
                       std::vector<XDouble>& out) {
        for (std::size_t i = 0; i < n; ++i) {
            XDouble s;
            for (std::size_t j = 0; j < n; ++j) s = s + m[i * n + j] * x[j];
            out[i] = s;
        }
    };

    XSolveResult res;
    std::uint64_t k = 0;
    for (;;) {
        ++k;
        xmatvec(K, v, q);
        double err_a = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            err_a += std::abs((u[i] * q[i]).to_double() - a[i]);
        for (std::size_t i = 0; i < n; ++i) u[i] = xa[i] / q[i];
        xmatvec(KT, u, r);
        for (std::size_t i = 0; i < n; ++i) v[i] = xb[i] / r[i];

        double cost = 0.0, ent = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                XDouble p = u[i] * K[i * n + j] * v[j];
                double pd = p.to_double();
                cost += pd * C(i, j);
                if (!p.is_zero()) ent += pd * (p.log() - 1.0);
            }
        res.objective_trajectory.push_back(cost + epsilon * ent);
        res.err_a = err_a;
        if (auto verdict = evaluate_stop(stop, err_a, k, static_cast<double>(k))) {
            res.verdict = *verdict;
            break;
        }
    }
    res.iterations = k;
    res.final_objective = res.objective_trajectory.back();
    return res;
}

} // namespace fsk
