#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fsk/core.hpp"
#include "fsk/errors.hpp"
#include "fsk/linalg.hpp"

namespace fsk {

// One client's slice of the problem: marginal blocks plus the row and column
// blocks of the kernel. Immutable after construction; block j always covers
// index range [j*m, (j+1)*m) and clients are ordered by ascending id.
struct BlockView {
    int client_id = 0;
    std::size_t m = 0;      // block size, n = c * m
    std::size_t n = 0;
    std::size_t N = 1;
    Vec a;                  // length m
    ColMat b;               // m x N
    Matrix k_rows;          // m x n   (rows [id*m, (id+1)*m) of K)
    Matrix k_cols;          // n x m   (columns of K, row-major)
};

/// Equal block partition of (K, a, B) across c clients.
inline std::vector<BlockView> slice_problem(const GibbsKernel& kernel, const Vec& a,
                                            const ColMat& B, int c) {
    const std::size_t n = a.size();
    if (c <= 0 || n % static_cast<std::size_t>(c) != 0)
        throw IndivisibleDimension("client count " + std::to_string(c) +
                                   " does not divide n = " + std::to_string(n));
    const std::size_t m = n / static_cast<std::size_t>(c);
    std::vector<BlockView> views;
    views.reserve(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) {
        BlockView bv;
        bv.client_id = j;
        bv.m = m;
        bv.n = n;
        bv.N = B.cols();
        const std::size_t r0 = static_cast<std::size_t>(j) * m;
        bv.a.assign(a.begin() + static_cast<std::ptrdiff_t>(r0),
                    a.begin() + static_cast<std::ptrdiff_t>(r0 + m));
        bv.b = B.sub_rows(r0, m);
        bv.k_rows = kernel.K.row_block(r0, m);
        bv.k_cols = kernel.K.col_block(r0, m);
        views.push_back(std::move(bv));
    }
    return views;
}

inline std::vector<BlockView> slice_problem(const Problem& prob, int c) {
    return slice_problem(gibbs_kernel(prob.C, prob.epsilon), prob.a, prob.B, c);
}

/// Concatenates (client_id, slice) pairs in client order; arrival order is
/// irrelevant. Exactly one slice per client in [0, c) is required.
inline Vec assemble(const std::vector<std::pair<int, Vec>>& slices) {
    const std::size_t c = slices.size();
    if (c == 0) throw MissingBlock("no slices supplied");
    std::vector<const Vec*> by_id(c, nullptr);
    for (const auto& [id, v] : slices) {
        if (id < 0 || static_cast<std::size_t>(id) >= c)
            throw MissingBlock("client id " + std::to_string(id) + " out of range");
        if (by_id[static_cast<std::size_t>(id)] != nullptr)
            throw DuplicateBlock("duplicate slice for client " + std::to_string(id));
        by_id[static_cast<std::size_t>(id)] = &v;
    }
    std::size_t m = by_id[0]->size();
    Vec out;
    out.reserve(c * m);
    for (std::size_t j = 0; j < c; ++j) {
        if (by_id[j]->size() != m)
            throw MissingBlock("slice for client " + std::to_string(j) +
                               " has mismatched length");
        out.insert(out.end(), by_id[j]->begin(), by_id[j]->end());
    }
    return out;
}

} // namespace fsk
