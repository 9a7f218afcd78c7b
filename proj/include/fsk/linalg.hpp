#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace fsk {

using Vec = std::vector<double>;

// Dense row-major matrix. The multiply kernels below are written so that each
// output element is reduced in a fixed order depending only on the row (or
// column) contents. A client holding a copy of a row/column block therefore
// computes bit-identical results to the same rows/columns of a full-matrix
// product, which is what makes the federated drivers match the centralized
// solver exactly rather than merely to rounding.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    /// Copy of rows [r0, r0+count).
    Matrix row_block(std::size_t r0, std::size_t count) const {
        Matrix out(count, cols_);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < cols_; ++j) out(i, j) = (*this)(r0 + i, j);
        return out;
    }

    /// Copy of columns [c0, c0+count), kept row-major (rows_ x count).
    Matrix col_block(std::size_t c0, std::size_t count) const {
        Matrix out(rows_, count);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < count; ++j) out(i, j) = (*this)(i, c0 + j);
        return out;
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// n x N matrix stored as N contiguous columns. Used for the scaling factors
// and the target histograms: the multi-target solve then runs the exact same
// per-column code path as N independent single-target solves.
class ColMat {
public:
    ColMat() = default;
    ColMat(std::size_t n, std::size_t cols, double fill = 0.0)
        : n_(n), cols_(cols), data_(n * cols, fill) {}

    std::size_t n() const { return n_; }
    std::size_t cols() const { return cols_; }

    double* col(std::size_t t) { return data_.data() + t * n_; }
    const double* col(std::size_t t) const { return data_.data() + t * n_; }

    double& operator()(std::size_t i, std::size_t t) { return data_[t * n_ + i]; }
    double operator()(std::size_t i, std::size_t t) const { return data_[t * n_ + i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    static ColMat from_column(const Vec& v) {
        ColMat out(v.size(), 1);
        for (std::size_t i = 0; i < v.size(); ++i) out(i, 0) = v[i];
        return out;
    }

    ColMat sub_rows(std::size_t r0, std::size_t count) const {
        ColMat out(count, cols_);
        for (std::size_t t = 0; t < cols_; ++t)
            for (std::size_t i = 0; i < count; ++i) out(i, t) = (*this)(r0 + i, t);
        return out;
    }

    bool operator==(const ColMat& o) const {
        return n_ == o.n_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t n_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// Dot product with four independent accumulators combined in a fixed order.
// The reduction depends only on the length, so slicing a matrix into row
// blocks never changes a row's result.
inline double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

/// out = M x (column t of x); out has M.rows() entries.
inline void matvec(const Matrix& m, const double* x, double* out) {
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), x, m.cols());
}

/// out = M^T x (column accumulation in ascending row order); out has M.cols()
/// entries. Each out[j] receives its additions in the same order regardless of
/// which column block of the original matrix M represents.
inline void matvec_transpose(const Matrix& m, const double* x, double* out) {
    const std::size_t rows = m.rows(), cols = m.cols();
    for (std::size_t j = 0; j < cols; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double* r = m.row(i);
        const double xi = x[i];
        for (std::size_t j = 0; j < cols; ++j) out[j] += r[j] * xi;
    }
}

inline double l1_diff(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = a[i] - b[i];
        s += d < 0 ? -d : d;
    }
    return s;
}

inline double signed_diff_sum(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] - b[i];
    return s;
}

} // namespace fsk
